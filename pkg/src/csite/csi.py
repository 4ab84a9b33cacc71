"""CSI observations and the amplitude / dimensionality-reduction pipeline.

A CSI matrix holds one complex channel gain per (tx antenna, rx antenna,
subcarrier). Flattening is always row-major in that order, so entry
``(tx, rx, s)`` lands at index ``(tx * n_rx + rx) * n_sub + s``. Adjacent-pair
merging therefore pairs subcarrier ``2i`` with ``2i + 1`` inside one antenna
stream and never straddles two streams as long as ``n_sub`` is even.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, OddLength

N_SUB = 30


class FrameType(enum.IntEnum):
    DATA = 0
    PROBE_REQUEST = 1
    PROBE_RESPONSE = 2
    DEAUTH = 3
    ICMP_ECHO = 4


class Source(enum.IntEnum):
    LEGIT = 0
    ATTACKER = 1


ENCRYPTED_TYPES = frozenset({FrameType.DATA, FrameType.ICMP_ECHO})


@dataclass(frozen=True)
class CsiMatrix:
    """Complex CSI of one frame, shape ``(n_tx, n_rx, n_sub)``."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 3:
            raise DimensionMismatch(f"CSI must be 3-d (tx, rx, sub), got shape {e.shape}")
        object.__setattr__(self, "entries", e)

    @property
    def n_tx(self) -> int:
        return self.entries.shape[0]

    @property
    def n_rx(self) -> int:
        return self.entries.shape[1]

    @property
    def n_sub(self) -> int:
        return self.entries.shape[2]


@dataclass(frozen=True)
class ReducedPoint:
    """Feature vector plus arrival time; the unit the detector compares."""

    values: np.ndarray
    arrival_time: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())
        object.__setattr__(self, "arrival_time", float(self.arrival_time))

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class Frame:
    arrival_time: float
    frame_type: FrameType
    encrypted: bool
    seq: int
    txpower: float
    source_truth: Source
    csi: CsiMatrix
    rss: float

    def __post_init__(self):
        ft = FrameType(self.frame_type)
        object.__setattr__(self, "frame_type", ft)
        object.__setattr__(self, "source_truth", Source(self.source_truth))
        if self.encrypted and ft not in ENCRYPTED_TYPES:
            raise ValueError(f"{ft.name} frames are management frames and cannot be encrypted")
        if not self.encrypted and ft in ENCRYPTED_TYPES:
            raise ValueError(f"{ft.name} frames are always encrypted")


def check_dimensions(n_tx: int, n_rx: int, n_sub: int = N_SUB) -> int:
    """Validate an antenna configuration and return the reduced dimension.

    Odd amplitude counts are rejected here rather than padded later.
    """
    if n_tx < 1 or n_rx < 1 or n_sub < 1:
        raise ValueError("antenna and subcarrier counts must be positive")
    total = n_tx * n_rx * n_sub
    if total % 2:
        raise OddLength(f"{n_tx}x{n_rx}x{n_sub} = {total} amplitudes cannot be pair-merged")
    return total // 2


def amplitudes(csi) -> np.ndarray:
    """Flattened (tx, rx, subcarrier) row-major moduli of a CSI matrix.

    Accepts a :class:`CsiMatrix` or a raw complex array. A leading batch axis
    is allowed on raw arrays of ndim 4, giving one row per frame.
    """
    e = csi.entries if isinstance(csi, CsiMatrix) else np.asarray(csi)
    # double precision sqrt(re^2 + im^2): every step correctly rounded
    re = e.real.astype(float)
    im = e.imag.astype(float)
    mod = np.sqrt(re * re + im * im)
    if e.ndim == 4:
        return mod.reshape(e.shape[0], -1)
    return mod.ravel()


def reduce(amps, t: float = 0.0) -> ReducedPoint:
    """Merge every two adjacent amplitudes into their mean."""
    a = np.asarray(amps, dtype=float).ravel()
    if a.shape[0] % 2:
        raise OddLength(f"amplitude vector of length {a.shape[0]} is odd")
    return ReducedPoint(0.5 * (a[0::2] + a[1::2]), t)


def reduce_batch(amps: np.ndarray) -> np.ndarray:
    """Row-wise :func:`reduce` on an ``(n_frames, n_amps)`` array."""
    amps = np.asarray(amps, dtype=float)
    if amps.shape[-1] % 2:
        raise OddLength(f"amplitude vectors of length {amps.shape[-1]} are odd")
    return 0.5 * (amps[..., 0::2] + amps[..., 1::2])


def euclidean_dist(a, b) -> float:
    va = a.values if isinstance(a, ReducedPoint) else np.asarray(a, dtype=float)
    vb = b.values if isinstance(b, ReducedPoint) else np.asarray(b, dtype=float)
    if va.shape != vb.shape:
        raise DimensionMismatch(f"cannot compare points of shape {va.shape} and {vb.shape}")
    d = va - vb
    return float(np.sqrt(np.dot(d, d)))


def frame_point(frame: Frame) -> ReducedPoint:
    """CSI feature point of a frame."""
    return reduce(amplitudes(frame.csi), frame.arrival_time)
