"""Streaming kNN spoofing filter over CSI feature points.

Encrypted frames are trusted by construction and feed a sliding window of
recent points. Every unencrypted management frame is scored by its
*degree of following*: the mean time-gained distance to its ``k`` nearest
window points. It is accepted when that score does not exceed a percentile of
the same score computed for the ``k`` most recently accepted points. With
dynamic threshold scaling the percentile shrinks as the window becomes less
stable than it was at calibration time.

The same code runs on 1-d RSS points for the baseline comparison.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .csi import ReducedPoint
from .errors import (
    DimensionMismatch,
    InvalidConfig,
    NotCalibrated,
    WindowNotFull,
    WindowTooSmall,
)

# exp(700) is still finite in float64; larger gains saturate here so that
# 0 * gain stays 0 instead of nan.
_MAX_EXPONENT = 700.0


class Verdict(enum.Enum):
    TRUSTED = "trusted"
    SUSPICIOUS = "suspicious"


class BootstrapPolicy(enum.Enum):
    """What to do with a management frame before the first calibration.

    FAIL_SAFE rejects it, STRICT raises :class:`NotCalibrated`, PERMISSIVE
    runs the filter without threshold scaling (or accepts while the window is
    still shorter than ``k + 1``).
    """

    FAIL_SAFE = "fail_safe"
    STRICT = "strict"
    PERMISSIVE = "permissive"


@dataclass(frozen=True)
class DetectorConfig:
    k: int = 5
    lam: float = 1.0
    l_w: int = 45
    i0: float = 75.0
    dts_enabled: bool = True
    i_min: float = 5.0
    i_max: float = 99.0
    sigma_ref_floor: float = 1e-9
    t_im: float = 1.0
    bootstrap: BootstrapPolicy = BootstrapPolicy.FAIL_SAFE
    auto_calibrate: bool = True
    allow_negative_lambda: bool = False

    def __post_init__(self):
        object.__setattr__(self, "bootstrap", BootstrapPolicy(self.bootstrap))
        if not 1 <= self.k < self.l_w:
            raise InvalidConfig(f"need 1 <= k < l_w, got k={self.k}, l_w={self.l_w}")
        if self.lam < 0 and not self.allow_negative_lambda:
            raise InvalidConfig(f"time gain factor must be >= 0, got {self.lam}")
        if not 0 < self.i_min <= self.i0 <= self.i_max <= 100:
            raise InvalidConfig(
                f"need 0 < i_min <= i0 <= i_max <= 100, got {self.i_min}, {self.i0}, {self.i_max}"
            )
        if self.sigma_ref_floor <= 0:
            raise InvalidConfig("sigma_ref_floor must be positive")
        if self.t_im <= 0:
            raise InvalidConfig("t_im must be positive")

    def replace(self, **changes) -> "DetectorConfig":
        d = asdict(self)
        d.update(changes)
        return DetectorConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bootstrap"] = self.bootstrap.value
        return d


def update_frequency(t_im: float, f_dl: float) -> float:
    """CSI update rate of a station that forces a probe after ``t_im`` of silence."""
    return max(1.0 / t_im, f_dl)


# ---------------------------------------------------------------------------
# Distances


def following_coefficient(t_a: float, t_b: float, lam: float) -> float:
    return math.exp(min(lam * abs(t_a - t_b), _MAX_EXPONENT))


def _gain(dt: np.ndarray, lam: float) -> np.ndarray:
    return np.exp(np.minimum(lam * np.abs(dt), _MAX_EXPONENT))


def tgd(a: ReducedPoint, b: ReducedPoint, lam: float) -> float:
    """Time-gained distance: Euclidean distance scaled by the following coefficient."""
    if a.values.shape != b.values.shape:
        raise DimensionMismatch(f"cannot compare points of length {len(a)} and {len(b)}")
    d = a.values - b.values
    return math.sqrt(float(np.dot(d, d))) * following_coefficient(a.arrival_time, b.arrival_time, lam)


# ---------------------------------------------------------------------------
# Window


class SlidingWindow:
    """FIFO buffer of the last ``capacity`` trusted points, oldest first.

    Pairwise Euclidean distances are kept in ``dist_cache`` and updated
    incrementally: one new row per insertion, one dropped row per eviction.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be positive")
        self.capacity = capacity
        self.dim = dim
        self._vals = np.zeros((capacity, dim))
        self._times = np.zeros(capacity)
        self._dist = np.zeros((capacity, capacity))
        self._n = 0
        # bumped on every mutation; lets callers cache window-derived values
        self.version = 0

    def __len__(self):
        return self._n

    @property
    def full(self) -> bool:
        return self._n == self.capacity

    @property
    def values(self) -> np.ndarray:
        return self._vals[: self._n]

    @property
    def times(self) -> np.ndarray:
        return self._times[: self._n]

    @property
    def dist_cache(self) -> np.ndarray:
        return self._dist[: self._n, : self._n]

    @property
    def points(self) -> list[ReducedPoint]:
        return [ReducedPoint(v.copy(), t) for v, t in zip(self.values, self.times)]

    def push(self, point) -> bool:
        """Append a point, evicting the oldest when full. Returns True on eviction."""
        if isinstance(point, ReducedPoint):
            values, t = point.values, point.arrival_time
        else:
            values, t = point
        return self.push_values(np.asarray(values, dtype=float), float(t))

    def push_values(self, values: np.ndarray, t: float) -> bool:
        if values.shape != (self.dim,):
            raise DimensionMismatch(f"expected a point of length {self.dim}, got shape {values.shape}")
        n = self._n
        if n and t <= self._times[n - 1]:
            raise ValueError(f"arrival time {t} does not advance past {self._times[n - 1]}")
        evicted = n == self.capacity
        if evicted:
            self._vals[:-1] = self._vals[1:]
            self._times[:-1] = self._times[1:]
            self._dist[:-1, :-1] = self._dist[1:, 1:]
            n -= 1
        self._vals[n] = values
        self._times[n] = t
        diff = self._vals[:n] - values
        row = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        self._dist[n, :n] = row
        self._dist[:n, n] = row
        self._dist[n, n] = 0.0
        self._n = n + 1
        self.version += 1
        return evicted

    def extend(self, values: np.ndarray, times: np.ndarray) -> None:
        """Push a block of points in order; same end state as repeated pushes."""
        m = len(times)
        if m == 0:
            return
        if values.shape != (m, self.dim):
            raise DimensionMismatch(f"expected {m} points of length {self.dim}, got shape {values.shape}")
        n = self._n
        if (n and times[0] <= self._times[n - 1]) or (m > 1 and (times[1:] <= times[:-1]).any()):
            raise ValueError("arrival times must strictly increase")
        cap = self.capacity
        if m > cap:
            values, times, m = values[-cap:], times[-cap:], cap
        keep = min(n, cap - m)
        if keep < n:
            drop = n - keep
            self._vals[:keep] = self._vals[drop:n]
            self._times[:keep] = self._times[drop:n]
            self._dist[:keep, :keep] = self._dist[drop:n, drop:n]
        end = keep + m
        self._vals[keep:end] = values
        self._times[keep:end] = times
        diff = values[:, None, :] - self._vals[None, :end]
        block = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        self._dist[keep:end, :end] = block
        self._dist[:end, keep:end] = block.T
        self._n = end
        self.version += 1

    @classmethod
    def from_points(cls, points, capacity: int | None = None) -> "SlidingWindow":
        points = list(points)
        if not points:
            raise ValueError("need at least one point")
        w = cls(capacity or len(points), len(points[0]))
        for p in points:
            w.push(p)
        return w


def _point_values(m, dim: int) -> tuple[np.ndarray, float]:
    if isinstance(m, ReducedPoint):
        v, t = m.values, m.arrival_time
    else:
        v, t = m
        v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise DimensionMismatch(f"point of shape {v.shape} against window of dim {dim}")
    return v, float(t)


def _tgd_row(values: np.ndarray, t: float, w: SlidingWindow, lam: float) -> np.ndarray:
    diff = w.values - values
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return d * _gain(w.times - t, lam)


def knn_tgd(m, w: SlidingWindow, k: int, lam: float) -> list[ReducedPoint]:
    """The ``k`` window points nearest to ``m`` under time-gained distance.

    Ties go to the newer point first, then the lower buffer index.
    """
    if len(w) < k:
        raise WindowTooSmall(f"window holds {len(w)} points, need {k}")
    v, t = _point_values(m, w.dim)
    g = _tgd_row(v, t, w, lam)
    idx = np.arange(len(w))
    order = np.lexsort((idx, -w.times, g))[:k]
    return [ReducedPoint(w.values[i].copy(), w.times[i]) for i in order]


def dof(m, w: SlidingWindow, k: int, lam: float) -> float:
    """Degree of following: mean time-gained distance to the k nearest window points."""
    if len(w) < k:
        raise WindowTooSmall(f"window holds {len(w)} points, need {k}")
    v, t = _point_values(m, w.dim)
    g = _tgd_row(v, t, w, lam)
    return float(np.partition(g, k - 1)[:k].sum() / k)


def channel_stability(w: SlidingWindow) -> float:
    """Mean over dimensions of the std of adjacent-point absolute differences."""
    if len(w) < 3:
        raise WindowTooSmall(f"channel stability needs at least 3 points, window holds {len(w)}")
    v = w.values
    d = np.abs(v[1:] - v[:-1])
    c = d - d.sum(axis=0) / d.shape[0]
    return float(np.sqrt(np.einsum("ij,ij->j", c, c) / d.shape[0]).mean())


def nearest_rank(values, i: float) -> float:
    """Nearest-rank percentile: the ``ceil(i/100 * n)``-th smallest value."""
    s = np.sort(np.asarray(values, dtype=float))
    n = s.shape[0]
    if n == 0:
        raise ValueError("percentile of an empty set")
    rank = math.ceil(i * n / 100.0 - 1e-9)
    return float(s[min(max(rank, 1), n) - 1])


def recent_dofs(w: SlidingWindow, k: int, lam: float) -> np.ndarray:
    """DoF of each of the k newest window points against the rest of the window.

    Index 0 is the newest point. Each point is excluded from its own
    neighbour candidates.
    """
    n = len(w)
    if n < k + 1:
        raise WindowTooSmall(f"threshold needs {k + 1} points, window holds {n}")
    t = w.times
    g = w.dist_cache[n - k :] * _gain(t[n - k :, None] - t[None, :], lam)
    g[np.arange(k), np.arange(n - k, n)] = np.inf
    q = np.partition(g, k - 1, axis=1)[:, :k].sum(axis=1) / k
    return q[::-1]


def threshold(w: SlidingWindow, k: int, lam: float, i: float) -> float:
    return nearest_rank(recent_dofs(w, k, lam), i)


def dynamic_percentile(sigma_w: float, sigma_ref: float | None, cfg: DetectorConfig) -> float:
    if not cfg.dts_enabled:
        return cfg.i0
    if sigma_ref is None:
        raise NotCalibrated("reference channel stability has not been measured")
    i1 = cfg.i0 * sigma_ref / max(sigma_w, cfg.sigma_ref_floor)
    return min(max(i1, cfg.i_min), cfg.i_max)


# ---------------------------------------------------------------------------
# Stateful filter


class LogEntry(NamedTuple):
    frame_id: object
    dof: float
    tau: float
    percentile: float
    verdict: Verdict


class Detector:
    """Per-link filter state: window, reference stability and verdict log.

    Calls to :meth:`classify` must be serialized; distinct instances are
    independent.
    """

    def __init__(self, cfg: DetectorConfig | None = None, dim: int = 45):
        self.cfg = cfg or DetectorConfig()
        self.dim = dim
        self._window = SlidingWindow(self.cfg.l_w, dim)
        # encrypted points not yet folded into the window; flushed in one block
        self._pending_vals: list[np.ndarray] = []
        self._pending_times: list[float] = []
        self.sigma_ref: float | None = None
        self.verdict_log: list[LogEntry] = []
        self._cached_version = -1
        self._cached_q = None
        self._cached_sigma = None
        self._n_seen = 0

    @property
    def window(self) -> SlidingWindow:
        self._flush()
        return self._window

    def _flush(self):
        if self._pending_times:
            vals = np.array(self._pending_vals)
            times = np.array(self._pending_times)
            self._pending_vals.clear()
            self._pending_times.clear()
            self._extend(vals, times)

    def _extend(self, values: np.ndarray, times: np.ndarray):
        w = self._window
        split = 0
        if not self.calibrated and self.cfg.auto_calibrate:
            # calibrate at the exact moment the window first fills
            split = min(len(times), w.capacity - len(w))
            w.extend(values[:split], times[:split])
            if w.full:
                self.calibrate_reference()
        w.extend(values[split:], times[split:])

    def _last_time(self) -> float | None:
        if self._pending_times:
            return self._pending_times[-1]
        w = self._window
        return float(w.times[-1]) if len(w) else None

    @property
    def calibrated(self) -> bool:
        return self.sigma_ref is not None

    def calibrate_reference(self) -> float:
        w = self.window
        if not w.full:
            raise WindowNotFull(f"window holds {len(w)} of {w.capacity} points")
        self.sigma_ref = max(channel_stability(w), self.cfg.sigma_ref_floor)
        return self.sigma_ref

    def needs_probe(self, now: float) -> bool:
        """True when the window has not been refreshed for longer than ``t_im``."""
        last = self._last_time()
        return last is None or now - last > self.cfg.t_im

    def _window_stats(self):
        w = self._window
        if self._cached_version != w.version:
            self._cached_q = recent_dofs(w, self.cfg.k, self.cfg.lam)
            self._cached_sigma = channel_stability(w) if self.cfg.dts_enabled else None
            self._cached_version = w.version
        return self._cached_q, self._cached_sigma

    def _accept(self, values, t):
        w = self._window
        w.push_values(values, t)
        if not self.calibrated and self.cfg.auto_calibrate and w.full:
            self.calibrate_reference()

    def accept_encrypted(self, values: np.ndarray, times: np.ndarray, frame_ids=None) -> None:
        """Bulk path for a run of encrypted frames, equivalent to classifying each."""
        values = np.asarray(values, dtype=float)
        times = np.asarray(times, dtype=float)
        m = len(times)
        if values.shape != (m, self.dim):
            raise DimensionMismatch(f"expected points of length {self.dim}, got shape {values.shape}")
        if frame_ids is None:
            frame_ids = range(self._n_seen, self._n_seen + m)
        self._flush()
        self._extend(values, times)
        self._n_seen += m
        nan = math.nan
        trusted = Verdict.TRUSTED
        self.verdict_log.extend(LogEntry(f, nan, nan, nan, trusted) for f in frame_ids)

    def classify(self, point, encrypted: bool, frame_id=None) -> Verdict:
        """Classify one frame given its feature point and encryption flag."""
        if isinstance(point, ReducedPoint):
            values, t = point.values, point.arrival_time
        else:
            values, t = point
            values = np.asarray(values, dtype=float)
        return self.classify_values(values, float(t), encrypted, frame_id)

    def classify_values(self, values: np.ndarray, t: float, encrypted: bool, frame_id=None) -> Verdict:
        if frame_id is None:
            frame_id = self._n_seen
        self._n_seen += 1
        if values.shape != (self.dim,):
            raise DimensionMismatch(f"expected a point of length {self.dim}, got shape {values.shape}")
        cfg = self.cfg
        nan = math.nan

        if encrypted:
            last = self._last_time()
            if last is not None and t <= last:
                raise ValueError(f"arrival time {t} does not advance past {last}")
            self._pending_vals.append(values.copy())
            self._pending_times.append(t)
            if len(self._pending_times) >= self._window.capacity:
                self._flush()
            self.verdict_log.append(LogEntry(frame_id, nan, nan, nan, Verdict.TRUSTED))
            return Verdict.TRUSTED

        self._flush()
        use_dts = cfg.dts_enabled
        if not self.calibrated or len(self._window) <= cfg.k:
            if cfg.bootstrap is BootstrapPolicy.STRICT:
                raise NotCalibrated("management frame arrived before the filter was calibrated and primed")
            if cfg.bootstrap is BootstrapPolicy.FAIL_SAFE:
                self.verdict_log.append(LogEntry(frame_id, nan, nan, nan, Verdict.SUSPICIOUS))
                return Verdict.SUSPICIOUS
            if len(self._window) <= cfg.k:
                self._accept(values, t)
                self.verdict_log.append(LogEntry(frame_id, nan, nan, nan, Verdict.TRUSTED))
                return Verdict.TRUSTED
            use_dts = False

        w = self._window
        g = _tgd_row(values, t, w, cfg.lam)
        score = float(np.partition(g, cfg.k - 1)[: cfg.k].sum() / cfg.k)
        q, sigma_w = self._window_stats()
        if use_dts:
            if sigma_w is None:
                sigma_w = channel_stability(w)
            i = dynamic_percentile(sigma_w, self.sigma_ref, cfg)
        else:
            i = cfg.i0
        tau = nearest_rank(q, i)
        if score <= tau:
            self._accept(values, t)
            verdict = Verdict.TRUSTED
        else:
            verdict = Verdict.SUSPICIOUS
        self.verdict_log.append(LogEntry(frame_id, score, tau, i, verdict))
        return verdict
