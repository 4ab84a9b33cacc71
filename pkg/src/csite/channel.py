"""Synthetic CSI / RSS traces for the seven evaluation scenarios.

Each link (legitimate AP->client, attacker->client) is a Rician channel over
the 30 reported subcarriers. The specular part is fixed per link; the
scattered part follows a first-order Gauss-Markov process

    g <- mean + rho * (g - mean) + sqrt(1 - rho**2) * scatter_std * w,
    rho = exp(-2 * pi * doppler_hz * dt),

where ``w`` is a unit-power innovation drawn from the link's tapped-delay
profile, so gains stay smooth across adjacent subcarriers. The two links use
independent draws, which models spatial decorrelation. CSI amplitude does not
depend on transmit power; RSS does.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .csi import N_SUB, CsiMatrix, Frame, FrameType, Source, check_dimensions
from .errors import InvalidConfig, RateTooHigh

SPEED_OF_LIGHT = 299_792_458.0
CARRIER_HZ = 2.412e9
SUBCARRIER_SPACING_HZ = 312.5e3
# subcarrier grouping reported by the Intel 5300 CSI tool at 20 MHz
SUBCARRIER_INDEX = np.array(
    list(range(-28, -1, 2)) + [-1, 1] + list(range(3, 28, 2)) + [28], dtype=float
)
WALK_SPEED = {"slow": 0.5, "normal": 1.2, "fast": 2.5}


def doppler_for_speed(speed_mps: float, carrier_hz: float = CARRIER_HZ) -> float:
    return speed_mps * carrier_hz / SPEED_OF_LIGHT


# (legit speed, attacker speed, crowd-noise multiplier) per scenario
_SCENARIOS = {
    "A": (None, None, 1.0),
    "B": (None, None, 3.0),
    "C": (None, "normal", 1.0),
    "D": ("normal", None, 1.0),
    "E": ("slow", None, 1.0),
    "F": ("fast", None, 1.0),
    "G": ("normal", "normal", 1.0),
}
SCENARIO_IDS = tuple(_SCENARIOS)


@dataclass
class ChannelState:
    gains: np.ndarray
    doppler_hz: float
    mean_gains: np.ndarray
    meas_noise_std: float
    scatter_std: float = 0.0
    basis: np.ndarray | None = None  # (n_taps, n_sub) innovation shaping
    path_gain_db: float = 0.0
    shadow_std_db: float = 2.0

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=complex)
        self.mean_gains = np.broadcast_to(np.asarray(self.mean_gains, dtype=complex), self.gains.shape).copy()
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("channel gains must be finite")
        if self.doppler_hz < 0 or self.meas_noise_std < 0 or self.scatter_std < 0:
            raise ValueError("doppler, measurement noise and scatter std must be non-negative")

    def innovation(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Unit-power complex innovation(s), frequency-smooth when a basis is set."""
        lead = () if size is None else (size,)
        shape = self.gains.shape
        if self.basis is None:
            return _cn(rng, lead + shape)
        taps = _cn(rng, lead + shape[:2] + (self.basis.shape[0],))
        return taps @ self.basis


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circular complex normal with unit variance."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * math.sqrt(0.5)


def delay_basis(rng: np.random.Generator, n_taps: int, max_delay_s: float, n_sub: int = N_SUB) -> np.ndarray:
    """Random tapped-delay profile mapped onto the subcarrier grid.

    Rows are ``sqrt(p_l) * exp(-2j*pi*f*tau_l)`` with an exponential power
    delay profile normalized to unit total power.
    """
    if n_sub == N_SUB:
        freqs = SUBCARRIER_INDEX * SUBCARRIER_SPACING_HZ
    else:
        freqs = np.linspace(-28, 28, n_sub) * SUBCARRIER_SPACING_HZ
    delays = np.sort(rng.uniform(0.0, max_delay_s, n_taps))
    delays -= delays[0]
    power = np.exp(-delays / (max_delay_s / 3.0))
    power /= power.sum()
    return np.sqrt(power)[:, None] * np.exp(-2j * np.pi * np.outer(delays, freqs))


def new_channel(
    rng: np.random.Generator,
    doppler_hz: float = 0.0,
    k_factor: float = 10.0,
    meas_noise_std: float = 0.05,
    n_tx: int = 1,
    n_rx: int = 3,
    n_sub: int = N_SUB,
    n_taps: int = 4,
    max_delay_s: float = 150e-9,
    path_gain_db: float = 0.0,
    shadow_std_db: float = 2.0,
) -> ChannelState:
    """Draw an independent link with unit mean power per CSI entry."""
    basis = delay_basis(rng, n_taps, max_delay_s, n_sub)
    los = math.sqrt(k_factor / (k_factor + 1.0))
    scatter = math.sqrt(1.0 / (k_factor + 1.0))
    proto = ChannelState(np.zeros((n_tx, n_rx, n_sub), complex), doppler_hz, 0, meas_noise_std, scatter, basis)
    mean = los * proto.innovation(rng)
    gains = mean + scatter * proto.innovation(rng)
    return ChannelState(gains, doppler_hz, mean, meas_noise_std, scatter, basis, path_gain_db, shadow_std_db)


def ar_coefficient(doppler_hz: float, dt) -> np.ndarray | float:
    return np.exp(-2.0 * np.pi * doppler_hz * np.asarray(dt, dtype=float))


def step_channel(ch: ChannelState, dt: float, rng: np.random.Generator) -> ChannelState:
    """Advance the fading process by ``dt`` seconds."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if dt == 0 or ch.doppler_hz == 0:
        return ch
    rho = float(ar_coefficient(ch.doppler_hz, dt))
    w = ch.innovation(rng)
    gains = ch.mean_gains + rho * (ch.gains - ch.mean_gains) + math.sqrt(1.0 - rho * rho) * ch.scatter_std * w
    return replace(ch, gains=gains)


def evolve_path(ch: ChannelState, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Channel gains at each of ``times`` (nondecreasing, first one = now).

    Vectorized equivalent of calling :func:`step_channel` between successive
    times. The deviation from the mean obeys
    ``x_n = e^{-a t_n} (x_0 e^{a t_0} + sum_i c_i w_i e^{a t_i})`` with
    ``a = 2 pi doppler``; the sum is accumulated in blocks short enough that
    the exponentials stay finite.
    """
    times = np.asarray(times, dtype=float)
    n = times.shape[0]
    shape = ch.gains.shape
    if n == 0:
        return np.zeros((0,) + shape, complex)
    if ch.doppler_hz == 0:
        return np.broadcast_to(ch.gains, (n,) + shape).copy()
    a = 2.0 * np.pi * ch.doppler_hz
    dt = np.diff(times)
    if np.any(dt < 0):
        raise ValueError("times must be nondecreasing")
    rho = np.exp(-a * dt)
    c = np.sqrt(1.0 - rho * rho) * ch.scatter_std
    w = ch.innovation(rng, n - 1)
    out = np.empty((n,) + shape, complex)
    x = ch.gains - ch.mean_gains
    out[0] = x
    start = 1
    while start < n:
        t0 = times[start - 1]
        stop = start + int(np.searchsorted(times[start:], t0 + 300.0 / a, side="right"))
        stop = max(stop, start + 1)
        rel = times[start:stop] - t0
        grow = np.exp(a * rel)
        terms = (c[start - 1 : stop - 1] * grow)[:, None, None, None] * w[start - 1 : stop - 1]
        acc = np.cumsum(terms, axis=0) + x
        out[start:stop] = acc / grow[:, None, None, None]
        x = out[stop - 1]
        start = stop
    out += ch.mean_gains
    return out


def sample_csi(ch: ChannelState, rng: np.random.Generator) -> CsiMatrix:
    """Measured CSI: true gains plus complex measurement noise."""
    if ch.meas_noise_std == 0:
        return CsiMatrix(ch.gains.copy())
    return CsiMatrix(ch.gains + ch.meas_noise_std * _cn(rng, ch.gains.shape))


def rss_of(ch: ChannelState, txpower: float, rng: np.random.Generator | None = None, gains=None) -> float:
    """Received power in dBm: txpower + link budget + shadowing noise."""
    g = ch.gains if gains is None else gains
    noise = 0.0 if rng is None or ch.shadow_std_db == 0 else ch.shadow_std_db * rng.standard_normal()
    return float(txpower + ch.path_gain_db + 10.0 * np.log10(np.sum(np.abs(g) ** 2)) + noise)


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class ScenarioConfig:
    """One evaluation scenario: channel dynamics, traffic schedule and seed.

    ``for_scenario`` fills in the dynamics for a scenario letter. The
    channel constants (K-factor, tap profile, noise, path gains) are
    calibration parameters of the synthetic channel.
    """

    scenario_id: str = "A"
    duration: float = 300.0
    legit_doppler_hz: float = 0.0
    attacker_doppler_hz: float = 0.0
    crowd_noise_std: float = 0.0
    ping_rate_hz: float = 400.0
    probe_count: int = 20
    probe_period: float = 0.3
    probe_spacing: float = 1.0e-3
    attack_count: int = 64
    attack_period: float = 0.5
    attack_spacing: float = 1.5e-3
    txpower_sweep: tuple = tuple(float(p) for p in range(1, 16))
    legit_txpower: float = 15.0
    seed: int = 0
    init_duration: float = 0.125
    n_tx: int = 1
    n_rx: int = 3
    n_sub: int = N_SUB
    meas_noise_std: float = 0.05
    k_factor: float = 10.0
    n_taps: int = 4
    max_delay_s: float = 150e-9
    legit_path_gain_db: float = -75.0
    attacker_path_gain_db: float = -68.0
    shadow_std_db: float = 2.0
    loss_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "txpower_sweep", tuple(float(p) for p in self.txpower_sweep))
        self.validate()

    def validate(self):
        if self.scenario_id not in _SCENARIOS:
            raise InvalidConfig(f"unknown scenario {self.scenario_id!r}")
        if self.duration <= 0:
            raise InvalidConfig("duration must be positive")
        rates = (self.ping_rate_hz, self.probe_period, self.attack_period, self.probe_spacing, self.attack_spacing)
        if min(rates) <= 0:
            raise InvalidConfig("rates, periods and spacings must be positive")
        if self.probe_count < 0 or self.attack_count < 0:
            raise InvalidConfig("burst counts must be non-negative")
        if min(self.legit_doppler_hz, self.attacker_doppler_hz, self.crowd_noise_std, self.meas_noise_std) < 0:
            raise InvalidConfig("doppler and noise parameters must be non-negative")
        if not self.txpower_sweep:
            raise InvalidConfig("txpower sweep is empty")
        if not 0 <= self.loss_prob < 1:
            raise InvalidConfig("loss_prob must lie in [0, 1)")
        if self.init_duration < 0 or self.init_duration >= self.duration:
            raise InvalidConfig("init_duration must lie in [0, duration)")
        try:
            check_dimensions(self.n_tx, self.n_rx, self.n_sub)
        except ValueError as e:
            raise InvalidConfig(str(e)) from e

    @classmethod
    def for_scenario(cls, scenario_id: str, **overrides) -> "ScenarioConfig":
        if scenario_id not in _SCENARIOS:
            raise InvalidConfig(f"unknown scenario {scenario_id!r}")
        legit, attacker, crowd = _SCENARIOS[scenario_id]
        base = cls.__dataclass_fields__["meas_noise_std"].default
        noise = overrides.get("meas_noise_std", base)
        params = dict(
            scenario_id=scenario_id,
            legit_doppler_hz=doppler_for_speed(WALK_SPEED[legit]) if legit else 0.0,
            attacker_doppler_hz=doppler_for_speed(WALK_SPEED[attacker]) if attacker else 0.0,
            crowd_noise_std=noise * (crowd - 1.0),
        )
        params.update(overrides)
        return cls(**params)

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["txpower_sweep"] = list(self.txpower_sweep)
        return d

    @property
    def effective_noise_std(self) -> float:
        return self.meas_noise_std + self.crowd_noise_std

    @property
    def probe_start(self) -> float:
        return self.init_duration + 0.05

    @property
    def attack_start(self) -> float:
        return self.init_duration + 0.25


def _burst_times(start, period, count, spacing, duration):
    if count == 0:
        return np.zeros(0)
    n_bursts = max(0, math.ceil((duration - start) / period))
    starts = start + period * np.arange(n_bursts)
    starts = starts[starts < duration]
    return (starts[:, None] + spacing * np.arange(count)[None, :]).ravel()


@dataclass
class Trace:
    """Time-ordered labeled frames, stored column-wise.

    Indexing or iterating yields :class:`Frame` objects; the detector
    pipeline reads the columns directly.
    """

    times: np.ndarray
    frame_type: np.ndarray
    encrypted: np.ndarray
    seq: np.ndarray
    txpower: np.ndarray
    source_truth: np.ndarray
    rss: np.ndarray
    csi: np.ndarray  # (n_frames, n_tx, n_rx, n_sub) complex64
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    f_s: float | None = None  # DATA rate after decimation; None = native

    def __post_init__(self):
        if self.f_s is None:
            self.f_s = float(self.config.ping_rate_hz)

    def __len__(self):
        return self.times.shape[0]

    def __getitem__(self, i) -> Frame:
        return Frame(
            float(self.times[i]),
            FrameType(int(self.frame_type[i])),
            bool(self.encrypted[i]),
            int(self.seq[i]),
            float(self.txpower[i]),
            Source(int(self.source_truth[i])),
            CsiMatrix(self.csi[i]),
            float(self.rss[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def select(self, mask_or_index) -> "Trace":
        return Trace(
            self.times[mask_or_index],
            self.frame_type[mask_or_index],
            self.encrypted[mask_or_index],
            self.seq[mask_or_index],
            self.txpower[mask_or_index],
            self.source_truth[mask_or_index],
            self.rss[mask_or_index],
            self.csi[mask_or_index],
            self.config,
            self.f_s,
        )

    def count(self, frame_type: FrameType, source: Source | None = None) -> int:
        m = self.frame_type == int(frame_type)
        if source is not None:
            m &= self.source_truth == int(source)
        return int(m.sum())

    @classmethod
    def empty(cls, config: ScenarioConfig | None = None) -> "Trace":
        cfg = config or ScenarioConfig()
        return cls(
            np.zeros(0),
            np.zeros(0, np.int8),
            np.zeros(0, bool),
            np.zeros(0, np.int64),
            np.zeros(0),
            np.zeros(0, np.int8),
            np.zeros(0),
            np.zeros((0, cfg.n_tx, cfg.n_rx, cfg.n_sub), np.complex64),
            cfg,
        )

    @classmethod
    def from_frames(cls, frames, config: ScenarioConfig | None = None) -> "Trace":
        frames = list(frames)
        if not frames:
            return cls.empty(config)
        return cls(
            np.array([f.arrival_time for f in frames], float),
            np.array([int(f.frame_type) for f in frames], np.int8),
            np.array([f.encrypted for f in frames], bool),
            np.array([f.seq for f in frames], np.int64),
            np.array([f.txpower for f in frames], float),
            np.array([int(f.source_truth) for f in frames], np.int8),
            np.array([f.rss for f in frames], float),
            np.stack([np.asarray(f.csi.entries) for f in frames]).astype(np.complex64),
            config or ScenarioConfig(),
        )


def _link_streams(seed: int):
    ss = np.random.SeedSequence(seed)
    names = ("legit_init", "attacker_init", "legit_fade", "attacker_fade", "legit_noise", "attacker_noise",
             "legit_shadow", "attacker_shadow", "loss")
    return dict(zip(names, (np.random.default_rng(s) for s in ss.spawn(len(names)))))


def make_links(cfg: ScenarioConfig, streams=None):
    """Initial legitimate and attacker channel states for a scenario."""
    streams = streams or _link_streams(cfg.seed)
    common = dict(
        k_factor=cfg.k_factor,
        meas_noise_std=cfg.effective_noise_std,
        n_tx=cfg.n_tx,
        n_rx=cfg.n_rx,
        n_sub=cfg.n_sub,
        n_taps=cfg.n_taps,
        max_delay_s=cfg.max_delay_s,
        shadow_std_db=cfg.shadow_std_db,
    )
    legit = new_channel(streams["legit_init"], cfg.legit_doppler_hz, path_gain_db=cfg.legit_path_gain_db, **common)
    attacker = new_channel(
        streams["attacker_init"], cfg.attacker_doppler_hz, path_gain_db=cfg.attacker_path_gain_db, **common
    )
    return legit, attacker


def _observe(ch: ChannelState, gains: np.ndarray, txpower: np.ndarray, noise_rng, shadow_rng):
    n = gains.shape[0]
    csi = gains.copy()
    if ch.meas_noise_std > 0:
        csi += ch.meas_noise_std * _cn(noise_rng, gains.shape)
    power = np.sum(np.abs(gains.reshape(n, int(np.prod(gains.shape[1:])))) ** 2, axis=1)
    shadow = ch.shadow_std_db * shadow_rng.standard_normal(n) if ch.shadow_std_db > 0 else np.zeros(n)
    rss = txpower + ch.path_gain_db + 10.0 * np.log10(power) + shadow
    return csi.astype(np.complex64), rss


def run_scenario(cfg: ScenarioConfig) -> Trace:
    """Generate the labeled frame trace seen by the client.

    Legitimate traffic: encrypted ping replies at ``ping_rate_hz`` plus bursts
    of probe responses. Attack traffic: bursts of forged deauthentication
    frames whose transmit power cycles through ``txpower_sweep``. Management
    frames start after the initialization period.
    """
    cfg.validate()
    streams = _link_streams(cfg.seed)
    legit, attacker = make_links(cfg, streams)

    data_t = np.arange(0.0, cfg.duration, 1.0 / cfg.ping_rate_hz)
    # probe responses trail their requests by a fraction of the spacing so
    # they never land on the ping grid
    probe_t = _burst_times(cfg.probe_start, cfg.probe_period, cfg.probe_count, cfg.probe_spacing, cfg.duration)
    probe_t = probe_t + 0.37 * cfg.probe_spacing
    attack_t = _burst_times(cfg.attack_start, cfg.attack_period, cfg.attack_count, cfg.attack_spacing, cfg.duration)
    attack_t = attack_t + 0.71 * cfg.attack_spacing

    legit_t = np.concatenate([data_t, probe_t])
    legit_type = np.concatenate(
        [np.full(data_t.shape, FrameType.DATA, np.int8), np.full(probe_t.shape, FrameType.PROBE_RESPONSE, np.int8)]
    )
    order = np.argsort(legit_t, kind="stable")
    legit_t, legit_type = legit_t[order], legit_type[order]

    legit_gains = evolve_path(legit, legit_t, streams["legit_fade"])
    attack_gains = evolve_path(attacker, attack_t, streams["attacker_fade"])

    legit_tx = np.full(legit_t.shape, cfg.legit_txpower)
    sweep = np.asarray(cfg.txpower_sweep)
    attack_tx = sweep[np.arange(attack_t.shape[0]) % sweep.shape[0]]
    legit_csi, legit_rss = _observe(legit, legit_gains, legit_tx, streams["legit_noise"], streams["legit_shadow"])
    attack_csi, attack_rss = _observe(
        attacker, attack_gains, attack_tx, streams["attacker_noise"], streams["attacker_shadow"]
    )

    times = np.concatenate([legit_t, attack_t])
    ftype = np.concatenate([legit_type, np.full(attack_t.shape, FrameType.DEAUTH, np.int8)])
    truth = np.concatenate(
        [np.full(legit_t.shape, Source.LEGIT, np.int8), np.full(attack_t.shape, Source.ATTACKER, np.int8)]
    )
    txp = np.concatenate([legit_tx, attack_tx])
    rss = np.concatenate([legit_rss, attack_rss])
    csi = np.concatenate([legit_csi, attack_csi])
    order = np.argsort(times, kind="stable")
    times, ftype, truth, txp, rss, csi = times[order], ftype[order], truth[order], txp[order], rss[order], csi[order]
    times = _strictly_increasing(times)

    if cfg.loss_prob > 0:
        keep = streams["loss"].random(times.shape[0]) >= cfg.loss_prob
        times, ftype, truth, txp, rss, csi = times[keep], ftype[keep], truth[keep], txp[keep], rss[keep], csi[keep]

    encrypted = ftype == FrameType.DATA
    seq = np.zeros(times.shape[0], np.int64)
    for t in (FrameType.DATA, FrameType.PROBE_RESPONSE, FrameType.DEAUTH):
        m = ftype == t
        seq[m] = np.arange(int(m.sum())) % 4096
    return Trace(times, ftype, encrypted, seq, txp, truth, rss, csi, cfg)


def _strictly_increasing(times: np.ndarray) -> np.ndarray:
    bad = np.flatnonzero(np.diff(times) <= 0)
    if bad.size == 0:
        return times
    times = times.copy()
    for i in range(bad[0] + 1, times.shape[0]):
        if times[i] <= times[i - 1]:
            times[i] = np.nextafter(times[i - 1], np.inf)
    return times


def decimate(trace: Trace, f_s: float) -> Trace:
    """Uniformly thin encrypted DATA frames to ``f_s`` Hz.

    Management and attack frames are untouched, and so are the DATA frames of
    the initialization period, which the receiver uses for calibration.
    """
    native = trace.f_s
    if f_s <= 0:
        raise RateTooHigh(f"sampling rate must be positive, got {f_s}")
    if f_s > native * (1 + 1e-9):
        raise RateTooHigh(f"cannot raise a {native} Hz ping stream to {f_s} Hz")
    data = trace.frame_type == FrameType.DATA
    thin = np.flatnonzero(data & (trace.times >= trace.config.init_duration))
    n = thin.shape[0]
    if n == 0 or f_s >= native * (1 - 1e-12):
        out = trace.select(slice(None))
    else:
        picks = np.unique(np.floor(np.arange(0.0, n, native / f_s) + 1e-9).astype(int))
        keep = ~data | (trace.times < trace.config.init_duration)
        keep[thin[picks[picks < n]]] = True
        out = trace.select(keep)
    out.f_s = float(f_s)
    return out
