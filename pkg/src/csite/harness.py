"""Run detectors over traces, score them, sweep parameters, evaluate CRE.

Error rates follow the attack-test definitions: the false-positive rate is the
share of forged deauthentication frames the client accepts, the
false-negative rate is the share of genuine probe responses it rejects.
Empty denominators give ``None`` (with the counts alongside), never 0.
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .assurance import (
    CreConfig,
    NackMessage,
    SenderEvent,
    SenderPhase,
    SenderState,
    decode_nack,
    encode_nack,
    receiver_on_verdict,
    sender_step,
)
from .channel import (
    ScenarioConfig,
    Trace,
    _link_streams,
    decimate,
    make_links,
    run_scenario,
    sample_csi,
    step_channel,
)
from .csi import CsiMatrix, Frame, FrameType, Source, amplitudes, reduce, reduce_batch
from .detector import Detector, DetectorConfig, Verdict
from .errors import EmptyTrace, InvalidAxisValue, InvalidConfig

__all__ = [
    "DetectorKind",
    "Axis",
    "DetectionReport",
    "CreReport",
    "feature_points",
    "run_detector",
    "score",
    "evaluate",
    "sweep",
    "evaluate_cre",
]


class DetectorKind(enum.Enum):
    CSITE = "csite"
    RSS_BASELINE = "rss_baseline"


class Axis(enum.Enum):
    FS = "fs"
    K = "k"
    LW = "lw"
    DTS = "dts"
    LPRE = "lpre"


@dataclass
class DetectionReport:
    scenario_id: str
    f_s: float
    detector_kind: DetectorKind
    fp_rate: float | None
    fn_rate: float | None
    n_attack: int
    n_legit_mf: int
    n_false_accept: int
    n_false_reject: int
    n_encrypted_rejected: int
    seed: int
    detector_config: dict = field(default_factory=dict)
    scenario_config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detector_kind"] = self.detector_kind.value
        d["type"] = "detection"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionReport":
        d = {k: v for k, v in d.items() if k != "type"}
        d["detector_kind"] = DetectorKind(d["detector_kind"])
        return cls(**d)


@dataclass
class CreReport:
    scenario_id: str
    f_s: float
    l_pre: int
    one_shot_rate: float | None
    attempts: dict
    n_submitted: int
    seeds: list
    detector_config: dict = field(default_factory=dict)
    cre_config: dict = field(default_factory=dict)
    n_spoof_alarms: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["type"] = "cre"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CreReport":
        d = {k: v for k, v in d.items() if k != "type"}
        return cls(**d)


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


def feature_points(trace: Trace, kind: DetectorKind = DetectorKind.CSITE) -> np.ndarray:
    """Per-frame detector input: reduced CSI amplitudes, or RSS as a 1-d point."""
    kind = DetectorKind(kind)
    if kind is DetectorKind.RSS_BASELINE:
        return np.asarray(trace.rss, dtype=float)[:, None]
    return reduce_batch(amplitudes(trace.csi))


def run_detector(trace: Trace, cfg: DetectorConfig, kind=DetectorKind.CSITE):
    """Feed every frame of ``trace`` through a fresh detector.

    Returns the detector (with its verdict log) and a boolean array that is
    True where the frame was trusted.
    """
    pts = feature_points(trace, kind)
    det = Detector(cfg, pts.shape[1])
    times = trace.times
    enc = trace.encrypted
    trusted = enc.copy()
    # runs of encrypted frames go in as blocks; management frames one by one
    edges = np.flatnonzero(np.diff(enc.astype(np.int8))) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [len(trace)]))
    ok = Verdict.TRUSTED
    for a, b in zip(starts.tolist(), ends.tolist()):
        if enc[a]:
            det.accept_encrypted(pts[a:b], times[a:b], range(a, b))
        else:
            for i in range(a, b):
                trusted[i] = det.classify_values(pts[i], float(times[i]), False, i) is ok
    return det, trusted


def score(trace: Trace, trusted: np.ndarray) -> dict:
    """Error counts for per-frame verdicts (True = trusted)."""
    trusted = np.asarray(trusted, bool)
    attack = (trace.frame_type == FrameType.DEAUTH) & (trace.source_truth == Source.ATTACKER)
    legit_mf = (trace.frame_type == FrameType.PROBE_RESPONSE) & (trace.source_truth == Source.LEGIT)
    n_attack = int(attack.sum())
    n_legit = int(legit_mf.sum())
    fa = int((attack & trusted).sum())
    fr = int((legit_mf & ~trusted).sum())
    return dict(
        fp_rate=_rate(fa, n_attack),
        fn_rate=_rate(fr, n_legit),
        n_attack=n_attack,
        n_legit_mf=n_legit,
        n_false_accept=fa,
        n_false_reject=fr,
        n_encrypted_rejected=int((trace.encrypted & ~trusted).sum()),
    )


def evaluate(trace: Trace, cfg: DetectorConfig | None = None, kind=DetectorKind.CSITE) -> DetectionReport:
    if len(trace) == 0:
        raise EmptyTrace("cannot evaluate an empty trace")
    cfg = cfg or DetectorConfig()
    kind = DetectorKind(kind)
    _, trusted = run_detector(trace, cfg, kind)
    return DetectionReport(
        scenario_id=trace.config.scenario_id,
        f_s=float(trace.f_s),
        detector_kind=kind,
        seed=trace.config.seed,
        detector_config=cfg.to_dict(),
        scenario_config=trace.config.to_dict(),
        **score(trace, trusted),
    )


# ---------------------------------------------------------------------------
# Sweeps


def _axis_configs(axis: Axis, values, base: DetectorConfig):
    out = []
    for v in values:
        try:
            if axis is Axis.K:
                out.append(base.replace(k=int(v)))
            elif axis is Axis.LW:
                out.append(base.replace(l_w=int(v)))
            elif axis is Axis.DTS:
                flag = {"on": True, "off": False}.get(v, v) if isinstance(v, str) else v
                if not isinstance(flag, (bool, np.bool_)):
                    raise InvalidConfig(f"DTS value must be on/off, got {v!r}")
                out.append(base.replace(dts_enabled=bool(flag)))
            elif axis is Axis.FS:
                if not float(v) > 0:
                    raise InvalidConfig(f"f_s must be positive, got {v!r}")
                out.append(base)
            else:
                if int(v) < 0 or int(v) > base.l_w:
                    raise InvalidConfig(f"L_pre must lie in [0, {base.l_w}], got {v!r}")
                out.append(base)
        except (InvalidConfig, TypeError, ValueError) as e:
            raise InvalidAxisValue(f"{axis.value}={v!r}: {e}") from e
    return out


def _sweep_cell(args):
    axis, values, cfgs, sc_cfg, f_s, kinds, cre_cfg = args
    if axis is Axis.LPRE:
        return [
            evaluate_cre(sc_cfg, cfg, cre_cfg, f_s, int(v), [sc_cfg.seed], duration=sc_cfg.duration)
            for v, cfg in zip(values, cfgs)
        ]
    trace = run_scenario(sc_cfg)
    reports = []
    for v, cfg in zip(values, cfgs):
        rate = float(v) if axis is Axis.FS else f_s
        tr = decimate(trace, rate)
        reports.append([evaluate(tr, cfg, kind) for kind in kinds])
    return reports


def sweep(
    axis,
    values,
    base_cfg: DetectorConfig | None = None,
    scenarios=("A",),
    seeds=(0,),
    *,
    duration: float = 300.0,
    f_s: float = 100.0,
    kinds=(DetectorKind.CSITE,),
    cre_cfg: CreConfig | None = None,
    scenario_overrides: dict | None = None,
    n_jobs: int = 1,
) -> list:
    """Evaluate every (value, scenario, seed) cell of a parameter sweep.

    Reports come back ordered by value, then scenario, then seed, then
    detector kind, whatever ``n_jobs`` is. One trace is generated per
    (scenario, seed) and reused across values. The LPRE axis yields
    :class:`CreReport` objects, all other axes :class:`DetectionReport`.
    """
    axis = Axis(axis)
    values = list(values)
    if not values:
        raise InvalidAxisValue("sweep needs at least one value")
    base_cfg = base_cfg or DetectorConfig()
    cfgs = _axis_configs(axis, values, base_cfg)
    kinds = [DetectorKind(k) for k in kinds]
    cre_cfg = cre_cfg or CreConfig(l_w_peer=base_cfg.l_w)
    overrides = dict(scenario_overrides or {})
    overrides.setdefault("duration", duration)
    cells = [(sc, seed) for sc in scenarios for seed in seeds]
    jobs = [
        (axis, values, cfgs, ScenarioConfig.for_scenario(sc, seed=int(seed), **overrides), f_s, kinds, cre_cfg)
        for sc, seed in cells
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    out = []
    for vi in range(len(values)):
        for res in results:
            cell = res[vi]
            out.extend(cell if isinstance(cell, list) else [cell])
    return out


# ---------------------------------------------------------------------------
# CRE evaluation


# the N-ACK only needs the frame's type and sequence number
_NO_CSI = CsiMatrix(np.zeros((1, 1, 2), complex))


class _Receiver:
    """Client side of the coupled CRE simulation: channel, detector, clock."""

    def __init__(self, ch, det: Detector, fade_rng, noise_rng, loss_rng, loss_prob: float):
        self.ch = ch
        self.t_ch = 0.0
        self.last_t = -math.inf
        self.det = det
        self.fade_rng = fade_rng
        self.noise_rng = noise_rng
        self.loss_rng = loss_rng
        self.loss_prob = loss_prob

    def receive(self, t: float, frame_type: FrameType, seq: int) -> tuple[float, Verdict | None]:
        if t <= self.last_t:
            t = float(np.nextafter(self.last_t, np.inf))
        self.last_t = t
        self.ch = step_channel(self.ch, t - self.t_ch, self.fade_rng)
        self.t_ch = t
        csi = sample_csi(self.ch, self.noise_rng)
        if self.loss_prob and self.loss_rng.random() < self.loss_prob:
            return t, None
        point = reduce(amplitudes(csi), t)
        return t, self.det.classify(point, frame_type is FrameType.DATA)


def _cre_single(sc: ScenarioConfig, cfg: DetectorConfig, cre_cfg: CreConfig, f_s: float, l_pre: int,
                mf_period: float):
    streams = _link_streams(sc.seed)
    legit, _ = make_links(sc, streams)
    thin_rng = np.random.default_rng(np.random.SeedSequence([sc.seed, 0xC3E]))
    det = Detector(cfg, legit.gains.size // 2)
    rx = _Receiver(legit, det, streams["legit_fade"], streams["legit_noise"], streams["loss"], sc.loss_prob)

    native = sc.ping_rate_hz
    if f_s > native:
        raise InvalidConfig(f"f_s={f_s} exceeds the native ping rate {native}")
    data_t = np.arange(0.0, sc.duration, 1.0 / native)
    keep = (data_t < sc.init_duration) | (thin_rng.random(data_t.shape[0]) < f_s / native)
    background = data_t[keep].tolist()
    bg_i = 0

    first_cfg = cre_cfg.replace(l1=l_pre)
    outcomes = Counter()
    alarms = 0
    seq = 0
    t_submit = sc.init_duration + 0.5 + 0.37e-3
    while t_submit < sc.duration:
        state, schedule = sender_step(SenderState(), SenderEvent.SUBMIT_MF, first_cfg,
                                      NackMessage(FrameType.PROBE_RESPONSE.name, seq))
        t0 = t_submit
        while True:
            burst = [t0 + off for off, _ in schedule]
            for t in burst[:-1]:
                while bg_i < len(background) and background[bg_i] < t:
                    rx.receive(background[bg_i], FrameType.DATA, 0)
                    bg_i += 1
                rx.receive(t, FrameType.DATA, 0)
            while bg_i < len(background) and background[bg_i] < burst[-1]:
                rx.receive(background[bg_i], FrameType.DATA, 0)
                bg_i += 1
            t_m, verdict = rx.receive(burst[-1], FrameType.PROBE_RESPONSE, seq)
            frame = Frame(t_m, FrameType.PROBE_RESPONSE, False, seq, sc.legit_txpower, Source.LEGIT,
                          _NO_CSI, 0.0)
            nack = None if verdict is None else receiver_on_verdict(frame, verdict)
            if nack is None:
                state, _ = sender_step(state, SenderEvent.ACK_TIMEOUT_CLEAN, first_cfg)
                key = str(state.delivered[-1][1]) if verdict is not None else "lost"
                outcomes[key] += 1
                t_done = t_m + cre_cfg.nack_wait
                break
            wire = encode_nack(nack.frame_type_name, nack.seq)
            state, schedule = sender_step(state, SenderEvent.NACK_RECEIVED, first_cfg, decode_nack(wire))
            alarms += len(state.alarms)
            if state.phase is SenderPhase.EXHAUSTED:
                outcomes["exhausted"] += 1
                t_done = t_m + cre_cfg.rtt
                break
            t0 = t_m + cre_cfg.rtt
        seq += 1
        t_submit = max(t_submit + mf_period, t_done + 1e-3)
    return outcomes, alarms


def evaluate_cre(
    scenario,
    cfg: DetectorConfig | None = None,
    cre_cfg: CreConfig | None = None,
    f_s: float = 5.0,
    l_pre: int = 0,
    seeds=(0,),
    *,
    duration: float = 60.0,
    mf_period: float = 1.0,
) -> CreReport:
    """One-shot delivery rate of management frames sent with CRE.

    Background pings are randomly thinned to ``f_s``; every submission is
    preceded by exactly ``l_pre`` precursors on its first attempt, and
    rejected frames are retried with the regular burst schedule.
    """
    cfg = cfg or DetectorConfig()
    cre_cfg = cre_cfg or CreConfig(l_w_peer=cfg.l_w)
    if not 0 <= l_pre <= cfg.l_w:
        raise InvalidConfig(f"l_pre must lie in [0, {cfg.l_w}], got {l_pre}")
    if isinstance(scenario, ScenarioConfig):
        base = scenario
    else:
        base = ScenarioConfig.for_scenario(str(scenario), duration=duration)
    total = Counter()
    alarms = 0
    seeds = [int(s) for s in seeds]
    for seed in seeds:
        outcomes, a = _cre_single(base.replace(seed=seed), cfg, cre_cfg, f_s, l_pre, mf_period)
        total.update(outcomes)
        alarms += a
    n = sum(total.values())
    keys = [str(j) for j in range(1, cre_cfg.max_attempts + 1)] + ["exhausted", "lost"]
    attempts = {k: int(total.get(k, 0)) for k in keys}
    return CreReport(
        scenario_id=base.scenario_id,
        f_s=float(f_s),
        l_pre=int(l_pre),
        one_shot_rate=_rate(attempts["1"], n),
        attempts=attempts,
        n_submitted=n,
        seeds=seeds,
        detector_config=cfg.to_dict(),
        cre_config=asdict(cre_cfg),
        n_spoof_alarms=alarms,
    )
