"""Acceptance suite shared by ``csite reproduce`` and the test-suite.

Each check returns a :class:`CriterionResult`. Everything that can vary
between runs on the same machine (wall-clock timings) lives in ``timing``
and is kept out of the report document, so two runs with the same seed
write byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .channel import SCENARIO_IDS, ScenarioConfig, decimate, run_scenario
from .csi import ReducedPoint
from .detector import (
    Detector,
    DetectorConfig,
    SlidingWindow,
    Verdict,
    channel_stability,
    dof,
    knn_tgd,
    threshold,
)
from .harness import DetectorKind, evaluate, evaluate_cre, feature_points, run_detector
from .traceio import _jsonable

FS_GRID = (1.0, 5.0, 20.0, 100.0, 400.0)
MOTION = ("D", "E", "F", "G")
STATIONARY = ("A", "B", "C")


@dataclass(frozen=True)
class Profile:
    """Sizes of the acceptance runs. ``seed`` is the first of the seed range."""

    seed: int = 1
    n_seeds: int = 30
    n_seeds_stationary: int = 10
    duration: float = 10.0
    txpower_duration: float = 60.0
    cre_duration: float = 30.0
    perf_duration: float = 300.0
    oracle_instances: int = 1000

    def seeds(self, n: int | None = None) -> list[int]:
        return list(range(self.seed, self.seed + (self.n_seeds if n is None else n)))


QUICK = Profile(n_seeds=3, n_seeds_stationary=2, duration=5.0, txpower_duration=10.0, cre_duration=10.0,
                perf_duration=30.0, oracle_instances=100)


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: dict
    measured: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    timing_limits: dict = field(default_factory=dict)

    @property
    def timing_ok(self) -> bool:
        return all(self.timing[k] <= lim for k, lim in self.timing_limits.items())

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.timing_ok

    def to_dict(self) -> dict:
        # no timings: keeps the document reproducible
        return {"number": self.number, "title": self.title, "checks": dict(self.checks),
                "measured": self.measured}


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


# ---------------------------------------------------------------------------
# 1. brute-force oracles


def _brute_tgd(a, ta, b, tb, lam):
    d = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    return d * math.exp(min(lam * abs(ta - tb), 700.0))


def _brute_knn(q, tq, pts, times, k, lam):
    scored = sorted(
        (_brute_tgd(q, tq, p, t, lam), -t, i) for i, (p, t) in enumerate(zip(pts, times))
    )
    return scored[:k]


def _brute_std(col):
    n = len(col)
    m = sum(col) / n
    return math.sqrt(sum((x - m) ** 2 for x in col) / n)


def _brute_stability(pts):
    diffs = [[abs(a - b) for a, b in zip(p, q)] for p, q in zip(pts[:-1], pts[1:])]
    cols = list(zip(*diffs))
    return sum(_brute_std(c) for c in cols) / len(cols)


def _brute_threshold(pts, times, k, lam, i):
    n = len(pts)
    scores = []
    for j in range(n - k, n):
        rest_p = pts[:j] + pts[j + 1 :]
        rest_t = times[:j] + times[j + 1 :]
        near = _brute_knn(pts[j], times[j], rest_p, rest_t, k, lam)
        scores.append(sum(s[0] for s in near) / k)
    scores.sort()
    # nearest rank: smallest value with at least i% of the set at or below it
    for r in range(1, len(scores) + 1):
        if r * 100 >= i * len(scores) - 1e-9:
            return scores[r - 1]
    return scores[-1]


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def check_oracles(profile: Profile) -> CriterionResult:
    rng = np.random.default_rng(profile.seed)
    worst = {"knn_tgd": 0.0, "dof": 0.0, "channel_stability": 0.0, "threshold": 0.0}
    knn_order_ok = True
    t0 = time.perf_counter()
    for _ in range(profile.oracle_instances):
        dim = int(rng.integers(1, 46))
        n = int(rng.integers(4, 46))
        k = int(rng.integers(1, min(n - 1, 10) + 1))
        lam = float(rng.uniform(0.0, 5.0))
        i = float(rng.uniform(1.0, 100.0))
        scale = float(10 ** rng.uniform(-3, 2))
        vals = rng.normal(0.0, scale, (n, dim))
        times = np.cumsum(rng.uniform(1e-4, 0.05, n))
        w = SlidingWindow(n, dim)
        for v, t in zip(vals, times):
            w.push_values(v, float(t))
        q = rng.normal(0.0, scale, dim)
        tq = float(times[-1] + rng.uniform(1e-4, 0.05))
        pts, tl = vals.tolist(), times.tolist()

        ref = _brute_knn(q.tolist(), tq, pts, tl, k, lam)
        got = knn_tgd(ReducedPoint(q, tq), w, k, lam)
        knn_order_ok &= [p.arrival_time for p in got] == [tl[r[2]] for r in ref]
        for p, r in zip(got, ref):
            worst["knn_tgd"] = max(worst["knn_tgd"], _rel(_brute_tgd(q, tq, p.values, p.arrival_time, lam), r[0]))
        worst["dof"] = max(worst["dof"], _rel(dof((q, tq), w, k, lam), sum(r[0] for r in ref) / k))
        worst["channel_stability"] = max(worst["channel_stability"],
                                         _rel(channel_stability(w), _brute_stability(pts)))
        worst["threshold"] = max(worst["threshold"],
                                 _rel(threshold(w, k, lam, i), _brute_threshold(pts, tl, k, lam, i)))
    elapsed = time.perf_counter() - t0
    checks = {f"{name}_rel_err<=1e-9": v <= 1e-9 for name, v in worst.items()}
    checks["knn_order_matches"] = bool(knn_order_ok)
    return CriterionResult(1, "Oracle equivalence", checks,
                           {"instances": profile.oracle_instances, "max_rel_err": worst},
                           {"runtime_s": elapsed}, {"runtime_s": 5.0})


# ---------------------------------------------------------------------------
# shared scenario grid for criteria 2 and 4-7


@dataclass
class Grid:
    # (scenario, seed, f_s) -> report, CSITE with DTS off
    csite: dict = field(default_factory=dict)
    # (scenario, seed) -> report at 100 Hz
    rss: dict = field(default_factory=dict)
    # (seed, f_s) -> scenario G report with DTS on
    dts: dict = field(default_factory=dict)

    def all_reports(self):
        return [*self.csite.values(), *self.rss.values(), *self.dts.values()]


def build_grid(profile: Profile, progress=None) -> Grid:
    grid = Grid()
    off = DetectorConfig(dts_enabled=False, i0=75)
    on = DetectorConfig(dts_enabled=True)
    for sc in SCENARIO_IDS:
        for seed in profile.seeds():
            trace = run_scenario(ScenarioConfig.for_scenario(sc, seed=seed, duration=profile.duration))
            for fs in FS_GRID:
                tr = decimate(trace, fs)
                grid.csite[sc, seed, fs] = evaluate(tr, off)
                if fs == 100.0 and sc in MOTION:
                    grid.rss[sc, seed] = evaluate(tr, off, DetectorKind.RSS_BASELINE)
                if sc == "G" and fs in (5.0, 20.0):
                    grid.dts[seed, fs] = evaluate(tr, on)
        if progress:
            progress(f"grid: scenario {sc} done")
    return grid


# ---------------------------------------------------------------------------
# 2. filter safety


def window_audit(trace, cfg: DetectorConfig) -> dict:
    """Classify ``trace`` frame by frame, checking that rejections leave the window untouched."""
    pts = feature_points(trace)
    det = Detector(cfg, pts.shape[1])
    violations = suspicious = enc_rejected = 0
    for i in range(len(trace)):
        enc = bool(trace.encrypted[i])
        if not enc:
            w = det.window  # flushes queued encrypted points first
            before = (w.version, w.values.tobytes(), w.times.tobytes(), w.dist_cache.tobytes())
        v = det.classify_values(pts[i], float(trace.times[i]), enc, i)
        if enc and v is not Verdict.TRUSTED:
            enc_rejected += 1
        if not enc and v is Verdict.SUSPICIOUS:
            suspicious += 1
            after = (w.version, w.values.tobytes(), w.times.tobytes(), w.dist_cache.tobytes())
            violations += before != after
    return {"suspicious": suspicious, "violations": violations, "encrypted_rejected": enc_rejected}


def check_safety(profile: Profile, grid: Grid) -> CriterionResult:
    enc_fn = sum(r.n_encrypted_rejected for r in grid.all_reports())
    audit = {"suspicious": 0, "violations": 0, "encrypted_rejected": 0}
    for sc in SCENARIO_IDS:
        trace = decimate(run_scenario(ScenarioConfig.for_scenario(sc, seed=profile.seed, duration=profile.duration)),
                         100.0)
        for dts in (False, True):
            for key, v in window_audit(trace, DetectorConfig(dts_enabled=dts)).items():
                audit[key] += v
    checks = {
        "encrypted_fn==0": enc_fn == 0 and audit["encrypted_rejected"] == 0,
        "suspicious_never_mutates_window": audit["violations"] == 0 and audit["suspicious"] > 0,
    }
    measured = {"grid_reports": len(grid.all_reports()), "encrypted_rejected": enc_fn, **audit}
    return CriterionResult(2, "Filter safety", checks, measured)


# ---------------------------------------------------------------------------
# 3. txpower invariance


def verdict_log_bytes(det: Detector) -> bytes:
    """Verdict log as packed bytes; NaN fields compare equal bitwise."""
    dt = np.dtype([("id", "<i8"), ("dof", "<f8"), ("tau", "<f8"), ("i", "<f8"), ("trusted", "u1")])
    arr = np.array(
        [(e.frame_id, e.dof, e.tau, e.percentile, e.verdict is Verdict.TRUSTED) for e in det.verdict_log], dt
    )
    return arr.tobytes()


def check_txpower(profile: Profile) -> CriterionResult:
    t0 = time.perf_counter()
    sweep_cfg = ScenarioConfig.for_scenario("A", seed=profile.seed, duration=profile.txpower_duration)
    fixed_cfg = sweep_cfg.replace(txpower_sweep=(1.0,))
    traces = [run_scenario(c) for c in (fixed_cfg, sweep_cfg)]
    cfg = DetectorConfig(dts_enabled=False)
    logs = [verdict_log_bytes(run_detector(tr, cfg)[0]) for tr in traces]
    rss = [evaluate(tr, cfg, DetectorKind.RSS_BASELINE) for tr in traces]
    elapsed = time.perf_counter() - t0
    checks = {
        "csite_logs_bitwise_equal": logs[0] == logs[1],
        "rss_fp_differs": rss[0].fp_rate != rss[1].fp_rate,
    }
    measured = {
        "frames": len(traces[0]),
        "log_sha256": hashlib.sha256(logs[1]).hexdigest(),
        "rss_fp_fixed_1dbm": rss[0].fp_rate,
        "rss_fp_sweep_1_15dbm": rss[1].fp_rate,
    }
    return CriterionResult(3, "Txpower invariance", checks, measured, {"runtime_s": elapsed}, {"runtime_s": 30.0})


# ---------------------------------------------------------------------------
# 4-7. trend criteria on the grid


def check_stationary(profile: Profile, grid: Grid) -> CriterionResult:
    seeds = profile.seeds(profile.n_seeds_stationary)
    runs = [grid.csite[sc, s, fs] for sc in STATIONARY for s in seeds for fs in (20.0, 100.0, 400.0)]
    max_fp = max(r.fp_rate for r in runs)
    max_fn = max(r.fn_rate for r in runs)
    mean_fn = {sc: _mean(grid.csite[sc, s, fs].fn_rate for s in seeds for fs in (20.0, 100.0, 400.0))
               for sc in STATIONARY}
    checks = {"fp==0_every_run": max_fp == 0.0, "fn<=1%_every_run": max_fn <= 0.01}
    return CriterionResult(4, "Stationary perfection", checks,
                           {"runs": len(runs), "max_fp": max_fp, "max_fn": max_fn, "mean_fn": mean_fn})


def check_motion(profile: Profile, grid: Grid) -> CriterionResult:
    seeds = profile.seeds()
    checks, measured = {}, {}
    for sc in MOTION:
        cs = _mean(grid.csite[sc, s, 100.0].fp_rate for s in seeds)
        rs = _mean(grid.rss[sc, s].fp_rate for s in seeds)
        checks[f"{sc}:csite<=0.5*rss"] = cs <= 0.5 * rs and rs > 0
        measured[sc] = {"csite_fp": cs, "rss_fp": rs, "improvement": rs / cs if cs else None}
    return CriterionResult(5, "Motion-scenario superiority", checks, measured)


def check_monotone(profile: Profile, grid: Grid) -> CriterionResult:
    seeds = profile.seeds()
    checks, measured = {}, {}
    for sc in SCENARIO_IDS:
        means = [_mean(grid.csite[sc, s, fs].fp_rate for s in seeds) for fs in FS_GRID]
        checks[f"{sc}:nonincreasing"] = all(b <= a for a, b in zip(means, means[1:]))
        measured[sc] = dict(zip((f"{fs:g}Hz" for fs in FS_GRID), means))
    checks["G@400Hz<=3%+2pt"] = measured["G"]["400Hz"] <= 0.05
    return CriterionResult(6, "f_s monotonicity", checks, measured)


def check_dts(profile: Profile, grid: Grid) -> CriterionResult:
    seeds = profile.seeds()
    fp5 = _mean(grid.dts[s, 5.0].fp_rate for s in seeds)
    fp20 = _mean(grid.dts[s, 20.0].fp_rate for s in seeds)
    fn5 = _mean(grid.dts[s, 5.0].fn_rate for s in seeds)
    fn20 = _mean(grid.dts[s, 20.0].fn_rate for s in seeds)
    checks = {"G@5Hz_fp<=10%": fp5 <= 0.10, "G@20Hz_fp<=5%": fp20 <= 0.05}
    return CriterionResult(7, "DTS effectiveness", checks,
                           {"fp_5Hz": fp5, "fp_20Hz": fp20, "fn_5Hz": fn5, "fn_20Hz": fn20})


# ---------------------------------------------------------------------------
# 8. CRE


def check_cre(profile: Profile) -> CriterionResult:
    cfg = DetectorConfig(dts_enabled=True)
    seeds = profile.seeds()
    rate = {}
    for sc, fs, lp in (("A", 5.0, 0), ("A", 5.0, cfg.l_w), ("G", 5.0, 0), ("G", 5.0, cfg.l_w), ("A", 40.0, cfg.l_w)):
        rep = evaluate_cre(sc, cfg, f_s=fs, l_pre=lp, seeds=seeds, duration=profile.cre_duration)
        rate[f"{sc}@{fs:g}Hz,L_pre={lp}"] = {"one_shot": rep.one_shot_rate, "submitted": rep.n_submitted,
                                              "attempts": rep.attempts}
    one = {k: v["one_shot"] for k, v in rate.items()}
    lw = cfg.l_w
    checks = {
        "A@5Hz_gain>=20pt": one[f"A@5Hz,L_pre={lw}"] >= one["A@5Hz,L_pre=0"] + 0.20,
        "G@5Hz_gain>=20pt": one[f"G@5Hz,L_pre={lw}"] >= one["G@5Hz,L_pre=0"] + 0.20,
        "A@40Hz_one_shot>=85%": one[f"A@40Hz,L_pre={lw}"] >= 0.85,
    }
    return CriterionResult(8, "CRE benefit", checks, rate)


# ---------------------------------------------------------------------------
# 9. performance


def check_performance(profile: Profile) -> CriterionResult:
    cfg = DetectorConfig()
    trace = run_scenario(ScenarioConfig.for_scenario("G", seed=profile.seed, duration=min(30.0, profile.perf_duration)))
    pts = feature_points(trace)
    det = Detector(cfg, pts.shape[1])
    times = trace.times.tolist()
    enc = trace.encrypted.tolist()
    classify = det.classify_values
    t0 = time.perf_counter()
    for i in range(len(trace)):
        classify(pts[i], times[i], enc[i], i)
    per_frame_us = (time.perf_counter() - t0) / len(trace) * 1e6

    t0 = time.perf_counter()
    full = run_scenario(ScenarioConfig.for_scenario("G", seed=profile.seed, duration=profile.perf_duration))
    evaluate(full, cfg)
    wall = time.perf_counter() - t0
    measured = {"frames_classified": len(trace), "full_run_frames": len(full), "full_run_duration_s": profile.perf_duration}
    return CriterionResult(9, "Performance envelope", {}, measured,
                           {"classify_us_per_frame": per_frame_us, "simulate_detect_G_s": wall},
                           {"classify_us_per_frame": 50.0, "simulate_detect_G_s": 10.0})


# ---------------------------------------------------------------------------
# 10. determinism


def _fingerprint(profile: Profile) -> str:
    trace = run_scenario(ScenarioConfig.for_scenario("G", seed=profile.seed, duration=min(5.0, profile.duration)))
    reps = [evaluate(decimate(trace, fs), DetectorConfig()).to_dict() for fs in (5.0, 100.0)]
    cre = evaluate_cre("A", DetectorConfig(), f_s=5.0, l_pre=10, seeds=[profile.seed], duration=5.0).to_dict()
    blob = json.dumps(_jsonable({"reports": reps, "cre": cre}), sort_keys=True).encode()
    return hashlib.sha256(trace.csi.tobytes() + blob).hexdigest()


def check_determinism(profile: Profile) -> CriterionResult:
    a, b = _fingerprint(profile), _fingerprint(profile)
    return CriterionResult(10, "Determinism", {"rerun_identical": a == b}, {"sha256": a})


# ---------------------------------------------------------------------------


def run_all(profile: Profile = Profile(), progress=None) -> list[CriterionResult]:
    say = progress or (lambda msg: None)
    results = [check_oracles(profile)]
    say("criterion 1 done")
    grid = build_grid(profile, progress)
    results.append(check_safety(profile, grid))
    say("criterion 2 done")
    results.append(check_txpower(profile))
    say("criterion 3 done")
    results += [check_stationary(profile, grid), check_motion(profile, grid), check_monotone(profile, grid),
                check_dts(profile, grid)]
    results.append(check_cre(profile))
    say("criterion 8 done")
    results.append(check_performance(profile))
    say("criterion 9 done")
    results.append(check_determinism(profile))
    results.sort(key=lambda r: r.number)
    return results


def report_document(results, profile: Profile) -> str:
    doc = {
        "tool": "csite",
        "version": __version__,
        "profile": profile.__dict__,
        "criteria": [r.to_dict() for r in results],
    }
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def timing_document(results) -> str:
    """Wall-clock measurements and their limits, kept out of the report document."""
    doc = {str(r.number): {"timing": r.timing, "limits": r.timing_limits, "passed": r.passed} for r in results}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def format_table(results) -> str:
    lines = [f"{'#':>2}  {'criterion':<28} {'result':<6} detail"]
    for r in results:
        failed = [k for k, ok in r.checks.items() if not ok]
        failed += [f"{k}={r.timing[k]:.3g}>{lim:g}" for k, lim in r.timing_limits.items() if r.timing[k] > lim]
        detail = "failed: " + ", ".join(failed) if failed else "; ".join(
            f"{k}={v:.3g}" for k, v in r.timing.items()) or "ok"
        lines.append(f"{r.number:>2}  {r.title:<28} {'PASS' if r.passed else 'FAIL':<6} {detail}")
    return "\n".join(lines)
