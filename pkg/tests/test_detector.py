import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csite.channel import new_channel, sample_csi
from csite.csi import ReducedPoint, amplitudes, euclidean_dist, reduce
from csite.detector import (
    BootstrapPolicy,
    Detector,
    DetectorConfig,
    SlidingWindow,
    Verdict,
    channel_stability,
    dof,
    dynamic_percentile,
    following_coefficient,
    knn_tgd,
    nearest_rank,
    recent_dofs,
    tgd,
    threshold,
    update_frequency,
)
from csite.errors import (
    DimensionMismatch,
    InvalidConfig,
    NotCalibrated,
    WindowNotFull,
    WindowTooSmall,
)


def window_of(values, times=None, capacity=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    times = np.arange(len(values), dtype=float) * 0.01 if times is None else np.asarray(times, float)
    w = SlidingWindow(capacity or len(values), values.shape[1])
    for v, t in zip(values, times):
        w.push_values(v, float(t))
    return w


def pt(values, t):
    return ReducedPoint(np.atleast_1d(np.asarray(values, dtype=float)), t)


# --- brute-force oracles -------------------------------------------------


def oracle_tgd(a, ta, b, tb, lam):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b))) * math.exp(lam * abs(ta - tb))


def oracle_sorted(q, tq, w, lam):
    rows = [(oracle_tgd(q, tq, v, t, lam), -t, i) for i, (v, t) in enumerate(zip(w.values, w.times))]
    return sorted(rows)


def oracle_std(col):
    m = sum(col) / len(col)
    return math.sqrt(sum((x - m) ** 2 for x in col) / len(col))


def oracle_stability(vals):
    vals = [list(v) for v in vals]
    diffs = [[abs(a - b) for a, b in zip(p, q)] for p, q in zip(vals[:-1], vals[1:])]
    return sum(oracle_std(c) for c in zip(*diffs)) / len(diffs[0])


# --- following coefficient and tgd ---------------------------------------


def test_following_coefficient():
    assert following_coefficient(3.0, 3.0, 1.0) == 1.0
    assert following_coefficient(0.0, 1.0, 0.0) == 1.0
    assert following_coefficient(2.0, 1.0, 1.0) == pytest.approx(math.e, rel=1e-15)


def test_following_coefficient_saturates():
    assert math.isfinite(following_coefficient(0.0, 1e6, 1.0))


def test_tgd_examples():
    assert tgd(pt([1, 2], 0.5), pt([1, 2], 0.5), 1.0) == 0.0
    assert tgd(pt([0, 0], 1.0), pt([0, 2], 1.0), 1.0) == 2.0
    assert tgd(pt([0, 0], 0.0), pt([0, 2], 1.0), 1.0) == pytest.approx(2 * math.e, rel=1e-15)
    assert tgd(pt([0, 0], 0.0), pt([0, 2], 1.0), 1.0) == pytest.approx(5.43656, abs=1e-5)


def test_tgd_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        tgd(pt([0, 0], 0.0), pt([0], 0.0), 1.0)


coords = st.lists(st.floats(-100, 100), min_size=3, max_size=3)


@given(coords, coords, st.floats(0, 10), st.floats(0, 10), st.floats(0, 5))
def test_tgd_dominates_distance(a, b, ta, tb, lam):
    d = euclidean_dist(np.array(a), np.array(b))
    g = tgd(pt(a, ta), pt(b, tb), lam)
    assert g >= d
    if ta == tb or lam == 0:
        assert g == pytest.approx(d, rel=1e-12, abs=0)


# --- kNN -------------------------------------------------------------------


def test_knn_whole_window():
    rng = np.random.default_rng(0)
    w = window_of(rng.random((6, 4)))
    got = knn_tgd(pt(rng.random(4), 1.0), w, 6, 1.0)
    assert sorted(p.arrival_time for p in got) == sorted(w.times.tolist())


def test_knn_ties_prefer_newest():
    w = window_of(np.ones((5, 3)))
    got = knn_tgd(pt(np.ones(3), 1.0), w, 2, 0.0)
    assert [p.arrival_time for p in got] == [w.times[-1], w.times[-2]]


def test_knn_window_too_small():
    w = window_of(np.ones((3, 2)))
    with pytest.raises(WindowTooSmall):
        knn_tgd(pt([1, 1], 1.0), w, 4, 1.0)


def test_knn_matches_full_sort():
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = window_of(rng.random((45, 45)), np.cumsum(rng.uniform(0.001, 0.05, 45)))
        q, tq = rng.random(45), float(w.times[-1] + 0.01)
        ref = oracle_sorted(q, tq, w, 1.0)[:5]
        got = knn_tgd(pt(q, tq), w, 5, 1.0)
        assert [p.arrival_time for p in got] == [w.times[r[2]] for r in ref]


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 30), st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(0, 3))
def test_knn_property(n, dim, seed, lam):
    rng = np.random.default_rng(seed)
    # coarse values so exact ties happen
    w = window_of(rng.integers(0, 3, (n, dim)), np.cumsum(rng.integers(1, 4, n)) * 0.01)
    k = int(rng.integers(1, n + 1))
    q = rng.integers(0, 3, dim).astype(float)
    tq = float(w.times[-1] + 0.01)
    ref = oracle_sorted(q, tq, w, lam)[:k]
    got = knn_tgd(pt(q, tq), w, k, lam)
    assert [p.arrival_time for p in got] == [w.times[r[2]] for r in ref]


# --- DoF -------------------------------------------------------------------


def test_dof_duplicate_point():
    w = window_of(np.arange(10.0))
    assert dof(pt([w.values[4, 0]], float(w.times[4])), w, 1, 1.0) == 0.0


def test_dof_mean_of_smallest():
    # distances 1, 2, 3, 9 from the query at 0 with no time gain
    w = window_of([1.0, 9.0, 2.0, 3.0])
    assert dof(pt([0.0], 5.0), w, 3, 0.0) == 2.0


def test_dof_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(6, 46))
        w = window_of(rng.normal(size=(n, 45)), np.cumsum(rng.uniform(0.001, 0.05, n)))
        q, tq = rng.normal(size=45), float(w.times[-1] + 0.02)
        k = int(rng.integers(1, n))
        ref = sum(r[0] for r in oracle_sorted(q, tq, w, 1.0)[:k]) / k
        assert dof(pt(q, tq), w, k, 1.0) == pytest.approx(ref, rel=1e-9)


# --- channel stability ---------------------------------------------------


def test_stability_identical_points():
    assert channel_stability(window_of(np.ones((10, 5)))) == 0.0


def test_stability_needs_three_points():
    with pytest.raises(WindowTooSmall):
        channel_stability(window_of(np.ones((2, 5))))


@pytest.mark.parametrize("c", [0.0, 0.5, 3.0, 1e4])
def test_stability_scales(c):
    rng = np.random.default_rng(3)
    v = rng.random((20, 7))
    assert channel_stability(window_of(c * v)) == pytest.approx(c * channel_stability(window_of(v)), rel=1e-12)


def test_stability_matches_two_pass_std():
    rng = np.random.default_rng(4)
    for _ in range(50):
        v = rng.normal(size=(45, 45)) * rng.uniform(0.01, 10)
        assert channel_stability(window_of(v)) == pytest.approx(oracle_stability(v), rel=1e-9)


# --- percentile and threshold ----------------------------------------------


def test_dynamic_percentile():
    cfg = DetectorConfig()
    assert dynamic_percentile(0.2, 0.2, cfg) == 75
    assert dynamic_percentile(0.4, 0.2, cfg) == 37.5
    assert dynamic_percentile(0.0, 0.2, cfg) == 99
    assert dynamic_percentile(1e9, 0.2, cfg) == 5
    assert dynamic_percentile(0.4, None, cfg.replace(dts_enabled=False)) == 75
    with pytest.raises(NotCalibrated):
        dynamic_percentile(0.4, None, cfg)


def test_nearest_rank():
    assert nearest_rank([5, 3, 1, 4, 2], 75) == 4
    assert nearest_rank([5, 3, 1, 4, 2], 100) == 5
    assert nearest_rank([5, 3, 1, 4, 2], 1) == 1
    assert nearest_rank([5, 3, 1, 4, 2], 60) == 3
    with pytest.raises(ValueError):
        nearest_rank([], 50)


def test_threshold_constant_dofs():
    # evenly spaced 1-d points, no time gain: every recent DoF is the same
    w = window_of(np.arange(0.0, 20.0, 2.0))
    for i in (5, 50, 75, 99):
        assert threshold(w, 1, 0.0, i) == 2.0


def test_threshold_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(7, 46))
        k = int(rng.integers(1, min(n - 1, 8)))
        v = rng.normal(size=(n, 10))
        w = window_of(v, np.cumsum(rng.uniform(0.001, 0.05, n)))
        dofs = []
        for j in range(n - k, n):
            others = [r for r in oracle_sorted(v[j], float(w.times[j]), w, 1.0) if r[2] != j]
            dofs.append(sum(r[0] for r in others[:k]) / k)
        dofs.sort()
        i = float(rng.uniform(1, 100))
        expected = dofs[max(1, math.ceil(i * len(dofs) / 100)) - 1]
        assert threshold(w, k, 1.0, i) == pytest.approx(expected, rel=1e-9)


def test_threshold_monotone_in_percentile():
    rng = np.random.default_rng(6)
    w = window_of(rng.normal(size=(45, 45)))
    taus = [threshold(w, 5, 1.0, i) for i in range(1, 101)]
    assert all(b >= a for a, b in zip(taus, taus[1:]))


def test_recent_dofs_excludes_self():
    w = window_of(np.arange(10.0))
    q = recent_dofs(w, 1, 0.0)
    assert np.all(q == 1.0)


# --- window ---------------------------------------------------------------


def test_window_fifo_and_cache():
    rng = np.random.default_rng(7)
    w = SlidingWindow(5, 3)
    vals = rng.random((12, 3))
    for i, v in enumerate(vals):
        w.push_values(v, float(i))
        assert len(w) == min(i + 1, 5)
    assert w.times.tolist() == [7.0, 8.0, 9.0, 10.0, 11.0]
    for a in range(5):
        for b in range(5):
            assert w.dist_cache[a, b] == pytest.approx(euclidean_dist(w.values[a], w.values[b]), rel=1e-12)


def test_window_rejects_stale_time_and_bad_dim():
    w = window_of(np.ones((3, 2)))
    with pytest.raises(ValueError):
        w.push_values(np.ones(2), float(w.times[-1]))
    with pytest.raises(DimensionMismatch):
        w.push_values(np.ones(3), 99.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.lists(st.integers(1, 30), min_size=1, max_size=8), st.integers(0, 2**32 - 1))
def test_extend_equals_sequential_push(cap, blocks, seed):
    rng = np.random.default_rng(seed)
    a, b = SlidingWindow(cap, 4), SlidingWindow(cap, 4)
    t = 0.0
    for m in blocks:
        vals = rng.random((m, 4))
        times = t + np.arange(1, m + 1) * 0.01
        t = float(times[-1])
        a.extend(vals, times)
        for v, tt in zip(vals, times):
            b.push_values(v, float(tt))
        assert len(a) == len(b) <= cap
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.dist_cache, b.dist_cache)


# --- config ---------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [dict(k=45), dict(k=0), dict(lam=-1.0), dict(i0=101), dict(i_min=80), dict(sigma_ref_floor=0.0), dict(t_im=0.0)],
)
def test_config_rejects(kw):
    with pytest.raises(InvalidConfig):
        DetectorConfig(**kw)


def test_config_defaults():
    c = DetectorConfig()
    assert (c.k, c.lam, c.l_w, c.i0, c.i_min, c.i_max) == (5, 1.0, 45, 75.0, 5.0, 99.0)
    assert DetectorConfig(lam=-1.0, allow_negative_lambda=True).lam == -1.0


def test_update_frequency():
    assert update_frequency(1.0, 0.2) == 1.0
    assert update_frequency(1.0, 50.0) == 50.0


# --- Detector ---------------------------------------------------------------


def static_stream(n, noise=0.01, seed=0, rate=100.0):
    rng = np.random.default_rng(seed)
    ch = new_channel(rng, meas_noise_std=noise)
    pts = [reduce(amplitudes(sample_csi(ch, rng)), i / rate) for i in range(n)]
    return ch, rng, pts


def filled_detector(cfg=None, n=45, seed=0):
    ch, rng, pts = static_stream(n, seed=seed)
    det = Detector(cfg or DetectorConfig())
    for p in pts:
        assert det.classify(p, encrypted=True) is Verdict.TRUSTED
    return det, ch, rng


def test_encrypted_frames_fill_window():
    det = Detector(DetectorConfig(l_w=10, k=3))
    _, _, pts = static_stream(25)
    for i, p in enumerate(pts):
        assert det.classify(p, True) is Verdict.TRUSTED
        assert len(det.window) == min(i + 1, 10)
    assert det.calibrated


def test_duplicate_of_newest_is_trusted():
    det, _, _ = filled_detector(DetectorConfig(k=1))
    newest = det.window.values[-1].copy()
    t = float(det.window.times[-1])
    # the window needs strictly increasing times, so the copy arrives 1 ns later
    assert det.classify((newest, t + 1e-9), False) is Verdict.TRUSTED
    assert det.verdict_log[-1].dof == 0.0
    with pytest.raises(ValueError):
        det.classify((newest, t + 1e-9), True)


def test_attacker_points_rejected():
    rejected = 0
    trials = 1000
    for s in range(trials):
        rng = np.random.default_rng(10_000 + s)
        legit = new_channel(rng, meas_noise_std=0.01)
        attacker = new_channel(rng, meas_noise_std=0.01)
        det = Detector(DetectorConfig())
        for i in range(45):
            det.classify(reduce(amplitudes(sample_csi(legit, rng)), i * 0.01), True)
        forged = reduce(amplitudes(sample_csi(attacker, rng)), 0.455)
        rejected += det.classify(forged, False) is Verdict.SUSPICIOUS
    assert rejected / trials >= 0.99


def test_suspicious_leaves_window_alone():
    det, _, rng = filled_detector()
    w = det.window
    before = (w.values.copy(), w.times.copy(), w.dist_cache.copy(), w.version)
    attacker = new_channel(np.random.default_rng(99), meas_noise_std=0.01)
    v = det.classify(reduce(amplitudes(sample_csi(attacker, rng)), 1.0), False)
    assert v is Verdict.SUSPICIOUS
    w = det.window
    assert np.array_equal(before[0], w.values) and np.array_equal(before[1], w.times)
    assert np.array_equal(before[2], w.dist_cache) and before[3] == w.version


def test_trusted_mf_inserts_one_point():
    det, ch, rng = filled_detector()
    n_before = len(det.window)
    oldest = det.window.times[0]
    p = reduce(amplitudes(sample_csi(ch, rng)), 0.455)
    if det.classify(p, False) is Verdict.TRUSTED:
        assert len(det.window) == n_before
        assert det.window.times[-1] == 0.455 and det.window.times[0] > oldest


def test_fail_safe_bootstrap():
    det = Detector(DetectorConfig())
    _, _, pts = static_stream(10)
    for p in pts[:9]:
        det.classify(p, True)
    assert det.classify(pts[9], False) is Verdict.SUSPICIOUS
    assert len(det.window) == 9
    assert math.isnan(det.verdict_log[-1].dof)


def test_strict_bootstrap():
    det = Detector(DetectorConfig(bootstrap=BootstrapPolicy.STRICT))
    _, _, pts = static_stream(3)
    det.classify(pts[0], True)
    with pytest.raises(NotCalibrated):
        det.classify(pts[1], False)


def test_permissive_bootstrap():
    det = Detector(DetectorConfig(bootstrap=BootstrapPolicy.PERMISSIVE))
    _, _, pts = static_stream(20)
    # fewer than k + 1 points: accepted outright
    for p in pts[:6]:
        assert det.classify(p, False) is Verdict.TRUSTED
    v = det.classify(pts[6], False)
    assert det.verdict_log[-1].percentile == 75
    assert not det.calibrated


def test_calibration():
    det, _, _ = filled_detector()
    ref = oracle_stability(det.window.values)
    assert det.sigma_ref > 0
    assert det.sigma_ref == pytest.approx(ref, rel=1e-9)
    # last write wins
    det.window.push_values(det.window.values[0] * 3, 10.0)
    new = det.calibrate_reference()
    assert det.sigma_ref == new != pytest.approx(ref, rel=1e-9)


def test_calibration_floor_and_not_full():
    det = Detector(DetectorConfig(l_w=10, k=3))
    for i in range(10):
        det.classify((np.ones(45), i * 0.01), True)
    assert det.sigma_ref == 1e-9
    with pytest.raises(WindowNotFull):
        Detector().calibrate_reference()


def test_needs_probe():
    det = Detector()
    assert det.needs_probe(0.0)
    det.classify((np.ones(45), 1.0), True)
    assert not det.needs_probe(1.5)
    assert det.needs_probe(2.5)


def test_dimension_checked():
    with pytest.raises(DimensionMismatch):
        Detector().classify((np.ones(44), 0.0), True)


def random_stream(seed, n=300):
    rng = np.random.default_rng(seed)
    legit = new_channel(rng, doppler_hz=0.0, meas_noise_std=0.05)
    attacker = new_channel(rng, meas_noise_std=0.05)
    times = np.cumsum(rng.uniform(0.001, 0.02, n))
    kinds = rng.integers(0, 3, n)  # 0 encrypted, 1 legit MF, 2 attacker MF
    pts = [reduce(amplitudes(sample_csi(attacker if k == 2 else legit, rng)), float(t)) for k, t in zip(kinds, times)]
    return pts, kinds


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_stream_invariants(seed, dts):
    pts, kinds = random_stream(seed)
    det = Detector(DetectorConfig(dts_enabled=dts))
    for p, k in zip(pts, kinds):
        w = det.window
        n, version = len(w), w.version
        v = det.classify(p, bool(k == 0))
        if k == 0:
            assert v is Verdict.TRUSTED
        if v is Verdict.SUSPICIOUS:
            assert det.window.version == version and len(det.window) == n
        else:
            assert len(det.window) == min(n + 1, 45)
            assert det.window.times[-1] == p.arrival_time


def log_bytes(det):
    return np.array([(e.dof, e.tau, e.percentile, e.verdict is Verdict.TRUSTED) for e in det.verdict_log]).tobytes()


def test_dts_off_ignores_sigma_ref():
    pts, kinds = random_stream(11, 400)
    logs = []
    for ref in (1e-6, 1.0, 1e6):
        det = Detector(DetectorConfig(dts_enabled=False, auto_calibrate=False))
        det.sigma_ref = ref
        for p, k in zip(pts, kinds):
            det.classify(p, bool(k == 0))
        logs.append(log_bytes(det))
    assert logs[0] == logs[1] == logs[2]


def test_deterministic_log():
    pts, kinds = random_stream(12, 400)
    logs = []
    for _ in range(2):
        det = Detector()
        for p, k in zip(pts, kinds):
            det.classify(p, bool(k == 0))
        logs.append(log_bytes(det))
    assert logs[0] == logs[1]


def test_bulk_encrypted_path_matches_single():
    pts, kinds = random_stream(13, 500)
    a, b = Detector(), Detector()
    for i, (p, k) in enumerate(zip(pts, kinds)):
        a.classify(p, bool(k == 0))
        if k == 0:
            b.accept_encrypted(p.values[None], np.array([p.arrival_time]), [i])
        else:
            b.classify(p, False, i)
    assert log_bytes(a) == log_bytes(b)
    assert np.array_equal(a.window.dist_cache, b.window.dist_cache)


def test_one_dimensional_pipeline():
    det = Detector(DetectorConfig(l_w=10, k=3), dim=1)
    for i in range(10):
        det.classify(([-60.0 + 0.1 * (i % 3)], i * 0.01), True)
    assert det.classify(([-60.0], 0.1), False) is Verdict.TRUSTED
    assert det.classify(([-30.0], 0.11), False) is Verdict.SUSPICIOUS
