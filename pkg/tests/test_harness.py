import numpy as np
import pytest

from csite.assurance import CreConfig
from csite.channel import ScenarioConfig, Trace, decimate, run_scenario
from csite.csi import CsiMatrix, Frame, FrameType, Source
from csite.detector import DetectorConfig
from csite.errors import EmptyTrace, InvalidAxisValue, InvalidConfig
from csite.harness import (
    Axis,
    CreReport,
    DetectionReport,
    DetectorKind,
    evaluate,
    evaluate_cre,
    run_detector,
    score,
    sweep,
)

TINY = ScenarioConfig(n_tx=1, n_rx=1, n_sub=2, duration=1.0)


def tiny_frame(t, ft, src, amp):
    enc = ft is FrameType.DATA
    csi = CsiMatrix(np.array([[[amp, amp]]], complex))
    return Frame(t, ft, enc, 0, 15.0, src, csi, -60.0)


def hand_trace():
    D, P, X = FrameType.DATA, FrameType.PROBE_RESPONSE, FrameType.DEAUTH
    L, A = Source.LEGIT, Source.ATTACKER
    rows = [
        (D, L, 1.00),
        (D, L, 1.01),
        (D, L, 1.03),
        (X, A, 9.00),  # far away: rejected
        (P, L, 1.03),  # copy of the newest point: accepted
        (X, A, 1.03),  # attacker that happens to match: accepted
        (D, L, 1.02),
        (P, L, 7.00),  # legitimate but far: rejected
        (X, A, 8.00),
        (D, L, 1.01),
    ]
    frames = [tiny_frame(i * 1e-3, ft, src, a) for i, (ft, src, a) in enumerate(rows)]
    return Trace.from_frames(frames, TINY)


HAND_CFG = DetectorConfig(k=1, l_w=3, dts_enabled=False, i0=99.0)


def test_hand_built_trace_counts():
    tr = hand_trace()
    _, trusted = run_detector(tr, HAND_CFG)
    assert trusted.tolist() == [True, True, True, False, True, True, True, False, False, True]
    rep = evaluate(tr, HAND_CFG)
    assert (rep.n_attack, rep.n_false_accept, rep.n_legit_mf, rep.n_false_reject) == (3, 1, 2, 1)
    assert rep.fp_rate == pytest.approx(1 / 3)
    assert rep.fn_rate == 0.5
    assert rep.n_encrypted_rejected == 0


def test_score_from_a_mask():
    tr = hand_trace()
    mask = np.ones(len(tr), bool)
    s = score(tr, mask)
    assert s["n_false_accept"] == 3 and s["n_false_reject"] == 0 and s["fp_rate"] == 1.0
    s = score(tr, ~mask)
    assert s["fn_rate"] == 1.0 and s["fp_rate"] == 0.0 and s["n_encrypted_rejected"] == 5


def test_zero_attack_rate_is_undefined():
    tr = run_scenario(ScenarioConfig.for_scenario("A", duration=2.0, attack_count=0))
    rep = evaluate(decimate(tr, 100.0))
    assert rep.n_attack == 0 and rep.fp_rate is None
    assert rep.fn_rate is not None


def test_empty_trace():
    with pytest.raises(EmptyTrace):
        evaluate(Trace.empty())


def test_stationary_scenario_has_no_false_accepts():
    tr = decimate(run_scenario(ScenarioConfig.for_scenario("A", duration=10.0, seed=1)), 100.0)
    rep = evaluate(tr, DetectorConfig(dts_enabled=False))
    assert rep.n_attack > 0
    assert rep.fp_rate == 0.0


def test_rss_baseline_runs_on_one_dimension():
    tr = decimate(run_scenario(ScenarioConfig.for_scenario("D", duration=5.0, seed=1)), 100.0)
    rep = evaluate(tr, DetectorConfig(dts_enabled=False), DetectorKind.RSS_BASELINE)
    assert rep.detector_kind is DetectorKind.RSS_BASELINE
    assert 0.0 <= rep.fp_rate <= 1.0


def test_txpower_schedule_only_moves_rss():
    base = ScenarioConfig.for_scenario("A", duration=5.0, seed=2)
    fixed = decimate(run_scenario(base.replace(txpower_sweep=(1.0,))), 100.0)
    swept = decimate(run_scenario(base), 100.0)
    cfg = DetectorConfig(dts_enabled=False)
    _, t1 = run_detector(fixed, cfg)
    _, t2 = run_detector(swept, cfg)
    assert np.array_equal(t1, t2)
    r1 = evaluate(fixed, cfg, DetectorKind.RSS_BASELINE)
    r2 = evaluate(swept, cfg, DetectorKind.RSS_BASELINE)
    assert r1.fp_rate != r2.fp_rate


def test_fs_sweep_shape_and_order():
    vals = [1, 5, 20, 100, 400]
    reps = sweep("fs", vals, scenarios=("A", "G"), seeds=range(5), duration=1.5)
    assert len(reps) == 50
    keys = [(r.f_s, r.scenario_id, r.seed) for r in reps]
    assert keys == [(float(v), s, seed) for v in vals for s in "AG" for seed in range(5)]


def test_sweep_both_kinds_and_jobs():
    one = sweep(Axis.K, [3, 5], scenarios=("A",), seeds=(0, 1), duration=1.5,
                kinds=(DetectorKind.CSITE, DetectorKind.RSS_BASELINE))
    two = sweep(Axis.K, [3, 5], scenarios=("A",), seeds=(0, 1), duration=1.5,
                kinds=(DetectorKind.CSITE, DetectorKind.RSS_BASELINE), n_jobs=2)
    assert [r.to_dict() for r in one] == [r.to_dict() for r in two]
    assert [r.detector_kind for r in one[:2]] == [DetectorKind.CSITE, DetectorKind.RSS_BASELINE]
    assert [r.detector_config["k"] for r in one] == [3, 3, 3, 3, 5, 5, 5, 5]


@pytest.mark.parametrize("axis,values", [("k", [5, 45]), ("k", [0]), ("lw", [5]), ("dts", ["maybe"]),
                                         ("fs", [0]), ("lpre", [46]), ("k", [])])
def test_bad_axis_values(axis, values):
    with pytest.raises(InvalidAxisValue):
        sweep(axis, values, duration=1.0)


def test_report_dict_roundtrip():
    rep = evaluate(hand_trace(), HAND_CFG)
    assert DetectionReport.from_dict(rep.to_dict()) == rep


def test_cre_histogram_conserves_submissions():
    rep = evaluate_cre("G", f_s=5.0, l_pre=4, seeds=(0, 1), duration=8.0)
    assert isinstance(rep, CreReport)
    assert sum(rep.attempts.values()) == rep.n_submitted > 0
    assert rep.one_shot_rate == rep.attempts["1"] / rep.n_submitted
    assert CreReport.from_dict(rep.to_dict()) == rep
    assert rep.n_spoof_alarms == 0


def test_cre_rejects_bad_lpre():
    with pytest.raises(InvalidConfig):
        evaluate_cre("A", l_pre=46, duration=2.0)


def test_degenerate_cre_matches_plain_acceptance():
    seeds = (3, 4)
    cre = evaluate_cre("A", f_s=400.0, l_pre=0, seeds=seeds, duration=120.0)
    accepted = total = 0
    for seed in seeds:
        # one lone probe response per second, the same traffic CRE submits
        sc = ScenarioConfig.for_scenario("A", duration=120.0, seed=seed, probe_count=1, probe_period=1.0,
                                         attack_count=0)
        rep = evaluate(run_scenario(sc))
        total += rep.n_legit_mf
        accepted += rep.n_legit_mf - rep.n_false_reject
    assert abs(cre.one_shot_rate - accepted / total) <= 0.12


def test_more_precursors_help_at_low_rate():
    cfg = DetectorConfig()
    cre_cfg = CreConfig(l_w_peer=cfg.l_w)
    lo = evaluate_cre("G", cfg, cre_cfg, f_s=5.0, l_pre=0, seeds=(0,), duration=20.0)
    hi = evaluate_cre("G", cfg, cre_cfg, f_s=5.0, l_pre=45, seeds=(0,), duration=20.0)
    assert hi.one_shot_rate > lo.one_shot_rate
