"""
CSI against RSS on simulated scenarios
======================================

Scenario A is a still room, G has both the client and the attacker walking.
The attacker sweeps its transmit power from 1 to 15 dBm, which is exactly what
an RSS threshold is weak against.
"""

from csite import DetectorConfig, DetectorKind, ScenarioConfig, decimate, evaluate, run_scenario

cfg = DetectorConfig(dts_enabled=False)

for sc in "AG":
    trace = run_scenario(ScenarioConfig.for_scenario(sc, seed=3, duration=10.0))
    print(f"scenario {sc}: {len(trace)} frames")
    for fs in (5.0, 100.0):
        tr = decimate(trace, fs)
        csi = evaluate(tr, cfg)
        rss = evaluate(tr, cfg, DetectorKind.RSS_BASELINE)
        print(f"  f_s={fs:5g} Hz   forged accepted: csi {csi.fp_rate:.3f}  rss {rss.fp_rate:.3f}"
              f"   genuine rejected: csi {csi.fn_rate:.3f}")

# with the stability-scaled percentile the filter loosens while the channel moves
tr = decimate(run_scenario(ScenarioConfig.for_scenario("G", seed=3, duration=10.0)), 20.0)
for dts in (False, True):
    r = evaluate(tr, cfg.replace(dts_enabled=dts))
    print(f"G at 20 Hz, dts={'on ' if dts else 'off'}  fp={r.fp_rate:.3f}  fn={r.fn_rate:.3f}")
