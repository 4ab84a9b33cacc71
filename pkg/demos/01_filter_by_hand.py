"""
The filter, one frame at a time
===============================

A client keeps the last 45 trusted CSI points from its access point. Encrypted
frames are trusted outright and only refresh that window; an unencrypted
management frame has to look like the recent channel to get through.
"""

import numpy as np

from csite import Detector, DetectorConfig, ReducedPoint, Verdict

rng = np.random.default_rng(7)

# a quiet channel: 45 reduced amplitude bins around a fixed profile
profile = 1.0 + 0.3 * np.sin(np.linspace(0, 3, 45))
det = Detector(DetectorConfig(dts_enabled=False), dim=45)

t = 0.0
for _ in range(60):  # 60 pings at 100 Hz
    t += 0.01
    det.classify(ReducedPoint(profile + 0.02 * rng.standard_normal(45), t), encrypted=True)

print("calibrated:", det.calibrated, " window:", len(det.window))

# probe responses from the access point itself, each after a few more pings
def ping_then(point_values):
    global t
    for _ in range(3):
        t += 0.01
        det.classify(ReducedPoint(profile + 0.02 * rng.standard_normal(45), t), encrypted=True)
    t += 0.004
    return det.classify(ReducedPoint(point_values, t), encrypted=False)


# the threshold is a percentile of only k = 5 recent scores, so a genuine
# frame passes roughly as often as its score ranks below that percentile
genuine = [ping_then(profile + 0.02 * rng.standard_normal(45)) for _ in range(200)]
print("genuine accepted:", sum(v is Verdict.TRUSTED for v in genuine) / len(genuine))

# a forged deauth sent from somewhere else in the room
before = det.window.values.copy()
t += 0.004
forged = det.classify(ReducedPoint(1.4 * profile[::-1] + 0.02 * rng.standard_normal(45), t), encrypted=False)
entry = det.verdict_log[-1]
print(f"forged   DoF={entry.dof:.4f}  tau={entry.tau:.4f}  -> {forged.name}")

# the rejected frame left the window alone
assert forged is Verdict.SUSPICIOUS
assert (det.window.values == before).all()
