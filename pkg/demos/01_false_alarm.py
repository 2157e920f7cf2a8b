"""How often does pure noise cross the threshold, per window and per period?

A 1 ms period split into 2 ns windows holds half a million windows, so even a
5 sigma threshold fires somewhere in the period now and then.
"""

import numpy as np

from picosync.detector import DetectorParams, false_alarm_per_period, false_alarm_prob, sample_windows

rng = np.random.default_rng(1)

print("threshold  window P_fa     per-period (N=1000)  per-period (N=500000)")
for ratio in (1, 2, 3, 4, 5, 6):
    p = false_alarm_prob(ratio, 1.0)
    print(f"{ratio:>5} sd  {p:12.4e}   {false_alarm_per_period(p, 1000):12.6f}"
          f"         {false_alarm_per_period(p, 500_000):12.6f}")

# Empirical check at 3 sigma
det = DetectorParams(threshold=3.0)
n = 2_000_000
hits = sample_windows(np.zeros(n), det, rng).sum()
print(f"\nempirical 3 sd rate over {n} windows: {hits / n:.6f} (analytic {det.false_alarm_prob:.6f})")
