"""One ranging run, step by step: coarse window scan, then 10 ps refinement."""

import numpy as np

from picosync.channel import received_power_roundtrip, round_trip_time
from picosync.config import parse_config, reference_config_path
from picosync.detector import mean_amplitude_from_power
from picosync.search import coarse_search, full_search, gate_amplitudes, refine

cfg = parse_config(reference_config_path())
grid, det = cfg.grid, cfg.detector
ch = cfg.channel(100)
truth = round_trip_time(ch)
mu = mean_amplitude_from_power(received_power_roundtrip(-17.7, ch), det)
rng = np.random.default_rng(2026)

print(f"period {grid.period} ps, {grid.num_windows} windows, true round trip {truth} ps")
print(f"pulse amplitude {mu:.2f} sd per window, {gate_amplitudes(mu, 0, [0], 10, grid)[0]:.2f} sd per 10 ps slot")

hit = coarse_search(truth, grid, det, mu, rng)
print(f"coarse: window {hit.window} after {hit.pulses_used} pulses (false alarm: {hit.false_alarm_capture})")

for polls in (10, 100, 1000, 10_000):
    try:
        r = refine(hit.window, truth, grid, det, mu, polls, rng)
        print(f"refine with {polls:>5} polls: estimate {r.round_trip_estimate} ps, error {r.error():+d} ps")
    except Exception as exc:
        print(f"refine with {polls:>5} polls: {type(exc).__name__}: {exc}")

# The whole thing in one call, including recovery from false locks
ok = 0
for seed in range(200):
    r = full_search(ch, -17.7, grid, det, cfg["experiment"]["polls"], cfg.drift, np.random.default_rng(seed))
    ok += abs(r.error()) <= 10
print(f"full search success over 200 seeds: {ok}/200")
