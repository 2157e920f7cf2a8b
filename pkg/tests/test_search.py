import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from picosync.channel import ChannelParams, DriftModel
from picosync.detector import DetectorParams, detection_prob, false_alarm_prob
from picosync.errors import AmbiguousRefinement, InvalidParameter, SearchExhausted
from picosync.search import (
    coarse_search,
    full_search,
    gate_amplitudes,
    locate_leading_edge,
    overlap_fraction,
    plateau_slots,
    refine,
    search_succeeded,
    signal_windows,
)
from picosync.timing import MS, NS, TimingGrid

GRID = TimingGrid(period=1 * MS)
# Noise tail below double precision, signal far above threshold: no randomness left.
QUIET = DetectorParams(threshold=40.0)
LOUD = 1e6


def rng(seed=0):
    return np.random.default_rng(seed)


@given(st.integers(0, 1 * MS - 1))
def test_noiseless_search_is_exact(truth):
    hit = coarse_search(truth, GRID, QUIET, LOUD, rng())
    assert hit.window == truth // GRID.window_width
    assert hit.pulses_used == hit.window + 1
    assert not hit.false_alarm_capture
    res = refine(hit.window, truth, GRID, QUIET, LOUD, 1, rng())
    assert res.round_trip_estimate == truth - truth % 10
    assert -10 < res.error() <= 0
    assert search_succeeded(res, GRID)


@pytest.mark.parametrize("truth", [0, 5, 1999, 2000, 1 * MS - 2000, 1 * MS - 1])
def test_boundary_windows(truth):
    hit = coarse_search(truth, GRID, QUIET, LOUD, rng())
    res = refine(hit.window, truth, GRID, QUIET, LOUD, 3, rng())
    assert res.round_trip_estimate == truth - truth % 10


def test_refine_clamps_neighbourhood_at_both_ends():
    n = GRID.num_windows
    assert refine(0, 0, GRID, QUIET, LOUD, 1, rng()).pulses_used == 2 * 200
    assert refine(n - 1, 1 * MS - 600, GRID, QUIET, LOUD, 1, rng()).pulses_used == 2 * 200
    assert refine(7, 7 * 2000 + 400, GRID, QUIET, LOUD, 2, rng()).pulses_used == 3 * 200 * 2


def test_refine_rejects_bad_arguments():
    with pytest.raises(InvalidParameter):
        refine(0, 0, GRID, QUIET, LOUD, 0, rng())
    with pytest.raises(InvalidParameter):
        refine(GRID.num_windows, 0, GRID, QUIET, LOUD, 1, rng())


def test_coarse_rejects_truth_outside_period():
    with pytest.raises(InvalidParameter):
        coarse_search(1 * MS, GRID, QUIET, LOUD, rng())


def test_dead_time_guard():
    with pytest.raises(InvalidParameter):
        coarse_search(0, TimingGrid(period=100 * NS), QUIET, LOUD, rng())
    coarse_search(0, TimingGrid(period=102 * NS), QUIET, LOUD, rng())


def test_unknown_method():
    with pytest.raises(ValueError):
        coarse_search(0, GRID, QUIET, LOUD, rng(), method="magic")


def test_exhaustion_probability_matches_closed_form():
    # 500000 noise-only windows at threshold 5 sigma: (1 - Q(5))^500000
    expected = 0.86647172079956
    det = DetectorParams()
    trials = 20_000
    g = rng(99)
    exhausted = 0
    for _ in range(trials):
        try:
            coarse_search(0, GRID, det, 0.0, g)
        except SearchExhausted as exc:
            assert exc.pulses_used == GRID.num_windows
            exhausted += 1
    sd = math.sqrt(expected * (1 - expected) / trials)
    assert abs(exhausted / trials - expected) <= 4 * sd


def first_hit_distribution(n, budget, signal, det):
    """Exact law of the coarse stop position, by walking the schedule."""
    p_noise = false_alarm_prob(det.threshold, det.noise_sigma)
    alive = 1.0
    probs = np.zeros(n + 1)  # last slot: exhausted
    for k in range(budget):
        w = k % n
        p = detection_prob(signal[w], det.threshold, det.noise_sigma) if w in signal else p_noise
        probs[w] += alive * p
        alive *= 1 - p
    probs[n] = alive
    return probs


@pytest.mark.parametrize("method", ["events", "brute"])
def test_coarse_methods_follow_exact_law(method):
    grid = TimingGrid(period=400 * NS)
    det = DetectorParams(threshold=2.0)
    truth = 150 * 2000 + 1500
    signal = signal_windows(truth, grid, 2.5)
    budget = 2 * grid.num_windows
    law = first_hit_distribution(grid.num_windows, budget, signal, det)
    trials = 4000
    counts = np.zeros(grid.num_windows + 1)
    g = rng(11)
    for _ in range(trials):
        try:
            counts[coarse_search(truth, grid, det, 2.5, g, max_periods=2, method=method).window] += 1
        except SearchExhausted:
            counts[-1] += 1
    # pool cells with small expectation before the goodness-of-fit test
    expected = law * trials
    big = expected >= 5
    obs = np.append(counts[big], counts[~big].sum())
    exp = np.append(expected[big], expected[~big].sum())
    assert stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue > 1e-4


def test_events_and_brute_agree_on_mean_pulses():
    grid = TimingGrid(period=400 * NS)
    det = DetectorParams(threshold=2.5)
    means = []
    for method in ("events", "brute"):
        g = rng(3)
        used = [coarse_search(50_000, grid, det, 1.0, g, max_periods=40, method=method).pulses_used
                for _ in range(3000)]
        means.append((np.mean(used), np.std(used) / math.sqrt(len(used))))
    (a, sa), (b, sb) = means
    assert abs(a - b) <= 4 * math.hypot(sa, sb)


def test_coarse_wraps_from_start_window():
    hit = coarse_search(2000 * 3, GRID, QUIET, LOUD, rng(), start_window=10)
    assert hit.window == 3
    assert hit.pulses_used == GRID.num_windows - 10 + 4


@given(st.integers(0, 10_000), st.sampled_from([10, 20, 50, 2000]))
def test_overlap_tiles_the_pulse(arrival, gate):
    starts = np.arange(0, 20_000, gate)
    assert overlap_fraction(arrival, starts, gate, 1000).sum() == pytest.approx(1.0)


def test_gate_amplitude_scaling():
    full = gate_amplitudes(1.0, 0, [0], 10, GRID)[0]
    assert full == pytest.approx(0.01 / math.sqrt(10 / 2000))
    assert full == pytest.approx(0.1414, abs=1e-4)
    assert gate_amplitudes(1.0, 0, [0], 2000, GRID)[0] == pytest.approx(1.0)
    assert signal_windows(1500, GRID, 2.0) == {0: pytest.approx(1.0), 1: pytest.approx(1.0)}


def test_pulse_clipped_at_period_end():
    assert signal_windows(1 * MS - 500, GRID, 2.0) == {GRID.num_windows - 1: pytest.approx(1.0)}


def test_plateau_width():
    assert plateau_slots(GRID) == 100
    assert plateau_slots(GRID, 30) == 34


def edge_counts(edge, n=600, plateau=100, polls=50):
    c = np.zeros(n, dtype=int)
    c[edge:edge + plateau] = polls
    return c


@given(st.integers(1, 499))
def test_leading_edge_on_clean_plateau(edge):
    kw = dict(start_bounded=False, end_bounded=False)
    assert locate_leading_edge(edge_counts(edge), 50, 0.0, 100, **kw) == edge


def test_leading_edge_ignores_isolated_noise_spike():
    c = edge_counts(300)
    c[40] = 50
    assert locate_leading_edge(c, 50, 0.0, 100, start_bounded=False, end_bounded=False) == 300


def test_leading_edge_rejects_flat_noise():
    c = np.full(600, 3)
    with pytest.raises(AmbiguousRefinement):
        locate_leading_edge(c, 1000, 0.003, 100, start_bounded=True, end_bounded=True)


def test_leading_edge_boundary_rules():
    at_start = edge_counts(0)
    with pytest.raises(AmbiguousRefinement):
        locate_leading_edge(at_start, 50, 0.0, 100, start_bounded=False, end_bounded=False)
    assert locate_leading_edge(at_start, 50, 0.0, 100, start_bounded=True, end_bounded=False) == 0
    truncated = edge_counts(550)
    with pytest.raises(AmbiguousRefinement):
        locate_leading_edge(truncated, 50, 0.0, 100, start_bounded=False, end_bounded=False)
    assert locate_leading_edge(truncated, 50, 0.0, 100, start_bounded=False, end_bounded=True) == 550


def test_refine_without_signal_is_ambiguous():
    with pytest.raises(AmbiguousRefinement) as info:
        refine(10, 500_000, GRID, DetectorParams(), LOUD, 20, rng())
    assert info.value.pulses_used == 600 * 20


def test_full_search_recovers_from_false_locks():
    # threshold 3 sigma: a false alarm almost surely precedes the signal window
    det = DetectorParams(threshold=3.0, gain=1e12)
    grid = TimingGrid.for_length(100)
    res = full_search(ChannelParams(100), 0.0, grid, det, 200, DriftModel(), rng(4))
    assert res.false_locks > 0
    assert search_succeeded(res, grid)
    assert res.pulses_used > res.false_locks * 600 * 200


def test_full_search_exhausts_without_mirror():
    det = DetectorParams(gain=1e12)
    grid = TimingGrid.for_length(50)
    with pytest.raises(SearchExhausted):
        full_search(ChannelParams(50).with_mirror(False), 0.0, grid, det, 100, DriftModel(), rng(8))


def test_full_search_deterministic():
    det = DetectorParams(gain=1.3606e12)
    grid = TimingGrid.for_length(100)
    a = full_search(ChannelParams(60), -17.7, grid, det, 10_000, DriftModel(), rng(5))
    b = full_search(ChannelParams(60), -17.7, grid, det, 10_000, DriftModel(), rng(5))
    assert a == b and a.pulses_used == b.pulses_used
