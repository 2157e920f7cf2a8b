"""Two-stage signal window search used for round-trip ranging.

Stage one polls one coarse window per emitted pulse and stops at the first
threshold crossing.  Stage two splits the detected window and its two
neighbours into 10 ps subintervals, polls every subinterval the same number of
times and locates the leading edge of the pulse.

Signal model
------------
The pulse is a boxcar of ``grid.pulse_width``.  A gate ``[a, a + g)`` collects
the fraction ``overlap / pulse_width`` of its energy, and its noise is that of
a ``window_width`` gate scaled by ``sqrt(g / window_width)`` (white noise
integrated over the gate).  The threshold is held at the same multiple of the
gate's own noise, so in window-noise units the effective mean amplitude is::

    mean_amplitude * (overlap / pulse_width) / sqrt(g / window_width)

A pulse fully inside a 2 ns window therefore gives ``mean_amplitude`` and a
10 ps subinterval fully under the pulse gives ``0.1414 * mean_amplitude``.
Across the refinement span the subinterval means form a 1 ns plateau whose
leading edge marks the arrival.

Simulation shortcuts
--------------------
Noise-only windows are i.i.d., so the coarse scan jumps straight to the next
false alarm with a geometric draw instead of sampling every window
(``method="events"``).  ``method="brute"`` samples every window and is kept as
an independent reference.  Repeated polls of one subinterval are i.i.d.
Bernoulli trials, so their count is drawn from a binomial.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelParams,
    DriftModel,
    apply_drift,
    received_power_roundtrip,
    round_trip_time,
)
from .detector import (
    DetectorParams,
    detection_prob,
    mean_amplitude_from_power,
    sample_window,
    sample_windows,
)
from .errors import AmbiguousRefinement, InvalidParameter, SearchExhausted
from .timing import TimingGrid

NOISE_FLOOR_SIGMAS = 5.0


class Stage(enum.Enum):
    COARSE = "coarse"
    REFINE = "refine"
    DONE = "done"


@dataclass
class ScanState:
    """Mutable bookkeeping for one ranging run (delay Z, pulse counter, stage)."""

    delay: int = 0
    pulses_sent: int = 0
    stage: Stage = Stage.COARSE


@dataclass(frozen=True)
class CoarseResult:
    window: int
    pulses_used: int
    false_alarm_capture: bool  # True when the locked window holds no signal energy


@dataclass(frozen=True)
class SearchResult:
    coarse_window: int
    subinterval: int
    round_trip_estimate: int
    pulses_used: int
    polls_per_subinterval: int
    false_locks: int = 0
    # Simulation-only fields; protocol logic never reads them.
    ground_truth: int | None = field(default=None, compare=False)

    def error(self) -> int:
        if self.ground_truth is None:
            raise ValueError("no ground truth attached")
        return self.round_trip_estimate - self.ground_truth


# -- signal geometry ---------------------------------------------------------

def overlap_fraction(arrival, starts, gate_width, pulse_width, end=None) -> np.ndarray:
    """Fraction of the pulse ``[arrival, arrival + pulse_width)`` inside each gate.

    ``end`` clips the pulse (energy past the period boundary is not seen).
    """
    starts = np.asarray(starts, dtype=np.int64)
    pulse_end = arrival + pulse_width if end is None else min(arrival + pulse_width, end)
    lo = np.maximum(starts, arrival)
    hi = np.minimum(starts + gate_width, pulse_end)
    return np.clip(hi - lo, 0, None) / pulse_width


def gate_amplitudes(mean_amplitude, arrival, starts, gate_width, grid: TimingGrid, end=None):
    """Effective mean amplitude in each gate, in window-noise units."""
    frac = overlap_fraction(arrival, starts, gate_width, grid.pulse_width, end)
    return mean_amplitude * frac / math.sqrt(gate_width / grid.window_width)


def signal_windows(arrival: int, grid: TimingGrid, mean_amplitude: float) -> dict[int, float]:
    """Windows touched by the pulse, mapped to their mean amplitude."""
    first = arrival // grid.window_width
    idx = np.arange(first, min(first + 2, grid.num_windows))
    amps = gate_amplitudes(
        mean_amplitude, arrival, idx * grid.window_width, grid.window_width, grid, end=grid.period
    )
    return {int(w): float(a) for w, a in zip(idx, amps) if a > 0}


def plateau_slots(grid: TimingGrid, step: int | None = None) -> int:
    step = grid.subinterval_width if step is None else step
    return -(-grid.pulse_width // step)


# -- stage one ---------------------------------------------------------------

def coarse_search(
    ground_truth_delay: int,
    grid: TimingGrid,
    detector: DetectorParams,
    mean_amplitude: float,
    rng: np.random.Generator,
    max_periods: int = 1,
    *,
    start_window: int = 0,
    max_pulses: int | None = None,
    method: str = "events",
) -> CoarseResult:
    """Poll windows ``start_window, start_window + 1, ...`` until one crosses threshold.

    One window is analysed per emitted pulse, wrapping around the period.
    Raises ``SearchExhausted`` after ``max_pulses`` (default
    ``max_periods * num_windows``) pulses without a detection.
    """
    if not 0 <= ground_truth_delay < grid.period:
        raise InvalidParameter(f"ground truth {ground_truth_delay} ps outside the period")
    if max_periods < 1:
        raise InvalidParameter("max_periods must be >= 1")
    n = grid.num_windows
    budget = max_periods * n if max_pulses is None else max_pulses
    if grid.period - grid.window_width < detector.dead_time:
        raise InvalidParameter("pulse schedule would sample inside the detector dead time")
    signal = signal_windows(ground_truth_delay, grid, mean_amplitude)
    if method == "events":
        return _coarse_events(signal, n, budget, start_window, detector, rng)
    if method == "brute":
        return _coarse_brute(signal, n, budget, start_window, detector, rng)
    raise ValueError(f"unknown method {method!r}")


def _coarse_events(signal, n, budget, start, detector, rng) -> CoarseResult:
    p_noise = detector.false_alarm_prob
    scanned = 0
    w = start % n
    while scanned < budget:
        gap = min(((s - w) % n for s in signal), default=n)
        run = min(gap, budget - scanned)
        if run > 0 and p_noise > 0:
            k = int(rng.geometric(p_noise))
            if k <= run:
                hit = (w + k - 1) % n
                return CoarseResult(hit, scanned + k, True)
        scanned += run
        w = (w + run) % n
        if scanned >= budget:
            break
        scanned += 1
        if sample_window(True, signal[w], detector, rng):
            return CoarseResult(w, scanned, False)
        w = (w + 1) % n
    raise SearchExhausted(f"no detection in {budget} pulses", pulses_used=scanned)


def _coarse_brute(signal, n, budget, start, detector, rng, chunk=1 << 16) -> CoarseResult:
    scanned = 0
    while scanned < budget:
        m = min(chunk, budget - scanned)
        windows = (start + scanned + np.arange(m)) % n
        mu = np.zeros(m)
        for w, amp in signal.items():
            mu[windows == w] = amp
        hits = np.flatnonzero(sample_windows(mu, detector, rng))
        if hits.size:
            i = int(hits[0])
            w = int(windows[i])
            return CoarseResult(w, scanned + i + 1, w not in signal)
        scanned += m
    raise SearchExhausted(f"no detection in {budget} pulses", pulses_used=scanned)


# -- stage two ---------------------------------------------------------------

def locate_leading_edge(
    counts: np.ndarray,
    polls: int,
    p_noise: float,
    plateau: int,
    *,
    start_bounded: bool,
    end_bounded: bool,
) -> int:
    """Index of the first slot of the signal plateau in a row of detection counts.

    The maximum count fixes a half-height level between the noise expectation
    and the peak.  The edge is the earliest slot above that level for which at
    least half of the following ``plateau`` slots are also above it.  A plateau
    that would start at slot 0 or run past the last slot is only accepted where
    the scan touches a hard boundary of the period (``start_bounded`` /
    ``end_bounded``); otherwise the edge was not observed.
    """
    counts = np.asarray(counts)
    noise_mean = polls * p_noise
    floor = noise_mean + NOISE_FLOOR_SIGMAS * math.sqrt(polls * p_noise * (1 - p_noise))
    top = int(counts.max())
    if top <= floor:
        raise AmbiguousRefinement(f"peak count {top} not above noise floor {floor:.3g}")
    level = 0.5 * (noise_mean + top)
    on = counts > level
    n = counts.size
    csum = np.concatenate(([0], np.cumsum(on)))
    j = np.arange(n)
    end = np.minimum(j + plateau, n)
    width = end - j
    filled = 2 * (csum[end] - csum[j]) >= width
    complete = (width == plateau) | end_bounded
    ok = np.flatnonzero(on & filled & complete)
    if ok.size == 0:
        raise AmbiguousRefinement("no complete plateau inside the scanned span")
    edge = int(ok[0])
    if edge == 0 and not start_bounded:
        raise AmbiguousRefinement("plateau starts before the scanned span")
    return edge


def poll_gates(amplitudes, polls: int, detector: DetectorParams, rng) -> np.ndarray:
    """Detection counts after polling every gate ``polls`` times."""
    p = detection_prob(np.asarray(amplitudes), detector.threshold, detector.noise_sigma)
    return rng.binomial(polls, p)


def refine(
    coarse_window: int,
    ground_truth_delay: int,
    grid: TimingGrid,
    detector: DetectorParams,
    mean_amplitude: float,
    polls: int,
    rng: np.random.Generator,
) -> SearchResult:
    """Scan all subintervals of windows ``coarse_window - 1 .. coarse_window + 1``."""
    if polls < 1:
        raise InvalidParameter("polls must be >= 1")
    n = grid.num_windows
    if not 0 <= coarse_window < n:
        raise InvalidParameter(f"coarse window {coarse_window} outside [0, {n})")
    lo = max(coarse_window - 1, 0)
    hi = min(coarse_window + 1, n - 1)
    step = grid.subinterval_width
    n_slots = (hi - lo + 1) * grid.subintervals_per_window
    starts = lo * grid.window_width + np.arange(n_slots, dtype=np.int64) * step
    amps = gate_amplitudes(mean_amplitude, ground_truth_delay, starts, step, grid, end=grid.period)
    counts = poll_gates(amps, polls, detector, rng)
    used = n_slots * polls
    try:
        edge = locate_leading_edge(
            counts,
            polls,
            detector.false_alarm_prob,
            plateau_slots(grid),
            start_bounded=lo == 0,
            end_bounded=hi == n - 1,
        )
    except AmbiguousRefinement as exc:
        exc.pulses_used = used
        raise
    return SearchResult(
        coarse_window=coarse_window,
        subinterval=edge,
        round_trip_estimate=int(starts[edge]),
        pulses_used=used,
        polls_per_subinterval=polls,
        ground_truth=ground_truth_delay,
    )


def full_search(
    channel: ChannelParams,
    launch: float,
    grid: TimingGrid,
    detector: DetectorParams,
    polls: int,
    drift: DriftModel,
    rng: np.random.Generator,
    max_periods: int = 1,
    elapsed: int = 0,
    *,
    method: str = "events",
) -> SearchResult:
    """Range one station to the central mirror: coarse scan, then refinement.

    A refinement that finds no plateau means the coarse stage locked onto a
    false alarm; the coarse scan then resumes at the following window within
    the same pulse budget.
    """
    truth = apply_drift(round_trip_time(channel), elapsed, drift, rng)
    grid.check_round_trip(truth)
    mu = mean_amplitude_from_power(received_power_roundtrip(launch, channel), detector)
    state = ScanState()
    budget = max_periods * grid.num_windows
    coarse_pulses = 0
    false_locks = 0
    start = 0
    while True:
        state.stage = Stage.COARSE
        try:
            hit = coarse_search(
                truth, grid, detector, mu, rng, max_periods,
                start_window=start, max_pulses=budget - coarse_pulses, method=method,
            )
        except SearchExhausted as exc:
            exc.pulses_used += state.pulses_sent
            raise
        coarse_pulses += hit.pulses_used
        state.pulses_sent += hit.pulses_used
        state.delay = hit.window * grid.window_width
        state.stage = Stage.REFINE
        try:
            result = refine(hit.window, truth, grid, detector, mu, polls, rng)
        except AmbiguousRefinement as exc:
            state.pulses_sent += exc.pulses_used
            false_locks += 1
            start = hit.window + 1
            if coarse_pulses >= budget:
                raise SearchExhausted(
                    f"no confirmed window in {budget} coarse pulses", pulses_used=state.pulses_sent
                ) from exc
            continue
        state.pulses_sent += result.pulses_used
        state.delay = result.round_trip_estimate
        state.stage = Stage.DONE
        return SearchResult(
            coarse_window=result.coarse_window,
            subinterval=result.subinterval,
            round_trip_estimate=result.round_trip_estimate,
            pulses_used=state.pulses_sent,
            polls_per_subinterval=polls,
            false_locks=false_locks,
            ground_truth=truth,
        )


def search_succeeded(result: SearchResult, grid: TimingGrid) -> bool:
    """Validation helper: estimate within one subinterval of the ground truth."""
    return abs(result.error()) <= grid.subinterval_width
