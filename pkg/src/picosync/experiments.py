"""Monte Carlo harness: power sweeps, sample-size sweeps, noise validation, end-to-end runs.

Seeding
-------
Every trial draws from its own generator built as
``SeedSequence(seed, spawn_key=(experiment_code, *cell, trial))``.  A trial's
outcome is therefore a pure function of the experiment seed, its cell and its
index: execution order and worker count never change results.  Cells are
keyed by list position, and the sample-size sweep reuses the same per-trial
streams for every poll count it tries (common random numbers).
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelParams, DriftModel
from .detector import (
    DetectorParams,
    false_alarm_per_period,
    false_alarm_prob,
    sample_windows,
)
from .errors import InvalidParameter, PicosyncError, SyncFailed, UnreachableTarget
from .protocol import CharlieConfig, Station, StationConfig, run_sync
from .search import full_search
from .timing import TimingGrid

MAX_POLLS = 10_000

_POWER_SWEEP = 1
_SAMPLE_SWEEP = 2
_NOISE = 3
_END_TO_END = 4
_CALIBRATION = 5


class ExperimentKind(enum.Enum):
    POWER_SWEEP = "PowerSweep"
    SAMPLE_SIZE_SWEEP = "SampleSizeSweep"
    FALSE_ALARM_VALIDATION = "FalseAlarmValidation"
    END_TO_END = "EndToEnd"


@dataclass(frozen=True)
class ExperimentSpec:
    kind: ExperimentKind
    lengths: tuple[float, ...]
    powers: tuple[float, ...]
    trials: int
    polls: int | str
    seed: int
    target_probability: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(self.lengths))
        object.__setattr__(self, "powers", tuple(self.powers))
        if self.trials < 1:
            raise InvalidParameter("trials must be >= 1")
        if not self.lengths or not self.powers:
            raise InvalidParameter("lengths and powers must be non-empty")
        if self.polls != "auto" and (not isinstance(self.polls, int) or self.polls < 1):
            raise InvalidParameter(f"polls must be a positive integer or 'auto', got {self.polls!r}")
        if not 0 < self.target_probability < 1:
            raise InvalidParameter("target_probability must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise InvalidParameter("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Model:
    """Everything a trial needs besides length, power and its random stream."""

    grid: TimingGrid
    detector: DetectorParams
    channel: ChannelParams = field(default_factory=lambda: ChannelParams(0.0))
    drift: DriftModel = field(default_factory=DriftModel)
    charlie: CharlieConfig = field(default_factory=CharlieConfig)
    polls: int = 10_000
    max_periods: int = 1
    max_recalibrations: int = 3

    def link(self, length: float) -> ChannelParams:
        return replace(self.channel, length=length)


@dataclass(frozen=True)
class ResultRow:
    length: float
    power: float
    polls: int
    trials: int
    successes: int
    estimate: float
    stderr: float
    seed: int

    @classmethod
    def from_counts(cls, length, power, polls, trials, successes, seed):
        p = successes / trials
        return cls(length, power, polls, trials, successes, p, math.sqrt(p * (1 - p) / trials), seed)


@dataclass(frozen=True)
class SampleSizeRow:
    length: float
    power: float
    polls: int  # minimal polls reaching the target
    trials: int
    successes: int
    estimate: float
    stderr: float
    coarse_successes: int
    coarse_estimate: float
    seed: int


@dataclass(frozen=True)
class FalseAlarmRow:
    scope: str  # "window" or "period"
    ratio: float
    n_windows: int
    trials: int
    hits: int
    estimate: float
    stderr: float
    expected: float
    seed: int

    @property
    def z(self) -> float:
        se = math.sqrt(self.expected * (1 - self.expected) / self.trials)
        return 0.0 if se == 0 else (self.estimate - self.expected) / se


@dataclass(frozen=True)
class EndToEndTrial:
    alice_length: float
    bob_length: float
    ok: bool
    residual: int | None
    recalibrations: int


@dataclass(frozen=True)
class EndToEndRow:
    min_length: float
    max_length: float
    trials: int
    successes: int
    estimate: float
    stderr: float
    max_abs_residual: int
    mean_recalibrations: float
    seed: int


def trial_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _chunks(n: int, parts: int):
    step = -(-n // parts)
    return [range(i, min(i + step, n)) for i in range(0, n, step)]


def _run_parallel(fn, jobs, threads: int):
    """Apply ``fn(*job)`` to every job and return the results in job order."""
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


def _fan_out(fn, head: tuple, trials: int, threads: int):
    """Split ``range(trials)`` across workers; concatenates per-trial results in order."""
    parts = max(1, min(threads, trials)) * (4 if threads > 1 else 1)
    jobs = [head + (r,) for r in _chunks(trials, parts)]
    out = []
    for res in _run_parallel(fn, jobs, threads):
        out.extend(res)
    return out


# -- ranging trials ----------------------------------------------------------

def _search_outcomes(model: Model, length, power, polls, seed, key, trials: range):
    """Per trial: (ranging succeeded, coarse stage locked onto the signal)."""
    grid = model.grid
    channel = model.link(length)
    out = []
    for t in trials:
        rng = trial_rng(seed, *key, t)
        try:
            r = full_search(channel, power, grid, model.detector, polls, model.drift, rng, model.max_periods)
        except PicosyncError:
            out.append((False, False))
            continue
        w = r.ground_truth // grid.window_width
        out.append((abs(r.error()) <= grid.subinterval_width, r.coarse_window in (w, w + 1)))
    return out


def search_success(model: Model, length, power, polls, trials, seed, key=(0,), threads=1):
    """Return (successes, coarse_successes) over ``trials`` full searches."""
    res = _fan_out(_search_outcomes, (model, length, power, polls, seed, tuple(key)), trials, threads)
    return sum(ok for ok, _ in res), sum(c for _, c in res)


def _resolve_polls(spec: ExperimentSpec, model: Model) -> int:
    return model.polls if spec.polls == "auto" else spec.polls


def sweep_power(spec: ExperimentSpec, model: Model, threads: int = 1) -> list[ResultRow]:
    """Ranging success fraction on the (length, power) lattice."""
    if spec.kind is not ExperimentKind.POWER_SWEEP:
        raise InvalidParameter(f"expected PowerSweep, got {spec.kind.value}")
    polls = _resolve_polls(spec, model)
    rows = []
    for i, length in enumerate(spec.lengths):
        for j, power in enumerate(spec.powers):
            ok, _ = search_success(
                model, length, power, polls, spec.trials, spec.seed, (_POWER_SWEEP, i, j), threads
            )
            rows.append(ResultRow.from_counts(length, power, polls, spec.trials, ok, spec.seed))
    rows.sort(key=lambda r: (r.length, r.power))
    return rows


def minimal_polls(model: Model, length, power, target, trials, seed, key, threads=1, max_polls=MAX_POLLS):
    """Smallest poll count whose success fraction reaches ``target``.

    Doubles from one poll until the target is met, then bisects the last
    bracket.  Returns ``(polls, successes, coarse_successes)``.
    """
    cache = {}

    def evaluate(polls):
        if polls not in cache:
            cache[polls] = search_success(model, length, power, polls, trials, seed, key, threads)
        return cache[polls]

    def passes(polls):
        return evaluate(polls)[0] >= target * trials

    hi = 1
    while not passes(hi):
        if hi >= max_polls:
            raise UnreachableTarget(
                f"{length} km at {power} dBm: success below {target} even with {max_polls} polls"
            )
        hi = min(2 * hi, max_polls)
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid
    ok, coarse = evaluate(hi)
    return hi, ok, coarse


def sweep_sample_size(spec: ExperimentSpec, model: Model, threads: int = 1) -> list[SampleSizeRow]:
    """Minimal polls per subinterval reaching the target, per fibre length."""
    if spec.kind is not ExperimentKind.SAMPLE_SIZE_SWEEP:
        raise InvalidParameter(f"expected SampleSizeSweep, got {spec.kind.value}")
    if len(spec.powers) != 1:
        raise InvalidParameter("sample-size sweep takes exactly one launch power")
    power = spec.powers[0]
    rows = []
    for i, length in enumerate(spec.lengths):
        polls, ok, coarse = minimal_polls(
            model, length, power, spec.target_probability, spec.trials, spec.seed,
            (_SAMPLE_SWEEP, i), threads,
        )
        n = spec.trials
        p = ok / n
        rows.append(SampleSizeRow(
            length, power, polls, n, ok, p, math.sqrt(p * (1 - p) / n), coarse, coarse / n, spec.seed,
        ))
    rows.sort(key=lambda r: r.length)
    return rows


# -- noise validation --------------------------------------------------------

def validate_false_alarm(
    spec: ExperimentSpec,
    ratios,
    samples: int = 1_000_000,
    period_windows: int = 1000,
    periods: int = 10_000,
    noise_sigma: float = 1.0,
) -> list[FalseAlarmRow]:
    """Empirical false-alarm rates against the analytic per-window and per-period laws."""
    if spec.kind is not ExperimentKind.FALSE_ALARM_VALIDATION:
        raise InvalidParameter(f"expected FalseAlarmValidation, got {spec.kind.value}")
    rows = []
    for i, ratio in enumerate(ratios):
        det = DetectorParams(noise_sigma=noise_sigma, threshold=ratio * noise_sigma)
        p_fa = false_alarm_prob(det.threshold, det.noise_sigma)

        rng = trial_rng(spec.seed, _NOISE, i, 0)
        hits = int(np.count_nonzero(sample_windows(np.zeros(samples), det, rng)))
        rows.append(_fa_row("window", ratio, 1, samples, hits, p_fa, spec.seed))

        rng = trial_rng(spec.seed, _NOISE, i, 1)
        any_hit = 0
        batch = max(1, 2_000_000 // period_windows)
        for start in range(0, periods, batch):
            m = min(batch, periods - start)
            fired = sample_windows(np.zeros((m, period_windows)), det, rng)
            any_hit += int(np.count_nonzero(fired.any(axis=1)))
        expected = false_alarm_per_period(p_fa, period_windows)
        rows.append(_fa_row("period", ratio, period_windows, periods, any_hit, expected, spec.seed))
    return rows


def _fa_row(scope, ratio, n_windows, trials, hits, expected, seed):
    p = hits / trials
    return FalseAlarmRow(scope, ratio, n_windows, trials, hits, p, math.sqrt(p * (1 - p) / trials), expected, seed)


# -- end to end --------------------------------------------------------------

def _sync_outcomes(model: Model, alice_base, bob_base, lo, hi, seed, trials: range):
    out = []
    for t in trials:
        rng = trial_rng(seed, _END_TO_END, t)
        la, lb = rng.uniform(lo, hi, size=2) if hi > lo else (lo, lo)
        alice = replace(alice_base, channel=model.link(float(la)))
        bob = replace(bob_base, channel=model.link(float(lb)))
        try:
            o = run_sync(
                alice, bob, model.charlie, model.grid, model.detector, model.drift,
                model.polls, rng, model.max_recalibrations,
            )
        except SyncFailed as exc:
            out.append(EndToEndTrial(float(la), float(lb), False, None, exc.outcome.recalibrations))
            continue
        out.append(EndToEndTrial(float(la), float(lb), True, o.residual_offset, o.recalibrations))
    return out


def end_to_end(
    spec: ExperimentSpec,
    model: Model,
    alice: StationConfig | None = None,
    bob: StationConfig | None = None,
    threads: int = 1,
):
    """Full handshakes with independent uniform lengths in ``[min(lengths), max(lengths)]``.

    Each station's launch power defaults to ``spec.powers[0]``.  Returns
    ``(row, histogram, trials)`` where ``histogram`` maps 1 ps residual bins
    to counts over the successful runs.
    """
    if spec.kind is not ExperimentKind.END_TO_END:
        raise InvalidParameter(f"expected EndToEnd, got {spec.kind.value}")
    lo, hi = min(spec.lengths), max(spec.lengths)
    if alice is None:
        alice = StationConfig(Station.ALICE, model.link(lo), spec.powers[0])
    if bob is None:
        bob = StationConfig(Station.BOB, model.link(lo), spec.powers[0])
    if spec.polls != "auto":
        model = replace(model, polls=spec.polls)
    trials = _fan_out(_sync_outcomes, (model, alice, bob, lo, hi, spec.seed), spec.trials, threads)
    ok = [t for t in trials if t.ok]
    p = len(ok) / len(trials)
    row = EndToEndRow(
        lo, hi, len(trials), len(ok), p, math.sqrt(p * (1 - p) / len(trials)),
        max((abs(t.residual) for t in ok), default=0),
        sum(t.recalibrations for t in trials) / len(trials),
        spec.seed,
    )
    histogram = dict(sorted(Counter(t.residual for t in ok).items()))
    return row, histogram, trials


# -- calibration -------------------------------------------------------------

def calibrate_gain(
    model: Model,
    length: float = 100.0,
    power: float = -17.7,
    target: float = 0.993,
    trials: int = 10_000,
    seed: int = 0,
    bracket=(1e11, 1e14),
    iterations: int = 30,
    threads: int = 1,
) -> float:
    """Smallest detector gain whose ranging success at (length, power) reaches ``target``.

    Bisects ``log(gain)`` with common random numbers across iterations.
    """
    def rate(gain):
        m = replace(model, detector=replace(model.detector, gain=gain))
        ok, _ = search_success(m, length, power, m.polls, trials, seed, (_CALIBRATION,), threads)
        return ok / trials

    lo, hi = (math.log(b) for b in bracket)
    if rate(math.exp(hi)) < target:
        raise UnreachableTarget(f"target {target} not reached at gain {bracket[1]:g}")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if rate(math.exp(mid)) >= target:
            hi = mid
        else:
            lo = mid
    return math.exp(hi)
