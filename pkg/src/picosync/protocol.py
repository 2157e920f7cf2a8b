"""Three-node synchronisation: two user stations and the untrusted central node.

Sequence of one calibration attempt:

ranging   each station ranges its fibre to the central mirror (``full_search``)
arming    station reports its repetition period and asks the centre to arm its detector
gating    the centre scans +-2 ns around the first registered pulse in 10 ps gates
delta     the centre computes the arrival difference and sends it to one station
verify    alternating single-input checks re-measure both arrivals, correcting again
interfere both inputs open, interference is checked with a +-60 ps fine scan

Any failed stage sends ``Recalibrate`` and the attempt restarts from ranging.

Time frames: every arrival phase is expressed modulo the shared period on the
centre's free-running clock.  Station logic and centre logic only see detector
counts; ``_Link`` holds the simulated physics and the ground truth.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .channel import (
    ChannelParams,
    DriftModel,
    apply_drift,
    one_way_time,
    received_power_oneway,
)
from .detector import DetectorParams, mean_amplitude_from_power
from .errors import (
    AmbiguousRefinement,
    ConfigurationError,
    FineAdjustFailed,
    InvalidParameter,
    PicosyncError,
    SyncFailed,
)
from .search import full_search, gate_amplitudes, locate_leading_edge, poll_gates
from .timing import NS, TimingGrid


class Station(enum.Enum):
    ALICE = "alice"
    BOB = "bob"


class MessageKind(enum.Enum):
    PERIOD_REPORT = "PeriodReport"
    ACTIVATE_SPD = "ActivateSPD"
    DELTA_REPORT = "DeltaReport"
    ADJUST_COMMAND = "AdjustCommand"
    INTERFERENCE_RESULT = "InterferenceResult"
    RECALIBRATE = "Recalibrate"


@dataclass(frozen=True)
class StationConfig:
    name: Station
    channel: ChannelParams
    launch_power: float
    laser_activation_offset: int = 0
    period: int | None = None  # repetition period; None means the grid period

    def __post_init__(self):
        if self.laser_activation_offset < 0:
            raise InvalidParameter("laser_activation_offset must be >= 0")


@dataclass(frozen=True)
class CharlieConfig:
    internal_delay: int = 0
    gate_width: int = 10
    scan_span: int = 2 * NS
    fine_adjust_span: int = 60
    fine_adjust_step: int = 10
    interference_tolerance: int = 10
    verify_polls: int = 10
    max_verify_rounds: int = 3
    compensating_station: Station = Station.BOB
    channel_latency: int = 0
    stage_gap: int = 0
    # Optional Gaussian visibility gate instead of the plain tolerance test.
    visibility_sigma: float | None = None
    visibility_threshold: float = 0.5

    def __post_init__(self):
        if self.internal_delay < 0:
            raise InvalidParameter("internal_delay must be >= 0")
        for name in ("gate_width", "scan_span", "fine_adjust_step", "interference_tolerance", "verify_polls"):
            if getattr(self, name) <= 0:
                raise InvalidParameter(f"{name} must be > 0")
        if self.fine_adjust_span < 0 or self.channel_latency < 0 or self.stage_gap < 0:
            raise InvalidParameter("spans, latencies and gaps must be >= 0")
        if self.max_verify_rounds < 1:
            raise InvalidParameter("max_verify_rounds must be >= 1")
        if self.visibility_sigma is not None and self.visibility_sigma <= 0:
            raise InvalidParameter("visibility_sigma must be > 0")


@dataclass(frozen=True)
class SyncMessage:
    index: int
    kind: MessageKind
    payload: int  # ps for durations, 0/1 for the interference flag
    timestamp: int  # logical time of delivery, ps
    sender: str
    receiver: str

    def line(self) -> str:
        return f"{self.index} {self.kind.value} {self.payload} {self.timestamp}"


@dataclass
class SyncOutcome:
    t_alice: int | None = None
    t_bob: int | None = None
    delta: int | None = None
    residual_offset: int | None = None
    interference_ok: bool = False
    recalibrations: int = 0
    messages_exchanged: int = 0
    fine_offset: int | None = None
    alice_round_trip: int | None = None
    bob_round_trip: int | None = None
    transcript: list[SyncMessage] = field(default_factory=list, repr=False)

    def transcript_lines(self) -> list[str]:
        return [m.line() for m in self.transcript]


# -- elementary operations ---------------------------------------------------

def compute_delta(t_alice: int, t_bob: int, period: int) -> int:
    """Signed minimal phase difference, positive when Bob arrives later."""
    for t in (t_alice, t_bob):
        if not 0 <= t < period:
            raise InvalidParameter(f"arrival phase {t} outside [0, {period})")
    half = period // 2
    return (t_bob - t_alice + half) % period - half


def apply_compensation(station: StationConfig, delta: int, period: int) -> StationConfig:
    """Fire the station's laser ``delta`` earlier (negative delays it)."""
    if abs(delta) > period // 2:
        raise InvalidParameter(f"|delta| {abs(delta)} exceeds half the period")
    if delta == 0:
        return station
    return replace(station, laser_activation_offset=(station.laser_activation_offset - delta) % period)


def interference_check(residual: int, tolerance: int) -> bool:
    if tolerance <= 0:
        raise InvalidParameter("tolerance must be > 0")
    return abs(residual) <= tolerance


def visibility(residual: float, sigma: float) -> float:
    return math.exp(-(residual**2) / (2 * sigma**2))


def fine_adjust(residual_oracle: Callable[[int], bool], span: int = 60, step: int = 10) -> int:
    """First offset in 0, +step, -step, +2 step, ... (within +-span) that shows interference."""
    if step <= 0:
        raise InvalidParameter("step must be > 0")
    offsets = [0]
    for k in range(1, span // step + 1):
        offsets += [k * step, -k * step]
    for offset in offsets:
        if residual_oracle(offset):
            return offset
    raise FineAdjustFailed(f"no interference within +-{span} ps")


def first_registration(arrival: int, grid: TimingGrid) -> int:
    """Coarse timestamp of the first registered pulse: nearest window boundary."""
    w = grid.window_width
    return (arrival + w // 2) // w * w % grid.period


def charlie_gating_adjust(
    reported_period: int,
    first_arrival: int,
    grid: TimingGrid,
    detector: DetectorParams,
    mean_amplitude: float,
    polls: int,
    rng: np.random.Generator,
    *,
    arrival: int,
    span: int = 2 * NS,
    step: int = 10,
    gate_width: int | None = None,
) -> int:
    """Arrival phase at the central detector to within one ``step``.

    Gates of ``gate_width`` (default ``step``) are stepped over
    ``first_arrival - span .. first_arrival + span`` and each polled ``polls``
    times; the leading edge of the count plateau is returned modulo the
    period.  ``arrival`` is the simulated true phase and only drives the
    synthetic detector response.
    """
    if reported_period != grid.period:
        raise ConfigurationError(f"reported period {reported_period} ps != grid period {grid.period} ps")
    gate_width = step if gate_width is None else gate_width
    period = grid.period
    rel = np.arange(-span, span + 1, step, dtype=np.int64)
    half = period // 2
    true_rel = (arrival - first_arrival + half) % period - half
    amps = gate_amplitudes(mean_amplitude, true_rel, rel, gate_width, grid)
    counts = poll_gates(amps, polls, detector, rng)
    edge = locate_leading_edge(
        counts,
        polls,
        detector.false_alarm_prob,
        -(-grid.pulse_width // step),
        start_bounded=False,
        end_bounded=False,
    )
    return int((first_arrival + rel[edge]) % period)


# -- simulation ----------------------------------------------------------------

class _Link:
    """Physical side of the simulation: fibres, drift, detector responses."""

    def __init__(self, grid, detector, drift, charlie, rng):
        self.grid = grid
        self.detector = detector
        self.drift = drift
        self.charlie = charlie
        self.rng = rng
        self.now = 0

    def arrival(self, station: StationConfig) -> int:
        """True arrival phase at the central beam splitter at the current time."""
        delay = apply_drift(one_way_time(station.channel), self.now, self.drift, self.rng)
        return (station.laser_activation_offset + delay) % self.grid.period

    def range_station(self, station: StationConfig, polls: int):
        return full_search(
            station.channel, station.launch_power, self.grid, self.detector,
            polls, self.drift, self.rng, elapsed=self.now,
        )

    def measure_at_centre(self, station: StationConfig, polls: int) -> int:
        """First registration plus the +-2 ns gate scan, in SPD timing."""
        spd_arrival = (self.arrival(station) + self.charlie.internal_delay) % self.grid.period
        mu = mean_amplitude_from_power(
            received_power_oneway(station.launch_power, station.channel), self.detector
        )
        provisional = first_registration(spd_arrival, self.grid)
        estimate = charlie_gating_adjust(
            station.period or self.grid.period, provisional, self.grid, self.detector, mu, polls,
            self.rng, arrival=spd_arrival, span=self.charlie.scan_span,
            step=self.charlie.gate_width,
        )
        positions = 2 * self.charlie.scan_span // self.charlie.gate_width + 1
        self.advance(positions * polls * self.grid.period)
        return estimate

    def interferes(self, residual: int) -> bool:
        c = self.charlie
        if c.visibility_sigma is None:
            return interference_check(residual, c.interference_tolerance)
        return visibility(residual, c.visibility_sigma) >= c.visibility_threshold

    def advance(self, duration: int) -> None:
        self.now += int(duration)


class _Bus:
    """Reliable, ordered classical channel with fixed latency."""

    def __init__(self, link: _Link, latency: int, gap: int):
        self.link = link
        self.latency = latency
        self.gap = gap
        self.messages: list[SyncMessage] = []

    def send(self, kind: MessageKind, payload: int, sender: str, receiver: str) -> None:
        self.link.advance(self.latency + self.gap)
        self.messages.append(
            SyncMessage(len(self.messages), kind, int(payload), self.link.now, sender, receiver)
        )


def _compensate(station: StationConfig, residual_shift: int, period: int) -> StationConfig:
    """Move ``station`` so that (Bob - Alice) arrival difference changes by ``residual_shift``."""
    if station.name is Station.BOB:
        return apply_compensation(station, -residual_shift, period)
    return apply_compensation(station, residual_shift, period)


def run_sync(
    alice: StationConfig,
    bob: StationConfig,
    charlie: CharlieConfig,
    grid: TimingGrid,
    detector: DetectorParams,
    drift: DriftModel,
    polls: int,
    rng: np.random.Generator,
    max_recalibrations: int = 3,
) -> SyncOutcome:
    """Run the full handshake until interference is confirmed.

    Raises ``SyncFailed`` (carrying the last outcome) once
    ``max_recalibrations`` restarts have been spent.
    """
    if max_recalibrations < 1:
        raise InvalidParameter("max_recalibrations must be >= 1")
    if alice.name is not Station.ALICE or bob.name is not Station.BOB:
        raise InvalidParameter("stations must be passed as (alice, bob)")
    for st in (alice, bob):
        if (st.period or grid.period) != grid.period:
            raise ConfigurationError(
                f"{st.name.value} repetition period {st.period} ps differs from {grid.period} ps"
            )
    if charlie.scan_span % charlie.gate_width:
        raise InvalidParameter("scan_span must be a whole number of gate steps")
    for st in (alice, bob):
        grid.check_round_trip(2 * one_way_time(st.channel))

    period = grid.period
    link = _Link(grid, detector, drift, charlie, rng)
    bus = _Bus(link, charlie.channel_latency, charlie.stage_gap)
    stations = {Station.ALICE: alice, Station.BOB: bob}
    comp = charlie.compensating_station
    outcome = SyncOutcome()

    for attempt in range(max_recalibrations + 1):
        outcome.recalibrations = attempt
        try:
            _attempt(stations, comp, link, bus, grid, polls, charlie, outcome)
        except PicosyncError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            bus.send(MessageKind.RECALIBRATE, 0, "charlie", "all")
            continue
        outcome.messages_exchanged = len(bus.messages)
        outcome.transcript = list(bus.messages)
        return outcome
    outcome.messages_exchanged = len(bus.messages)
    outcome.transcript = list(bus.messages)
    outcome.interference_ok = False
    raise SyncFailed(f"no interference after {max_recalibrations} recalibrations", outcome)


def _attempt(stations, comp, link: _Link, bus: _Bus, grid, polls, charlie: CharlieConfig, outcome):
    period = grid.period
    alice, bob = stations[Station.ALICE], stations[Station.BOB]

    # Both stations range concurrently.
    start = link.now
    ranged = {}
    for st in (alice, bob):
        link.now = start
        ranged[st.name] = link.range_station(st, polls)
    link.now = start + max(r.pulses_used for r in ranged.values()) * period
    outcome.alice_round_trip = ranged[Station.ALICE].round_trip_estimate
    outcome.bob_round_trip = ranged[Station.BOB].round_trip_estimate

    # Arm and gate, Alice first; her mirror output is then switched off.
    arrivals = {}
    for st in (alice, bob):
        who = st.name.value
        bus.send(MessageKind.PERIOD_REPORT, st.period or period, who, "charlie")
        bus.send(MessageKind.ACTIVATE_SPD, ranged[st.name].round_trip_estimate // 2, who, "charlie")
        arrivals[st.name] = link.measure_at_centre(st, polls)
    outcome.t_alice = arrivals[Station.ALICE]
    outcome.t_bob = arrivals[Station.BOB]

    delta = compute_delta(outcome.t_alice, outcome.t_bob, period)
    outcome.delta = delta
    bus.send(MessageKind.DELTA_REPORT, delta, "charlie", comp.value)
    stations[comp] = _compensate(stations[comp], -delta, period)

    # One input open at a time, re-measure and re-correct.
    for _ in range(charlie.max_verify_rounds):
        t_a = link.measure_at_centre(stations[Station.ALICE], charlie.verify_polls)
        t_b = link.measure_at_centre(stations[Station.BOB], charlie.verify_polls)
        check = compute_delta(t_a, t_b, period)
        if abs(check) <= charlie.gate_width:
            break
        bus.send(MessageKind.ADJUST_COMMAND, check, "charlie", comp.value)
        stations[comp] = _compensate(stations[comp], -check, period)
    else:
        raise AmbiguousRefinement("alternating verification did not converge")

    # Both inputs open, interference with fine scan.
    residual = compute_delta(
        link.arrival(stations[Station.ALICE]), link.arrival(stations[Station.BOB]), period
    )
    try:
        offset = fine_adjust(
            lambda o: link.interferes(residual + o), charlie.fine_adjust_span, charlie.fine_adjust_step
        )
    except FineAdjustFailed:
        bus.send(MessageKind.INTERFERENCE_RESULT, 0, "charlie", "all")
        raise
    if offset:
        bus.send(MessageKind.ADJUST_COMMAND, offset, "charlie", comp.value)
        stations[comp] = _compensate(stations[comp], offset, period)
    bus.send(MessageKind.INTERFERENCE_RESULT, 1, "charlie", "all")
    outcome.fine_offset = offset
    outcome.residual_offset = residual + offset
    outcome.interference_ok = True


# -- transcripts -----------------------------------------------------------------

def format_transcript(messages: Iterable[SyncMessage]) -> str:
    return "".join(m.line() + "\n" for m in messages)


def parse_transcript(text: str) -> list[tuple[int, MessageKind, int, int]]:
    """Parse ``index kind payload_ps timestamp_ps`` lines."""
    rows = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {n}: expected 4 fields, got {len(parts)}")
        rows.append((int(parts[0]), MessageKind(parts[1]), int(parts[2]), int(parts[3])))
    return rows


def replay_sync(transcript: str, *args, seed, **kwargs) -> SyncOutcome:
    """Re-run ``run_sync`` under ``seed`` and check it reproduces ``transcript``.

    ``args``/``kwargs`` are forwarded to ``run_sync`` (without the rng).
    """
    expected = parse_transcript(transcript)
    outcome = run_sync(*args, rng=np.random.default_rng(seed), **kwargs)
    got = parse_transcript(format_transcript(outcome.transcript))
    if got != expected:
        for a, b in zip(expected, got):
            if a != b:
                raise ValueError(f"transcript diverges at message {a[0]}: recorded {a}, replayed {b}")
        raise ValueError(f"transcript length differs: recorded {len(expected)}, replayed {len(got)}")
    return outcome
