"""Temporal discretisation of the pulse repetition period.

All durations are integer picoseconds.  A period is cut into ``num_windows``
coarse windows, and every window into ``subintervals_per_window`` equal
subintervals used by the refinement scans.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import DegenerateGrid, InvalidDuration, InvalidParameter, OutOfRange

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000
S = 1_000_000_000_000

SPEED_OF_LIGHT = 299_792_458  # m/s, exact by definition

DEFAULT_PULSE_WIDTH = 1 * NS
DEFAULT_WINDOW_WIDTH = 2 * NS
DEFAULT_SUBINTERVALS = 200
DEFAULT_GROUP_INDEX = 1.468
DEFAULT_GUARD = 1 * US


def _exact(value) -> Fraction:
    # Decimal literals like 1.468 are meant exactly, not as their binary float.
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


def _as_ps(value, name: str) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise InvalidDuration(f"{name} must be a whole number of picoseconds, got {value!r}")
    return int(value)


def exact_round_trip(length_km, group_index=DEFAULT_GROUP_INDEX) -> Fraction:
    """Exact round-trip propagation time in picoseconds, as a Fraction."""
    metres = _exact(length_km) * 1000
    return 2 * metres * _exact(group_index) * S / SPEED_OF_LIGHT


def num_windows(period: int, window_width: int) -> int:
    """Number of whole windows that fit in one period (floor division)."""
    period = _as_ps(period, "period")
    window_width = _as_ps(window_width, "window_width")
    if period <= 0 or window_width <= 0:
        raise InvalidDuration("period and window_width must be positive")
    n = period // window_width
    if n == 0:
        raise DegenerateGrid(f"period {period} ps shorter than one window of {window_width} ps")
    return n


def choose_period(
    max_length_km,
    group_index=DEFAULT_GROUP_INDEX,
    guard: int = DEFAULT_GUARD,
    window_width: int = DEFAULT_WINDOW_WIDTH,
) -> int:
    """Shortest whole-window period that clears the longest round trip plus a guard.

    The result is strictly greater than ``round_trip + guard`` so that the
    reflected pulse never lands on the next emission.
    """
    if max_length_km <= 0:
        raise InvalidParameter(f"max_length must be positive, got {max_length_km}")
    if group_index < 1:
        raise InvalidParameter(f"group_index must be >= 1, got {group_index}")
    guard = _as_ps(guard, "guard")
    if guard < 0:
        raise InvalidParameter("guard must be non-negative")
    window_width = _as_ps(window_width, "window_width")
    if window_width <= 0:
        raise InvalidDuration("window_width must be positive")
    needed = exact_round_trip(max_length_km, group_index) + guard
    return (needed // window_width + 1) * window_width


@dataclass(frozen=True)
class TimingGrid:
    """Period / window / subinterval layout, all in integer picoseconds."""

    period: int
    pulse_width: int = DEFAULT_PULSE_WIDTH
    window_width: int = DEFAULT_WINDOW_WIDTH
    subintervals_per_window: int = DEFAULT_SUBINTERVALS

    def __post_init__(self):
        for name in ("period", "pulse_width", "window_width", "subintervals_per_window"):
            value = _as_ps(getattr(self, name), name)
            if value <= 0:
                raise InvalidDuration(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        if self.pulse_width > self.window_width:
            raise InvalidParameter("pulse_width must not exceed window_width")
        if self.window_width % self.subintervals_per_window:
            raise InvalidParameter(
                f"window_width {self.window_width} ps is not divisible into "
                f"{self.subintervals_per_window} whole-picosecond subintervals"
            )
        num_windows(self.period, self.window_width)

    @classmethod
    def for_length(cls, max_length_km, group_index=DEFAULT_GROUP_INDEX, guard=DEFAULT_GUARD, **kwargs):
        window_width = kwargs.get("window_width", DEFAULT_WINDOW_WIDTH)
        return cls(period=choose_period(max_length_km, group_index, guard, window_width), **kwargs)

    @property
    def num_windows(self) -> int:
        return self.period // self.window_width

    @property
    def subinterval_width(self) -> int:
        return self.window_width // self.subintervals_per_window

    def check_round_trip(self, round_trip: int) -> None:
        """Raise unless a pulse arriving ``round_trip`` after emission fits the period."""
        if round_trip + self.pulse_width > self.period:
            raise InvalidParameter(
                f"round trip {round_trip} ps plus pulse overlaps the next period ({self.period} ps)"
            )


def window_of_offset(offset: int, grid: TimingGrid) -> tuple[int, int]:
    """Zero-based (window, subinterval) pair containing ``offset``."""
    offset = _as_ps(offset, "offset")
    if offset < 0 or offset >= grid.period:
        raise OutOfRange(f"offset {offset} ps outside [0, {grid.period})")
    window, within = divmod(offset, grid.window_width)
    return window, within // grid.subinterval_width


def offset_of(window: int, subinterval: int, grid: TimingGrid) -> int:
    """Start time of a (window, subinterval) slot; inverse of ``window_of_offset``."""
    return window * grid.window_width + subinterval * grid.subinterval_width
