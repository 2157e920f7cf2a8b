"""Classical photodetector: Gaussian amplitude, fixed threshold, false alarms.

Amplitudes are in a dimensionless detector-output unit.  Only the ratios
``threshold / noise_sigma`` and ``(mean - threshold) / noise_sigma`` enter any
probability, so the unit itself never needs a physical meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import InvalidParameter, InvalidProbability
from .timing import NS

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class DetectorParams:
    noise_sigma: float = 1.0
    threshold: float = 5.0
    quantum_efficiency: float = 0.2
    dead_time: int = 100 * NS
    gain: float = 1.0  # amplitude units per watt of detected optical power

    def __post_init__(self):
        if not self.noise_sigma > 0:
            raise InvalidParameter(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if not self.threshold >= 0:
            raise InvalidParameter(f"threshold must be >= 0, got {self.threshold}")
        if not 0 < self.quantum_efficiency <= 1:
            raise InvalidParameter(f"quantum_efficiency must lie in (0, 1], got {self.quantum_efficiency}")
        if self.dead_time < 0:
            raise InvalidParameter(f"dead_time must be >= 0, got {self.dead_time}")
        if not self.gain > 0:
            raise InvalidParameter(f"gain must be > 0, got {self.gain}")

    @property
    def false_alarm_prob(self) -> float:
        return false_alarm_prob(self.threshold, self.noise_sigma)


@dataclass(frozen=True)
class WindowSample:
    signal_present: bool
    mean_amplitude: float
    measured: float


def q_function(x):
    """Upper tail of the standard normal, ``erfc(x / sqrt(2)) / 2``.

    Accepts scalars or arrays; scalars come back as Python floats.
    """
    if np.ndim(x) == 0:
        return 0.5 * math.erfc(float(x) / _SQRT2)
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)


def _check_sigma(sigma):
    if not sigma > 0:
        raise InvalidParameter(f"sigma must be > 0, got {sigma}")


def false_alarm_prob(threshold, sigma):
    """Probability that a noise-only window exceeds ``threshold``."""
    _check_sigma(sigma)
    return q_function(np.divide(threshold, sigma) if np.ndim(threshold) else threshold / sigma)


def detection_prob(mean_amplitude, threshold, sigma):
    """Probability that signal of the given mean amplitude plus noise exceeds ``threshold``."""
    _check_sigma(sigma)
    if np.ndim(mean_amplitude) == 0:
        if mean_amplitude < 0:
            raise InvalidParameter("mean_amplitude must be >= 0")
        return q_function((threshold - mean_amplitude) / sigma)
    return q_function((threshold - np.asarray(mean_amplitude, dtype=float)) / sigma)


def _check_period_args(p_false, n_windows):
    if not 0 <= p_false <= 1:
        raise InvalidProbability(f"p_false must lie in [0, 1], got {p_false}")
    if n_windows < 1 or int(n_windows) != n_windows:
        raise InvalidParameter(f"n_windows must be a positive integer, got {n_windows}")


def no_false_alarm_period(p_false: float, n_windows: int) -> float:
    """``(1 - p_false) ** n_windows``, evaluated in log space."""
    _check_period_args(p_false, n_windows)
    if p_false == 1:
        return 0.0
    return math.exp(n_windows * math.log1p(-p_false))


def false_alarm_per_period(p_false: float, n_windows: int) -> float:
    """Probability of at least one false alarm among ``n_windows`` noise windows."""
    _check_period_args(p_false, n_windows)
    if p_false == 1:
        return 1.0
    return -math.expm1(n_windows * math.log1p(-p_false))


def measure_window(signal_present, mean_amplitude, params: DetectorParams, rng) -> WindowSample:
    mu = float(mean_amplitude) if signal_present else 0.0
    return WindowSample(bool(signal_present), mu, mu + rng.normal(0.0, params.noise_sigma))


def sample_window(signal_present, mean_amplitude, params: DetectorParams, rng) -> bool:
    """One threshold decision on one window."""
    return measure_window(signal_present, mean_amplitude, params, rng).measured > params.threshold


def sample_windows(mean_amplitudes, params: DetectorParams, rng) -> np.ndarray:
    """Vectorised ``sample_window``: one decision per entry of ``mean_amplitudes``.

    Entries of zero are noise-only windows.
    """
    mu = np.asarray(mean_amplitudes, dtype=float)
    return mu + rng.normal(0.0, params.noise_sigma, size=mu.shape) > params.threshold


def mean_amplitude_from_power(received: float, params: DetectorParams) -> float:
    """Mean detector amplitude for a pulse of ``received`` dBm."""
    if math.isnan(received):
        raise InvalidParameter("received power is NaN")
    if received == -math.inf:
        return 0.0
    watts = 10 ** ((received - 30) / 10)
    return params.gain * params.quantum_efficiency * watts
