"""Monte Carlo simulator for fibre ranging and timing alignment of QKD stations."""

__version__ = "0.1.0"

from .channel import (
    ChannelParams,
    DriftModel,
    apply_drift,
    received_power_oneway,
    received_power_roundtrip,
    round_trip_time,
)
from .detector import (
    DetectorParams,
    detection_prob,
    false_alarm_per_period,
    false_alarm_prob,
    mean_amplitude_from_power,
    no_false_alarm_period,
    q_function,
    sample_window,
)
from .protocol import (
    CharlieConfig,
    Station,
    StationConfig,
    SyncOutcome,
    compute_delta,
    run_sync,
)
from .search import SearchResult, coarse_search, full_search, refine
from .timing import TimingGrid, choose_period, num_windows, window_of_offset
