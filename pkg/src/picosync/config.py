"""INI-style run configuration.

Durations are integer picoseconds (keys ending in ``_ps``), powers and losses
are decimals.  Every key is declared in ``SCHEMA``; unknown sections or keys
are rejected with their line number.  Keys with a default of ``REQUIRED``
must be present (``seed`` may instead come from the command line).
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .channel import ChannelParams, DriftModel, round_trip_time
from .detector import DetectorParams
from .errors import ConfigParseError, ConfigValidationError, PicosyncError
from .experiments import Model
from .protocol import CharlieConfig, Station, StationConfig
from .timing import TimingGrid, choose_period

REQUIRED = object()


def _floats(text: str) -> tuple[float, ...]:
    items = [s for s in re.split(r"[,\s]+", text.strip()) if s]
    if not items:
        raise ValueError("empty list")
    return tuple(float(s) for s in items)


def _int(text: str) -> int:
    return int(text.strip().replace("_", ""))


def _station(text: str) -> Station:
    return Station(text.strip().lower())


SCHEMA: dict[str, dict[str, tuple]] = {
    "timing": {
        "max_length_km": (float, 100.0),
        "guard_ps": (_int, 1_000_000),
        "period_ps": (_int, 0),  # 0 derives the period from max_length_km
        "pulse_width_ps": (_int, 1_000),
        "window_width_ps": (_int, 2_000),
        "subintervals_per_window": (_int, 200),
    },
    "channel": {
        "attenuation_db_per_km": (float, 0.2),
        "connector_count": (_int, 2),
        "connector_loss_db": (float, 0.3),
        "tap_ratio": (float, 0.05),
        "group_index": (float, 1.468),
        "mirror_reflectivity": (float, 1.0),
    },
    "detector": {
        "noise_sigma": (float, 1.0),
        "threshold": (float, 5.0),
        "quantum_efficiency": (float, 0.2),
        "dead_time_ps": (_int, 100_000),
        "gain": (float, REQUIRED),
    },
    "drift": {
        "linear_rate_ps_per_s": (float, 0.0),
        "jitter_sigma_ps": (float, 0.0),
    },
    "stations": {
        "alice_length_km": (float, 30.0),
        "bob_length_km": (float, 50.0),
        "alice_launch_dbm": (float, -17.7),
        "bob_launch_dbm": (float, -17.7),
        "alice_offset_ps": (_int, 0),
        "bob_offset_ps": (_int, 0),
    },
    "charlie": {
        "internal_delay_ps": (_int, 0),
        "gate_width_ps": (_int, 10),
        "scan_span_ps": (_int, 2_000),
        "fine_adjust_span_ps": (_int, 60),
        "fine_adjust_step_ps": (_int, 10),
        "interference_tolerance_ps": (_int, 10),
        "verify_polls": (_int, 10),
        "max_verify_rounds": (_int, 3),
        "compensating_station": (_station, Station.BOB),
        "channel_latency_ps": (_int, 0),
        "stage_gap_ps": (_int, 0),
        "visibility_sigma_ps": (float, 0.0),  # 0 disables the visibility gate
        "visibility_threshold": (float, 0.5),
        "max_recalibrations": (_int, 3),
    },
    "experiment": {
        "seed": (_int, REQUIRED),
        "polls": (_int, 10_000),
        "max_periods": (_int, 1),
        "trials": (_int, 10_000),
        "target_probability": (float, 0.99),
        "sweep_lengths_km": (_floats, (10.0, 25.0, 50.0, 75.0, 100.0)),
        "sweep_powers_dbm": (_floats, (-25.0, -22.0, -20.0, -19.0, -18.0, -17.7, -17.0, -16.0, -15.0, -12.0, -10.0, -5.0)),
        "sample_power_dbm": (float, -15.0),
        "sample_trials": (_int, 2_000),
        "noise_ratios": (_floats, (1.0, 2.0, 3.0)),
        "noise_samples": (_int, 1_000_000),
        "noise_period_windows": (_int, 1_000),
        "noise_periods": (_int, 10_000),
        "e2e_trials": (_int, 1_000),
        "e2e_min_length_km": (float, 1.0),
        "e2e_max_length_km": (float, 100.0),
    },
}


def reference_config_path() -> Path:
    """Path of the calibrated reference configuration shipped with the package."""
    return Path(str(resources.files("picosync") / "data" / "reference.ini"))


def _render(value) -> str:
    if isinstance(value, Station):
        return value.value
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    values: dict  # section -> key -> typed value, defaults applied
    source: str

    def __getitem__(self, section):
        return self.values[section]

    # -- derived objects -----------------------------------------------------

    @property
    def grid(self) -> TimingGrid:
        t = self["timing"]
        period = t["period_ps"] or choose_period(
            t["max_length_km"], self["channel"]["group_index"], t["guard_ps"], t["window_width_ps"]
        )
        return TimingGrid(period, t["pulse_width_ps"], t["window_width_ps"], t["subintervals_per_window"])

    def channel(self, length: float) -> ChannelParams:
        c = self["channel"]
        return ChannelParams(
            length=length,
            attenuation=c["attenuation_db_per_km"],
            connector_count=c["connector_count"],
            connector_loss=c["connector_loss_db"],
            tap_ratio=c["tap_ratio"],
            group_index=c["group_index"],
            mirror_reflectivity=c["mirror_reflectivity"],
        )

    @property
    def detector(self) -> DetectorParams:
        d = self["detector"]
        return DetectorParams(d["noise_sigma"], d["threshold"], d["quantum_efficiency"], d["dead_time_ps"], d["gain"])

    @property
    def drift(self) -> DriftModel:
        d = self["drift"]
        return DriftModel(d["linear_rate_ps_per_s"], d["jitter_sigma_ps"])

    @property
    def charlie(self) -> CharlieConfig:
        c = self["charlie"]
        return CharlieConfig(
            internal_delay=c["internal_delay_ps"],
            gate_width=c["gate_width_ps"],
            scan_span=c["scan_span_ps"],
            fine_adjust_span=c["fine_adjust_span_ps"],
            fine_adjust_step=c["fine_adjust_step_ps"],
            interference_tolerance=c["interference_tolerance_ps"],
            verify_polls=c["verify_polls"],
            max_verify_rounds=c["max_verify_rounds"],
            compensating_station=c["compensating_station"],
            channel_latency=c["channel_latency_ps"],
            stage_gap=c["stage_gap_ps"],
            visibility_sigma=c["visibility_sigma_ps"] or None,
            visibility_threshold=c["visibility_threshold"],
        )

    def station(self, name: Station) -> StationConfig:
        s = self["stations"]
        p = name.value
        return StationConfig(name, self.channel(s[f"{p}_length_km"]), s[f"{p}_launch_dbm"], s[f"{p}_offset_ps"])

    @property
    def model(self) -> Model:
        e = self["experiment"]
        return Model(
            grid=self.grid,
            detector=self.detector,
            channel=self.channel(0.0),
            drift=self.drift,
            charlie=self.charlie,
            polls=e["polls"],
            max_periods=e["max_periods"],
            max_recalibrations=self["charlie"]["max_recalibrations"],
        )

    @property
    def seed(self) -> int:
        return self["experiment"]["seed"]

    # -- provenance ------------------------------------------------------------

    def effective_lines(self) -> list[str]:
        lines = []
        for section, keys in self.values.items():
            for key, value in keys.items():
                lines.append(f"[{section}] {key} = {_render(value)}")
        return lines

    def config_hash(self) -> str:
        text = "\n".join(self.effective_lines()).encode()
        return hashlib.sha256(text).hexdigest()

    def with_overrides(self, seed: int | None = None, trials: int | None = None) -> "RunConfig":
        values = {s: dict(k) for s, k in self.values.items()}
        e = values["experiment"]
        if seed is not None:
            e["seed"] = seed
        if trials is not None:
            for key in ("trials", "sample_trials", "e2e_trials", "noise_periods"):
                e[key] = trials
        return _validated(values, self.source)


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for n, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1)), n)
    return where


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigParseError(f"{source}: {exc}") from exc
    lines = _key_lines(text)

    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            n = next((ln for (s, _), ln in lines.items() if s == section), "?")
            raise ConfigParseError(f"{source}: unknown section [{section}] (line {n})")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigParseError(
                    f"{source}:{lines.get((section, key), '?')}: unknown key '{key}' in [{section}]"
                )
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    values[section][key] = conv(raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigParseError(
                        f"{source}:{lines.get((section, key), '?')}: bad value for [{section}] {key}: {raw!r} ({exc})"
                    ) from exc
            else:
                values[section][key] = default
    return _validated(values, source)


def _validated(values: dict, source: str) -> RunConfig:
    for section, keys in values.items():
        for key, value in keys.items():
            if value is REQUIRED:
                if (section, key) == ("experiment", "seed"):
                    continue  # may still arrive via --seed; checked by require_seed()
                raise ConfigValidationError(f"{source}: missing required key [{section}] {key}")
    cfg = RunConfig(values, source)
    checks = [
        ("timing", lambda: cfg.grid),
        ("channel", lambda: cfg.channel(0.0)),
        ("detector", lambda: cfg.detector),
        ("drift", lambda: cfg.drift),
        ("charlie", lambda: cfg.charlie),
        ("stations", lambda: (cfg.station(Station.ALICE), cfg.station(Station.BOB))),
    ]
    for section, build in checks:
        try:
            build()
        except PicosyncError as exc:
            raise ConfigValidationError(f"{source}: [{section}] {exc}") from exc
    e = values["experiment"]
    for key in ("polls", "max_periods", "trials", "sample_trials", "noise_samples",
                "noise_period_windows", "noise_periods", "e2e_trials"):
        if e[key] < 1:
            raise ConfigValidationError(f"{source}: [experiment] {key} must be >= 1")
    if not 0 < e["target_probability"] < 1:
        raise ConfigValidationError(f"{source}: [experiment] target_probability must lie in (0, 1)")
    if e["seed"] is not REQUIRED and not 0 <= e["seed"] < 2**64:
        raise ConfigValidationError(f"{source}: [experiment] seed must be a 64-bit unsigned integer")
    grid = cfg.grid
    longest = max(
        e["e2e_max_length_km"], *e["sweep_lengths_km"],
        values["stations"]["alice_length_km"], values["stations"]["bob_length_km"],
    )
    try:
        grid.check_round_trip(round_trip_time(cfg.channel(longest)))
    except PicosyncError as exc:
        raise ConfigValidationError(f"{source}: [timing] period too short for {longest} km: {exc}") from exc
    return cfg


def require_seed(cfg: RunConfig) -> None:
    if cfg["experiment"]["seed"] is REQUIRED:
        raise ConfigValidationError(f"{cfg.source}: [experiment] seed is mandatory (config or --seed)")


def parse_config(path) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, str(path))
