"""Command-line entry point.

Subcommands and their CSV outputs (written to ``--out``, default ``./out``):

  sweep-power     power_sweep.csv
                  length_km,power_dbm,polls,trials,successes,estimate,stderr,seed
  sweep-samples   sample_size.csv
                  length_km,power_dbm,polls,trials,successes,estimate,stderr,
                  coarse_successes,coarse_estimate,seed
  validate-noise  false_alarm.csv
                  scope,ratio,n_windows,trials,hits,estimate,stderr,expected,z,seed
  sync-run        sync_run.csv + transcript.txt
                  t_alice_ps,t_bob_ps,delta_ps,residual_offset_ps,interference_ok,
                  recalibrations,messages_exchanged,alice_round_trip_ps,
                  bob_round_trip_ps,seed
  end-to-end      end_to_end.csv + residual_histogram.csv
                  min_length_km,max_length_km,trials,successes,estimate,stderr,
                  max_abs_residual_ps,mean_recalibrations,seed
                  bin_start_ps,count

Every CSV starts with ``#`` header lines: tool version, subcommand, config
hash, seed and the full effective configuration.  Transcript lines are
``index kind payload_ps timestamp_ps``.

Exit status: 0 success, 2 configuration error, 3 experiment failure.  Errors
are reported on stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_config, require_seed
from .errors import ConfigurationError, PicosyncError, SyncFailed
from .experiments import (
    ExperimentKind,
    ExperimentSpec,
    end_to_end,
    sweep_power,
    sweep_sample_size,
    validate_false_alarm,
)
from .protocol import Station, format_transcript, run_sync

SUBCOMMANDS = ("sweep-power", "sweep-samples", "validate-noise", "sync-run", "end-to-end")


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def _header(cfg: RunConfig, subcommand: str) -> str:
    lines = [
        f"# picosync {__version__}",
        f"# subcommand: {subcommand}",
        f"# config_hash: {cfg.config_hash()}",
        f"# seed: {cfg.seed}",
    ]
    lines += [f"# {line}" for line in cfg.effective_lines()]
    return "\n".join(lines) + "\n"


def write_csv(path: Path, header: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(header)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def _cmd_sweep_power(cfg, out, threads):
    e = cfg["experiment"]
    spec = ExperimentSpec(
        ExperimentKind.POWER_SWEEP, e["sweep_lengths_km"], e["sweep_powers_dbm"], e["trials"], e["polls"], cfg.seed,
        e["target_probability"],
    )
    rows = sweep_power(spec, cfg.model, threads)
    write_csv(
        out / "power_sweep.csv", _header(cfg, "sweep-power"),
        ["length_km", "power_dbm", "polls", "trials", "successes", "estimate", "stderr", "seed"],
        [(r.length, r.power, r.polls, r.trials, r.successes, r.estimate, r.stderr, r.seed) for r in rows],
    )
    return [f"{r.length:g} km {r.power:g} dBm: {r.estimate:.4f} +- {r.stderr:.4f}" for r in rows]


def _cmd_sweep_samples(cfg, out, threads):
    e = cfg["experiment"]
    spec = ExperimentSpec(
        ExperimentKind.SAMPLE_SIZE_SWEEP, e["sweep_lengths_km"], [e["sample_power_dbm"]], e["sample_trials"],
        "auto", cfg.seed, e["target_probability"],
    )
    rows = sweep_sample_size(spec, cfg.model, threads)
    write_csv(
        out / "sample_size.csv", _header(cfg, "sweep-samples"),
        ["length_km", "power_dbm", "polls", "trials", "successes", "estimate", "stderr",
         "coarse_successes", "coarse_estimate", "seed"],
        [(r.length, r.power, r.polls, r.trials, r.successes, r.estimate, r.stderr,
          r.coarse_successes, r.coarse_estimate, r.seed) for r in rows],
    )
    return [f"{r.length:g} km: {r.polls} polls ({r.estimate:.4f})" for r in rows]


def _cmd_validate_noise(cfg, out, threads):
    e = cfg["experiment"]
    spec = ExperimentSpec(ExperimentKind.FALSE_ALARM_VALIDATION, [0.0], [0.0], e["noise_periods"], 1, cfg.seed)
    rows = validate_false_alarm(
        spec, e["noise_ratios"], e["noise_samples"], e["noise_period_windows"], e["noise_periods"],
        cfg.detector.noise_sigma,
    )
    write_csv(
        out / "false_alarm.csv", _header(cfg, "validate-noise"),
        ["scope", "ratio", "n_windows", "trials", "hits", "estimate", "stderr", "expected", "z", "seed"],
        [(r.scope, r.ratio, r.n_windows, r.trials, r.hits, r.estimate, r.stderr, r.expected, r.z, r.seed)
         for r in rows],
    )
    return [f"{r.scope} q/sigma={r.ratio:g}: {r.estimate:.6g} vs {r.expected:.6g} (z={r.z:+.2f})" for r in rows]


def _cmd_sync_run(cfg, out, threads):
    alice, bob = cfg.station(Station.ALICE), cfg.station(Station.BOB)
    rng = np.random.default_rng(cfg.seed)
    failed = None
    try:
        o = run_sync(alice, bob, cfg.charlie, cfg.grid, cfg.detector, cfg.drift,
                     cfg["experiment"]["polls"], rng, cfg["charlie"]["max_recalibrations"])
    except SyncFailed as exc:
        o, failed = exc.outcome, exc
    header = _header(cfg, "sync-run")
    (out / "transcript.txt").write_text(header + format_transcript(o.transcript))
    write_csv(
        out / "sync_run.csv", header,
        ["t_alice_ps", "t_bob_ps", "delta_ps", "residual_offset_ps", "interference_ok", "recalibrations",
         "messages_exchanged", "alice_round_trip_ps", "bob_round_trip_ps", "seed"],
        [tuple("" if v is None else v for v in (
            o.t_alice, o.t_bob, o.delta, o.residual_offset, o.interference_ok, o.recalibrations,
            o.messages_exchanged, o.alice_round_trip, o.bob_round_trip, cfg.seed))],
    )
    if failed is not None:
        raise failed
    return [f"delta {o.delta} ps, residual {o.residual_offset} ps, recalibrations {o.recalibrations}"]


def _cmd_end_to_end(cfg, out, threads):
    e = cfg["experiment"]
    spec = ExperimentSpec(
        ExperimentKind.END_TO_END, [e["e2e_min_length_km"], e["e2e_max_length_km"]],
        [cfg["stations"]["alice_launch_dbm"]], e["e2e_trials"], e["polls"], cfg.seed,
    )
    row, hist, _ = end_to_end(spec, cfg.model, cfg.station(Station.ALICE), cfg.station(Station.BOB), threads)
    header = _header(cfg, "end-to-end")
    write_csv(
        out / "end_to_end.csv", header,
        ["min_length_km", "max_length_km", "trials", "successes", "estimate", "stderr",
         "max_abs_residual_ps", "mean_recalibrations", "seed"],
        [(row.min_length, row.max_length, row.trials, row.successes, row.estimate, row.stderr,
          row.max_abs_residual, row.mean_recalibrations, row.seed)],
    )
    write_csv(out / "residual_histogram.csv", header, ["bin_start_ps", "count"], sorted(hist.items()))
    return [f"interference ok in {row.successes}/{row.trials}, max |residual| {row.max_abs_residual} ps"]


_COMMANDS = {
    "sweep-power": _cmd_sweep_power,
    "sweep-samples": _cmd_sweep_samples,
    "validate-noise": _cmd_validate_noise,
    "sync-run": _cmd_sync_run,
    "end-to-end": _cmd_end_to_end,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="configuration file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    common.add_argument("--seed", type=int, help="override [experiment] seed")
    common.add_argument("--trials", type=int, help="override every trial count")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker processes (results do not depend on it)")
    parser = argparse.ArgumentParser(prog="picosync", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"picosync {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _error(exc: PicosyncError) -> None:
    print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config).with_overrides(seed=args.seed, trials=args.trials)
        require_seed(cfg)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
    except ConfigurationError as exc:
        _error(exc)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "output-error", "message": str(exc)}), file=sys.stderr)
        return 2
    try:
        summary = _COMMANDS[args.subcommand](cfg, args.out, args.threads)
    except ConfigurationError as exc:
        _error(exc)
        return 2
    except PicosyncError as exc:
        _error(exc)
        return 3
    for line in summary:
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
