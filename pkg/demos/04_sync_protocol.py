"""Synchronise two stations on 30 km and 50 km of fibre and print the message log."""

import numpy as np

from picosync.config import parse_config, reference_config_path
from picosync.protocol import Station, run_sync

cfg = parse_config(reference_config_path())
alice, bob = cfg.station(Station.ALICE), cfg.station(Station.BOB)

out = run_sync(alice, bob, cfg.charlie, cfg.grid, cfg.detector, cfg.drift,
               cfg["experiment"]["polls"], np.random.default_rng(cfg.seed))

for m in out.transcript:
    print(f"{m.sender:>7} -> {m.receiver:<7} {m.line()}")
print(f"\nround trips: alice {out.alice_round_trip} ps, bob {out.bob_round_trip} ps")
print(f"arrivals at centre: alice {out.t_alice} ps, bob {out.t_bob} ps, delta {out.delta} ps")
print(f"residual after compensation {out.residual_offset} ps, fine offset {out.fine_offset} ps")
