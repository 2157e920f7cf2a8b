"""Optical power coming back from the central mirror, and what it means for detection."""

from picosync.channel import ChannelParams, received_power_oneway, received_power_roundtrip, round_trip_time
from picosync.config import parse_config, reference_config_path
from picosync.detector import detection_prob, mean_amplitude_from_power

cfg = parse_config(reference_config_path())
det = cfg.detector

print("length   round trip (ps)   returned (dBm)  window amplitude (sd)  P_d(window)  one-way at centre (dBm)")
for km in (10, 25, 50, 75, 100):
    ch = cfg.channel(km)
    back = received_power_roundtrip(-17.7, ch)
    mu = mean_amplitude_from_power(back, det)
    pd = detection_prob(mu, det.threshold, det.noise_sigma)
    print(f"{km:>4} km  {round_trip_time(ch):>15,}  {back:14.2f}  {mu:21.2f}  {pd:11.6f}"
          f"  {received_power_oneway(-17.7, ch):12.2f}")

# Each extra connector pair costs 0.6 dB on the round trip
for conns in (0, 2, 4):
    print(f"{conns} connectors at 100 km: {received_power_roundtrip(-17.7, ChannelParams(100, connector_count=conns)):.2f} dBm")
