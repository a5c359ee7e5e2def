"""Walk a THz link from QoS + channel state to a concrete channel config.

Shows the pieces individually (SNR from the link budget, BER per
modulation, modulation selection against a BER ceiling) and then the
one-call derivation that the estimate service runs per request.
"""

import numpy as np

from thzbench.domain import ChannelState, DataType, Modulation, QosRequirements
from thzbench.estimator import (
    LinkBudgetParams,
    ber_of,
    derive_config,
    select_modulation,
    snr_db,
)

params = LinkBudgetParams()
qos = QosRequirements(
    bitrate_bps=20e9,
    ber_max=1e-6,
    bandwidth_hz=10e9,
    data_type=DataType.STREAM,
    deadline_ms=50.0,
)

print("SNR vs distance at 300 GHz, 60% humidity")
for d in (1.0, 5.0, 10.0, 20.0, 40.0):
    state = ChannelState(frequency_hz=300e9, distance_m=d, humidity_pct=60.0)
    s = snr_db(qos, state, params)
    mod = select_modulation(s, qos.ber_max)
    print(f"  {d:5.1f} m  ->  {s:7.2f} dB   best modulation: {mod.value if mod else 'none feasible'}")

print("\nBER at 12 dB SNR per modulation")
gamma = 10 ** (12 / 10)
for mod in Modulation:
    print(f"  {mod.value:>6}: {ber_of(mod, gamma):.3e}")

print("\nfull config derivation at 8 m")
state = ChannelState(frequency_hz=300e9, distance_m=8.0, humidity_pct=60.0)
cfg = derive_config(qos, state, params)
if cfg is None:
    print("  infeasible under this budget")
else:
    print(f"  modulation   {cfg.modulation.value}")
    print(f"  code rate    {cfg.code_rate}")
    print(f"  bandwidth    {cfg.bandwidth_hz/1e9:.1f} GHz")
    print(f"  SNR          {cfg.predicted_snr_db:.2f} dB")
    print(f"  BER          {cfg.predicted_ber:.3e}")

# the humidity knob matters most in the absorption bands
print("\nSNR across 0.1..1.0 THz, dry vs humid, 10 m")
for f in np.linspace(0.1e12, 1.0e12, 7):
    dry = snr_db(qos, ChannelState(frequency_hz=float(f), distance_m=10.0, humidity_pct=5.0), params)
    wet = snr_db(qos, ChannelState(frequency_hz=float(f), distance_m=10.0, humidity_pct=95.0), params)
    print(f"  {f/1e12:.2f} THz   dry {dry:7.2f} dB   humid {wet:7.2f} dB")
