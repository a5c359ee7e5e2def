"""Append-only config store: versioned writes, lookup, and crash recovery
including a torn final record."""

import os
import tempfile

from thzbench.domain import ChannelConfig, ConfigKey, Modulation
from thzbench.store import ConfigStore

path = os.path.join(tempfile.mkdtemp(), "configs.jsonl")

cfg_a = ChannelConfig(modulation=Modulation.QPSK, code_rate=0.5, bandwidth_hz=5e9,
                      tx_power_dbm=10.0, predicted_snr_db=14.0, predicted_ber=1e-7)
cfg_b = ChannelConfig(modulation=Modulation.QAM16, code_rate=0.8, bandwidth_hz=10e9,
                      tx_power_dbm=10.0, predicted_snr_db=22.0, predicted_ber=1e-9)

key = ConfigKey.from_list([3000, 10, 60, 20, 1, 0, 1])

with ConfigStore(path) as store:
    v1 = store.write(key, cfg_a, ts=100)
    v2 = store.write(key, cfg_b, ts=200)
    print(f"wrote versions {v1} then {v2}; latest wins on read:")
    rec = store.read(key)
    print(f"  version {rec.version}  modulation {rec.config.modulation.value}  ts {rec.ts}")

# simulate a crash mid-append: a torn record with no trailing newline
with open(path, "ab") as fh:
    fh.write(b'{"key": [3000, 10, 60')
print(f"\nappended a torn record; file is {os.path.getsize(path)} bytes")

with ConfigStore(path) as store:
    rec = store.read(key)
    print("after reopen the torn tail is discarded, acked data intact:")
    print(f"  version {rec.version}  modulation {rec.config.modulation.value}")
    print(f"  store stats: {store.stats()}")
