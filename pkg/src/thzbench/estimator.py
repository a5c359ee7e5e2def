"""Link-budget surrogate for channel estimation.

Free-space path loss plus a table-driven molecular absorption term feed an SNR
budget; closed-form BER expressions (BPSK exact, square M-QAM nearest-neighbour
approximation) then drive modulation selection. The surrogate is deliberately
cheap: it stands in for a full propagation model while preserving the shape
that matters here, namely that BER is strictly monotone in SNR and that the
feasible modulation order falls with distance and humidity.

derive_config is pure; estimate composes validate/read/derive/write against a
store the same way the orchestrated workflow does.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from scipy.special import erfc

from .domain import (
    BucketGrid,
    ChannelConfig,
    ChannelState,
    ConfigKey,
    Modulation,
    QosRequirements,
    RequestEnvelope,
    make_config_key,
    validate_request,
)
from .store import ConfigStore

SPEED_OF_LIGHT_M_S = 299792458.0
THERMAL_NOISE_DBM_PER_HZ = -174.0

# Modulations ordered highest spectral efficiency first for selection.
_BY_ORDER_DESC = (Modulation.QAM64, Modulation.QAM16, Modulation.QPSK, Modulation.BPSK)

# Margin probe for the code-rate choice: a config keeps the high rate only if
# it would still meet the BER bound after losing this much SNR.
CODE_RATE_MARGIN_DB = 3.0
CODE_RATE_HIGH = 0.8
CODE_RATE_LOW = 0.5


@dataclass(frozen=True)
class AbsorptionTable:
    """Piecewise-constant absorption coefficient in dB/m.

    Rows are (frequency_max_hz, humidity_max_pct, db_per_m), scanned in order;
    the first row whose bounds contain the operating point wins. A None bound
    means unbounded.
    """

    rows: tuple[tuple[Optional[float], Optional[float], float], ...]

    def coeff_db_per_m(self, frequency_hz: float, humidity_pct: float) -> float:
        for f_max, h_max, k in self.rows:
            if (f_max is None or frequency_hz < f_max) and (h_max is None or humidity_pct < h_max):
                return k
        raise ValueError(f"absorption table has no row for f={frequency_hz}, humidity={humidity_pct}")

    @classmethod
    def from_dict(cls, d: dict) -> "AbsorptionTable":
        rows = tuple(
            (None if r[0] is None else float(r[0]), None if r[1] is None else float(r[1]), float(r[2]))
            for r in d["rows"]
        )
        return cls(rows=rows)

    @classmethod
    def from_json_file(cls, path: str) -> "AbsorptionTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# Dry air below 50% relative humidity, humid air above.
DEFAULT_ABSORPTION = AbsorptionTable(rows=((None, 50.0, 0.5), (None, None, 2.0)))


@dataclass(frozen=True)
class LinkBudgetParams:
    tx_power_dbm: float = 10.0
    tx_gain_dbi: float = 25.0
    rx_gain_dbi: float = 25.0
    noise_figure_db: float = 10.0
    absorption: AbsorptionTable = field(default_factory=lambda: DEFAULT_ABSORPTION)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkBudgetParams":
        absorption = DEFAULT_ABSORPTION if "absorption" not in d else AbsorptionTable.from_dict(d["absorption"])
        return cls(
            tx_power_dbm=float(d.get("tx_power_dbm", 10.0)),
            tx_gain_dbi=float(d.get("tx_gain_dbi", 25.0)),
            rx_gain_dbi=float(d.get("rx_gain_dbi", 25.0)),
            noise_figure_db=float(d.get("noise_figure_db", 10.0)),
            absorption=absorption,
        )

    @classmethod
    def from_json_file(cls, path: str) -> "LinkBudgetParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def free_space_path_loss_db(distance_m: float, frequency_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * distance_m * frequency_hz / SPEED_OF_LIGHT_M_S)


def path_loss_db(
    distance_m: float,
    frequency_hz: float,
    humidity_pct: float,
    absorption: AbsorptionTable = DEFAULT_ABSORPTION,
) -> float:
    """Free-space spreading loss plus linear-in-distance absorption."""
    return free_space_path_loss_db(distance_m, frequency_hz) + absorption.coeff_db_per_m(
        frequency_hz, humidity_pct
    ) * distance_m


def noise_floor_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    return THERMAL_NOISE_DBM_PER_HZ + 10.0 * math.log10(bandwidth_hz) + noise_figure_db


def snr_db(qos: QosRequirements, state: ChannelState, params: LinkBudgetParams = LinkBudgetParams()) -> float:
    """Link-budget SNR over the full requested bandwidth."""
    loss = path_loss_db(state.distance_m, state.frequency_hz, state.humidity_pct, params.absorption)
    noise = noise_floor_dbm(qos.bandwidth_hz, params.noise_figure_db)
    return params.tx_power_dbm + params.tx_gain_dbi + params.rx_gain_dbi - loss - noise


def _q(x: float) -> float:
    return float(0.5 * erfc(x / math.sqrt(2.0)))


def ber_of(modulation: Modulation, snr_linear: float) -> float:
    """Bit error rate at per-symbol SNR `snr_linear`.

    BPSK is exact, Q(sqrt(2*snr)). Square M-QAM uses the standard Gray-coded
    nearest-neighbour approximation (4/log2 M)(1 - 1/sqrt(M)) Q(sqrt(3 snr/(M-1))),
    whose M=4 case reduces to the exact QPSK expression Q(sqrt(snr)).
    """
    if snr_linear < 0.0:
        raise ValueError("snr_linear must be >= 0")
    if modulation is Modulation.BPSK:
        return _q(math.sqrt(2.0 * snr_linear))
    m = modulation.order
    coeff = (4.0 / modulation.bits_per_symbol) * (1.0 - 1.0 / math.sqrt(m))
    return coeff * _q(math.sqrt(3.0 * snr_linear / (m - 1.0)))


def select_modulation(snr_value_db: float, ber_max: float) -> Optional[Modulation]:
    """Highest-order modulation meeting `ber_max` at the given SNR, or None."""
    gamma = db_to_linear(snr_value_db)
    for mod in _BY_ORDER_DESC:
        if ber_of(mod, gamma) <= ber_max:
            return mod
    return None


def derive_config(
    qos: QosRequirements, state: ChannelState, params: LinkBudgetParams = LinkBudgetParams()
) -> Optional[ChannelConfig]:
    """Compute a feasible link configuration, or None if QoS is unattainable.

    A measured SNR on the channel state overrides the budget prediction. The
    code rate drops to the robust value unless the chosen modulation still
    meets the BER bound with CODE_RATE_MARGIN_DB less SNR. Infeasibility is
    either no modulation meeting ber_max or a supportable bitrate below the
    request (1 symbol per second per hertz).
    """
    snr = state.measured_snr_db if state.measured_snr_db is not None else snr_db(qos, state, params)
    mod = select_modulation(snr, qos.ber_max)
    if mod is None:
        return None
    degraded = ber_of(mod, db_to_linear(snr - CODE_RATE_MARGIN_DB))
    code_rate = CODE_RATE_HIGH if degraded <= qos.ber_max else CODE_RATE_LOW
    achievable_bps = mod.bits_per_symbol * qos.bandwidth_hz * code_rate
    if achievable_bps < qos.bitrate_bps:
        return None
    return ChannelConfig(
        modulation=mod,
        code_rate=code_rate,
        bandwidth_hz=qos.bandwidth_hz,
        tx_power_dbm=params.tx_power_dbm,
        predicted_snr_db=snr,
        predicted_ber=ber_of(mod, db_to_linear(snr)),
    )


@dataclass(frozen=True)
class EstimateOutcome:
    key: ConfigKey
    config: Optional[ChannelConfig]
    cache_hit: bool
    version: Optional[int]

    @property
    def feasible(self) -> bool:
        return self.config is not None


def estimate(
    req: RequestEnvelope,
    store: ConfigStore,
    params: LinkBudgetParams = LinkBudgetParams(),
    grid: BucketGrid = BucketGrid(),
    ts: int = 0,
) -> EstimateOutcome:
    """Full estimation flow: validate, consult the store, derive on a miss,
    persist the derived configuration.

    Infeasible requests are not cached; they signal rejection upstream.
    """
    validate_request(req)
    key = make_config_key(req.qos, req.state, grid)
    rec = store.read(key)
    if rec is not None:
        return EstimateOutcome(key=key, config=rec.config, cache_hit=True, version=rec.version)
    config = derive_config(req.qos, req.state, params)
    if config is None:
        return EstimateOutcome(key=key, config=None, cache_hit=False, version=None)
    version = store.write(key, config, ts=ts)
    return EstimateOutcome(key=key, config=config, cache_hit=False, version=version)
