"""Core vocabulary types: QoS, channel state, link configurations, request/response
envelopes, and the bucketed lookup key used to match requests against stored
configurations.

All types are immutable values; every operation here is pure. The canonical wire
form of the envelopes and of ChannelConfig is JSON with snake_case field names,
shared by the live HTTP protocol and the store log.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, NamedTuple, Optional


class RequestKind(str, Enum):
    USER_ASSIGN = "UserAssign"
    RESOURCE_QUERY = "ResourceQuery"
    RESOURCE_UPDATE = "ResourceUpdate"
    TRAFFIC_ENGINEER = "TrafficEngineer"
    CHANNEL_ESTIMATE = "ChannelEstimate"


class DataType(str, Enum):
    BULK = "bulk"
    STREAM = "stream"
    CONTROL = "control"


class Modulation(str, Enum):
    """Supported modulation formats, ordered by spectral efficiency."""

    BPSK = "BPSK"
    QPSK = "QPSK"
    QAM16 = "QAM16"
    QAM64 = "QAM64"

    @property
    def order(self) -> int:
        """Constellation size M."""
        return {"BPSK": 2, "QPSK": 4, "QAM16": 16, "QAM64": 64}[self.value]

    @property
    def bits_per_symbol(self) -> int:
        return {"BPSK": 1, "QPSK": 2, "QAM16": 4, "QAM64": 6}[self.value]


class Status(str, Enum):
    OK = "Ok"
    TIMEOUT = "Timeout"
    REJECTED = "Rejected"
    FAILED = "Failed"


FREQUENCY_MIN_HZ = 0.1e12
FREQUENCY_MAX_HZ = 10e12


class ValidationError(ValueError):
    """A field-level invariant violation."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


@dataclass(frozen=True)
class QosRequirements:
    """Requested link quality: rate, error bound, bandwidth, traffic class, deadline."""

    bitrate_bps: float
    ber_max: float
    bandwidth_hz: float
    data_type: DataType = DataType.BULK
    deadline_ms: float = 1000.0


@dataclass(frozen=True)
class ChannelState:
    """Measured channel conditions at request time."""

    frequency_hz: float
    distance_m: float
    humidity_pct: float
    temperature_c: float = 20.0
    measured_snr_db: Optional[float] = None


@dataclass(frozen=True)
class ChannelConfig:
    """A concrete link configuration handed back to the transmitter."""

    modulation: Modulation
    code_rate: float
    bandwidth_hz: float
    tx_power_dbm: float
    predicted_snr_db: float
    predicted_ber: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "modulation": self.modulation.value,
            "code_rate": self.code_rate,
            "bandwidth_hz": self.bandwidth_hz,
            "tx_power_dbm": self.tx_power_dbm,
            "predicted_snr_db": self.predicted_snr_db,
            "predicted_ber": self.predicted_ber,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChannelConfig":
        return cls(
            modulation=Modulation(d["modulation"]),
            code_rate=float(d["code_rate"]),
            bandwidth_hz=float(d["bandwidth_hz"]),
            tx_power_dbm=float(d["tx_power_dbm"]),
            predicted_snr_db=float(d["predicted_snr_db"]),
            predicted_ber=float(d["predicted_ber"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


class ConfigKey(NamedTuple):
    """Bucketed lookup identity for a (QoS, channel state) combination.

    A plain tuple of integers: hashable, totally ordered, and stable under
    serialization (JSON array of 7 ints).
    """

    frequency_idx: int
    distance_idx: int
    humidity_idx: int
    temperature_idx: int
    bitrate_idx: int
    ber_exp_idx: int
    bandwidth_idx: int

    def to_list(self) -> list[int]:
        return list(self)

    @classmethod
    def from_list(cls, items: list[int]) -> "ConfigKey":
        if len(items) != 7:
            raise ValidationError("key", f"expected 7 bucket indices, got {len(items)}")
        return cls(*(int(i) for i in items))


@dataclass(frozen=True)
class BucketGrid:
    """Bucket widths per key dimension.

    Linear dimensions use floor(value / width); bitrate, ber_max and bandwidth
    bucket on the decade (floor of log10). The grid is configuration: coarse
    defaults keep cache hits non-degenerate at desk scale.
    """

    frequency_hz: float = 10e9
    distance_m: float = 1.0
    humidity_pct: float = 10.0
    temperature_c: float = 5.0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BucketGrid":
        return cls(
            frequency_hz=float(d.get("frequency_hz", 10e9)),
            distance_m=float(d.get("distance_m", 1.0)),
            humidity_pct=float(d.get("humidity_pct", 10.0)),
            temperature_c=float(d.get("temperature_c", 5.0)),
        )


# Tolerates float representation error just below decade boundaries
# (log10(1e9) may land a hair under 9.0).
_LOG_EPS = 1e-12


def _decade(value: float) -> int:
    return math.floor(math.log10(value) + _LOG_EPS)


def make_config_key(qos: QosRequirements, state: ChannelState, grid: BucketGrid = BucketGrid()) -> ConfigKey:
    """Discretize validated (qos, state) into the store lookup key.

    Deterministic and piecewise-constant within buckets: any two inputs whose
    dimensions all fall in the same buckets map to the same key.
    """
    return ConfigKey(
        frequency_idx=math.floor(state.frequency_hz / grid.frequency_hz),
        distance_idx=math.floor(state.distance_m / grid.distance_m),
        humidity_idx=math.floor(state.humidity_pct / grid.humidity_pct),
        temperature_idx=math.floor(state.temperature_c / grid.temperature_c),
        bitrate_idx=_decade(qos.bitrate_bps),
        ber_exp_idx=_decade(qos.ber_max),
        bandwidth_idx=_decade(qos.bandwidth_hz),
    )


@dataclass(frozen=True)
class RequestEnvelope:
    """A control-plane request: what is asked (kind, qos), under which channel
    conditions, and by when."""

    id: int
    kind: RequestKind
    qos: QosRequirements
    state: ChannelState
    arrival_ts: int = 0
    deadline_ms: float = 1000.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "qos": {
                "bitrate_bps": self.qos.bitrate_bps,
                "ber_max": self.qos.ber_max,
                "bandwidth_hz": self.qos.bandwidth_hz,
                "data_type": self.qos.data_type.value,
                "deadline_ms": self.qos.deadline_ms,
            },
            "state": {
                "frequency_hz": self.state.frequency_hz,
                "distance_m": self.state.distance_m,
                "humidity_pct": self.state.humidity_pct,
                "temperature_c": self.state.temperature_c,
                "measured_snr_db": self.state.measured_snr_db,
            },
            "arrival_ts": self.arrival_ts,
            "deadline_ms": self.deadline_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RequestEnvelope":
        try:
            q = d["qos"]
            s = d["state"]
            return cls(
                id=int(d["id"]),
                kind=RequestKind(d["kind"]),
                qos=QosRequirements(
                    bitrate_bps=float(q["bitrate_bps"]),
                    ber_max=float(q["ber_max"]),
                    bandwidth_hz=float(q["bandwidth_hz"]),
                    data_type=DataType(q.get("data_type", "bulk")),
                    deadline_ms=float(q.get("deadline_ms", 1000.0)),
                ),
                state=ChannelState(
                    frequency_hz=float(s["frequency_hz"]),
                    distance_m=float(s["distance_m"]),
                    humidity_pct=float(s["humidity_pct"]),
                    temperature_c=float(s.get("temperature_c", 20.0)),
                    measured_snr_db=(None if s.get("measured_snr_db") is None else float(s["measured_snr_db"])),
                ),
                arrival_ts=int(d.get("arrival_ts", 0)),
                deadline_ms=float(d.get("deadline_ms", 1000.0)),
            )
        except KeyError as exc:
            raise ValidationError(str(exc.args[0]), "missing field") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError("envelope", f"malformed envelope: {exc}") from exc

    @classmethod
    def from_json(cls, raw: str | bytes) -> "RequestEnvelope":
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError("envelope", f"invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ValidationError("envelope", "JSON root must be an object")
        return cls.from_dict(d)


@dataclass(frozen=True)
class ResponseEnvelope:
    """Outcome of a request: terminal status, the configuration when one was
    produced, and timing/byte accounting."""

    id: int
    status: Status
    config: Optional[ChannelConfig]
    completion_ts: int
    payload_bytes: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "status": self.status.value,
            "config": None if self.config is None else self.config.to_dict(),
            "completion_ts": self.completion_ts,
            "payload_bytes": self.payload_bytes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ResponseEnvelope":
        return cls(
            id=int(d["id"]),
            status=Status(d["status"]),
            config=None if d.get("config") is None else ChannelConfig.from_dict(d["config"]),
            completion_ts=int(d["completion_ts"]),
            payload_bytes=int(d.get("payload_bytes", 0)),
        )

    @classmethod
    def from_json(cls, raw: str | bytes) -> "ResponseEnvelope":
        return cls.from_dict(json.loads(raw))


def _require(cond: bool, field: str, reason: str) -> None:
    if not cond:
        raise ValidationError(field, reason)


def validate_request(req: RequestEnvelope) -> RequestEnvelope:
    """Check every field invariant; return the request unchanged if all hold.

    Raises ValidationError naming the first violated field.
    """
    _require(isinstance(req.id, int) and req.id >= 0, "id", "must be a nonnegative integer")
    _require(isinstance(req.kind, RequestKind), "kind", "unknown request kind")

    q = req.qos
    _require(math.isfinite(q.bitrate_bps) and q.bitrate_bps > 0, "bitrate_bps", "must be > 0")
    _require(math.isfinite(q.ber_max) and 0.0 < q.ber_max < 0.5, "ber_max", "must lie in (0, 0.5)")
    _require(math.isfinite(q.bandwidth_hz) and q.bandwidth_hz > 0, "bandwidth_hz", "must be > 0")
    _require(isinstance(q.data_type, DataType), "data_type", "unknown data type")
    _require(math.isfinite(q.deadline_ms) and q.deadline_ms > 0, "qos.deadline_ms", "must be > 0")

    s = req.state
    _require(
        math.isfinite(s.frequency_hz) and FREQUENCY_MIN_HZ <= s.frequency_hz <= FREQUENCY_MAX_HZ,
        "frequency_hz",
        f"must lie in [{FREQUENCY_MIN_HZ:.3e}, {FREQUENCY_MAX_HZ:.3e}] Hz",
    )
    _require(math.isfinite(s.distance_m) and s.distance_m > 0, "distance_m", "must be > 0")
    _require(math.isfinite(s.humidity_pct) and 0.0 <= s.humidity_pct <= 100.0, "humidity_pct", "must lie in [0, 100]")
    _require(
        math.isfinite(s.temperature_c) and -40.0 <= s.temperature_c <= 85.0,
        "temperature_c",
        "must lie in [-40, 85]",
    )
    if s.measured_snr_db is not None:
        _require(math.isfinite(s.measured_snr_db), "measured_snr_db", "must be finite when present")

    _require(math.isfinite(req.deadline_ms) and req.deadline_ms > 0, "deadline_ms", "must be > 0")
    return req
