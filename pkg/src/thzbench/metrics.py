"""Benchmark metrics: per-level aggregation, nearest-rank percentiles, the
sweep CSV contract, knee detection, and a closed-form finite-population
queueing solver used to predict and cross-check measured results.

CSV rows are formatted with fixed precision so identical runs emit identical
bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

CSV_HEADER = "mode,site,op,users,ok,err,mean_ms,p50_ms,p95_ms,p99_ms,rps,Bps"

KNEE_ALPHA = 3.0


class SchemaMismatch(ValueError):
    """A results file whose header is not the sweep CSV schema."""


@dataclass(frozen=True)
class MetricsRecord:
    """One sweep level: counts, latency summary, throughput."""

    mode: str
    site: str
    op: str
    users: int
    ok: int
    err: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    rps: float
    bps: float

    def to_csv_row(self) -> str:
        return (
            f"{self.mode},{self.site},{self.op},{self.users},{self.ok},{self.err},"
            f"{self.mean_ms:.3f},{self.p50_ms:.3f},{self.p95_ms:.3f},{self.p99_ms:.3f},"
            f"{self.rps:.3f},{self.bps:.1f}"
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "MetricsRecord":
        parts = row.strip().split(",")
        if len(parts) != 12:
            raise ValueError(f"expected 12 CSV fields, got {len(parts)}: {row!r}")
        return cls(
            mode=parts[0],
            site=parts[1],
            op=parts[2],
            users=int(parts[3]),
            ok=int(parts[4]),
            err=int(parts[5]),
            mean_ms=float(parts[6]),
            p50_ms=float(parts[7]),
            p95_ms=float(parts[8]),
            p99_ms=float(parts[9]),
            rps=float(parts[10]),
            bps=float(parts[11]),
        )


def percentile_nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.

    Input must be sorted ascending and non-empty. Always returns an element
    of the input, never an interpolation.
    """
    n = len(sorted_values)
    if n == 0:
        raise ValueError("percentile of empty sample")
    if not 0.0 < p <= 100.0:
        raise ValueError(f"percentile p must lie in (0, 100], got {p}")
    rank = max(1, math.ceil(p / 100.0 * n))
    return sorted_values[rank - 1]


def aggregate(
    mode: str,
    site: str,
    op: str,
    users: int,
    ok_latencies_ns: Sequence[int],
    err: int,
    window_ns: int,
    ok_payload_bytes: int,
) -> MetricsRecord:
    """Fold one measurement window into a CSV row.

    Latency statistics cover successful requests only; errors are counted but
    carry no latency. Throughput is successes per second of window. With no
    successful samples the latency columns are NaN (the error count still
    says what happened), never a fabricated zero.
    """
    if window_ns <= 0:
        raise ValueError("window_ns must be positive")
    window_s = window_ns / 1e9
    ok = len(ok_latencies_ns)
    if ok:
        s = sorted(ok_latencies_ns)
        mean_ms = (sum(s) / ok) / 1e6
        p50 = percentile_nearest_rank(s, 50.0) / 1e6
        p95 = percentile_nearest_rank(s, 95.0) / 1e6
        p99 = percentile_nearest_rank(s, 99.0) / 1e6
    else:
        mean_ms = p50 = p95 = p99 = math.nan
    return MetricsRecord(
        mode=mode,
        site=site,
        op=op,
        users=users,
        ok=ok,
        err=err,
        mean_ms=mean_ms,
        p50_ms=p50,
        p95_ms=p95,
        p99_ms=p99,
        rps=ok / window_s,
        bps=ok_payload_bytes / window_s,
    )


def emit_csv(rows: Sequence[MetricsRecord]) -> str:
    return "\n".join([CSV_HEADER] + [r.to_csv_row() for r in rows]) + "\n"


def parse_csv(text: str) -> list[MetricsRecord]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    if lines[0] != CSV_HEADER:
        raise SchemaMismatch(f"unexpected CSV header: {lines[0]!r}")
    return [MetricsRecord.from_csv_row(ln) for ln in lines[1:]]


def detect_knee(
    levels: Sequence[int],
    mean_ms: Sequence[float],
    alpha: float = KNEE_ALPHA,
) -> Optional[int]:
    """First load level whose mean response exceeds alpha times the baseline.

    The baseline is the mean at the lowest level, so the knee is where the
    response-time curve leaves its flat region. None when the curve never
    leaves it.
    """
    if len(levels) != len(mean_ms):
        raise ValueError("levels and means differ in length")
    if not levels:
        return None
    pairs = sorted(zip(levels, mean_ms))
    baseline = pairs[0][1]
    for level, mean in pairs:
        if mean > alpha * baseline:
            return level
    return None


def max_consecutive_increase(
    levels: Sequence[int], rps: Sequence[float], from_level: int
) -> float:
    """Largest relative throughput gain between adjacent levels at or above
    `from_level`. Zero when the curve only falls or too few levels qualify.
    Saturation means this stays small: extra users stop buying throughput."""
    if len(levels) != len(rps):
        raise ValueError("levels and rps differ in length")
    pairs = sorted((lv, r) for lv, r in zip(levels, rps) if lv >= from_level)
    worst = 0.0
    for (_, a), (_, b) in zip(pairs, pairs[1:]):
        if a > 0.0:
            worst = max(worst, (b - a) / a)
    return worst


@dataclass(frozen=True)
class SweepReport:
    """Ordered per-level summaries plus the detected knee, if any."""

    records: tuple
    knee_users: Optional[int]

    def __post_init__(self):
        users = [r.users for r in self.records]
        if any(b <= a for a, b in zip(users, users[1:])):
            raise ValueError("records must have strictly increasing users")

    @classmethod
    def from_records(cls, records: Sequence[MetricsRecord], alpha: float = KNEE_ALPHA) -> "SweepReport":
        ordered = tuple(sorted(records, key=lambda r: r.users))
        knee = detect_knee([r.users for r in ordered], [r.mean_ms for r in ordered], alpha)
        return cls(records=ordered, knee_users=knee)


def throughput_spread(levels: Sequence[int], rps: Sequence[float], above_level: int) -> float:
    """Relative spread (max-min)/max of throughput at levels strictly above
    `above_level`. Zero when fewer than two such levels exist."""
    tail = [r for lv, r in zip(levels, rps) if lv > above_level]
    if len(tail) < 2:
        return 0.0
    hi = max(tail)
    if hi <= 0.0:
        return 0.0
    return (hi - min(tail)) / hi


@dataclass(frozen=True)
class ClosedQueueSolution:
    """Stationary solution of the closed single-station queueing system."""

    n_users: int
    servers: int
    service_s: float
    think_s: float
    throughput_per_s: float
    mean_at_station: float
    mean_response_s: float


def solve_finite_population(n_users: int, servers: int, service_s: float, think_s: float) -> ClosedQueueSolution:
    """Closed birth-death model: n users cycle between an exponential
    c-server FCFS station and a think stage.

    Station population k has arrival rate (n-k)/Z and completion rate
    min(k,c)/S; the stationary weights are accumulated in log space. The
    think stage is a pure delay, so only its mean enters the solution and
    any think-time distribution with that mean yields the same stationary
    law. Response time follows from the population identity
    X = (n - L)/Z, i.e. W = L/X.

    Zero think time pins all users at the station: X = min(n,c)/S exactly.
    """
    if n_users < 1 or servers < 1:
        raise ValueError("need n_users >= 1 and servers >= 1")
    if service_s <= 0.0 or think_s < 0.0:
        raise ValueError("need service_s > 0 and think_s >= 0")
    n, c, s, z = n_users, servers, service_s, think_s
    if z == 0.0:
        x = min(n, c) / s
        return ClosedQueueSolution(
            n_users=n,
            servers=c,
            service_s=s,
            think_s=z,
            throughput_per_s=x,
            mean_at_station=float(n),
            mean_response_s=n / x,
        )
    logw = [0.0] * (n + 1)
    for k in range(1, n + 1):
        logw[k] = logw[k - 1] + math.log((n - k + 1) * s / (z * min(k, c)))
    peak = max(logw)
    weights = [math.exp(lw - peak) for lw in logw]
    norm = sum(weights)
    x = sum(w * min(k, c) for k, w in enumerate(weights)) / (norm * s)
    l_station = sum(k * w for k, w in enumerate(weights)) / norm
    return ClosedQueueSolution(
        n_users=n,
        servers=c,
        service_s=s,
        think_s=z,
        throughput_per_s=x,
        mean_at_station=l_station,
        mean_response_s=l_station / x,
    )
