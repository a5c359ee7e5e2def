"""Closed-loop load generation for the simulated control plane.

Each emulated user keeps exactly one request outstanding: it submits,
waits for the response, thinks for a fixed interval, then submits the
next request. Levels are run on a fresh engine and executor so no state
leaks between concurrency levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from .cluster import ClusterSpec, build_cluster
from .domain import (
    ChannelState,
    DataType,
    QosRequirements,
    RequestEnvelope,
    RequestKind,
    Status,
)
from .estimator import LinkBudgetParams, derive_config
from .metrics import MetricsRecord, aggregate
from .orchestration import ClusterEngine, make_rng
from .sim import SimExecutor
from .store import ConfigStore

MS = 1_000_000

OP_KINDS = {
    "read": RequestKind.RESOURCE_QUERY,
    "write": RequestKind.RESOURCE_UPDATE,
    "estimate": RequestKind.CHANNEL_ESTIMATE,
}


@dataclass(frozen=True)
class Workload:
    """What each user asks for, and how often.

    Think time defaults to zero: a user fires its next request the moment
    the previous response lands. Nonzero think is the knob the analytic
    queueing scenarios use. ``op="mix"`` draws read vs write per request
    with probability ``read_fraction``.
    """

    op: str = "read"
    think_ms: float = 0.0
    deadline_ms: float = 30000.0
    key_pool: int = 64
    start_jitter_ms: float = 500.0
    read_fraction: float = 1.0

    def __post_init__(self) -> None:
        if self.op not in OP_KINDS and self.op != "mix":
            raise ValueError(f"unknown op {self.op!r}")
        if self.think_ms < 0 or self.start_jitter_ms < 0:
            raise ValueError("think_ms and start_jitter_ms must be >= 0")
        if self.deadline_ms <= 0:
            raise ValueError("deadline_ms must be > 0")
        if self.key_pool < 1:
            raise ValueError("key_pool must be >= 1")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must lie in [0, 1]")

    @property
    def preseeds_reads(self) -> bool:
        return self.op == "read" or (self.op == "mix" and self.read_fraction > 0.0)


@dataclass(frozen=True)
class Windows:
    warmup_ms: float = 4000.0
    measure_ms: float = 6000.0

    def __post_init__(self) -> None:
        if self.warmup_ms < 0 or self.measure_ms <= 0:
            raise ValueError("warmup_ms >= 0 and measure_ms > 0 required")


def pool_state(index: int, pool: int) -> ChannelState:
    """Channel state for pool slot ``index % pool``.

    The pool varies carrier frequency only; every entry stays inside the
    region where the link budget admits the densest modulation, so read
    and write behaviour does not depend on which key a user draws.
    """
    i = index % pool
    return ChannelState(
        frequency_hz=300e9 + 10e9 * i,
        distance_m=1.0,
        humidity_pct=40.0,
    )


def pool_qos(deadline_ms: float) -> QosRequirements:
    return QosRequirements(
        bitrate_bps=1e9,
        ber_max=1e-6,
        bandwidth_hz=5e9,
        data_type=DataType.BULK,
        deadline_ms=deadline_ms,
    )


def preseed_store(
    store: ConfigStore,
    params: LinkBudgetParams,
    workload: Workload,
) -> int:
    """Write a config for every pool key so read workloads hit the store."""
    from .domain import make_config_key

    qos = pool_qos(workload.deadline_ms)
    seeded = 0
    for i in range(workload.key_pool):
        state = pool_state(i, workload.key_pool)
        config = derive_config(qos, state, params)
        if config is None:
            raise ValueError(f"pool entry {i} is infeasible under the link budget")
        store.write(key=make_config_key(qos, state), config=config)
        seeded += 1
    return seeded


@dataclass
class LevelResult:
    """Outcome of one concurrency level."""

    record: MetricsRecord
    issued: int
    status_counts: Dict[str, int]
    in_flight_end: int
    scale_ups: int = 0
    scale_downs: int = 0
    # time-average of outstanding requests over the measure window; a
    # saturated target should hold this near the user count, anything much
    # lower points at a generator bottleneck
    avg_in_flight: float = 0.0
    # live mode only: connect/read failures, which are never silent drops
    conn_errors: int = 0

    @property
    def conserved(self) -> bool:
        return self.issued == sum(self.status_counts.values())


class _User:
    __slots__ = ("index", "seq", "issue_ns", "active")

    def __init__(self, index: int) -> None:
        self.index = index
        self.seq = 0
        self.issue_ns = 0
        self.active = False


def run_sim_level(
    spec: ClusterSpec,
    workload: Workload,
    users: int,
    windows: Windows,
    seed: int,
    params: Optional[LinkBudgetParams] = None,
    max_events: int = 200_000_000,
) -> LevelResult:
    """Run one closed-loop level on a fresh simulated cluster.

    Zero users is a valid degenerate level and yields an empty record.
    """
    if users < 0:
        raise ValueError("users must be >= 0")
    warmup_ns = int(windows.warmup_ms * MS)
    measure_ns = int(windows.measure_ms * MS)
    stop_issue_ns = warmup_ns + measure_ns
    if users == 0:
        empty = aggregate(spec.mode, spec.site, workload.op, 0, [], 0, measure_ns, 0)
        return LevelResult(
            record=empty,
            issued=0,
            status_counts={s.value: 0 for s in Status},
            in_flight_end=0,
        )
    params = params or LinkBudgetParams()
    executor = SimExecutor()
    store = ConfigStore(None)
    engine = build_cluster(spec, executor, store, params, seed)
    if workload.preseeds_reads:
        preseed_store(store, params, workload)

    qos = pool_qos(workload.deadline_ms)
    think_ns = int(workload.think_ms * MS)

    rng = make_rng(seed, f"loadgen:{workload.op}:{users}")
    mix_rng = make_rng(seed, "loadgen:mix") if workload.op == "mix" else None
    pool = [pool_state(i, workload.key_pool) for i in range(workload.key_pool)]

    issued = 0
    status_counts: Dict[str, int] = {s.value: 0 for s in Status}
    ok_lat: List[int] = []
    ok_bytes = 0
    err_in_window = 0

    user_list = [_User(i) for i in range(users)]

    # in-flight integral over the measure window, by user-side accounting
    outstanding = 0
    flight_area = 0
    last_edge_ns = 0

    def account(now: int) -> None:
        nonlocal flight_area, last_edge_ns
        lo = max(last_edge_ns, warmup_ns)
        hi = min(now, stop_issue_ns)
        if hi > lo:
            flight_area += outstanding * (hi - lo)
        last_edge_ns = now

    def pick_kind(user: _User) -> RequestKind:
        if mix_rng is None:
            return OP_KINDS[workload.op]
        if mix_rng.random() < workload.read_fraction:
            return RequestKind.RESOURCE_QUERY
        return RequestKind.RESOURCE_UPDATE

    def issue(user: _User) -> None:
        nonlocal issued, outstanding
        now = executor.now_ns()
        if now >= stop_issue_ns:
            return
        account(now)
        user.issue_ns = now
        user.active = True
        state = pool[(user.index + user.seq) % workload.key_pool]
        req = RequestEnvelope(
            id=(user.index << 32) | user.seq,
            kind=pick_kind(user),
            qos=qos,
            state=state,
            arrival_ts=0.0,
            deadline_ms=workload.deadline_ms,
        )
        user.seq += 1
        issued += 1
        outstanding += 1
        engine.submit_from_user(req, lambda resp, u=user: complete(u, resp))

    def complete(user: _User, resp) -> None:
        nonlocal ok_bytes, err_in_window, outstanding
        user.active = False
        now = executor.now_ns()
        account(now)
        outstanding -= 1
        status_counts[resp.status.value] += 1
        if warmup_ns <= now < stop_issue_ns:
            if resp.status is Status.OK:
                ok_lat.append(now - user.issue_ns)
                ok_bytes += resp.payload_bytes
            else:
                err_in_window += 1
        executor.call_later(think_ns, issue, user)

    for user in user_list:
        jitter = int(rng.random() * workload.start_jitter_ms * MS)
        executor.call_at(jitter, issue, user)

    def drained() -> bool:
        return executor.now_ns() >= stop_issue_ns and engine.in_flight == 0

    executor.run(stop=drained, max_events=max_events)
    engine.stop_autoscaler()
    if engine.in_flight != 0:
        raise RuntimeError(
            f"level did not drain: {engine.in_flight} requests still in flight"
        )

    record = aggregate(
        mode=spec.mode,
        site=spec.site,
        op=workload.op,
        users=users,
        ok_latencies_ns=ok_lat,
        err=err_in_window,
        window_ns=measure_ns,
        ok_payload_bytes=ok_bytes,
    )
    ups = sum(1 for e in engine.scale_log if e[2] > 0)
    downs = sum(1 for e in engine.scale_log if e[2] < 0)
    return LevelResult(
        record=record,
        issued=issued,
        status_counts=status_counts,
        in_flight_end=engine.in_flight,
        scale_ups=ups,
        scale_downs=downs,
        avg_in_flight=flight_area / measure_ns,
    )


def run_sim_sweep(
    spec: ClusterSpec,
    workload: Workload,
    levels: Sequence[int],
    windows: Windows,
    seed: int,
    params: Optional[LinkBudgetParams] = None,
    out_path: Optional[str] = None,
    progress: Optional[Callable[[LevelResult], None]] = None,
) -> List[LevelResult]:
    """Sweep concurrency levels, optionally streaming CSV rows to disk.

    Every level runs on its own engine with a level-specific RNG
    substream derived from ``seed``, so the sweep is reproducible and
    levels are independent. A level that errors is skipped and the sweep
    carries on; the collected failures surface as one exception at the
    end, after every remaining level ran and its row hit the CSV.
    """
    from .metrics import CSV_HEADER
    from .orchestration import substream_seed

    results: List[LevelResult] = []
    failures: List[tuple] = []
    sink = open(out_path, "w", encoding="utf-8") if out_path else None
    try:
        if sink:
            sink.write(CSV_HEADER + "\n")
            sink.flush()
        for n in sorted(levels):
            level_seed = substream_seed(seed, f"level:{n}")
            try:
                result = run_sim_level(
                    spec, workload, n, windows, level_seed, params
                )
            except Exception as exc:
                failures.append((n, exc))
                continue
            results.append(result)
            if sink:
                sink.write(result.record.to_csv_row() + "\n")
                sink.flush()
            if progress:
                progress(result)
    finally:
        if sink:
            sink.close()
    if failures:
        detail = "; ".join(f"users={n}: {exc}" for n, exc in failures)
        raise RuntimeError(f"{len(failures)} sweep level(s) failed: {detail}")
    return results


def default_levels(start: int = 50, end: int = 1300, step: int = 50) -> List[int]:
    """Concurrency grid ``start, start+step, ...`` capped to include ``end``."""
    if start < 1 or end < start or step < 1:
        raise ValueError("need 1 <= start <= end and step >= 1")
    levels = list(range(start, end + 1, step))
    if levels[-1] != end:
        levels.append(end)
    return levels
