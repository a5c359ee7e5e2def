"""The orchestration state machine: request workflows, per-service bounded
registers, a directory of service instances, deadline enforcement, failure
injection and an optional backlog-driven autoscaler.

One engine implementation serves both execution modes. All time is integer
nanoseconds obtained from an injected executor; the engine never reads a wall
clock and never sleeps, so running it on the virtual-time executor is exact
and running it on an asyncio-backed executor serves real traffic, with
identical control flow.

Timing model per request: one-way network delay to the cluster, then per step
a fixed manager overhead, FCFS queueing at the step's service register, a
service-time draw on an instance slot, and finally the one-way delay back.
Deadlines are armed at arrival; an expired request is failed out of the queue
but an in-service step is never preempted, late completions are just marked
Timeout.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Callable, Optional, Protocol

import numpy as np

from .domain import (
    ChannelConfig,
    RequestEnvelope,
    RequestKind,
    ResponseEnvelope,
    Status,
    make_config_key,
    validate_request,
)
from .estimator import LinkBudgetParams, derive_config
from .placement import InstanceDemand, NodeCapacity, first_fit_index
from .store import ConfigStore


class TimerHandle(Protocol):
    def cancel(self) -> None: ...


class Executor(Protocol):
    """Scheduling surface the engine runs against.

    now_ns is monotonic; call_at/call_later order callbacks by time with FIFO
    tie-breaking.
    """

    def now_ns(self) -> int: ...

    def call_at(self, when_ns: int, fn: Callable[..., None], *args: Any) -> TimerHandle: ...

    def call_later(self, delay_ns: int, fn: Callable[..., None], *args: Any) -> TimerHandle: ...


def substream_seed(seed: int, label: str) -> int:
    """Derive a per-purpose RNG seed that is stable across processes."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream_seed(seed, label)))


@dataclass(frozen=True)
class ServiceTimeModel:
    """Service duration distribution; constant or exponential, mean in ms."""

    dist: str
    mean_ms: float

    def __post_init__(self):
        if self.dist not in ("constant", "exponential"):
            raise ValueError(f"unknown service time distribution {self.dist!r}")
        if self.mean_ms <= 0.0:
            raise ValueError("mean_ms must be > 0")

    def draw_ns(self, rng: Optional[np.random.Generator]) -> int:
        if self.dist == "constant":
            return int(self.mean_ms * 1e6)
        return max(1, int(rng.exponential(self.mean_ms) * 1e6))


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    replicas: int
    slots: int
    time_model: ServiceTimeModel
    cpu_millicores: int = 100
    memory_mb: int = 128

    def demand(self, replica_id: str) -> InstanceDemand:
        return InstanceDemand(name=replica_id, cpu_millicores=self.cpu_millicores, memory_mb=self.memory_mb)


@dataclass(frozen=True)
class AutoscalePolicy:
    tick_ms: float = 200.0
    up_queue_threshold: int = 8
    sustain_ticks: int = 2
    idle_ticks: int = 10
    min_replicas: int = 1
    max_replicas: int = 8
    startup_delay_ms: float = 500.0


@dataclass(frozen=True)
class ClusterSpec:
    """Static description of one deployment: how services are instantiated,
    where the cluster sits, and its control parameters."""

    name: str
    mode: str
    site: str
    services: tuple[ServiceSpec, ...]
    one_way_delay_ms: float = 0.0
    # when set, each network traversal draws uniform from
    # [one_way_delay_ms, one_way_delay_max_ms) instead of the constant
    one_way_delay_max_ms: Optional[float] = None
    manager_overhead_ms: float = 0.0
    register_capacity: int = 4096
    node_cpu_millicores: int = 4000
    node_memory_mb: int = 8192
    max_nodes: int = 8
    mono_slots: int = 0
    autoscale: Optional[AutoscalePolicy] = None
    read_retry_count: int = 0
    read_retry_interval_ms: float = 50.0

    def node_capacity(self) -> NodeCapacity:
        return NodeCapacity(cpu_millicores=self.node_cpu_millicores, memory_mb=self.node_memory_mb)

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)


# Step sequence per request kind. The read step short-circuits a
# ChannelEstimate on a cache hit and drives the miss-retry loop of a
# ResourceQuery; everything else advances linearly.
WORKFLOW_PLANS: dict[RequestKind, tuple[str, ...]] = {
    RequestKind.USER_ASSIGN: ("read", "write"),
    RequestKind.RESOURCE_QUERY: ("read",),
    RequestKind.RESOURCE_UPDATE: ("write",),
    RequestKind.TRAFFIC_ENGINEER: ("estimate", "write"),
    RequestKind.CHANNEL_ESTIMATE: ("read", "estimate", "write"),
}


def plan_workflow(kind: RequestKind) -> tuple[str, ...]:
    return WORKFLOW_PLANS[kind]


class InstanceState(Enum):
    STARTING = "starting"
    READY = "ready"
    DOWN = "down"


@dataclass
class ServiceInstance:
    id: str
    service: str
    node: str
    slots: int
    state: InstanceState = InstanceState.READY
    active: int = 0
    # contexts currently occupying a slot, keyed by identity
    in_service: dict = field(default_factory=dict)

    def has_free_slot(self) -> bool:
        return self.state is InstanceState.READY and self.active < self.slots

    def busy(self) -> bool:
        return self.state is InstanceState.READY and self.active >= self.slots


class Register:
    """Per-service bounded FIFO of pending steps. Entries finished elsewhere
    (deadline, failure) stay in the deque but are skipped on pop."""

    def __init__(self, services: list[str], capacity: int):
        self._queues: dict[str, deque] = {name: deque() for name in services}
        self._capacity = capacity

    def push(self, service: str, ctx: "RequestContext") -> bool:
        q = self._queues[service]
        if len(q) >= self._capacity:
            return False
        q.append(ctx)
        return True

    def pop_next(self, service: str) -> Optional["RequestContext"]:
        q = self._queues[service]
        while q:
            ctx = q.popleft()
            if not ctx.done:
                return ctx
        return None

    def backlog(self, service: str) -> int:
        return sum(1 for ctx in self._queues[service] if not ctx.done)

    def drain(self, service: str) -> list["RequestContext"]:
        q = self._queues[service]
        out = [ctx for ctx in q if not ctx.done]
        q.clear()
        return out

    def services(self) -> list[str]:
        return list(self._queues)


class ServiceDirectory:
    """Name to instance-list mapping with deterministic selection: the free
    instance with the least load, then the smallest id."""

    def __init__(self) -> None:
        self._by_service: dict[str, list[ServiceInstance]] = {}

    def add_service(self, name: str) -> None:
        self._by_service.setdefault(name, [])

    def attach(self, service: str, inst: ServiceInstance) -> None:
        self._by_service.setdefault(service, []).append(inst)

    def detach(self, service: str, inst: ServiceInstance) -> None:
        self._by_service[service].remove(inst)

    def instances(self, service: str) -> list[ServiceInstance]:
        return self._by_service.get(service, [])

    def pick_free(self, service: str) -> Optional[ServiceInstance]:
        candidates = [i for i in self._by_service.get(service, []) if i.has_free_slot()]
        if not candidates:
            return None
        return min(candidates, key=lambda i: (i.active, i.id))

    def live(self, service: str) -> list[ServiceInstance]:
        return [i for i in self._by_service.get(service, []) if i.state is not InstanceState.DOWN]

    def all_instances(self) -> list[ServiceInstance]:
        seen: dict[int, ServiceInstance] = {}
        for lst in self._by_service.values():
            for inst in lst:
                seen.setdefault(id(inst), inst)
        return list(seen.values())


@dataclass
class RequestContext:
    env: RequestEnvelope
    on_complete: Callable[[ResponseEnvelope], None]
    plan: tuple[str, ...]
    issue_ns: int
    arrival_ns: int = 0
    step_idx: int = 0
    config: Optional[ChannelConfig] = None
    cache_hit: bool = False
    retries_left: int = 0
    done: bool = False
    in_service: bool = False
    deadline_handle: Optional[TimerHandle] = None


@lru_cache(maxsize=4096)
def _payload_bytes(config: ChannelConfig) -> int:
    return len(config.to_json().encode())


@dataclass
class EngineCounters:
    submitted: int = 0
    completed: dict = field(default_factory=lambda: {s: 0 for s in Status})
    scale_ups: int = 0
    scale_downs: int = 0
    rejected_overflow: int = 0

    def total_completed(self) -> int:
        return sum(self.completed.values())


class ClusterEngine:
    """Executes request workflows against the instance pool of one cluster."""

    def __init__(
        self,
        spec: ClusterSpec,
        executor: Executor,
        store: ConfigStore,
        params: LinkBudgetParams = LinkBudgetParams(),
        seed: int = 0,
    ):
        self.spec = spec
        self.executor = executor
        self.store = store
        self.params = params
        self.seed = seed
        self.directory = ServiceDirectory()
        self.register = Register([s.name for s in spec.services], spec.register_capacity)
        self.counters = EngineCounters()
        self.in_flight = 0
        self.nodes: dict[str, list[int]] = {}
        self._instance_seq: dict[str, int] = {}
        self._rngs: dict[str, Optional[np.random.Generator]] = {}
        for svc in spec.services:
            self._rngs[svc.name] = (
                make_rng(seed, f"svc:{svc.name}") if svc.time_model.dist != "constant" else None
            )
        self._delay_ns = int(spec.one_way_delay_ms * 1e6)
        if spec.one_way_delay_max_ms is not None:
            if spec.one_way_delay_max_ms < spec.one_way_delay_ms:
                raise ValueError("one_way_delay_max_ms below one_way_delay_ms")
            self._delay_max_ns = int(spec.one_way_delay_max_ms * 1e6)
            self._delay_rng = make_rng(seed, "link")
        else:
            self._delay_max_ns = None
            self._delay_rng = None
        self._overhead_ns = int(spec.manager_overhead_ms * 1e6)
        self._retry_interval_ns = int(spec.read_retry_interval_ms * 1e6)
        self._autoscale_state: dict[str, list[int]] = {s.name: [0, 0] for s in spec.services}
        self._autoscale_handle: Optional[TimerHandle] = None
        self._node_seq = 0
        self.scale_log: list[tuple[int, str, int, int]] = []

    # -- topology ---------------------------------------------------------

    def provision_node(self) -> str:
        """Create a fresh node with a never-reused name."""
        name = f"node-{self._node_seq}"
        self._node_seq += 1
        self.nodes[name] = [0, 0]
        return name

    def remove_node(self, name: str) -> None:
        del self.nodes[name]

    def add_instance(
        self,
        service: str,
        node: str,
        slots: int,
        services: Optional[list[str]] = None,
        state: InstanceState = InstanceState.READY,
    ) -> ServiceInstance:
        """Create an instance on `node` and attach it under each name in
        `services` (default: just its own service)."""
        seq = self._instance_seq.get(service, 0)
        self._instance_seq[service] = seq + 1
        inst = ServiceInstance(id=f"{service}-{seq}", service=service, node=node, slots=slots, state=state)
        for name in services or [service]:
            self.directory.attach(name, inst)
        spec = self._service_spec(service)
        if spec is not None and node in self.nodes:
            self.nodes[node][0] += spec.cpu_millicores
            self.nodes[node][1] += spec.memory_mb
        return inst

    def _service_spec(self, name: str) -> Optional[ServiceSpec]:
        try:
            return self.spec.service(name)
        except KeyError:
            return None

    # -- submission -------------------------------------------------------

    def submit_from_user(self, env: RequestEnvelope, on_complete: Callable[[ResponseEnvelope], None]) -> None:
        """Entry point at the user side; the request reaches the cluster one
        network delay later."""
        validate_request(env)
        ctx = RequestContext(
            env=env,
            on_complete=on_complete,
            plan=plan_workflow(env.kind),
            issue_ns=self.executor.now_ns(),
            retries_left=self.spec.read_retry_count,
        )
        self.counters.submitted += 1
        self.in_flight += 1
        delay = self._draw_delay_ns()
        if delay > 0:
            self.executor.call_later(delay, self._arrive, ctx)
        else:
            self._arrive(ctx)

    def _draw_delay_ns(self) -> int:
        if self._delay_rng is None:
            return self._delay_ns
        return int(self._delay_rng.uniform(self._delay_ns, self._delay_max_ns))

    def _arrive(self, ctx: RequestContext) -> None:
        ctx.arrival_ns = self.executor.now_ns()
        deadline_ns = int(ctx.env.deadline_ms * 1e6)
        ctx.deadline_handle = self.executor.call_later(deadline_ns, self._deadline_fired, ctx)
        self._submit_step(ctx)

    def _submit_step(self, ctx: RequestContext) -> None:
        if ctx.done:
            return
        if self._overhead_ns > 0:
            self.executor.call_later(self._overhead_ns, self._enqueue_step, ctx)
        else:
            self._enqueue_step(ctx)

    def _enqueue_step(self, ctx: RequestContext) -> None:
        if ctx.done:
            return
        service = ctx.plan[ctx.step_idx]
        if not self.directory.live(service):
            self._finish(ctx, Status.REJECTED)
            return
        inst = self.directory.pick_free(service)
        if inst is not None:
            self._assign(ctx, inst)
        elif not self.register.push(service, ctx):
            self.counters.rejected_overflow += 1
            self._finish(ctx, Status.REJECTED)

    def _assign(self, ctx: RequestContext, inst: ServiceInstance) -> None:
        service = ctx.plan[ctx.step_idx]
        ctx.in_service = True
        inst.active += 1
        inst.in_service[id(ctx)] = ctx
        duration = self.spec.service(service).time_model.draw_ns(self._rngs[service])
        self.executor.call_later(duration, self._complete_step, ctx, inst)

    def _complete_step(self, ctx: RequestContext, inst: ServiceInstance) -> None:
        if inst.in_service.pop(id(ctx), None) is not None:
            inst.active -= 1
        service_done = ctx.plan[ctx.step_idx]
        if not ctx.done:
            ctx.in_service = False
            outcome = self._run_step_handler(ctx, service_done)
            if outcome == "advance":
                ctx.step_idx += 1
                if ctx.step_idx >= len(ctx.plan):
                    self._finish(ctx, Status.OK)
                else:
                    self._submit_step(ctx)
            elif outcome == "done":
                pass
            elif outcome == "retry":
                self.executor.call_later(self._retry_interval_ns, self._submit_step, ctx)
        self._pump(service_done)

    def _pump(self, service: str) -> None:
        while True:
            inst = self.directory.pick_free(service)
            if inst is None:
                return
            ctx = self.register.pop_next(service)
            if ctx is None:
                return
            self._assign(ctx, inst)

    # -- step handlers ----------------------------------------------------

    def _run_step_handler(self, ctx: RequestContext, service: str) -> str:
        """Apply the step's effect against the store and decide what follows:
        'advance', 'retry', or 'done' (handler finished the request)."""
        env = ctx.env
        key = make_config_key(env.qos, env.state)
        if service == "read":
            rec = self.store.read(key)
            if rec is not None:
                ctx.config = rec.config
                if env.kind in (RequestKind.CHANNEL_ESTIMATE, RequestKind.RESOURCE_QUERY):
                    ctx.cache_hit = env.kind is RequestKind.CHANNEL_ESTIMATE
                    self._finish(ctx, Status.OK)
                    return "done"
                return "advance"
            if env.kind is RequestKind.RESOURCE_QUERY:
                if ctx.retries_left > 0:
                    ctx.retries_left -= 1
                    return "retry"
                self._finish(ctx, Status.FAILED)
                return "done"
            return "advance"
        if service == "estimate":
            config = derive_config(env.qos, env.state, self.params)
            if config is None:
                self._finish(ctx, Status.REJECTED)
                return "done"
            ctx.config = config
            return "advance"
        if service == "write":
            config = ctx.config
            if config is None:
                config = derive_config(env.qos, env.state, self.params)
            if config is None:
                self._finish(ctx, Status.REJECTED)
                return "done"
            ctx.config = config
            self.store.write(key, config, ts=self.executor.now_ns())
            return "advance"
        raise ValueError(f"no handler for service {service!r}")

    # -- completion -------------------------------------------------------

    def _finish(self, ctx: RequestContext, status: Status) -> None:
        if ctx.done:
            return
        ctx.done = True
        now = self.executor.now_ns()
        if ctx.deadline_handle is not None:
            ctx.deadline_handle.cancel()
            ctx.deadline_handle = None
        if status is Status.OK and now - ctx.arrival_ns > int(ctx.env.deadline_ms * 1e6):
            status = Status.TIMEOUT
        config = ctx.config if status is Status.OK else None
        resp = ResponseEnvelope(
            id=ctx.env.id,
            status=status,
            config=config,
            completion_ts=now,
            payload_bytes=_payload_bytes(config) if config is not None else 0,
        )
        self.counters.completed[status] += 1
        self.in_flight -= 1
        delay = self._draw_delay_ns()
        if delay > 0:
            self.executor.call_later(delay, ctx.on_complete, resp)
        else:
            ctx.on_complete(resp)

    def _deadline_fired(self, ctx: RequestContext) -> None:
        if ctx.done or ctx.in_service:
            return
        self._finish(ctx, Status.TIMEOUT)

    # -- failure injection --------------------------------------------------

    def fail_instance(self, inst: ServiceInstance) -> None:
        """Take one instance down; whatever it was serving fails now."""
        if inst.state is InstanceState.DOWN:
            return
        inst.state = InstanceState.DOWN
        victims = list(inst.in_service.values())
        inst.in_service.clear()
        inst.active = 0
        for ctx in victims:
            self._finish(ctx, Status.FAILED)
        self._flush_dead_queues()

    def fail_service(self, service: str) -> None:
        for inst in list(self.directory.instances(service)):
            self.fail_instance(inst)

    def fail_node(self, node: str) -> None:
        for inst in self.directory.all_instances():
            if inst.node == node:
                self.fail_instance(inst)

    def _flush_dead_queues(self) -> None:
        for service in self.register.services():
            if not self.directory.live(service):
                for ctx in self.register.drain(service):
                    self._finish(ctx, Status.FAILED)

    # -- autoscaler ---------------------------------------------------------

    def start_autoscaler(self) -> None:
        if self.spec.autoscale is None:
            raise ValueError("cluster spec has no autoscale policy")
        self._schedule_tick()

    def _schedule_tick(self) -> None:
        self._autoscale_handle = self.executor.call_later(
            int(self.spec.autoscale.tick_ms * 1e6), self._autoscale_tick
        )

    def stop_autoscaler(self) -> None:
        if self._autoscale_handle is not None:
            self._autoscale_handle.cancel()
            self._autoscale_handle = None

    def _autoscale_tick(self) -> None:
        policy = self.spec.autoscale
        for svc in self.spec.services:
            state = self._autoscale_state[svc.name]
            live = self.directory.live(svc.name)
            backlog = self.register.backlog(svc.name)
            if backlog > policy.up_queue_threshold:
                state[0] += 1
            else:
                state[0] = 0
            if state[0] >= policy.sustain_ticks:
                state[0] = 0
                self._scale_up(svc)
            idle = backlog == 0 and all(i.active == 0 for i in live)
            if idle:
                state[1] += 1
            else:
                state[1] = 0
            if state[1] >= policy.idle_ticks:
                state[1] = 0
                self._scale_down(svc)
        self._schedule_tick()

    def _scale_up(self, svc: ServiceSpec) -> None:
        policy = self.spec.autoscale
        live = self.directory.live(svc.name)
        if len(live) >= policy.max_replicas:
            return
        node = self._find_room(svc)
        if node is None:
            return
        inst = self.add_instance(svc.name, node, svc.slots, state=InstanceState.STARTING)
        self.counters.scale_ups += 1
        self.scale_log.append((self.executor.now_ns(), svc.name, +1, len(self.directory.live(svc.name))))
        self.executor.call_later(int(policy.startup_delay_ms * 1e6), self._instance_ready, inst)

    def _find_room(self, svc: ServiceSpec) -> Optional[str]:
        demand = svc.demand("probe")
        names = list(self.nodes)
        used = [tuple(self.nodes[n]) for n in names]
        idx = first_fit_index(used, demand, self.spec.node_capacity())
        if idx is not None:
            return names[idx]
        if len(self.nodes) < self.spec.max_nodes:
            return self.provision_node()
        return None

    def _instance_ready(self, inst: ServiceInstance) -> None:
        if inst.state is not InstanceState.STARTING:
            return
        inst.state = InstanceState.READY
        self._pump(inst.service)

    def _scale_down(self, svc: ServiceSpec) -> None:
        policy = self.spec.autoscale
        live = self.directory.live(svc.name)
        if len(live) <= policy.min_replicas:
            return
        idle = [i for i in live if i.state is InstanceState.READY and i.active == 0]
        if not idle:
            return
        victim = max(idle, key=lambda i: i.id)
        self.directory.detach(svc.name, victim)
        victim.state = InstanceState.DOWN
        spec = self._service_spec(svc.name)
        if victim.node in self.nodes and spec is not None:
            self.nodes[victim.node][0] -= spec.cpu_millicores
            self.nodes[victim.node][1] -= spec.memory_mb
            if self.nodes[victim.node] == [0, 0]:
                self.remove_node(victim.node)
        self.counters.scale_downs += 1
        self.scale_log.append((self.executor.now_ns(), svc.name, -1, len(self.directory.live(svc.name))))

    # -- introspection ------------------------------------------------------

    def stats(self) -> dict:
        return {
            "mode": self.spec.mode,
            "site": self.spec.site,
            "in_flight": self.in_flight,
            "submitted": self.counters.submitted,
            "completed": {s.value: n for s, n in self.counters.completed.items()},
            "queues": {s: self.register.backlog(s) for s in self.register.services()},
            "instances": [
                {
                    "id": i.id,
                    "service": i.service,
                    "node": i.node,
                    "state": i.state.value,
                    "active": i.active,
                    "slots": i.slots,
                }
                for i in sorted(self.directory.all_instances(), key=lambda i: i.id)
            ],
            "nodes": {name: {"cpu_millicores": u[0], "memory_mb": u[1]} for name, u in self.nodes.items()},
            "scale_ups": self.counters.scale_ups,
            "scale_downs": self.counters.scale_downs,
        }
