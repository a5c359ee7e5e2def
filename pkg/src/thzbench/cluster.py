"""Deployment descriptions and cluster construction.

An SSI document is a static JSON description of one deployment: orchestration
mode, site, the service set with per-replica resource demands and service-time
models, node shape, and the mode-specific knobs (shared slot pool for a
monolith, autoscale policy for the kube style). parse_ssi validates it into a
ClusterSpec; build_cluster turns a spec into a running engine, packing
replicas onto nodes with the FFD scheduler.
"""

from __future__ import annotations

import json
from typing import Any, Optional

from .estimator import LinkBudgetParams
from .orchestration import (
    AutoscalePolicy,
    ClusterEngine,
    ClusterSpec,
    Executor,
    ServiceSpec,
    ServiceTimeModel,
)
from .placement import InstanceDemand, place_ffd
from .store import ConfigStore

MODES = ("mono", "swarm", "kube")
SITES = ("edge", "cloud")
REQUIRED_SERVICES = ("read", "write", "estimate")


class SsiError(ValueError):
    """A deployment description that fails validation."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise SsiError(msg)


def _parse_service(d: dict[str, Any]) -> ServiceSpec:
    _require(isinstance(d.get("name"), str) and d["name"], "service needs a name")
    time = d.get("time", {})
    _require(isinstance(time, dict) and "mean_ms" in time, f"service {d['name']}: time.mean_ms required")
    try:
        model = ServiceTimeModel(dist=str(time.get("dist", "constant")), mean_ms=float(time["mean_ms"]))
    except ValueError as exc:
        raise SsiError(f"service {d['name']}: {exc}") from exc
    replicas = int(d.get("replicas", 1))
    slots = int(d.get("slots", 1))
    cpu = int(d.get("cpu_millicores", 100))
    mem = int(d.get("memory_mb", 128))
    _require(replicas >= 1, f"service {d['name']}: replicas must be >= 1")
    _require(slots >= 1, f"service {d['name']}: slots must be >= 1")
    _require(cpu >= 1 and mem >= 1, f"service {d['name']}: resource demand must be positive")
    return ServiceSpec(
        name=d["name"],
        replicas=replicas,
        slots=slots,
        time_model=model,
        cpu_millicores=cpu,
        memory_mb=mem,
    )


def parse_ssi(doc: dict[str, Any]) -> ClusterSpec:
    _require(isinstance(doc, dict), "SSI document must be a JSON object")
    name = doc.get("name")
    _require(isinstance(name, str) and bool(name), "name required")
    mode = doc.get("mode")
    _require(mode in MODES, f"mode must be one of {MODES}, got {mode!r}")
    site = doc.get("site")
    _require(site in SITES, f"site must be one of {SITES}, got {site!r}")

    raw_services = doc.get("services")
    _require(isinstance(raw_services, list) and raw_services, "services list required")
    services = tuple(_parse_service(s) for s in raw_services)
    names = [s.name for s in services]
    _require(len(set(names)) == len(names), "duplicate service names")
    for required in REQUIRED_SERVICES:
        _require(required in names, f"service {required!r} missing")

    node = doc.get("node", {})
    node_cpu = int(node.get("cpu_millicores", 4000))
    node_mem = int(node.get("memory_mb", 8192))
    max_nodes = int(node.get("max_nodes", 8))
    _require(node_cpu >= 1 and node_mem >= 1, "node capacity must be positive")
    _require(max_nodes >= 1, "max_nodes must be >= 1")

    # scalar means a constant one-way delay; a [lo, hi] pair means uniform
    raw_delay = doc.get("one_way_delay_ms", 0.0)
    delay_max: Optional[float] = None
    if isinstance(raw_delay, (list, tuple)):
        _require(len(raw_delay) == 2, "one_way_delay_ms pair must be [lo, hi]")
        one_way_delay = float(raw_delay[0])
        delay_max = float(raw_delay[1])
        _require(delay_max >= one_way_delay, "one_way_delay_ms pair must satisfy lo <= hi")
    else:
        one_way_delay = float(raw_delay)
    overhead = float(doc.get("manager_overhead_ms", 0.0))
    _require(one_way_delay >= 0.0 and overhead >= 0.0, "delays must be nonnegative")
    register_capacity = int(doc.get("register_capacity", 4096))
    _require(register_capacity >= 1, "register_capacity must be >= 1")

    mono_slots = int(doc.get("mono_slots", 0))
    if mode == "mono":
        _require(mono_slots >= 1, "mono mode requires mono_slots >= 1")
    else:
        _require(mono_slots == 0, "mono_slots only applies to mono mode")

    autoscale: Optional[AutoscalePolicy] = None
    if "autoscale" in doc:
        _require(mode == "kube", "autoscale only applies to kube mode")
        a = doc["autoscale"]
        autoscale = AutoscalePolicy(
            tick_ms=float(a.get("tick_ms", 200.0)),
            up_queue_threshold=int(a.get("up_queue_threshold", 8)),
            sustain_ticks=int(a.get("sustain_ticks", 2)),
            idle_ticks=int(a.get("idle_ticks", 10)),
            min_replicas=int(a.get("min_replicas", 1)),
            max_replicas=int(a.get("max_replicas", 8)),
            startup_delay_ms=float(a.get("startup_delay_ms", 500.0)),
        )
        _require(autoscale.tick_ms > 0, "autoscale tick_ms must be > 0")
        _require(autoscale.min_replicas >= 1, "autoscale min_replicas must be >= 1")
        _require(autoscale.max_replicas >= autoscale.min_replicas, "autoscale max < min")
    if mode == "kube":
        _require(autoscale is not None, "kube mode requires an autoscale policy")

    retry = doc.get("read_retry", {})
    retry_count = int(retry.get("count", 0))
    retry_interval = float(retry.get("interval_ms", 50.0))
    _require(retry_count >= 0, "read_retry.count must be >= 0")
    _require(retry_interval > 0.0, "read_retry.interval_ms must be > 0")

    return ClusterSpec(
        name=name,
        mode=mode,
        site=site,
        services=services,
        one_way_delay_ms=one_way_delay,
        one_way_delay_max_ms=delay_max,
        manager_overhead_ms=overhead,
        register_capacity=register_capacity,
        node_cpu_millicores=node_cpu,
        node_memory_mb=node_mem,
        max_nodes=max_nodes,
        mono_slots=mono_slots,
        autoscale=autoscale,
        read_retry_count=retry_count,
        read_retry_interval_ms=retry_interval,
    )


def load_ssi(path: str) -> ClusterSpec:
    with open(path) as fh:
        return parse_ssi(json.load(fh))


def build_cluster(
    spec: ClusterSpec,
    executor: Executor,
    store: ConfigStore,
    params: LinkBudgetParams = LinkBudgetParams(),
    seed: int = 0,
) -> ClusterEngine:
    """Instantiate a cluster: provision nodes, pack replicas onto them, and
    arm the autoscaler when `spec` carries one.

    A monolith is a single instance on a single node offering every service
    from one shared slot pool. The microservice modes place each replica
    independently via FFD, so the node count is an output, not an input.
    """
    engine = ClusterEngine(spec, executor, store, params=params, seed=seed)
    if spec.mode == "mono":
        node = engine.provision_node()
        engine.add_instance("mono", node, spec.mono_slots, services=[s.name for s in spec.services])
    else:
        demands = [
            InstanceDemand(
                name=f"{svc.name}-{i}", cpu_millicores=svc.cpu_millicores, memory_mb=svc.memory_mb
            )
            for svc in spec.services
            for i in range(svc.replicas)
        ]
        bins = place_ffd(demands, spec.node_capacity(), max_nodes=spec.max_nodes)
        for assigned in bins:
            node = engine.provision_node()
            for demand in assigned:
                service = demand.name.rsplit("-", 1)[0]
                engine.add_instance(service, node, spec.service(service).slots)
    if spec.autoscale is not None:
        engine.start_autoscaler()
    return engine
