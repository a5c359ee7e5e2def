"""Kill a service mid-flight and watch the blast radius.

In a swarm, killing every write instance fails the in-flight and queued
updates and rejects later ones, while reads keep completing. In a
monolith, killing the single node takes every request kind down with it.
"""

from thzbench.cluster import ClusterSpec, build_cluster
from thzbench.domain import RequestEnvelope, RequestKind
from thzbench.estimator import LinkBudgetParams
from thzbench.loadgen import Workload, pool_qos, pool_state, preseed_store
from thzbench.orchestration import ServiceSpec, ServiceTimeModel
from thzbench.sim import SimExecutor
from thzbench.store import ConfigStore

MS = 1_000_000


def run(mode, kill, submit_plan):
    ex = SimExecutor()
    store = ConfigStore(None)
    preseed_store(store, LinkBudgetParams(), Workload(op="read", key_pool=8))
    services = (
        ServiceSpec("read", 2, 2, ServiceTimeModel("constant", 4.0)),
        ServiceSpec("write", 1, 2, ServiceTimeModel("constant", 10.0)),
        ServiceSpec("estimate", 1, 2, ServiceTimeModel("constant", 20.0)),
    )
    spec = ClusterSpec(name="demo", mode=mode, site="edge", services=services,
                       mono_slots=4 if mode == "mono" else 0)
    engine = build_cluster(spec, ex, store)
    outcomes = {}
    rid = 0
    for at_ms, kind, count in submit_plan:
        for i in range(count):
            env = RequestEnvelope(id=rid, kind=kind, qos=pool_qos(30000.0),
                                  state=pool_state(i % 8, 8), deadline_ms=30000.0)
            ex.call_at(int(at_ms * MS), engine.submit_from_user, env,
                       lambda r, k=kind: outcomes.setdefault(k, []).append(r.status))
            rid += 1
    kill(ex, engine)
    ex.run()
    for kind, statuses in outcomes.items():
        counts = {}
        for s in statuses:
            counts[s.value] = counts.get(s.value, 0) + 1
        print(f"  {kind.value:>16}: {counts}")


print("swarm, write service killed at t=5ms")
run("swarm",
    lambda ex, eng: ex.call_at(5 * MS, eng.fail_service, "write"),
    [(0.0, RequestKind.RESOURCE_QUERY, 10),
     (0.0, RequestKind.RESOURCE_UPDATE, 6),
     (20.0, RequestKind.RESOURCE_QUERY, 5),
     (20.0, RequestKind.RESOURCE_UPDATE, 5)])

print("\nmono, the only node killed at t=2ms")
run("mono",
    lambda ex, eng: ex.call_at(
        2 * MS, lambda: eng.fail_node(eng.directory.all_instances()[0].node)),
    [(0.0, RequestKind.RESOURCE_QUERY, 3),
     (0.0, RequestKind.RESOURCE_UPDATE, 3),
     (0.0, RequestKind.CHANNEL_ESTIMATE, 3),
     (10.0, RequestKind.RESOURCE_QUERY, 1)])
