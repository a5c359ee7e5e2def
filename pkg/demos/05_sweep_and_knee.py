"""Run a small concurrency sweep on two deployments of the same services,
detect each knee, and chart the overlay.

The monolith shares one slot pool across read/write/estimate; the swarm
gives each service its own replicas. The swarm's read path keeps its
latency flat to higher concurrency, which is the whole argument for
paying the microservice management overhead.
"""

import os

from thzbench.charts import emit_compare_svg
from thzbench.cluster import ClusterSpec
from thzbench.loadgen import Windows, Workload, run_sim_sweep
from thzbench.metrics import SweepReport
from thzbench.orchestration import ServiceSpec, ServiceTimeModel

OUT = os.environ.get("OFFLOAD_BENCH_OUT", "out")

wl = Workload(op="read", think_ms=10.0, key_pool=64, start_jitter_ms=300.0,
              deadline_ms=30000.0)
win = Windows(warmup_ms=1000.0, measure_ms=3000.0)
levels = (20, 60, 100, 140, 180, 220)

services = lambda r, s: (
    ServiceSpec("read", r, s, ServiceTimeModel("constant", 4.0)),
    ServiceSpec("write", r, s, ServiceTimeModel("constant", 10.0)),
    ServiceSpec("estimate", r, s, ServiceTimeModel("constant", 20.0)),
)

mono = ClusterSpec(name="mono-demo", mode="mono", site="edge",
                   services=services(1, 1), mono_slots=4,
                   one_way_delay_ms=5.0, manager_overhead_ms=0.2)
swarm = ClusterSpec(name="swarm-demo", mode="swarm", site="edge",
                    services=services(2, 4),
                    one_way_delay_ms=5.0, manager_overhead_ms=0.5)

entries = []
for spec in (mono, swarm):
    results = run_sim_sweep(spec, wl, levels, win, seed=7)
    report = SweepReport.from_records([r.record for r in results])
    entries.append((spec.mode, report))
    knee = f"{report.knee_users} users" if report.knee_users else "not reached"
    print(f"{spec.mode:>5}: knee {knee}")
    for rec in report.records:
        print(f"    {rec.users:>4} users  mean {rec.mean_ms:7.2f} ms  "
              f"p95 {rec.p95_ms:7.2f} ms  {rec.rps:8.1f} rps")

path = emit_compare_svg(entries, os.path.join(OUT, "demo_compare.svg"))
print(f"\noverlay chart: {path}")
