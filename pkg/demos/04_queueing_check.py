"""Cross-check the simulator against the analytic finite-population queue.

A cluster reduced to one exponential service with c slots, driven by n
closed-loop users with a fixed think time, is exactly the machine
repairman model, so its throughput has a closed form. The simulator
should land on it to within sampling noise.
"""

from thzbench.cluster import ClusterSpec
from thzbench.loadgen import Windows, Workload, run_sim_level
from thzbench.metrics import solve_finite_population
from thzbench.orchestration import ServiceSpec, ServiceTimeModel

SERVICE_MS, THINK_MS = 10.0, 10.0

wl = Workload(op="read", think_ms=THINK_MS, key_pool=8, start_jitter_ms=200.0)
win = Windows(warmup_ms=2000.0, measure_ms=20000.0)

print(f"{'n':>4} {'c':>3} {'sim rps':>10} {'oracle rps':>11} {'diff':>7}")
for c in (1, 2, 4):
    spec = ClusterSpec(
        name="demo", mode="swarm", site="edge",
        services=(
            ServiceSpec("read", 1, c, ServiceTimeModel("exponential", SERVICE_MS)),
            ServiceSpec("write", 1, 1, ServiceTimeModel("constant", SERVICE_MS)),
            ServiceSpec("estimate", 1, 1, ServiceTimeModel("constant", SERVICE_MS)),
        ),
    )
    for n in (1, 4, 16, 64):
        res = run_sim_level(spec, wl, n, win, seed=42 + n + c)
        oracle = solve_finite_population(n, c, SERVICE_MS / 1e3, THINK_MS / 1e3)
        diff = abs(res.record.rps - oracle.throughput_per_s) / oracle.throughput_per_s
        print(f"{n:>4} {c:>3} {res.record.rps:>10.2f} {oracle.throughput_per_s:>11.2f} {diff:>6.1%}")
