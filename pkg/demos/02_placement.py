"""Pack service replicas onto nodes with first-fit decreasing and compare
against the exhaustive optimum on a small instance."""

from thzbench.placement import (
    InstanceDemand,
    NodeCapacity,
    min_bins_bruteforce,
    place_ffd,
)

cap = NodeCapacity(cpu_millicores=4000, memory_mb=8192)

replicas = [
    InstanceDemand("read-0", 750, 512),
    InstanceDemand("read-1", 750, 512),
    InstanceDemand("read-2", 750, 512),
    InstanceDemand("write-0", 1500, 2048),
    InstanceDemand("write-1", 1500, 2048),
    InstanceDemand("estimate-0", 2500, 4096),
    InstanceDemand("estimate-1", 2500, 4096),
]

plan = place_ffd(replicas, cap)
print(f"{len(replicas)} replicas on {cap.cpu_millicores}m/{cap.memory_mb}MB nodes")
for i, node in enumerate(plan):
    used_cpu = sum(r.cpu_millicores for r in node)
    used_mem = sum(r.memory_mb for r in node)
    names = ", ".join(r.name for r in node)
    print(f"  node {i}: {names}")
    print(f"          cpu {used_cpu}/{cap.cpu_millicores}m   mem {used_mem}/{cap.memory_mb}MB")

opt = min_bins_bruteforce(replicas, cap)
print(f"\nFFD used {len(plan)} nodes, exhaustive optimum is {opt}")
