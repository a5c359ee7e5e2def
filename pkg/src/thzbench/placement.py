"""Two-dimensional (cpu, memory) vector bin packing for service instances.

place_ffd is the production scheduler: first-fit decreasing on the dominant
normalized dimension, with a total tie order so placement is a pure function
of the demand set. min_bins_bruteforce is an exhaustive set-partition search
used as a test oracle on small instances; it is exponential and guarded.
first_fit_index serves incremental scale-up, where existing assignments must
not move.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence


@dataclass(frozen=True)
class InstanceDemand:
    name: str
    cpu_millicores: int
    memory_mb: int


@dataclass(frozen=True)
class NodeCapacity:
    cpu_millicores: int
    memory_mb: int


class UnplaceableInstance(Exception):
    """An instance that cannot be placed: larger than an empty node, or the
    node budget is exhausted."""

    def __init__(self, demand: InstanceDemand, reason: str):
        self.demand = demand
        self.reason = reason
        super().__init__(f"{demand.name}: {reason}")


def dominant_share(item: InstanceDemand, cap: NodeCapacity) -> float:
    return max(item.cpu_millicores / cap.cpu_millicores, item.memory_mb / cap.memory_mb)


def _fits_empty(item: InstanceDemand, cap: NodeCapacity) -> bool:
    return item.cpu_millicores <= cap.cpu_millicores and item.memory_mb <= cap.memory_mb


def place_ffd(
    items: Sequence[InstanceDemand],
    cap: NodeCapacity,
    max_nodes: Optional[int] = None,
) -> list[list[InstanceDemand]]:
    """Pack all items, returning one list of demands per node.

    Items are placed in decreasing dominant-share order into the first node
    where both dimensions fit; a new node opens when none has room. Ties are
    broken by cpu, then memory, then name, so equal demand sets in any input
    order produce identical packings.
    """
    for item in items:
        if not _fits_empty(item, cap):
            raise UnplaceableInstance(item, "exceeds empty node capacity")
    ordered = sorted(
        items,
        key=lambda it: (-dominant_share(it, cap), -it.cpu_millicores, -it.memory_mb, it.name),
    )
    bins: list[list[InstanceDemand]] = []
    used: list[tuple[int, int]] = []
    for item in ordered:
        idx = first_fit_index(used, item, cap)
        if idx is None:
            if max_nodes is not None and len(bins) >= max_nodes:
                raise UnplaceableInstance(item, f"would need more than {max_nodes} nodes")
            bins.append([item])
            used.append((item.cpu_millicores, item.memory_mb))
        else:
            bins[idx].append(item)
            c, m = used[idx]
            used[idx] = (c + item.cpu_millicores, m + item.memory_mb)
    return bins


def first_fit_index(
    used: Sequence[tuple[int, int]],
    item: InstanceDemand,
    cap: NodeCapacity,
) -> Optional[int]:
    """Index of the first node whose remaining (cpu, mem) both hold `item`,
    or None. `used` is per-node consumed (cpu_millicores, memory_mb)."""
    for i, (c, m) in enumerate(used):
        if c + item.cpu_millicores <= cap.cpu_millicores and m + item.memory_mb <= cap.memory_mb:
            return i
    return None


BRUTEFORCE_LIMIT = 10


def min_bins_bruteforce(items: Sequence[InstanceDemand], cap: NodeCapacity) -> int:
    """Minimum node count by exhaustive set partition. Test oracle only.

    Branch and bound over 'put item i in each distinguishable existing bin or
    a fresh one'; symmetric bin states are visited once. Exponential, so the
    instance size is capped at BRUTEFORCE_LIMIT.
    """
    if len(items) > BRUTEFORCE_LIMIT:
        raise ValueError(f"bruteforce oracle limited to {BRUTEFORCE_LIMIT} items, got {len(items)}")
    for item in items:
        if not _fits_empty(item, cap):
            raise UnplaceableInstance(item, "exceeds empty node capacity")
    if not items:
        return 0
    ordered = sorted(items, key=lambda it: (-dominant_share(it, cap), -it.cpu_millicores, -it.memory_mb, it.name))
    best = len(ordered)
    bins_cpu: list[int] = []
    bins_mem: list[int] = []

    def rec(i: int) -> None:
        nonlocal best
        if len(bins_cpu) >= best:
            return
        if i == len(ordered):
            best = len(bins_cpu)
            return
        item = ordered[i]
        seen: set[tuple[int, int]] = set()
        for b in range(len(bins_cpu)):
            state = (bins_cpu[b], bins_mem[b])
            if state in seen:
                continue
            seen.add(state)
            if (
                bins_cpu[b] + item.cpu_millicores <= cap.cpu_millicores
                and bins_mem[b] + item.memory_mb <= cap.memory_mb
            ):
                bins_cpu[b] += item.cpu_millicores
                bins_mem[b] += item.memory_mb
                rec(i + 1)
                bins_cpu[b] -= item.cpu_millicores
                bins_mem[b] -= item.memory_mb
        if len(bins_cpu) + 1 < best:
            bins_cpu.append(item.cpu_millicores)
            bins_mem.append(item.memory_mb)
            rec(i + 1)
            bins_cpu.pop()
            bins_mem.pop()

    rec(0)
    return best
