"""Deterministic discrete-event executor.

Events are (time_ns, sequence) ordered in a binary heap: equal times fire in
scheduling order, so a run is a pure function of its inputs. Cancellation is
lazy; cancelled entries are skipped when popped. The clock only moves when an
event fires, which makes a million simulated seconds as cheap as the events
scheduled in them.
"""

from __future__ import annotations

import heapq
from typing import Any, Callable, Optional


class SimTimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class SimExecutor:
    def __init__(self, start_ns: int = 0):
        self._now = start_ns
        self._heap: list[tuple[int, int, SimTimerHandle, Callable[..., None], tuple]] = []
        self._seq = 0
        self.events_fired = 0

    def now_ns(self) -> int:
        return self._now

    def call_at(self, when_ns: int, fn: Callable[..., None], *args: Any) -> SimTimerHandle:
        handle = SimTimerHandle()
        heapq.heappush(self._heap, (max(when_ns, self._now), self._seq, handle, fn, args))
        self._seq += 1
        return handle

    def call_later(self, delay_ns: int, fn: Callable[..., None], *args: Any) -> SimTimerHandle:
        return self.call_at(self._now + max(0, delay_ns), fn, *args)

    def pending(self) -> int:
        return sum(1 for (_, _, h, _, _) in self._heap if not h.cancelled)

    def run(
        self,
        until_ns: Optional[int] = None,
        stop: Optional[Callable[[], bool]] = None,
        max_events: Optional[int] = None,
    ) -> int:
        """Fire events in order until the heap empties, the clock would pass
        `until_ns`, `stop()` turns true (checked between events), or
        `max_events` have fired. Returns the number fired.

        When `until_ns` cuts the run short the clock still advances to it.
        """
        fired = 0
        while self._heap:
            if stop is not None and stop():
                break
            if max_events is not None and fired >= max_events:
                break
            when, _, handle, fn, args = self._heap[0]
            if until_ns is not None and when > until_ns:
                self._now = until_ns
                break
            heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now = when
            fn(*args)
            fired += 1
            self.events_fired += 1
        else:
            if until_ns is not None and until_ns > self._now:
                self._now = until_ns
        return fired
