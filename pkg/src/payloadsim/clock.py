"""Simulated time source and event scheduler.

Every delay in the simulator resolves against one SimClock, advanced only by
the Scheduler. Ties between events at the same instant are broken by
insertion order, so a run is a pure function of its inputs and seeds.
"""

from __future__ import annotations

import heapq
from typing import Callable


class SimClock:
    """Monotonic simulated time in milliseconds. Never reads the wall clock."""

    def __init__(self, start_ms: float = 0.0):
        self._now_ms = start_ms

    @property
    def now_ms(self) -> float:
        return self._now_ms

    @property
    def now_s(self) -> float:
        return self._now_ms / 1000.0

    def _advance_to(self, t_ms: float) -> None:
        if t_ms < self._now_ms:
            raise ValueError(f"clock cannot move backwards: {t_ms} < {self._now_ms}")
        self._now_ms = t_ms


class Scheduler:
    """Deterministic discrete-event loop over a SimClock.

    Events are (time_ms, seq, callback) with seq breaking same-time ties in
    submission order.
    """

    def __init__(self, clock: SimClock | None = None):
        self.clock = clock if clock is not None else SimClock()
        self._events: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0

    def at(self, t_ms: float, fn: Callable[[], None]) -> None:
        """Schedule fn to run at absolute sim time t_ms (not before now)."""
        if t_ms < self.clock.now_ms:
            raise ValueError(f"cannot schedule in the past: {t_ms} < {self.clock.now_ms}")
        self._seq += 1
        heapq.heappush(self._events, (t_ms, self._seq, fn))

    def after(self, delay_ms: float, fn: Callable[[], None]) -> None:
        """Schedule fn to run delay_ms from now."""
        self.at(self.clock.now_ms + delay_ms, fn)

    def pending(self) -> int:
        return len(self._events)

    def peek_time(self) -> float | None:
        """Time of the next pending event, or None when the queue is empty."""
        return self._events[0][0] if self._events else None

    def step(self) -> bool:
        """Run the next event. Returns False when nothing is pending."""
        if not self._events:
            return False
        t_ms, _, fn = heapq.heappop(self._events)
        self.clock._advance_to(t_ms)
        fn()
        return True

    def run_until(self, t_ms: float) -> None:
        """Run every event scheduled at or before t_ms, then park the clock there."""
        while self._events and self._events[0][0] <= t_ms:
            self.step()
        if t_ms > self.clock.now_ms:
            self.clock._advance_to(t_ms)

    def run(self, limit: int = 10_000_000) -> None:
        """Drain the event queue. `limit` guards against runaway feedback loops."""
        for _ in range(limit):
            if not self.step():
                return
        raise RuntimeError(f"scheduler exceeded {limit} events")
