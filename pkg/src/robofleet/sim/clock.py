"""Virtual clock and the discrete-event queue that advances it."""

from __future__ import annotations

import heapq
import itertools
import time
from typing import Callable


class VirtualClock:
    """Simulated time in seconds. Only moves forward."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def __call__(self) -> float:
        return self._now

    @property
    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        if t < self._now:
            raise ValueError(f"cannot move clock back from {self._now} to {t}")
        self._now = float(t)

    def advance(self, dt: float) -> None:
        self.advance_to(self._now + dt)


class WallClock:
    """Seconds since construction, for service mode."""

    def __init__(self):
        self._t0 = time.monotonic()

    def __call__(self) -> float:
        return round(time.monotonic() - self._t0, 6)

    @property
    def now(self) -> float:
        return self()

    def advance_to(self, t: float) -> None:
        pass


class EventQueue:
    """Time-ordered callbacks; ties break by insertion order."""

    def __init__(self, clock: VirtualClock):
        self.clock = clock
        self._heap: list = []
        self._seq = itertools.count()
        self.cancelled: set[int] = set()

    def __len__(self) -> int:
        return len(self._heap) - len(self.cancelled)

    def schedule(self, at: float, callback: Callable[[], None]) -> int:
        if at < self.clock.now:
            at = self.clock.now
        handle = next(self._seq)
        heapq.heappush(self._heap, (at, handle, callback))
        return handle

    def after(self, delay: float, callback: Callable[[], None]) -> int:
        return self.schedule(self.clock.now + delay, callback)

    def cancel(self, handle: int) -> None:
        self.cancelled.add(handle)

    def peek_time(self) -> float | None:
        while self._heap and self._heap[0][1] in self.cancelled:
            self.cancelled.discard(heapq.heappop(self._heap)[1])
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Run the next callback. Returns False when the queue is empty."""
        if self.peek_time() is None:
            return False
        at, _, callback = heapq.heappop(self._heap)
        self.clock.advance_to(at)
        callback()
        return True
