"""Clock sources for the real-time scheduler.

A clock tells the time and blocks the scheduler until either a capture source
has handed off packets or a timeout elapses. ``wait_for_external`` returns the
number of packets waiting in the attached handoff queues; 0 means it timed out.
"""

from __future__ import annotations

import gc
import threading
import time
from contextlib import contextmanager


class ClockError(RuntimeError):
    pass


class VirtualClock:
    """Deterministic clock for tests. Time only moves inside ``wait_for_external`` and ``stall``.

    Attached sources must be synthetic (``next_activity``/``advance_to``); the
    clock plays their scripted arrivals and batch timers inline as it advances.
    A wait ends at the first instant a handoff queue becomes non-empty, or at
    the timeout, whichever comes first.
    """

    def __init__(self, start: int = 0):
        self._now = start
        self.sources: list = []

    def attach(self, source) -> None:
        self.sources.append(source)
        # play anything scripted at or before the current instant
        source.advance_to(self._now)

    def now(self) -> int:
        return self._now

    def pending(self) -> int:
        return sum(len(s.handoff) for s in self.sources)

    def wait_for_external(self, timeout: int) -> int:
        if timeout < 0:
            raise ClockError(f"negative timeout {timeout}")
        n = self.pending()
        if n:
            return n
        self._advance(self._now + timeout, wake=True)
        return self.pending()

    def stall(self, duration: int) -> None:
        """Advance time without waking: sources keep producing, nobody consumes."""
        self._advance(self._now + duration, wake=False)

    def _advance(self, deadline: int, wake: bool) -> None:
        while True:
            times = [t for t in (s.next_activity() for s in self.sources) if t is not None]
            nxt = min(times) if times else None
            if nxt is None or nxt > deadline:
                self._now = deadline
                return
            self._now = max(self._now, nxt)
            for s in self.sources:
                s.advance_to(self._now)
            if wake and self.pending():
                return


@contextmanager
def gc_paused():
    """Suspend automatic cyclic GC for a timed run, as timeit does.

    Collector pauses on a large heap add milliseconds to single wake-ups.
    Run objects are acyclic, so reference counting still reclaims them.
    """
    enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


class RealClock:
    """Monotonic wall clock; waits wake as soon as any attached handoff queue receives a packet."""

    def __init__(self):
        self._cond = threading.Condition()
        self.sources: list = []

    def attach(self, source) -> None:
        # must happen before the source's producer thread starts
        source.handoff.cond = self._cond
        self.sources.append(source)

    def now(self) -> int:
        return time.monotonic_ns()

    def pending(self) -> int:
        return sum(len(s.handoff) for s in self.sources)

    def wait_for_external(self, timeout: int) -> int:
        if timeout < 0:
            raise ClockError(f"negative timeout {timeout}")
        with self._cond:
            self._cond.wait_for(self.pending, timeout / 1e9)
            return self.pending()

    def stall(self, duration: int) -> None:
        time.sleep(duration / 1e9)
