"""Discrete-event core: events, the future event set and a run-as-fast-as-possible mode.

All times are integer nanoseconds. Simulation time starts at 0.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


class PastEventError(ValueError):
    """An event was inserted with a due time before the current simulation time."""


class EmptyEventSetError(LookupError):
    pass


@dataclass(frozen=True)
class TimerFire:
    tag: str
    data: Any = None


@dataclass(frozen=True)
class PacketArrival:
    packet: Any
    node: str
    iface: str


@dataclass(frozen=True)
class PacketDeparture:
    packet: Any
    channel: str


@dataclass(frozen=True)
class EmitExternal:
    packet: Any
    sink: str


@dataclass(frozen=True)
class ProbeSend:
    probe_id: int


EventKind = Union[TimerFire, PacketArrival, PacketDeparture, EmitExternal, ProbeSend]


@dataclass(eq=False)
class Event:
    due: int
    kind: EventKind
    id: int = -1
    seq: int = -1

    def __repr__(self) -> str:
        return f"Event(id={self.id}, due={self.due}, seq={self.seq}, kind={type(self.kind).__name__})"


class FutureEventSet:
    """Min-ordered event queue keyed by ``(due, seq)``.

    ``seq`` is stamped on insertion, so events with equal due times pop in
    insertion order. The set remembers the due time of the last popped event
    and refuses insertions before it.
    """

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = itertools.count()
        self.last_due = 0
        self.inserts = 0
        self.pops = 0

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def insert(self, event: Event) -> None:
        if event.due < self.last_due:
            raise PastEventError(
                f"event due at {event.due} ns inserted after simtime {self.last_due} ns"
            )
        event.seq = next(self._seq)
        heapq.heappush(self._heap, (event.due, event.seq, event))
        self.inserts += 1

    def peek_due(self) -> Optional[int]:
        if not self._heap:
            return None
        return self._heap[0][0]

    def pop_next(self) -> Event:
        if not self._heap:
            raise EmptyEventSetError("pop from an empty future event set")
        due, _, event = heapq.heappop(self._heap)
        self.last_due = max(self.last_due, due)
        self.pops += 1
        return event

    def events(self) -> list[Event]:
        """Pending events in pop order (copy; does not disturb the heap)."""
        return [e for _, _, e in sorted(self._heap, key=lambda x: (x[0], x[1]))]


@dataclass
class Kernel:
    """Owns the future event set and the current simulation time."""

    fes: FutureEventSet = field(default_factory=FutureEventSet)
    now: int = 0

    def __post_init__(self) -> None:
        self._ids = itertools.count()

    def event(self, due: int, kind: EventKind) -> Event:
        """Create an event with a fresh id. It is not inserted."""
        return Event(due=due, kind=kind, id=next(self._ids))

    def schedule(self, due: int, kind: EventKind) -> Event:
        ev = self.event(due, kind)
        self.insert(ev)
        return ev

    def insert(self, event: Event) -> None:
        if event.id < 0:
            event.id = next(self._ids)
        if event.due < self.now:
            raise PastEventError(
                f"event due at {event.due} ns inserted at simtime {self.now} ns"
            )
        self.fes.insert(event)

    def pop_next(self) -> Event:
        ev = self.fes.pop_next()
        self.now = max(self.now, ev.due)
        return ev

    def run_until(self, t_end: int, handler: Callable[["Kernel", Event], None]) -> int:
        """Dispatch every event due at or before ``t_end`` without waiting.

        Returns the number of events dispatched. The handler may schedule
        further events; those due by ``t_end`` are dispatched in this call too.
        """
        if t_end < self.now:
            raise PastEventError(f"run_until({t_end}) before simtime {self.now}")
        count = 0
        while True:
            due = self.fes.peek_due()
            if due is None or due > t_end:
                return count
            handler(self, self.pop_next())
            count += 1
