"""Wall-clock synchronized event dispatch with external packet polling.

Two polling policies are provided. ``CORRECTED`` waits at most until the next
event is due. ``FIXED_TIMEOUT`` always blocks for the full ``max_poll``, which
makes events due sooner than that dispatch late; it is kept so the lateness it
causes can be measured.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from .kernel import NS_PER_MS, Event, Kernel, PacketArrival
from .stats import quantile

logger = logging.getLogger(__name__)

CORRECTED = "corrected"
FIXED_TIMEOUT = "fixed-timeout"
POLICIES = (CORRECTED, FIXED_TIMEOUT)

DEFAULT_MAX_POLL = 10 * NS_PER_MS


class SchedulerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SchedulerPolicy:
    variant: str = CORRECTED
    max_poll: int = DEFAULT_MAX_POLL

    def __post_init__(self) -> None:
        if self.variant not in POLICIES:
            raise ValueError(f"unknown scheduler policy {self.variant!r}")
        if self.max_poll <= 0:
            raise ValueError("max_poll must be positive")


def compute_poll_timeout(now: int, target: int, policy: SchedulerPolicy) -> int:
    if policy.variant == FIXED_TIMEOUT:
        return policy.max_poll
    return min(max(target - now, 0), policy.max_poll)


def wall_to_sim(epoch: int, w: int) -> int:
    if w < epoch:
        raise ValueError(f"wall time {w} precedes the run epoch {epoch}")
    return w - epoch


def sim_to_wall(epoch: int, s: int) -> int:
    return epoch + s


@dataclass(frozen=True)
class LatenessRecord:
    event_id: int
    due_wall: int
    actual_wall: int

    @property
    def lateness(self) -> int:
        return self.actual_wall - self.due_wall


@dataclass(frozen=True)
class LatenessSummary:
    count: int
    max: float
    mean: float
    p99: float
    empty: bool


def lateness_summary(records: Sequence[LatenessRecord]) -> LatenessSummary:
    if not records:
        return LatenessSummary(0, 0, 0, 0, empty=True)
    xs = sorted(r.lateness for r in records)
    return LatenessSummary(
        count=len(xs),
        max=xs[-1],
        mean=sum(xs) / len(xs),
        p99=quantile(xs, 0.99),
        empty=False,
    )


@dataclass
class SourceBinding:
    source: object
    node: str
    iface: str


class RealTimeScheduler:
    """Hands out kernel events no earlier than their wall-clock due time.

    While the next event is in the future the scheduler blocks on the clock,
    which wakes early when a capture source hands off packets. Those packets
    become ``PacketArrival`` events due at the instant they were drained.
    Simulation time 0 corresponds to the clock reading taken by ``start``.
    """

    def __init__(self, kernel: Kernel, clock, policy: SchedulerPolicy = SchedulerPolicy()):
        self.kernel = kernel
        self.clock = clock
        self.policy = policy
        self.bindings: list[SourceBinding] = []
        self.epoch: Optional[int] = None
        self.lateness: list[LatenessRecord] = []
        self.injected = 0

    def add_source(self, source, node: str, iface: str) -> None:
        self.clock.attach(source)
        self.bindings.append(SourceBinding(source, node, iface))

    def start(self) -> int:
        self.epoch = self.clock.now()
        return self.epoch

    def inject_external(self, packet, now: int, node: str, iface: str) -> Event:
        due = wall_to_sim(self.epoch, now)
        ev = self.kernel.schedule(due, PacketArrival(packet, node, iface))
        self.injected += 1
        return ev

    def drain_external(self) -> int:
        now = self.clock.now()
        n = 0
        for b in self.bindings:
            for pkt in b.source.drain():
                self.inject_external(pkt, now, b.node, b.iface)
                n += 1
        return n

    def next_dispatch(self, until: Optional[int] = None) -> Optional[Event]:
        """Block until the next event is due (wall clock) and return it.

        ``until`` is an optional wall-clock stop time: if it passes with no
        event due, None is returned.
        """
        if self.epoch is None:
            self.start()
        if not self.kernel.fes and not self.bindings and until is None:
            raise SchedulerError("nothing to dispatch: empty event set and no external sources")
        fes = self.kernel.fes
        while True:
            now = self.clock.now()
            due = fes.peek_due()
            if due is not None:
                target = sim_to_wall(self.epoch, due)
                if now >= target:
                    ev = self.kernel.pop_next()
                    self.lateness.append(LatenessRecord(ev.id, target, now))
                    return ev
            else:
                target = now + self.policy.max_poll
            if until is not None and now >= until:
                return None
            wait = compute_poll_timeout(now, target, self.policy)
            if until is not None:
                wait = min(wait, until - now)
            try:
                arrived = self.clock.wait_for_external(wait)
            except Exception as exc:
                raise SchedulerError(f"clock source failed: {exc}") from exc
            if arrived:
                self.drain_external()
