"""Runs a topology under the real-time scheduler."""

from __future__ import annotations

import logging
from typing import Callable, Optional

from .kernel import EmitExternal, Event, Kernel, PacketArrival, PacketDeparture, ProbeSend, TimerFire
from .netmodel import Network, Topology, TopologyError
from .scheduler import RealTimeScheduler, SchedulerPolicy, sim_to_wall

logger = logging.getLogger(__name__)

STALL = "stall"


class Emulator:
    """One emulation run: kernel, scheduler, network and the I/O bound to each external interface.

    ``sources`` and ``sinks`` are keyed by external interface id; every
    interface needs exactly one of each.
    """

    def __init__(self, topology: Topology, clock, sources: dict, sinks: dict,
                 policy: SchedulerPolicy = SchedulerPolicy(), trace: bool = False):
        missing = [f"interface {i!r} has no capture source" for i in topology.interfaces if i not in sources]
        missing += [f"interface {i!r} has no emission sink" for i in topology.interfaces if i not in sinks]
        extra = [f"no interface {i!r} for source/sink" for i in set(sources) | set(sinks)
                 if i not in topology.interfaces]
        if missing or extra:
            raise TopologyError(missing + extra)
        self.topology = topology
        self.clock = clock
        self.kernel = Kernel()
        self.network = Network(topology, self.kernel, sinks)
        self.scheduler = RealTimeScheduler(self.kernel, clock, policy)
        self.sources = sources
        self.sinks = sinks
        for iface_id, itf in topology.interfaces.items():
            self.scheduler.add_source(sources[iface_id], itf.node, iface_id)
        self.timer_handlers: dict[str, Callable[["Emulator", Event], None]] = {STALL: _stall}
        self.probe_handler: Optional[Callable[["Emulator", Event], None]] = None
        self.trace: Optional[list[tuple]] = [] if trace else None
        self.dispatched = 0

    def start(self) -> int:
        return self.scheduler.start()

    @property
    def epoch(self) -> Optional[int]:
        return self.scheduler.epoch

    def schedule_stall(self, at: int, duration: int) -> Event:
        """Block the consumer for ``duration`` ns starting at simtime ``at``."""
        return self.kernel.schedule(at, TimerFire(STALL, duration))

    def dispatch(self, ev: Event) -> None:
        wall = self.clock.now()
        kind = ev.kind
        if self.trace is not None:
            self.trace.append(_trace_row(ev, wall - self.epoch))
        if isinstance(kind, TimerFire):
            self.timer_handlers[kind.tag](self, ev)
        elif isinstance(kind, ProbeSend):
            if self.probe_handler is None:
                raise RuntimeError("ProbeSend event without a probe handler")
            self.probe_handler(self, ev)
        else:
            for follow in self.network.handle(ev, wall):
                self.kernel.insert(follow)
        self.dispatched += 1

    def step(self, until: Optional[int] = None) -> Optional[Event]:
        ev = self.scheduler.next_dispatch(until)
        if ev is not None:
            self.dispatch(ev)
        return ev

    def run(self, until: int) -> int:
        """Run until wall time ``until`` (absolute clock reading). Returns events dispatched."""
        if self.epoch is None:
            self.start()
        n = 0
        while self.step(until) is not None:
            n += 1
        return n

    def run_for(self, duration: int) -> int:
        if self.epoch is None:
            self.start()
        return self.run(sim_to_wall(self.epoch, duration))


def _stall(emu: Emulator, ev: Event) -> None:
    emu.clock.stall(ev.kind.data)


def _trace_row(ev: Event, wall_offset: int) -> tuple:
    k = ev.kind
    if isinstance(k, PacketArrival):
        return (ev.due, wall_offset, "arrival", k.node, k.iface, k.packet.source_seq, k.packet.size)
    if isinstance(k, PacketDeparture):
        return (ev.due, wall_offset, "departure", k.channel, "", k.packet.source_seq, k.packet.size)
    if isinstance(k, EmitExternal):
        return (ev.due, wall_offset, "emit", k.sink, "", k.packet.source_seq, k.packet.size)
    if isinstance(k, TimerFire):
        return (ev.due, wall_offset, "timer", k.tag, "", -1, 0)
    return (ev.due, wall_offset, type(k).__name__, "", "", -1, 0)
