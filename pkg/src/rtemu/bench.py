"""Ping-RTT and capture-loss experiments, plus their CSV/text reports.

Both experiments run either on the virtual clock (synthetic capture source,
recording sink, fully deterministic) or on the real clock (UDP socket
capture over loopback, client threads in this process).
"""

from __future__ import annotations

import csv
import logging
import random
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .capture import (
    DEFAULT_HANDOFF_CAPACITY,
    HEADER_SIZE,
    CaptureMode,
    CaptureStats,
    Immediate,
    LossRate,
    MalformedFrame,
    SocketSource,
    SyntheticSource,
    capture_loss_rate,
    frame,
    parse_frame,
)
from .clock import RealClock, VirtualClock, gc_paused
from .emulator import Emulator
from .kernel import NS_PER_MS, NS_PER_S
from .netmodel import RecordingSink, SocketSink, Topology, build_topology
from .scheduler import SchedulerPolicy, lateness_summary
from .stats import QUANTILE_METHOD, BoxplotStats, boxplot_stats

logger = logging.getLogger(__name__)

VIRTUAL = "virtual"
REAL = "real"

SAMPLE_HEADER = ["seq", "send_ns", "recv_ns", "rtt_ns"]
SUMMARY_HEADER = ["n", "min_ns", "q1_ns", "median_ns", "q3_ns", "max_ns", "mean_ns", "stdev_ns"]


class BenchError(RuntimeError):
    pass


@dataclass(frozen=True)
class RttSample:
    seq: int
    send_wall: int
    recv_wall: int

    @property
    def rtt(self) -> int:
        return self.recv_wall - self.send_wall


@dataclass
class PingResult:
    sent: int
    samples: list[RttSample]
    lost: list[int]
    duplicates: int = 0
    late: int = 0
    stray: int = 0
    lateness: object = None

    def rtts(self) -> list[int]:
        return [s.rtt for s in self.samples]


def match_replies(sent: dict[int, int], replies: Iterable[tuple[int, bytes]], timeout: int) -> PingResult:
    """Pair replies with probes by sequence number.

    ``sent`` maps seq -> send time, ``replies`` is ``(recv time, payload)``
    in arrival order. A second reply for a seq is discarded and counted; a
    reply later than ``timeout`` leaves its probe lost. RTTs use the send
    time recorded locally, not the echoed one.
    """
    got: dict[int, RttSample] = {}
    duplicates = late = stray = 0
    seen: set[int] = set()
    for recv, payload in replies:
        try:
            seq, _ = parse_frame(payload)
        except MalformedFrame:
            stray += 1
            continue
        if seq not in sent:
            stray += 1
            continue
        if seq in seen:
            duplicates += 1
            continue
        seen.add(seq)
        if recv - sent[seq] > timeout:
            late += 1
            continue
        got[seq] = RttSample(seq, sent[seq], recv)
    samples = [got[s] for s in sorted(got)]
    lost = [s for s in sorted(sent) if s not in got]
    return PingResult(len(sent), samples, lost, duplicates, late, stray)


def send_schedule(count: int, interval: int, start: int = 0, jitter: bool = False, seed: int = 0) -> list[int]:
    """Probe send times. With ``jitter`` each probe gets a random phase in [0, interval)."""
    if count <= 0 or interval <= 0:
        raise ValueError("count and interval must be positive")
    rng = random.Random(seed)
    return [start + i * interval + (rng.randrange(interval) if jitter else 0) for i in range(count)]


def _topology(target: Union[str, Topology]) -> Topology:
    return build_topology(target) if isinstance(target, str) else target


def _ingress(topo: Topology) -> str:
    if len(topo.interfaces) != 1:
        raise BenchError(f"bench needs exactly one external interface, topology has {len(topo.interfaces)}")
    return next(iter(topo.interfaces))


def run_ping(
    count: int,
    interval: int,
    target: Union[str, Topology] = "local-host",
    timeout: int = NS_PER_S,
    *,
    clock: str = VIRTUAL,
    policy: SchedulerPolicy = SchedulerPolicy(),
    mode: CaptureMode = Immediate(),
    handoff_capacity: int = DEFAULT_HANDOFF_CAPACITY,
    size: int = 64,
    jitter: bool = False,
    seed: int = 0,
    bind: str = "127.0.0.1:0",
) -> PingResult:
    """Send ``count`` framed probes ``interval`` ns apart through the emulated topology and time the echoes."""
    if size < HEADER_SIZE:
        raise ValueError(f"probe size must be at least {HEADER_SIZE} bytes")
    topo = _topology(target)
    if clock == VIRTUAL:
        return _ping_virtual(topo, count, interval, timeout, policy, mode, handoff_capacity, size, jitter, seed)
    if clock == REAL:
        return _ping_real(topo, count, interval, timeout, policy, mode, handoff_capacity, size, jitter, seed, bind)
    raise ValueError(f"unknown clock {clock!r}")


def _ping_virtual(topo, count, interval, timeout, policy, mode, capacity, size, jitter, seed) -> PingResult:
    times = send_schedule(count, interval, jitter=jitter, seed=seed)
    script = [(t, frame(seq, t, size)) for seq, t in enumerate(times)]
    iface = _ingress(topo)
    clock = VirtualClock()
    src = SyntheticSource(script, mode, handoff_capacity=capacity, name=iface)
    sink = RecordingSink()
    emu = Emulator(topo, clock, {iface: src}, {iface: sink}, policy)
    emu.start()
    emu.run(times[-1] + timeout + 1)
    result = match_replies(dict(enumerate(times)), [(w, p.payload) for w, p in sink.emitted], timeout)
    result.lateness = lateness_summary(emu.scheduler.lateness)
    return result


def _ping_real(topo, count, interval, timeout, policy, mode, capacity, size, jitter, seed, bind) -> PingResult:
    iface = _ingress(topo)
    clock = RealClock()
    src = SocketSource(topo.interfaces[iface].bind or bind, mode, handoff_capacity=capacity, name=iface)
    sink = SocketSink(reply_via=src)
    client = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    client.bind(("127.0.0.1", 0))
    client.settimeout(0.05)
    try:
        emu = Emulator(topo, clock, {iface: src}, {iface: sink}, policy)
        src.start()
        start = emu.start() + 50 * NS_PER_MS
        times = send_schedule(count, interval, start=start, jitter=jitter, seed=seed)
        sent: dict[int, int] = {}
        replies: list[tuple[int, bytes]] = []
        done = threading.Event()

        def sender():
            for seq, t in enumerate(times):
                delay = t - time.monotonic_ns()
                if delay > 0:
                    time.sleep(delay / 1e9)
                now = time.monotonic_ns()
                sent[seq] = now
                client.sendto(frame(seq, now, size), src.address)

        def receiver():
            while not done.is_set():
                try:
                    data, _ = client.recvfrom(65535)
                except socket.timeout:
                    continue
                replies.append((time.monotonic_ns(), data))

        threads = [threading.Thread(target=sender, daemon=True), threading.Thread(target=receiver, daemon=True)]
        with gc_paused():
            for th in threads:
                th.start()
            emu.run(times[-1] + timeout + 10 * NS_PER_MS)
        threads[0].join()
        done.set()
        threads[1].join()
    finally:
        src.close()
        sink.close()
        client.close()
    result = match_replies(sent, replies, timeout)
    result.lateness = lateness_summary(emu.scheduler.lateness)
    return result


@dataclass
class LossReport:
    offered_pps: float
    packet_size: int
    duration: int
    mode: str
    sent: int
    echoed: int
    lost: int
    capture: CaptureStats
    capture_loss: LossRate
    stalls: list[tuple[int, int]] = field(default_factory=list)

    @property
    def loss_rate(self) -> float:
        return self.lost / self.sent if self.sent else 0.0


def loss_script(rate_pps: float, size: int, duration: int) -> list[tuple[int, bytes]]:
    """Constant-rate framed packets over ``duration`` ns, the first at time 0."""
    n = int(rate_pps * duration // NS_PER_S)
    return [(t, frame(i, t, size)) for i, t in ((i, round(i * NS_PER_S / rate_pps)) for i in range(n))]


def run_loss_test(
    rate_pps: float,
    size_bytes: int,
    duration: int,
    mode: CaptureMode = Immediate(),
    *,
    clock: str = VIRTUAL,
    stalls: Sequence[tuple[int, int]] = (),
    target: Union[str, Topology] = "local-host",
    policy: SchedulerPolicy = SchedulerPolicy(),
    handoff_capacity: int = DEFAULT_HANDOFF_CAPACITY,
    settle: int = NS_PER_S,
    bind: str = "127.0.0.1:0",
) -> LossReport:
    """Offer constant-rate traffic, optionally stalling the consumer, and count what comes back.

    ``stalls`` are ``(start, duration)`` pairs in ns relative to the first packet.
    """
    if rate_pps <= 0:
        raise ValueError("rate_pps must be positive")
    if size_bytes < HEADER_SIZE:
        raise ValueError(f"packet size must be at least {HEADER_SIZE} bytes")
    topo = _topology(target)
    iface = _ingress(topo)
    script = loss_script(rate_pps, size_bytes, duration)
    if clock == VIRTUAL:
        vclock = VirtualClock()
        src = SyntheticSource(script, mode, handoff_capacity=handoff_capacity, name=iface)
        sink = RecordingSink()
        emu = Emulator(topo, vclock, {iface: src}, {iface: sink}, policy)
        emu.start()
        for at, dur in stalls:
            emu.schedule_stall(at, dur)
        emu.run(duration + max((a + d for a, d in stalls), default=0) + settle)
        echoed = len(sink.emitted)
    elif clock == REAL:
        echoed, src = _loss_real(topo, iface, script, mode, stalls, policy, handoff_capacity, duration, settle, bind)
    else:
        raise ValueError(f"unknown clock {clock!r}")
    stats = src.stats()
    sent = len(script)
    return LossReport(
        offered_pps=rate_pps, packet_size=size_bytes, duration=duration, mode=str(mode),
        sent=sent, echoed=echoed, lost=sent - echoed, capture=stats,
        capture_loss=capture_loss_rate(stats), stalls=list(stalls),
    )


def _loss_real(topo, iface, script, mode, stalls, policy, capacity, duration, settle, bind):
    clock = RealClock()
    src = SocketSource(topo.interfaces[iface].bind or bind, mode, handoff_capacity=capacity, name=iface)
    sink = SocketSink(reply_via=src)
    client = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    client.bind(("127.0.0.1", 0))
    client.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 * 1024 * 1024)
    client.settimeout(0.05)
    echoed = 0
    done = threading.Event()
    try:
        emu = Emulator(topo, clock, {iface: src}, {iface: sink}, policy)
        src.start()
        epoch = emu.start()
        for at, dur in stalls:
            emu.schedule_stall(at, dur)

        def sender():
            for t, payload in script:
                delay = epoch + t - time.monotonic_ns()
                if delay > 0:
                    time.sleep(delay / 1e9)
                client.sendto(payload, src.address)

        def receiver():
            nonlocal echoed
            while not done.is_set():
                try:
                    client.recvfrom(65535)
                except socket.timeout:
                    continue
                echoed += 1

        threads = [threading.Thread(target=sender, daemon=True), threading.Thread(target=receiver, daemon=True)]
        with gc_paused():
            for th in threads:
                th.start()
            emu.run(epoch + duration + max((a + d for a, d in stalls), default=0) + settle)
        threads[0].join()
        done.set()
        threads[1].join()
    finally:
        src.close()
        sink.close()
        client.close()
    return echoed, src


# -- reports -------------------------------------------------------------------

def write_samples_csv(path: Union[str, Path], samples: Sequence[RttSample]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SAMPLE_HEADER)
        for s in samples:
            w.writerow([s.seq, s.send_wall, s.recv_wall, s.rtt])


def read_samples_csv(path: Union[str, Path]) -> list[RttSample]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != SAMPLE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SAMPLE_HEADER)}, got {header}")
        out = []
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            seq, send, recv, rtt = (int(x) for x in row)
            if recv - send != rtt:
                raise ValueError(f"{path}:{lineno}: rtt_ns does not equal recv_ns - send_ns")
            out.append(RttSample(seq, send, recv))
        return out


def summary_row(stats: BoxplotStats) -> list[int]:
    return [stats.n] + [round(getattr(stats, k)) for k in ("min", "q1", "median", "q3", "max", "mean", "stdev")]


def write_summary_csv(path: Union[str, Path], stats: BoxplotStats) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerow(summary_row(stats))


def render_text_report(stats: BoxplotStats, config: Optional[dict] = None, extra: Optional[dict] = None) -> str:
    lines = [f"{name}: {value}" for name, value in zip(SUMMARY_HEADER, summary_row(stats))]
    lines.append(f"quantile_method: {QUANTILE_METHOD}")
    lines.append("stdev: population")
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    if config:
        lines.append("config:")
        lines.extend(f"  {k}: {v}" for k, v in config.items())
    return "\n".join(lines) + "\n"


def render_loss_report(r: LossReport) -> str:
    c = r.capture
    rows = [
        ("offered_pps", r.offered_pps), ("packet_size", r.packet_size), ("duration_ns", r.duration),
        ("mode", r.mode), ("sent", r.sent), ("echoed", r.echoed), ("lost", r.lost),
        ("loss_rate", f"{r.loss_rate:.6f}"),
        ("capture_offered", c.offered), ("capture_delivered", c.delivered),
        ("capture_dropped", c.dropped), ("capture_buffered", c.buffered),
        ("capture_batches_flushed", c.batches_flushed),
        ("capture_loss_rate", f"{r.capture_loss.value:.6f}"),
        ("stalls_ns", ";".join(f"{a}+{d}" for a, d in r.stalls) or "none"),
    ]
    return "".join(f"{k}: {v}\n" for k, v in rows)


def ping_summary(result: PingResult) -> BoxplotStats:
    if not result.samples:
        raise BenchError("empty sample set")
    return boxplot_stats(result.rtts())
