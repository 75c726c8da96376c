"""Packet sources with immediate or batched delivery into a bounded handoff queue.

A source models the kernel side of packet capture. Captured packets either go
straight into the handoff queue (immediate mode) or collect in a batch buffer
that is flushed when its timer expires or it fills up (batched mode). The
handoff queue is what the scheduler drains; when it is full the newest packet
is dropped and counted.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Optional, Union

from .kernel import NS_PER_MS

logger = logging.getLogger(__name__)

HEADER = struct.Struct(">QQ")
HEADER_SIZE = HEADER.size  # 16

DEFAULT_HANDOFF_CAPACITY = 256
DEFAULT_BUF_CAP = 64 * 1024
DEFAULT_T_BATCH = 10 * NS_PER_MS

TIMER_FIRST_PACKET = "first-packet"
TIMER_PERIODIC = "periodic"


class MalformedFrame(ValueError):
    pass


class SourceClosedError(RuntimeError):
    pass


def frame(seq: int, ts: int, size: int = HEADER_SIZE) -> bytes:
    """Build a probe datagram: big-endian seq and sender timestamp, zero padded to ``size``."""
    if size < HEADER_SIZE:
        raise ValueError(f"datagram size {size} is smaller than the {HEADER_SIZE}-byte header")
    return HEADER.pack(seq, ts) + bytes(size - HEADER_SIZE)


def parse_frame(payload: bytes) -> tuple[int, int]:
    if len(payload) < HEADER_SIZE:
        raise MalformedFrame(f"{len(payload)}-byte payload has no {HEADER_SIZE}-byte header")
    return HEADER.unpack_from(payload)


@dataclass(frozen=True)
class Packet:
    payload: bytes
    capture_ts: int
    source_seq: int
    src: str = ""
    dst: str = ""
    # wall time the packet became visible in the handoff queue; -1 until then
    delivered_ts: int = -1

    @property
    def size(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class Immediate:
    def __str__(self) -> str:
        return "immediate"


@dataclass(frozen=True)
class Batched:
    """Kernel-style batching.

    ``timer`` selects where the batch timeout is measured from: the first
    packet of the batch, or fixed periods of ``t_batch`` counted from the
    source's open time (how a ring-buffer block timer behaves).
    """

    t_batch: int = DEFAULT_T_BATCH
    buf_cap: int = DEFAULT_BUF_CAP
    timer: str = TIMER_FIRST_PACKET

    def __post_init__(self) -> None:
        if self.t_batch <= 0:
            raise ValueError("t_batch must be positive")
        if self.buf_cap <= 0:
            raise ValueError("buf_cap must be positive")
        if self.timer not in (TIMER_FIRST_PACKET, TIMER_PERIODIC):
            raise ValueError(f"unknown batch timer {self.timer!r}")

    def __str__(self) -> str:
        return f"batched(t_batch={self.t_batch}ns, buf_cap={self.buf_cap}B, timer={self.timer})"


CaptureMode = Union[Immediate, Batched]


def batch_flush_due(buffered_bytes: int, buf_cap: int, first_pkt_age: int, t_batch: int) -> bool:
    """True when the batch must be handed over: buffer full or timer expired, whichever first."""
    return buffered_bytes >= buf_cap or first_pkt_age >= t_batch


class HandoffQueue:
    """Bounded FIFO between a capture producer and the scheduler. Drop-tail when full.

    ``cond`` may be swapped for a condition shared by several queues so one
    consumer can sleep until any of them has data.
    """

    def __init__(self, capacity: int = DEFAULT_HANDOFF_CAPACITY):
        if capacity <= 0:
            raise ValueError("handoff capacity must be positive")
        self.capacity = capacity
        self.cond = threading.Condition()
        self._items: deque[Packet] = deque()
        self.dropped = 0
        self.pushed = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, packet: Packet) -> bool:
        with self.cond:
            if len(self._items) >= self.capacity:
                self.dropped += 1
                return False
            self._items.append(packet)
            self.pushed += 1
            self.cond.notify_all()
            return True

    def drain(self) -> list[Packet]:
        with self.cond:
            out = list(self._items)
            self._items.clear()
            return out


@dataclass(frozen=True)
class CaptureStats:
    offered: int = 0
    delivered: int = 0
    dropped: int = 0
    buffered: int = 0
    batches_flushed: int = 0


class LossRate(NamedTuple):
    value: float
    empty: bool


def capture_loss_rate(stats: CaptureStats) -> LossRate:
    seen = stats.delivered + stats.dropped
    if seen == 0:
        return LossRate(0.0, True)
    return LossRate(stats.dropped / seen, False)


class CaptureSource:
    """Common capture logic shared by the synthetic and socket backends.

    ``on_packet`` may be called from a producer thread; ``drain`` from the
    consumer. Internal state is guarded by a lock.
    """

    def __init__(
        self,
        mode: CaptureMode = Immediate(),
        handoff_capacity: int = DEFAULT_HANDOFF_CAPACITY,
        origin: int = 0,
        name: str = "src",
    ):
        self.mode = mode
        self.name = name
        self.origin = origin
        self.handoff = HandoffQueue(handoff_capacity)
        self.closed = False
        self._lock = threading.RLock()
        self._next_seq = 0
        self._offered = 0
        self._flushes = 0
        self._batch: list[Packet] = []
        self._batch_bytes = 0
        self._batch_origin = 0

    def stats(self) -> CaptureStats:
        with self._lock:
            return CaptureStats(
                offered=self._offered,
                delivered=self.handoff.pushed,
                dropped=self.handoff.dropped,
                buffered=len(self._batch),
                batches_flushed=self._flushes,
            )

    def on_packet(self, raw: bytes, ts: int, src: str = "") -> Packet:
        with self._lock:
            if self.closed:
                raise SourceClosedError(f"source {self.name!r} is closed")
            self._expire(ts)
            pkt = Packet(payload=bytes(raw), capture_ts=ts, source_seq=self._next_seq, src=src)
            self._next_seq += 1
            self._offered += 1
            if isinstance(self.mode, Immediate):
                self.handoff.push(replace(pkt, delivered_ts=ts))
                return pkt
            if not self._batch:
                self._batch_origin = self._timer_origin(ts)
            self._batch.append(pkt)
            self._batch_bytes += pkt.size
            if batch_flush_due(self._batch_bytes, self.mode.buf_cap,
                               ts - self._batch_origin, self.mode.t_batch):
                self._flush(ts)
            return pkt

    def poll_timer(self, now: int) -> None:
        """Fire the batch timer if it has expired by ``now``."""
        with self._lock:
            self._expire(now)

    def next_deadline(self) -> Optional[int]:
        """Wall time at which the pending batch times out, or None."""
        with self._lock:
            if not self._batch or isinstance(self.mode, Immediate):
                return None
            return self._batch_origin + self.mode.t_batch

    def drain(self) -> list[Packet]:
        return self.handoff.drain()

    def close(self) -> None:
        with self._lock:
            self.closed = True

    def _timer_origin(self, ts: int) -> int:
        if self.mode.timer == TIMER_PERIODIC:
            t = self.mode.t_batch
            return self.origin + ((ts - self.origin) // t) * t
        return ts

    def _expire(self, now: int) -> None:
        if self._batch and batch_flush_due(self._batch_bytes, self.mode.buf_cap,
                                           now - self._batch_origin, self.mode.t_batch):
            self._flush(now)

    def _flush(self, ts: int) -> None:
        batch, self._batch, self._batch_bytes = self._batch, [], 0
        self._flushes += 1
        for pkt in batch:
            self.handoff.push(replace(pkt, delivered_ts=ts))


class SyntheticSource(CaptureSource):
    """Replays a fixed ``(wall_time, payload)`` script. Driven by a test clock."""

    def __init__(self, script: Iterable[tuple[int, bytes]], mode: CaptureMode = Immediate(), **kw):
        super().__init__(mode, **kw)
        self._script = list(script)
        for (a, _), (b, _) in zip(self._script, self._script[1:]):
            if b < a:
                raise ValueError(f"script times are not monotone: {b} after {a}")
        self._pos = 0

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self._script)

    def next_activity(self) -> Optional[int]:
        times = [t for t in (self._next_script_time(), self.next_deadline()) if t is not None]
        return min(times) if times else None

    def advance_to(self, t: int) -> None:
        """Play every arrival and timer expiry at or before ``t`` in time order."""
        while True:
            nxt = self.next_activity()
            if nxt is None or nxt > t:
                return
            deadline = self.next_deadline()
            script_t = self._next_script_time()
            if deadline is not None and (script_t is None or deadline <= script_t):
                self.poll_timer(deadline)
            else:
                ts, payload = self._script[self._pos]
                self._pos += 1
                self.on_packet(payload, ts)

    def _next_script_time(self) -> Optional[int]:
        return self._script[self._pos][0] if self._pos < len(self._script) else None


def open_synthetic_source(script, mode: CaptureMode = Immediate(), **kw) -> SyntheticSource:
    return SyntheticSource(script, mode, **kw)


def parse_address(addr: Union[str, tuple]) -> tuple[str, int]:
    if isinstance(addr, tuple):
        return addr[0], int(addr[1])
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bad address {addr!r}, expected HOST:PORT")
    return host, int(port)


class SocketSource(CaptureSource):
    """Captures UDP datagrams arriving on a bound socket, on a reader thread."""

    # upper bound on one blocking recv so close() is noticed promptly
    RECV_SLICE = 0.05

    def __init__(self, bind: Union[str, tuple] = "127.0.0.1:0", mode: CaptureMode = Immediate(),
                 clock=time.monotonic_ns, rcvbuf: Optional[int] = None, **kw):
        super().__init__(mode, **kw)
        self._clock = clock
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if rcvbuf:
            self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
        self.sock.bind(parse_address(bind))
        self.address = self.sock.getsockname()
        self.last_peer: Optional[tuple] = None
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        if self._thread is None:
            self.origin = self._clock()
            self._thread = threading.Thread(target=self._run, name=f"capture-{self.name}", daemon=True)
            self._thread.start()

    def close(self) -> None:
        super().close()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        self.sock.close()

    def _run(self) -> None:
        while not self.closed:
            deadline = self.next_deadline()
            if deadline is None:
                timeout = self.RECV_SLICE
            else:
                timeout = min(self.RECV_SLICE, max(0, deadline - self._clock()) / 1e9)
            try:
                self.sock.settimeout(timeout if timeout > 0 else 1e-6)
                data, peer = self.sock.recvfrom(65535)
            except socket.timeout:
                self.poll_timer(self._clock())
                continue
            except OSError:
                if self.closed:
                    return
                raise
            self.last_peer = peer
            try:
                self.on_packet(data, self._clock(), src=f"{peer[0]}:{peer[1]}")
            except SourceClosedError:
                return


def open_socket_source(bind="127.0.0.1:0", mode: CaptureMode = Immediate(), **kw) -> SocketSource:
    try:
        return SocketSource(bind, mode, **kw)
    except OSError as exc:
        raise OSError(f"cannot bind capture socket to {bind}: {exc}") from exc
