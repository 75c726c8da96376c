"""The emulated network: nodes, delay/datarate channels, static forwarding, echo and emission sinks."""

from __future__ import annotations

import copy
import socket
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .capture import MalformedFrame, Packet, parse_address, parse_frame
from .kernel import NS_PER_MS, NS_PER_S, EmitExternal, Event, Kernel, PacketArrival, PacketDeparture

HOST = "host"
ROUTER = "router"
ECHO = "echo"
NODE_KINDS = (HOST, ROUTER, ECHO)

GBPS = 1_000_000_000


class TopologyError(ValueError):
    """Invalid topology definition. ``errors`` lists every violation found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ChannelParams:
    delay: int = 0
    datarate: int = GBPS

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError("channel delay must be non-negative")
        if self.datarate <= 0:
            raise ValueError("channel datarate must be positive")


def transit_time(size: int, ch: ChannelParams) -> int:
    """Propagation delay plus serialization time of ``size`` bytes, in whole nanoseconds."""
    if size < 0:
        raise ValueError("packet size must be non-negative")
    bits = 8 * size
    return ch.delay + (bits * NS_PER_S * 2 + ch.datarate) // (2 * ch.datarate)


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    address: str


@dataclass(frozen=True)
class Channel:
    id: str
    src: str
    dst: str
    params: ChannelParams


@dataclass(frozen=True)
class ExternalInterface:
    """Where real traffic enters and leaves the model.

    Captured packets are addressed ``peer -> dst`` on entry; packets routed
    to this interface are emitted on its sink.
    """

    id: str
    node: str
    dst: str
    peer: str
    bind: Optional[str] = None


@dataclass
class Topology:
    nodes: dict[str, Node] = field(default_factory=dict)
    channels: dict[str, Channel] = field(default_factory=dict)
    interfaces: dict[str, ExternalInterface] = field(default_factory=dict)
    routes: dict[str, dict[str, str]] = field(default_factory=dict)
    processing_delay: int = 0
    name: str = "custom"

    def validate(self) -> list[str]:
        errors = []
        if not self.nodes:
            errors.append("topology has no nodes")
        if self.processing_delay < 0:
            errors.append("processing_delay must be non-negative")
        for n in self.nodes.values():
            if n.kind not in NODE_KINDS:
                errors.append(f"node {n.id!r}: unknown kind {n.kind!r}")
        clash = set(self.channels) & set(self.interfaces)
        for name in sorted(clash):
            errors.append(f"id {name!r} used by both a channel and an interface")
        for ch in self.channels.values():
            for end in (ch.src, ch.dst):
                if end not in self.nodes:
                    errors.append(f"channel {ch.id!r}: unknown node {end!r}")
        for itf in self.interfaces.values():
            if itf.node not in self.nodes:
                errors.append(f"interface {itf.id!r}: unknown node {itf.node!r}")
        for node_id, table in self.routes.items():
            if node_id not in self.nodes:
                errors.append(f"routes: unknown node {node_id!r}")
                continue
            for dst, out in table.items():
                if out in self.channels:
                    if self.channels[out].src != node_id:
                        errors.append(f"routes[{node_id}][{dst}]: channel {out!r} does not leave {node_id!r}")
                elif out in self.interfaces:
                    if self.interfaces[out].node != node_id:
                        errors.append(f"routes[{node_id}][{dst}]: interface {out!r} is not on {node_id!r}")
                else:
                    errors.append(f"routes[{node_id}][{dst}]: unknown channel or interface {out!r}")
        return errors


# -- (de)serialization -------------------------------------------------------

def _ms(ns: int) -> Union[int, float]:
    v = ns / NS_PER_MS
    return int(v) if v == int(v) else v


def topology_to_dict(t: Topology) -> dict:
    return {
        "nodes": [{"id": n.id, "kind": n.kind, "address": n.address} for n in t.nodes.values()],
        "channels": [
            {"id": c.id, "from": c.src, "to": c.dst,
             "delay_ms": _ms(c.params.delay), "datarate_bps": c.params.datarate}
            for c in t.channels.values()
        ],
        "interfaces": [
            {k: v for k, v in (("id", i.id), ("node", i.node), ("dst", i.dst), ("peer", i.peer),
                                ("bind", i.bind)) if v is not None}
            for i in t.interfaces.values()
        ],
        "routes": copy.deepcopy(t.routes),
        "processing_delay_ms": _ms(t.processing_delay),
    }


_NODE_KEYS = {"id", "kind", "address"}
_CHANNEL_KEYS = {"id", "from", "to", "delay_ms", "datarate_bps"}
_IFACE_KEYS = {"id", "node", "dst", "peer", "bind"}
_TOPO_KEYS = {"nodes", "channels", "interfaces", "routes", "processing_delay_ms"}


def _number(value, what: str, errors: list[str]) -> Optional[float]:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{what}: expected a number, got {value!r}")
        return None
    return value


def build_topology(config: Union[str, dict]) -> Topology:
    """Build a topology from a preset name or a definition dict.

    All problems are collected and raised together as a ``TopologyError``.
    """
    if isinstance(config, str):
        if config not in PRESETS:
            raise TopologyError([f"unknown topology preset {config!r} (known: {', '.join(PRESETS)})"])
        t = PRESETS[config]()
        t.name = config
        return t
    if not isinstance(config, dict):
        raise TopologyError([f"topology must be a mapping or preset name, got {type(config).__name__}"])

    errors: list[str] = []
    for k in sorted(set(config) - _TOPO_KEYS):
        errors.append(f"topology: unknown key {k!r}")
    t = Topology()

    for i, raw in enumerate(config.get("nodes") or []):
        if not isinstance(raw, dict) or set(raw) - _NODE_KEYS or not _NODE_KEYS <= set(raw):
            errors.append(f"nodes[{i}]: expected keys {sorted(_NODE_KEYS)}, got {raw!r}")
            continue
        if raw["id"] in t.nodes:
            errors.append(f"nodes[{i}]: duplicate id {raw['id']!r}")
        t.nodes[raw["id"]] = Node(str(raw["id"]), str(raw["kind"]), str(raw["address"]))

    for i, raw in enumerate(config.get("channels") or []):
        if not isinstance(raw, dict) or set(raw) - _CHANNEL_KEYS or not {"id", "from", "to", "datarate_bps"} <= set(raw):
            errors.append(f"channels[{i}]: expected keys {sorted(_CHANNEL_KEYS)}, got {raw!r}")
            continue
        delay = _number(raw.get("delay_ms", 0), f"channels[{i}].delay_ms", errors)
        rate = _number(raw["datarate_bps"], f"channels[{i}].datarate_bps", errors)
        if delay is None or rate is None:
            continue
        if delay < 0:
            errors.append(f"channels[{i}] ({raw['id']}): delay_ms must be >= 0, got {delay}")
            continue
        if rate <= 0:
            errors.append(f"channels[{i}] ({raw['id']}): datarate_bps must be > 0, got {rate}")
            continue
        if raw["id"] in t.channels:
            errors.append(f"channels[{i}]: duplicate id {raw['id']!r}")
        t.channels[raw["id"]] = Channel(raw["id"], raw["from"], raw["to"],
                                        ChannelParams(round(delay * NS_PER_MS), int(rate)))

    for i, raw in enumerate(config.get("interfaces") or []):
        if not isinstance(raw, dict) or set(raw) - _IFACE_KEYS or not {"id", "node", "dst", "peer"} <= set(raw):
            errors.append(f"interfaces[{i}]: expected keys {sorted(_IFACE_KEYS)}, got {raw!r}")
            continue
        t.interfaces[raw["id"]] = ExternalInterface(raw["id"], raw["node"], str(raw["dst"]),
                                                    str(raw["peer"]), raw.get("bind"))

    routes = config.get("routes") or {}
    if not isinstance(routes, dict):
        errors.append("routes: expected a mapping of node -> {destination: channel-or-interface}")
    else:
        t.routes = {str(k): {str(d): str(o) for d, o in (v or {}).items()} for k, v in routes.items()}

    pd = _number(config.get("processing_delay_ms", 0), "processing_delay_ms", errors)
    if pd is not None:
        t.processing_delay = round(pd * NS_PER_MS)

    errors.extend(t.validate())
    if errors:
        raise TopologyError(errors)
    return t


def _local_host() -> Topology:
    host = Node("host", HOST, "10.1.1.1")
    return Topology(
        nodes={"host": host},
        interfaces={"ext0": ExternalInterface("ext0", "host", dst="10.1.1.1", peer="10.1.1.254")},
        routes={"host": {"10.1.1.254": "ext0"}},
    )


def _emulated_link() -> Topology:
    link = ChannelParams(delay=10 * NS_PER_MS, datarate=GBPS)
    stub = ChannelParams(delay=0, datarate=GBPS)
    nodes = [Node("A", ROUTER, "10.0.0.1"), Node("B", ROUTER, "10.0.0.2"), Node("H3", ECHO, "10.2.2.2")]
    channels = [
        Channel("A-B", "A", "B", link),
        Channel("B-A", "B", "A", link),
        Channel("B-H3", "B", "H3", stub),
        Channel("H3-B", "H3", "B", stub),
    ]
    return Topology(
        nodes={n.id: n for n in nodes},
        channels={c.id: c for c in channels},
        interfaces={"ext0": ExternalInterface("ext0", "A", dst="10.2.2.2", peer="10.1.1.2")},
        routes={
            "A": {"10.2.2.2": "A-B", "10.1.1.2": "ext0"},
            "B": {"10.2.2.2": "B-H3", "10.1.1.2": "B-A"},
            "H3": {"10.1.1.2": "H3-B"},
        },
    )


PRESETS = {"local-host": _local_host, "emulated-link": _emulated_link}


# -- behaviour ---------------------------------------------------------------

def echo_respond(packet: Packet) -> Packet:
    """Echo reply: same payload (so same seq and sender timestamp), endpoints swapped."""
    parse_frame(packet.payload)
    return replace(packet, src=packet.dst, dst=packet.src)


class RecordingSink:
    """Keeps every emitted packet with its emit wall time."""

    def __init__(self):
        self.emitted: list[tuple[int, Packet]] = []

    def emit(self, packet: Packet, wall: int) -> None:
        self.emitted.append((wall, packet))


class SocketSink:
    """Sends emitted packets as UDP datagrams.

    The destination is ``target`` if given, else the last peer seen by
    ``reply_via`` (the capture source of the same interface).
    """

    def __init__(self, target=None, reply_via=None):
        self.target = parse_address(target) if target else None
        self.reply_via = reply_via
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sent = 0
        self.unaddressed = 0

    def emit(self, packet: Packet, wall: int) -> None:
        dest = self.target or (self.reply_via.last_peer if self.reply_via is not None else None)
        if dest is None:
            self.unaddressed += 1
            return
        self.sock.sendto(packet.payload, dest)
        self.sent += 1

    def close(self) -> None:
        self.sock.close()


class Network:
    """Turns packet events into follow-up events according to the topology.

    Counters satisfy ``injected == emitted + in_flight + routing_dropped +
    malformed_dropped`` at all times.
    """

    def __init__(self, topology: Topology, kernel: Kernel, sinks: Optional[dict] = None):
        self.topology = topology
        self.kernel = kernel
        self.sinks = sinks if sinks is not None else {}
        self.injected = 0
        self.emitted = 0
        self.in_flight = 0
        self.routing_dropped = 0
        self.malformed_dropped = 0

    def on_arrival(self, node_id: str, packet: Packet, iface: str, now: int) -> list[Event]:
        topo = self.topology
        node = topo.nodes[node_id]
        ext = topo.interfaces.get(iface)
        if ext is not None:
            packet = replace(packet, src=ext.peer, dst=ext.dst)
            self.injected += 1
            self.in_flight += 1
        if packet.dst == node.address and node.kind in (HOST, ECHO):
            try:
                packet = echo_respond(packet)
            except MalformedFrame:
                self.malformed_dropped += 1
                self.in_flight -= 1
                return []
        out = topo.routes.get(node_id, {}).get(packet.dst)
        if out is None:
            self.routing_dropped += 1
            self.in_flight -= 1
            return []
        t = now + topo.processing_delay
        if out in topo.channels:
            return [self.kernel.event(t, PacketDeparture(packet, out))]
        return [self.kernel.event(t, EmitExternal(packet, out))]

    def on_departure(self, packet: Packet, channel_id: str, now: int) -> list[Event]:
        ch = self.topology.channels[channel_id]
        return [self.kernel.event(now + transit_time(packet.size, ch.params),
                                  PacketArrival(packet, ch.dst, channel_id))]

    def on_emit(self, packet: Packet, sink_id: str, wall: int) -> None:
        self.emitted += 1
        self.in_flight -= 1
        sink = self.sinks.get(sink_id)
        if sink is not None:
            sink.emit(packet, wall)

    def handle(self, event: Event, wall: int) -> list[Event]:
        """Dispatch a packet event; returns the events it causes (not yet inserted)."""
        kind = event.kind
        if isinstance(kind, PacketArrival):
            return self.on_arrival(kind.node, kind.packet, kind.iface, event.due)
        if isinstance(kind, PacketDeparture):
            return self.on_departure(kind.packet, kind.channel, event.due)
        if isinstance(kind, EmitExternal):
            self.on_emit(kind.packet, kind.sink, wall)
            return []
        raise TypeError(f"not a packet event: {event!r}")
