"""Run configuration: a YAML document, validated in full before anything runs.

Durations are written in milliseconds (``*_ms`` keys) and held internally as
integer nanoseconds. Every default lives in ``DEFAULTS``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import yaml

from .capture import TIMER_FIRST_PACKET, TIMER_PERIODIC, Batched, CaptureMode, Immediate
from .kernel import NS_PER_MS, NS_PER_S
from .netmodel import Topology, TopologyError, build_topology
from .scheduler import POLICIES, SchedulerPolicy

DEFAULTS: dict[str, dict[str, Any]] = {
    "topology": {"preset": "local-host"},
    "scheduler": {"policy": "corrected", "max_poll_ms": 10},
    "capture": {
        "mode": "immediate",
        "t_batch_ms": 10,
        "buf_cap": 65536,
        "handoff_capacity": 256,
        "batch_timer": TIMER_FIRST_PACKET,
        "bind": "127.0.0.1:0",
    },
    "clock": {"kind": "real", "script": None},
    "bench": {
        "count": 100,
        "interval_ms": 50,
        "timeout_ms": 1000,
        "size": 64,
        "jitter": False,
        "seed": 0,
        "rate_pps": 125,
        "duration_s": 10,
        "stalls_ms": [],
    },
    "output": {
        "dir": ".",
        "samples": "samples.csv",
        "summary": "summary.csv",
        "report": "report.txt",
        "loss": "loss.txt",
    },
}

CLOCK_KINDS = ("real", "test")
CAPTURE_MODES = ("immediate", "batched")

_RANGES = {
    ("scheduler", "max_poll_ms"): (0, None, False),
    ("capture", "t_batch_ms"): (0, None, False),
    ("capture", "buf_cap"): (1, None, True),
    ("capture", "handoff_capacity"): (1, None, True),
    ("bench", "count"): (1, None, True),
    ("bench", "interval_ms"): (0, None, False),
    ("bench", "timeout_ms"): (0, None, False),
    ("bench", "size"): (16, 65507, True),
    ("bench", "rate_pps"): (0, None, False),
    ("bench", "duration_s"): (0, None, False),
}
_INTEGER = {("capture", "buf_cap"), ("capture", "handoff_capacity"), ("bench", "count"),
            ("bench", "size"), ("bench", "seed")}


class ConfigError(ValueError):
    """Raised with every problem found, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    topology: Any = "local-host"
    policy: str = "corrected"
    max_poll: int = 10 * NS_PER_MS
    capture_mode: str = "immediate"
    t_batch: int = 10 * NS_PER_MS
    buf_cap: int = 65536
    handoff_capacity: int = 256
    batch_timer: str = TIMER_FIRST_PACKET
    bind: str = "127.0.0.1:0"
    clock: str = "real"
    script: Optional[str] = None
    count: int = 100
    interval: int = 50 * NS_PER_MS
    timeout: int = 1000 * NS_PER_MS
    size: int = 64
    jitter: bool = False
    seed: int = 0
    rate_pps: float = 125
    duration: int = 10 * NS_PER_S
    stalls: tuple = ()
    out_dir: str = "."
    samples: str = "samples.csv"
    summary: str = "summary.csv"
    report: str = "report.txt"
    loss: str = "loss.txt"

    def scheduler_policy(self) -> SchedulerPolicy:
        return SchedulerPolicy(self.policy, self.max_poll)

    def mode(self) -> CaptureMode:
        if self.capture_mode == "immediate":
            return Immediate()
        return Batched(self.t_batch, self.buf_cap, self.batch_timer)

    def build_topology(self) -> Topology:
        if isinstance(self.topology, dict) and "preset" in self.topology:
            t = build_topology(self.topology["preset"])
            if "processing_delay_ms" in self.topology:
                t.processing_delay = round(self.topology["processing_delay_ms"] * NS_PER_MS)
            return t
        return build_topology(self.topology)

    def output_path(self, name: str) -> Path:
        return Path(self.out_dir) / getattr(self, name)

    def echo(self) -> dict:
        """Flat view of the settings for report headers."""
        d = to_document(self)
        return {f"{sec}.{k}": v for sec, body in d.items() if sec != "topology" for k, v in body.items()} | {
            "topology": d["topology"] if isinstance(d["topology"], str) else yaml.safe_dump(
                d["topology"], default_flow_style=True, sort_keys=False).strip()
        }


def _ms(ns: int):
    v = ns / NS_PER_MS
    return int(v) if v == int(v) else v


def _seconds(ns: int):
    v = ns / NS_PER_S
    return int(v) if v == int(v) else v


def to_document(cfg: RunConfig) -> dict:
    topo = cfg.topology
    if isinstance(topo, str):
        topo = {"preset": topo}
    return {
        "topology": copy.deepcopy(topo),
        "scheduler": {"policy": cfg.policy, "max_poll_ms": _ms(cfg.max_poll)},
        "capture": {"mode": cfg.capture_mode, "t_batch_ms": _ms(cfg.t_batch), "buf_cap": cfg.buf_cap,
                    "handoff_capacity": cfg.handoff_capacity, "batch_timer": cfg.batch_timer,
                    "bind": cfg.bind},
        "clock": {"kind": cfg.clock, "script": cfg.script},
        "bench": {"count": cfg.count, "interval_ms": _ms(cfg.interval), "timeout_ms": _ms(cfg.timeout),
                  "size": cfg.size, "jitter": cfg.jitter, "seed": cfg.seed, "rate_pps": cfg.rate_pps,
                  "duration_s": _seconds(cfg.duration),
                  "stalls_ms": [[_ms(a), _ms(d)] for a, d in cfg.stalls]},
        "output": {"dir": cfg.out_dir, "samples": cfg.samples, "summary": cfg.summary,
                   "report": cfg.report, "loss": cfg.loss},
    }


def render_config(cfg: RunConfig = RunConfig()) -> str:
    return yaml.safe_dump(to_document(cfg), sort_keys=False, default_flow_style=False)


def _check_number(sec, key, value, errors) -> bool:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{sec}.{key}: expected a number, got {value!r}")
        return False
    if (sec, key) in _INTEGER and not isinstance(value, int):
        errors.append(f"{sec}.{key}: expected an integer, got {value!r}")
        return False
    lo, hi, inclusive = _RANGES.get((sec, key), (None, None, True))
    if lo is not None and (value < lo if inclusive else value <= lo):
        errors.append(f"{sec}.{key}: must be {'>=' if inclusive else '>'} {lo}, got {value}")
        return False
    if hi is not None and value > hi:
        errors.append(f"{sec}.{key}: must be <= {hi}, got {value}")
        return False
    return True


def _choice(sec, key, value, allowed, errors) -> None:
    if value not in allowed:
        errors.append(f"{sec}.{key}: must be one of {', '.join(allowed)}, got {value!r}")


def parse_config(text: str, base_dir: Union[str, Path, None] = None) -> RunConfig:
    """Parse and validate a YAML run configuration; missing keys take their defaults.

    Relative ``clock.script`` paths resolve against ``base_dir``.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else "?"
        raise ConfigError([f"syntax error at line {line}: {exc.problem}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"syntax error: {exc}"]) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(["configuration must be a mapping of sections"])

    errors: list[str] = []
    merged = copy.deepcopy(DEFAULTS)
    for sec, body in doc.items():
        if sec not in DEFAULTS:
            errors.append(f"unknown section {sec!r}")
            continue
        if sec == "topology":
            if isinstance(body, str):
                body = {"preset": body}
            if not isinstance(body, dict):
                errors.append("topology: expected a preset name or a mapping")
                continue
            merged["topology"] = body
            continue
        if body is None:
            continue
        if not isinstance(body, dict):
            errors.append(f"{sec}: expected a mapping, got {type(body).__name__}")
            continue
        for key, value in body.items():
            if key not in DEFAULTS[sec]:
                errors.append(f"{sec}: unknown key {key!r}")
            else:
                merged[sec][key] = value

    for (sec, key) in _RANGES:
        _check_number(sec, key, merged[sec][key], errors)
    if not isinstance(merged["bench"]["seed"], int) or isinstance(merged["bench"]["seed"], bool):
        errors.append(f"bench.seed: expected an integer, got {merged['bench']['seed']!r}")
    if not isinstance(merged["bench"]["jitter"], bool):
        errors.append(f"bench.jitter: expected true/false, got {merged['bench']['jitter']!r}")
    _choice("scheduler", "policy", merged["scheduler"]["policy"], POLICIES, errors)
    _choice("capture", "mode", merged["capture"]["mode"], CAPTURE_MODES, errors)
    _choice("capture", "batch_timer", merged["capture"]["batch_timer"],
            (TIMER_FIRST_PACKET, TIMER_PERIODIC), errors)
    _choice("clock", "kind", merged["clock"]["kind"], CLOCK_KINDS, errors)
    for key in ("bind",):
        if not isinstance(merged["capture"][key], str) or ":" not in merged["capture"][key]:
            errors.append(f"capture.{key}: expected HOST:PORT, got {merged['capture'][key]!r}")
    for key, value in merged["output"].items():
        if not isinstance(value, str) or not value:
            errors.append(f"output.{key}: expected a non-empty path, got {value!r}")

    stalls = []
    raw_stalls = merged["bench"]["stalls_ms"]
    if not isinstance(raw_stalls, list):
        errors.append("bench.stalls_ms: expected a list of [start_ms, duration_ms] pairs")
    else:
        for i, pair in enumerate(raw_stalls):
            if (not isinstance(pair, list) or len(pair) != 2
                    or any(isinstance(x, bool) or not isinstance(x, (int, float)) or x < 0 for x in pair)):
                errors.append(f"bench.stalls_ms[{i}]: expected [start_ms, duration_ms] >= 0, got {pair!r}")
            else:
                stalls.append((round(pair[0] * NS_PER_MS), round(pair[1] * NS_PER_MS)))

    script = merged["clock"]["script"]
    if merged["clock"]["kind"] == "test" and script is not None:
        if not isinstance(script, str):
            errors.append(f"clock.script: expected a path, got {script!r}")
        else:
            p = Path(script)
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            if not p.is_file():
                errors.append(f"clock.script: file not found: {p}")
            else:
                script = str(p)
    elif script is not None and merged["clock"]["kind"] == "real":
        errors.append("clock.script: only valid with clock.kind = test")

    topo_raw = merged["topology"]
    topology: Any = topo_raw
    if "preset" in topo_raw:
        extra = set(topo_raw) - {"preset", "processing_delay_ms"}
        for k in sorted(extra):
            errors.append(f"topology: key {k!r} cannot be combined with a preset")
        try:
            build_topology(str(topo_raw["preset"]))
        except TopologyError as exc:
            errors.extend(exc.errors)
        pd = topo_raw.get("processing_delay_ms", 0)
        if isinstance(pd, bool) or not isinstance(pd, (int, float)) or pd < 0:
            errors.append(f"topology.processing_delay_ms: must be a number >= 0, got {pd!r}")
        if set(topo_raw) == {"preset"}:
            topology = str(topo_raw["preset"])
    else:
        try:
            build_topology(topo_raw)
        except TopologyError as exc:
            errors.extend(exc.errors)

    if errors:
        raise ConfigError(errors)

    s, c, b, o = merged["scheduler"], merged["capture"], merged["bench"], merged["output"]
    return RunConfig(
        topology=topology,
        policy=s["policy"],
        max_poll=round(s["max_poll_ms"] * NS_PER_MS),
        capture_mode=c["mode"],
        t_batch=round(c["t_batch_ms"] * NS_PER_MS),
        buf_cap=c["buf_cap"],
        handoff_capacity=c["handoff_capacity"],
        batch_timer=c["batch_timer"],
        bind=c["bind"],
        clock=merged["clock"]["kind"],
        script=script,
        count=b["count"],
        interval=round(b["interval_ms"] * NS_PER_MS),
        timeout=round(b["timeout_ms"] * NS_PER_MS),
        size=b["size"],
        jitter=b["jitter"],
        seed=b["seed"],
        rate_pps=b["rate_pps"],
        duration=round(b["duration_s"] * NS_PER_S),
        stalls=tuple(stalls),
        out_dir=o["dir"],
        samples=o["samples"],
        summary=o["summary"],
        report=o["report"],
        loss=o["loss"],
    )


def load_config(path: Union[str, Path]) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config file {p}: {exc.strerror or exc}"]) from exc
    return parse_config(text, base_dir=p.parent)
