"""Command-line entry points.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
Set ``RTEMU_LOG`` (debug, info, warning, error) for log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import yaml

from . import bench
from .capture import HEADER_SIZE, SocketSource, SyntheticSource, frame
from .clock import RealClock, VirtualClock
from .config import ConfigError, RunConfig, load_config, parse_config, to_document
from .emulator import Emulator
from .kernel import NS_PER_MS, NS_PER_S
from .netmodel import RecordingSink, SocketSink, TopologyError
from .scheduler import lateness_summary
from .stats import EmptySampleError, boxplot_stats

log = logging.getLogger("rtemu")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# flag name -> (section, key)
_OVERRIDES = {
    "preset": ("topology", "preset"),
    "policy": ("scheduler", "policy"),
    "max_poll_ms": ("scheduler", "max_poll_ms"),
    "capture_mode": ("capture", "mode"),
    "t_batch_ms": ("capture", "t_batch_ms"),
    "buf_cap": ("capture", "buf_cap"),
    "handoff_capacity": ("capture", "handoff_capacity"),
    "batch_timer": ("capture", "batch_timer"),
    "bind": ("capture", "bind"),
    "clock": ("clock", "kind"),
    "script": ("clock", "script"),
    "count": ("bench", "count"),
    "interval": ("bench", "interval_ms"),
    "timeout_ms": ("bench", "timeout_ms"),
    "size": ("bench", "size"),
    "jitter": ("bench", "jitter"),
    "seed": ("bench", "seed"),
    "rate": ("bench", "rate_pps"),
    "duration": ("bench", "duration_s"),
    "out_dir": ("output", "dir"),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration (defaults if omitted)")
    g = p.add_argument_group("overrides (flags win over the config file)")
    g.add_argument("--preset", choices=["local-host", "emulated-link"])
    g.add_argument("--policy", choices=["corrected", "fixed-timeout"])
    g.add_argument("--max-poll-ms", type=float)
    g.add_argument("--capture-mode", choices=["immediate", "batched"])
    g.add_argument("--t-batch-ms", type=float)
    g.add_argument("--buf-cap", type=int)
    g.add_argument("--handoff-capacity", type=int)
    g.add_argument("--batch-timer", choices=["first-packet", "periodic"])
    g.add_argument("--bind", help="HOST:PORT for the capture socket")
    g.add_argument("--clock", choices=["real", "test"])
    g.add_argument("--script", help="arrival script for the test clock (CSV time_ns,size[,iface])")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rtemu", description="Soft real-time network emulation and RTT/loss benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("emulate", help="run the emulator on a topology")
    _add_common(p)
    p.add_argument("--duration", type=float, help="seconds to run (default bench.duration_s)")

    b = sub.add_parser("bench", help="run a benchmark")
    bsub = b.add_subparsers(dest="bench", required=True, parser_class=_Parser)
    ping = bsub.add_parser("ping", help="echo RTT measurement")
    _add_common(ping)
    ping.add_argument("--count", type=int)
    ping.add_argument("--interval", type=float, help="probe interval in ms")
    ping.add_argument("--timeout-ms", type=float)
    ping.add_argument("--size", type=int, help="datagram size in bytes (>= 16)")
    ping.add_argument("--jitter", action=argparse.BooleanOptionalAction, default=None,
                      help="randomize each probe's send phase within its interval")
    loss = bsub.add_parser("loss", help="capture loss under constant-rate load")
    _add_common(loss)
    loss.add_argument("--rate", type=float, help="packets per second")
    loss.add_argument("--size", type=int, help="datagram size in bytes (>= 16)")
    loss.add_argument("--duration", type=float, help="seconds of offered traffic")

    r = sub.add_parser("report", help="summarize a samples CSV")
    r.add_argument("--input", required=True)
    r.add_argument("--format", choices=["csv", "text"], default="text")
    r.add_argument("--output", help="write here instead of stdout")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    doc = to_document(cfg)
    changed = False
    for flag, (sec, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if sec == "topology":
            doc["topology"] = {"preset": value}
        else:
            doc[sec][key] = value
        changed = True
    if changed:
        cfg = parse_config(yaml.safe_dump(doc, sort_keys=False), base_dir=Path.cwd())
    return cfg


def read_script(path, topology) -> dict[str, list[tuple[int, bytes]]]:
    """Arrival script CSV: ``time_ns,size[,iface]``. Payloads are framed with seq = row number.

    Rows shorter than the frame header become zero-filled datagrams of that
    size, which the model counts as malformed.
    """
    ifaces = list(topology.interfaces)
    scripts: dict[str, list] = {i: [] for i in ifaces}
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    if rows and rows[0][0].strip() == "time_ns":
        rows = rows[1:]
    for seq, row in enumerate(rows):
        t, size = int(row[0]), int(row[1])
        if t < 0 or size < 0:
            raise ConfigError([f"{path}: row {seq + 1}: time and size must be >= 0"])
        iface = row[2].strip() if len(row) > 2 else ifaces[0]
        if iface not in scripts:
            raise ConfigError([f"{path}: row {seq + 1}: unknown interface {iface!r}"])
        payload = frame(seq, t, size) if size >= HEADER_SIZE else bytes(size)
        scripts[iface].append((t, payload))
    return scripts


def cmd_emulate(cfg: RunConfig, duration_s: Optional[float] = None) -> int:
    topo = cfg.build_topology()
    duration = round(duration_s * NS_PER_S) if duration_s is not None else cfg.duration
    if cfg.clock == "test":
        if cfg.script is None:
            raise ConfigError(["emulate with clock.kind = test needs clock.script"])
        scripts = read_script(cfg.script, topo)
        clock = VirtualClock()
        sources = {i: SyntheticSource(s, cfg.mode(), handoff_capacity=cfg.handoff_capacity, name=i)
                   for i, s in scripts.items()}
        sinks = {i: RecordingSink() for i in topo.interfaces}
        last = max((s[-1][0] for s in scripts.values() if s), default=0)
        duration = max(duration, last + NS_PER_S)
    else:
        clock = RealClock()
        sources = {}
        for n, (i, itf) in enumerate(topo.interfaces.items()):
            bind = itf.bind or (cfg.bind if n == 0 else "127.0.0.1:0")
            sources[i] = SocketSource(bind, cfg.mode(), handoff_capacity=cfg.handoff_capacity, name=i)
        sinks = {i: SocketSink(reply_via=sources[i]) for i in topo.interfaces}
    emu = Emulator(topo, clock, sources, sinks, cfg.scheduler_policy())
    try:
        for i, s in sources.items():
            if isinstance(s, SocketSource):
                print(f"{i}: listening on {s.address[0]}:{s.address[1]}", file=sys.stderr)
                s.start()
        emu.start()
        for at, dur in cfg.stalls:
            emu.schedule_stall(at, dur)
        try:
            emu.run_for(duration)
        except KeyboardInterrupt:
            print("interrupted", file=sys.stderr)
    finally:
        for s in sources.values():
            s.close()
        for s in sinks.values():
            if isinstance(s, SocketSink):
                s.close()
    net = emu.network
    late = lateness_summary(emu.scheduler.lateness)
    lines = [
        f"dispatched: {emu.dispatched}",
        f"injected: {net.injected}",
        f"emitted: {net.emitted}",
        f"in_flight: {net.in_flight}",
        f"routing_dropped: {net.routing_dropped}",
        f"malformed_dropped: {net.malformed_dropped}",
        f"lateness_max_ns: {late.max}",
        f"lateness_mean_ns: {late.mean:.1f}",
        f"lateness_p99_ns: {late.p99:.1f}",
    ]
    for i, s in sources.items():
        st = s.stats()
        lines.append(f"capture[{i}]: offered={st.offered} delivered={st.delivered} "
                     f"dropped={st.dropped} buffered={st.buffered}")
    text = "\n".join(lines) + "\n"
    _write(cfg.output_path("report"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench_ping(cfg: RunConfig, count: Optional[int] = None, interval_ms: Optional[float] = None) -> int:
    count = count if count is not None else cfg.count
    interval = round(interval_ms * NS_PER_MS) if interval_ms is not None else cfg.interval
    result = bench.run_ping(
        count, interval, cfg.build_topology(), cfg.timeout,
        clock=bench.VIRTUAL if cfg.clock == "test" else bench.REAL,
        policy=cfg.scheduler_policy(), mode=cfg.mode(), handoff_capacity=cfg.handoff_capacity,
        size=cfg.size, jitter=cfg.jitter, seed=cfg.seed, bind=cfg.bind,
    )
    bench.write_samples_csv(_prepare(cfg.output_path("samples")), result.samples)
    stats = bench.ping_summary(result)
    bench.write_summary_csv(cfg.output_path("summary"), stats)
    extra = {"sent": result.sent, "lost": len(result.lost), "duplicates": result.duplicates}
    report = bench.render_text_report(stats, cfg.echo(), extra)
    _write(cfg.output_path("report"), report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_bench_loss(cfg: RunConfig, rate: Optional[float] = None, size: Optional[int] = None,
                   duration_s: Optional[float] = None) -> int:
    rep = bench.run_loss_test(
        rate if rate is not None else cfg.rate_pps,
        size if size is not None else cfg.size,
        round(duration_s * NS_PER_S) if duration_s is not None else cfg.duration,
        cfg.mode(),
        clock=bench.VIRTUAL if cfg.clock == "test" else bench.REAL,
        stalls=cfg.stalls, target=cfg.build_topology(), policy=cfg.scheduler_policy(),
        handoff_capacity=cfg.handoff_capacity, bind=cfg.bind,
    )
    text = bench.render_loss_report(rep)
    _write(cfg.output_path("loss"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(input_path: str, fmt: str, output: Optional[str] = None) -> int:
    samples = bench.read_samples_csv(input_path)
    if not samples:
        raise EmptySampleError("empty sample set")
    stats = boxplot_stats([s.rtt for s in samples])
    if fmt == "csv":
        text = ",".join(bench.SUMMARY_HEADER) + "\n" + ",".join(map(str, bench.summary_row(stats))) + "\n"
    else:
        text = bench.render_text_report(stats)
    if output:
        _write(output, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write(path, text: str) -> None:
    _prepare(Path(path)).write_text(text)


def _setup_logging() -> None:
    level = os.environ.get("RTEMU_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.input, args.format, args.output)
        cfg = _resolve_config(args)
        if args.command == "emulate":
            return cmd_emulate(cfg, args.duration)
        if args.bench == "ping":
            return cmd_bench_ping(cfg)
        return cmd_bench_loss(cfg)
    except (ConfigError, TopologyError) as exc:
        for line in getattr(exc, "errors", [str(exc)]):
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # every other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
