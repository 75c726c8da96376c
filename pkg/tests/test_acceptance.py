"""Acceptance criteria, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; a one-line verdict per
criterion is printed in the terminal summary.
"""

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from oracles import batch_flush_instants, shadow_capture
from rtemu.bench import REAL, run_ping
from rtemu.capture import TIMER_PERIODIC, Batched, Immediate, Packet, SyntheticSource, frame
from rtemu.cli import main
from rtemu.clock import VirtualClock
from rtemu.emulator import Emulator
from rtemu.kernel import NS_PER_MS, Kernel, PacketArrival, PacketDeparture, TimerFire
from rtemu.netmodel import (
    GBPS,
    ROUTER,
    Channel,
    ChannelParams,
    Network,
    Node,
    RecordingSink,
    Topology,
    build_topology,
    transit_time,
)
from rtemu.scheduler import CORRECTED, FIXED_TIMEOUT, RealTimeScheduler, SchedulerPolicy
from rtemu.stats import boxplot_stats, quantile

MS = NS_PER_MS
PROBES = 300
INTERVAL = 50 * MS  # 20 probes per second


def fmt_ms(ns):
    return f"{ns / MS:.3f} ms"


# -- 1, 2: real-clock precision ----------------------------------------------------


@pytest.mark.realtime
@pytest.mark.criterion(1, "corrected policy over emulated-link: median in [20, 22.5] ms, IQR <= 1.5 ms, no RTT < 20 ms")
def test_c1_emulated_link_precision(detail):
    r = run_ping(PROBES, INTERVAL, "emulated-link", clock=REAL,
                 policy=SchedulerPolicy(CORRECTED, 10 * MS), mode=Immediate())
    assert r.samples, "no replies"
    s = boxplot_stats(r.rtts())
    detail(f"n={s.n} lost={len(r.lost)} min={fmt_ms(s.min)} median={fmt_ms(s.median)} "
           f"iqr={fmt_ms(s.iqr)} max={fmt_ms(s.max)}")
    assert 20 * MS <= s.median <= 22.5 * MS
    assert s.iqr <= 1.5 * MS
    assert s.min >= 20 * MS


@pytest.mark.realtime
@pytest.mark.criterion(2, "corrected policy local echo: max RTT <= 2 ms")
def test_c2_local_echo_precision(detail):
    r = run_ping(PROBES, INTERVAL, "local-host", clock=REAL,
                 policy=SchedulerPolicy(CORRECTED, 10 * MS), mode=Immediate())
    assert r.samples, "no replies"
    s = boxplot_stats(r.rtts())
    detail(f"n={s.n} lost={len(r.lost)} median={fmt_ms(s.median)} max={fmt_ms(s.max)}")
    assert s.max <= 2 * MS


# -- 3: exact lateness of the fixed-timeout policy ---------------------------------


def lateness_of_lone_event(gap):
    clock = VirtualClock()
    s = RealTimeScheduler(Kernel(), clock, SchedulerPolicy(FIXED_TIMEOUT, 10 * MS))
    s.start()
    s.kernel.schedule(gap, TimerFire("probe"))
    s.next_dispatch()
    (rec,) = s.lateness
    return rec.lateness


@pytest.mark.criterion(3, "fixed-timeout policy: event due +3 ms runs exactly 7 ms late")
def test_c3_seven_ms_late(detail):
    late = lateness_of_lone_event(3 * MS)
    detail(f"lateness={late} ns")
    assert late == 7 * MS


@pytest.mark.criterion(3, "fixed-timeout policy: event due +3 ms runs exactly 7 ms late")
@settings(max_examples=100, derandomize=True)
@given(st.integers(1, 10 * MS - 1))
def test_c3_lateness_is_max_poll_minus_gap(gap):
    assert lateness_of_lone_event(gap) == 10 * MS - gap


# -- 4: before/after contrast ------------------------------------------------------


@pytest.mark.realtime
@pytest.mark.criterion(4, "fixed-timeout+batched spread >= 8 ms and stdev >= 2 ms; corrected+immediate spread <= 2 ms")
def test_c4_before_after_contrast(detail):
    buggy = run_ping(500, INTERVAL, "local-host", clock=REAL,
                     policy=SchedulerPolicy(FIXED_TIMEOUT, 10 * MS),
                     mode=Batched(10 * MS, 64 * 1024, TIMER_PERIODIC), jitter=True, seed=1)
    fixed = run_ping(500, INTERVAL, "local-host", clock=REAL,
                     policy=SchedulerPolicy(CORRECTED, 10 * MS), mode=Immediate(), jitter=True, seed=1)
    assert buggy.samples and fixed.samples
    b, f = boxplot_stats(buggy.rtts()), boxplot_stats(fixed.rtts())
    detail(f"buggy n={b.n} min={fmt_ms(b.min)} mean={fmt_ms(b.mean)} max={fmt_ms(b.max)} "
           f"stdev={fmt_ms(b.stdev)}; corrected n={f.n} spread={fmt_ms(f.spread)}")
    assert b.spread >= 8 * MS
    assert b.stdev >= 2 * MS
    assert f.spread <= 2 * MS


# -- 5: loss ordering under a consumer stall ---------------------------------------

BURST = 20  # packets per burst, 100 us apart
BURST_PERIOD = 25 * MS
HANDOFF = 24
STALLS = [(115 * MS, 30 * MS), (315 * MS, 60 * MS), (713 * MS + 300_000, 41 * MS)]
C5_BATCH = dict(t_batch=10 * MS, buf_cap=64 * 1024, timer="first-packet")


def burst_script(n_bursts=40, size=200):
    out = []
    for b in range(n_bursts):
        start = MS + b * BURST_PERIOD
        for i in range(BURST):
            t = start + i * 100_000
            out.append((t, frame(len(out), t, size)))
    return out


def run_stalled(script, mode, capacity, stalls, topology="local-host", check=None):
    topo = build_topology(topology)
    src = SyntheticSource(script, mode, handoff_capacity=capacity, name="ext0")
    sink = RecordingSink()
    emu = Emulator(topo, VirtualClock(), {"ext0": src}, {"ext0": sink}, SchedulerPolicy())
    emu.start()
    for at, d in stalls:
        emu.schedule_stall(at, d)
    end = script[-1][0] + max((a + d for a, d in stalls), default=0) + 200 * MS
    while emu.step(until=end) is not None:
        if check:
            check(emu, src)
    return emu, src, sink


@pytest.mark.criterion(5, "stall script: immediate drops >= batched drops, both > 0, both equal the shadow model")
def test_c5_loss_ordering(detail):
    script = burst_script()
    arrivals = [(t, len(p)) for t, p in script]
    # preconditions of the ordering: batches fit the queue, no batch pending when a stall begins
    flushes = batch_flush_instants(arrivals, **C5_BATCH)
    assert max(n for _, n in flushes) <= HANDOFF
    handed_over = [f for f, n in flushes for _ in range(n)]
    for s, _ in STALLS:
        assert not any(a <= s < f for (a, _), f in zip(arrivals, handed_over))

    _, imm, _ = run_stalled(script, Immediate(), HANDOFF, STALLS)
    _, bat, _ = run_stalled(script, Batched(**C5_BATCH), HANDOFF, STALLS)
    imm_oracle = shadow_capture(arrivals, HANDOFF, None, STALLS)
    bat_oracle = shadow_capture(arrivals, HANDOFF, C5_BATCH, STALLS)
    di, db = imm.stats().dropped, bat.stats().dropped
    detail(f"offered={len(script)} immediate dropped={di} (oracle {imm_oracle[1]}), "
           f"batched dropped={db} (oracle {bat_oracle[1]})")
    assert (imm.stats().delivered, di) == imm_oracle
    assert (bat.stats().delivered, db) == bat_oracle
    assert di >= db > 0


# -- 6: channel arithmetic ---------------------------------------------------------


@pytest.mark.criterion(6, "transit(100 B, 1 Gbps, 10 ms) = 10,000,800 ns; series chains match the sum oracle")
def test_c6_transit_example(detail):
    t = transit_time(100, ChannelParams(10 * MS, GBPS))
    detail(f"transit={t} ns")
    assert t == 10_000_800


@pytest.mark.criterion(6, "transit(100 B, 1 Gbps, 10 ms) = 10,000,800 ns; series chains match the sum oracle")
def test_c6_series_additivity(detail):
    rng = random.Random(606)
    for _ in range(300):
        chain = [ChannelParams(rng.randrange(0, 30 * MS), rng.choice([10**6, 10**7, 10**8, GBPS, 40 * GBPS]))
                 for _ in range(rng.randrange(1, 8))]
        size = rng.randrange(16, 9000)
        nodes = {f"n{i}": Node(f"n{i}", ROUTER, f"n{i}") for i in range(len(chain) + 1)}
        links = {f"c{i}": Channel(f"c{i}", f"n{i}", f"n{i + 1}", p) for i, p in enumerate(chain)}
        dst = f"n{len(chain)}"
        routes = {f"n{i}": {dst: f"c{i}"} for i in range(len(chain))}
        kernel = Kernel()
        net = Network(Topology(nodes, links, routes=routes), kernel)
        arrivals = []

        def handler(k, e):
            if isinstance(e.kind, PacketArrival) and e.kind.node == dst:
                arrivals.append(e.due)
            for f in net.handle(e, e.due):
                k.insert(f)

        kernel.insert(kernel.event(0, PacketDeparture(Packet(b"\0" * size, 0, 0, dst=dst), "c0")))
        kernel.run_until(10**13, handler)
        oracle = sum(Fraction(p.delay) + Fraction(8 * size * 10**9, p.datarate) for p in chain)
        per_hop_rounding = len(chain) / 2
        assert arrivals == [sum(p.delay + round(Fraction(8 * size * 10**9, p.datarate)) for p in chain)]
        assert abs(arrivals[0] - oracle) <= per_hop_rounding
    detail("300 chains exact")


# -- 7: statistics ------------------------------------------------------------------


def brute_quantile(xs, q):
    ys = sorted(xs)
    rank = Fraction(len(ys) - 1) * Fraction(q)
    i = int(rank)
    j = min(i + 1, len(ys) - 1)
    return Fraction(ys[i]) + (Fraction(ys[j]) - Fraction(ys[i])) * (rank - i)


@pytest.mark.criterion(7, "quantile and boxplot stats equal sort-based oracles on 1,000 random sets to 1 ns")
def test_c7_statistics(detail):
    rng = random.Random(707)
    worst = Fraction(0)
    for _ in range(1000):
        n = rng.randrange(1, 500)
        xs = [rng.randrange(0, 60 * MS) for _ in range(n)]
        s = boxplot_stats(xs)
        ys = sorted(xs)
        assert s.min == ys[0] and s.max == ys[-1] and s.n == n
        for got, q in ((s.q1, "1/4"), (s.median, "1/2"), (s.q3, "3/4")):
            err = abs(Fraction(got) - brute_quantile(xs, Fraction(q)))
            worst = max(worst, err)
            assert err <= 1
        q = rng.random()
        err = abs(Fraction(quantile(ys, q)) - brute_quantile(xs, q))
        worst = max(worst, err)
        assert err <= 1
        mean = Fraction(sum(xs), n)
        assert abs(Fraction(s.mean) - mean) <= 1
        var = sum((x - mean) ** 2 for x in xs) / n
        assert abs(s.stdev ** 2 - float(var)) <= 2 * s.stdev + 1
    detail(f"worst quantile error {float(worst):.2e} ns")


# -- 8: determinism ----------------------------------------------------------------


def cli_outputs(out, argv):
    # same directory both times: the text report echoes the output path
    assert main(argv + ["--out-dir", str(out)]) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.criterion(8, "test-clock runs repeated give byte-identical CSV and summary outputs")
def test_c8_determinism(tmp_path, detail, capsys):
    ping = ["bench", "ping", "--clock", "test", "--preset", "emulated-link", "--policy", "fixed-timeout",
            "--capture-mode", "batched", "--batch-timer", "periodic", "--jitter", "--seed", "8",
            "--count", "200"]
    loss = ["bench", "loss", "--clock", "test", "--capture-mode", "batched", "--handoff-capacity", "16",
            "--rate", "3000", "--size", "300", "--duration", "0.5"]
    a, b = cli_outputs(tmp_path / "ping", ping), cli_outputs(tmp_path / "ping", ping)
    c, d = cli_outputs(tmp_path / "loss", loss), cli_outputs(tmp_path / "loss", loss)
    capsys.readouterr()
    assert set(a) >= {"samples.csv", "summary.csv", "report.txt"}
    assert a == b
    assert c == d and "loss.txt" in c
    detail(f"files compared: {', '.join(sorted(a))}, loss.txt")


# -- 9: conservation stress --------------------------------------------------------


@pytest.mark.criterion(9, "10,000-packet stress: offered = delivered + dropped + buffered always; sent = echoed + lost")
def test_c9_conservation_stress(detail):
    rng = random.Random(909)
    modes = [Immediate(), Batched(10 * MS, 64 * 1024), Batched(7 * MS, 4096, TIMER_PERIODIC),
             Batched(3 * MS, 1500), Immediate()]
    topologies = ["local-host", "emulated-link", "local-host", "emulated-link", "emulated-link"]
    per_run = 2000
    totals = dict(sent=0, echoed=0, lost=0, dropped=0, checkpoints=0)
    for mode, topo in zip(modes, topologies):
        t = 0
        script = []
        for i in range(per_run):
            t += int(rng.expovariate(1 / 150_000))
            script.append((t, frame(i, t, rng.randrange(16, 1400))))
        stalls = sorted((rng.randrange(0, t), rng.randrange(1, 40 * MS)) for _ in range(rng.randrange(1, 8)))
        capacity = rng.choice([4, 16, 64, 256])

        def check(emu, src):
            st_ = src.stats()
            assert st_.offered == st_.delivered + st_.dropped + st_.buffered
            net = emu.network
            assert net.injected == net.emitted + net.in_flight + net.routing_dropped + net.malformed_dropped
            totals["checkpoints"] += 1

        emu, src, sink = run_stalled(script, mode, capacity, stalls, topo, check)
        st_ = src.stats()
        sent, echoed = len(script), len(sink.emitted)
        lost = sent - len({p.source_seq for _, p in sink.emitted})
        assert st_.offered == sent and st_.buffered == 0
        assert emu.network.in_flight == 0
        assert lost == st_.dropped
        assert sent == echoed + lost
        for k, v in (("sent", sent), ("echoed", echoed), ("lost", lost), ("dropped", st_.dropped)):
            totals[k] += v
    assert totals["sent"] == 10_000
    assert totals["dropped"] > 0
    detail(f"sent={totals['sent']} echoed={totals['echoed']} lost={totals['lost']} "
           f"checkpoints={totals['checkpoints']}")
