import random

import pytest

from oracles import shadow_capture
from rtemu.bench import (
    BenchError,
    PingResult,
    RttSample,
    loss_script,
    match_replies,
    ping_summary,
    read_samples_csv,
    run_loss_test,
    run_ping,
    send_schedule,
    write_samples_csv,
    write_summary_csv,
)
from rtemu.capture import Batched, Immediate, TIMER_PERIODIC, frame
from rtemu.kernel import NS_PER_MS, NS_PER_S
from rtemu.scheduler import FIXED_TIMEOUT, SchedulerPolicy
from rtemu.stats import boxplot_stats

MS = NS_PER_MS


class TestMatchReplies:
    def test_pairs_by_seq_and_uses_local_send_time(self):
        sent = {0: 100, 1: 200}
        r = match_replies(sent, [(350, frame(1, 999)), (120, frame(0, 5))], timeout=MS)
        assert [(s.seq, s.rtt) for s in r.samples] == [(0, 20), (1, 150)]
        assert r.lost == []

    def test_duplicate_counted_once(self):
        r = match_replies({0: 0}, [(10, frame(0, 0)), (12, frame(0, 0))], timeout=MS)
        assert len(r.samples) == 1 and r.samples[0].rtt == 10
        assert r.duplicates == 1

    def test_late_reply_is_lost(self):
        r = match_replies({0: 0, 1: 0}, [(2 * MS, frame(0, 0))], timeout=MS)
        assert r.samples == [] and r.lost == [0, 1] and r.late == 1

    def test_strays(self):
        r = match_replies({0: 0}, [(1, b"junk"), (2, frame(7, 0))], timeout=MS)
        assert r.stray == 2 and r.lost == [0]


def test_send_schedule():
    assert send_schedule(3, 50 * MS, start=7) == [7, 50 * MS + 7, 100 * MS + 7]
    j = send_schedule(200, 50 * MS, jitter=True, seed=4)
    assert all(i * 50 * MS <= t < (i + 1) * 50 * MS for i, t in enumerate(j))
    assert j == send_schedule(200, 50 * MS, jitter=True, seed=4)
    assert len(set(t % (50 * MS) for t in j)) > 150
    with pytest.raises(ValueError):
        send_schedule(0, MS)


class TestVirtualPing:
    def test_local_host_echo_is_instant(self):
        r = run_ping(20, 50 * MS, "local-host")
        assert r.rtts() == [0] * 20 and r.lost == []

    def test_emulated_link_matches_hand_oracle(self):
        size = 64
        r = run_ping(100, 50 * MS, "emulated-link", size=size)
        # two 10 ms / 1 Gbps hops plus two zero-delay 1 Gbps stubs, each way once
        oracle = 2 * (10 * MS + 8 * size) + 2 * 8 * size
        assert r.rtts() == [oracle] * 100
        assert oracle == 20_002_048

    def test_fixed_timeout_is_never_early(self):
        r = run_ping(50, 50 * MS, "emulated-link", policy=SchedulerPolicy(FIXED_TIMEOUT), jitter=True, seed=3)
        assert len(r.samples) == 50
        assert min(r.rtts()) >= 20_002_048
        assert max(r.rtts()) <= 20_002_048 + 10 * MS * 4

    def test_batched_rtt_bounded_by_batch_timer(self):
        r = run_ping(100, 50 * MS, "local-host", mode=Batched(timer=TIMER_PERIODIC), jitter=True, seed=9)
        assert all(0 < x <= 10 * MS for x in r.rtts())

    def test_deterministic(self):
        kw = dict(policy=SchedulerPolicy(FIXED_TIMEOUT), mode=Batched(timer=TIMER_PERIODIC), jitter=True, seed=2)
        a = run_ping(60, 50 * MS, "emulated-link", **kw)
        b = run_ping(60, 50 * MS, "emulated-link", **kw)
        assert a.samples == b.samples

    def test_probe_too_small(self):
        with pytest.raises(ValueError):
            run_ping(1, MS, size=8)


class TestLoss:
    def test_script(self):
        s = loss_script(1000, 100, NS_PER_S // 10)
        assert len(s) == 100
        assert [t for t, _ in s[:3]] == [0, MS, 2 * MS]
        assert all(len(p) == 100 for _, p in s)

    def test_light_load_loses_nothing(self):
        rep = run_loss_test(125, 1250, NS_PER_S, Immediate())
        assert rep.sent == 125 and rep.echoed == 125 and rep.lost == 0
        assert rep.capture_loss.value == 0

    @pytest.mark.parametrize("mode", [None, dict(t_batch=10 * MS, buf_cap=64 * 1024, timer="first-packet"),
                                      dict(t_batch=10 * MS, buf_cap=64 * 1024, timer=TIMER_PERIODIC)])
    def test_stalled_consumer_matches_shadow_model(self, mode):
        rate, size, dur = 5000, 200, NS_PER_S // 2
        stalls = [(103 * MS + 100_000, 57 * MS), (301 * MS + 100_000, 23 * MS)]
        cap = 64
        rep = run_loss_test(rate, size, dur, Batched(**mode) if mode else Immediate(),
                            stalls=stalls, handoff_capacity=cap)
        arrivals = [(t, len(p)) for t, p in loss_script(rate, size, dur)]
        delivered, dropped = shadow_capture(arrivals, cap, batched=mode, stalls=stalls)
        assert rep.capture.dropped == dropped > 0
        assert rep.capture.delivered == delivered
        assert rep.sent == rep.echoed + rep.lost
        assert rep.lost == dropped

    def test_invalid(self):
        with pytest.raises(ValueError):
            run_loss_test(0, 100, NS_PER_S)
        with pytest.raises(ValueError):
            run_loss_test(10, 4, NS_PER_S)


class TestReports:
    def test_csv_round_trip(self, tmp_path):
        rng = random.Random(6)
        samples = [RttSample(i, s, s + rng.randrange(0, 30 * MS))
                   for i, s in enumerate(sorted(rng.randrange(0, 10**12) for _ in range(200)))]
        p = tmp_path / "s.csv"
        write_samples_csv(p, samples)
        assert read_samples_csv(p) == samples

    def test_csv_rejects_bad_rtt(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("seq,send_ns,recv_ns,rtt_ns\n0,10,30,5\n")
        with pytest.raises(ValueError, match="rtt_ns"):
            read_samples_csv(p)

    def test_csv_rejects_bad_header(self, tmp_path):
        p = tmp_path / "s.csv"
        p.write_text("a,b\n")
        with pytest.raises(ValueError, match="header"):
            read_samples_csv(p)

    def test_summary_csv(self, tmp_path):
        p = tmp_path / "sum.csv"
        write_summary_csv(p, boxplot_stats([1, 2, 3, 4]))
        assert p.read_text() == "n,min_ns,q1_ns,median_ns,q3_ns,max_ns,mean_ns,stdev_ns\n4,1,2,2,3,4,2,1\n"

    def test_empty_summary(self):
        with pytest.raises(BenchError, match="empty sample set"):
            ping_summary(PingResult(3, [], [0, 1, 2]))
