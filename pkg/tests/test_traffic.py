"""Codec table consistency, arrival/duration sampling, call and stream pacing."""

import math
from types import SimpleNamespace

import pytest

from voipsim.simcore import US_PER_S, Simulator, exp_sample, seconds
from voipsim.traffic import (
    CODECS,
    DIR_FORWARD,
    DIR_REVERSE,
    IP_UDP_RTP_OVERHEAD_BYTES,
    PENDING,
    Call,
    CallProcess,
    CallScheduler,
    CodecProfile,
)


def test_codec_table_is_internally_consistent():
    for key, codec in CODECS.items():
        assert codec.payload_bytes * 8 * US_PER_S == codec.bitrate_bps * codec.frame_interval_us
        assert codec.ie >= 0
        assert codec.bpl > 0
        assert codec.codec_delay_us >= 0


def test_default_codec_framing():
    g711 = CODECS["g711"]
    assert g711.bitrate_bps == 64_000
    assert g711.frame_interval_us == 20_000
    assert g711.payload_bytes == 160
    assert g711.ie == 0.0
    assert g711.bpl == 4.3
    assert g711.packet_size_bytes == 160 + IP_UDP_RTP_OVERHEAD_BYTES


def test_codec_rejects_inconsistent_framing():
    with pytest.raises(ValueError):
        CodecProfile(name="broken", bitrate_bps=64_000, frame_interval_us=20_000,
                     payload_bytes=100, ie=0, bpl=4.3,
                     encode_delay_us=0, decode_delay_us=0)


def test_codec_rejects_negative_impairment():
    with pytest.raises(ValueError):
        CodecProfile(name="broken", bitrate_bps=8_000, frame_interval_us=20_000,
                     payload_bytes=20, ie=-1, bpl=19,
                     encode_delay_us=0, decode_delay_us=0)


def test_call_packet_budget():
    codec = CODECS["g711"]
    call = Call(0, "a", "b", t_established=0, duration=seconds(180), codec=codec)
    assert call.streams[DIR_FORWARD].n_packets == 9_000
    assert call.streams[DIR_REVERSE].n_packets == 9_000


def test_zero_duration_call_has_no_packets():
    call = Call(0, "a", "b", t_established=0, duration=0, codec=CODECS["g711"])
    assert call.streams[0].n_packets == 0


def test_stream_send_times_follow_frame_interval():
    call = Call(3, "a", "b", t_established=1_234, duration=seconds(1), codec=CODECS["g711"])
    fwd = call.streams[DIR_FORWARD]
    assert fwd.send_time(0) == 1_234
    assert fwd.send_time(7) == 1_234 + 7 * 20_000


def test_arrival_rate_matches_configured_mean():
    # brute-force: with a 60 s mean, arrivals per hour over 10,000 simulated
    # hours must come out at 60 within 2%
    sim = Simulator(master_seed=99)
    rng = sim.rng.stream("call-arrivals:probe")
    horizon = 10_000 * 3_600 * US_PER_S
    mean = 60 * US_PER_S
    t = 0
    count = 0
    while True:
        t += exp_sample(rng, mean)
        if t > horizon:
            break
        count += 1
    per_hour = count / 10_000
    assert abs(per_hour - 60) / 60 < 0.02


def test_duration_sampling_mean():
    sim = Simulator(master_seed=5)
    rng = sim.rng.stream("probe")
    mean = 180 * US_PER_S
    draws = [exp_sample(rng, mean) for _ in range(100_000)]
    assert abs(sum(draws) / len(draws) - mean) / mean < 0.02


def test_call_process_rejects_bad_means():
    with pytest.raises(ValueError):
        CallProcess(0, 1, ["a"], ["b"])
    with pytest.raises(ValueError):
        CallProcess(1, 0, ["a"], ["b"])


class _InstantLayer:
    """Session stub: establishes after one zero-delay event, no transport."""

    def __init__(self, sim):
        self.sim = sim
        self._next = 0

    def initiate(self, caller, callee, on_established, on_closed):
        session = SimpleNamespace(session_id=self._next, caller=caller,
                                  callee=callee, call=None,
                                  on_established=on_established,
                                  on_closed=on_closed)
        self._next += 1
        self.sim.schedule_in(0, session.on_established, session)
        return session

    def teardown(self, session):
        self.sim.schedule_in(0, session.on_closed, session)


class _SinkFabric:
    """Swallows packets and logs their emission order."""

    def __init__(self, sim):
        self.sim = sim
        self.sent = []

    def send_media(self, packet):
        self.sent.append((packet.stream.direction, packet.seq, packet.t_send))
        packet.stream.mark_delivered(packet.seq, self.sim.now)
        self.sim.stats.packets_delivered += 1
        self.sim.stats.packets_in_flight -= 1


def _run_scheduler(seed, inter_s, dur_s, callers, callees, horizon_s):
    sim = Simulator(master_seed=seed)
    fabric = _SinkFabric(sim)
    layer = _InstantLayer(sim)
    proc = CallProcess(seconds(inter_s), seconds(dur_s), callers, callees)
    sched = CallScheduler(sim, proc, CODECS["g711"], layer, fabric)
    sched.start()
    sim.run_until(seconds(horizon_s))
    return sim, sched, fabric


def test_source_pacing_is_exact():
    sim, sched, fabric = _run_scheduler(1, 30, 5, ["a1", "a2"], ["b1", "b2"], 120)
    assert sched.calls, "expected at least one established call"
    # consecutive seq within one direction are spaced exactly one frame interval
    for call in sched.calls:
        for stream in call.streams:
            for seq in range(1, stream.emitted):
                assert stream.send_time(seq) - stream.send_time(seq - 1) == 20_000
    assert fabric.sent, "packets must reach the fabric"


def test_media_only_within_call_window():
    sim, sched, fabric = _run_scheduler(2, 20, 10, ["a1", "a2"], ["b1", "b2"], 200)
    for call in sched.calls:
        for stream in call.streams:
            assert stream.t0 == call.t_established
            if stream.emitted:
                last_send = stream.send_time(stream.emitted - 1)
                assert last_send <= call.t_established + call.duration


def test_forced_pair_when_single_idle():
    sim, sched, fabric = _run_scheduler(3, 30, 1, ["only-a"], ["only-b"], 300)
    assert sched.calls
    for call in sched.calls:
        assert call.caller == "only-a"
        assert call.callee == "only-b"


def test_serial_mode_blocks_and_counts():
    # one pair, arrivals far faster than call turnover: most arrivals blocked
    sim, sched, _ = _run_scheduler(4, 2, 60, ["a"], ["b"], 120)
    assert sim.stats.calls_blocked > 0
    assert sim.stats.calls_started >= 1


def test_serial_mode_no_overlapping_calls_per_workstation():
    sim, sched, _ = _run_scheduler(5, 10, 30, ["a1", "a2"], ["b1", "b2"], 600)
    spans = {}
    for call in sched.calls:
        for ws in (call.caller, call.callee):
            spans.setdefault(ws, []).append((call.t_established,
                                             call.t_established + call.duration))
    for ws, intervals in spans.items():
        intervals.sort()
        for (s1, e1), (s2, e2) in zip(intervals, intervals[1:]):
            assert e1 <= s2, f"{ws} active in two calls at once"


def test_generation_counts_match_stream_logs():
    sim, sched, fabric = _run_scheduler(6, 15, 20, ["a1", "a2"], ["b1", "b2"], 300)
    emitted = sum(s.emitted for c in sched.calls for s in c.streams)
    assert emitted == sim.stats.packets_generated
    assert sim.stats.conservation_holds()
    assert not any(PENDING in s.recv for c in sched.calls for s in c.streams)
