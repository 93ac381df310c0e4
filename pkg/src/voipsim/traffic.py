"""Call generation and voice streams: codec profiles, arrivals, media pacing.

Calls arrive per an exponential process, last an exponential duration (3 min
mean) and carry one codec frame per packet in both directions.  Workstations
run in serial mode: a station is in at most one call at a time, and arrivals
that find no idle pair are dropped and counted, not queued.
"""

from __future__ import annotations

from dataclasses import dataclass

from .simcore import US_PER_S, Simulator, exp_sample

# RTP(12) + UDP(8) + IP(20) on every voice packet; link-layer overhead is
# added inside each network model.
IP_UDP_RTP_OVERHEAD_BYTES = 40

DIR_FORWARD = 0  # caller to callee
DIR_REVERSE = 1
DIRECTION_LABELS = ("caller_to_callee", "callee_to_caller")


@dataclass(frozen=True)
class CodecProfile:
    """Voice codec: framing plus the impairment and delay figures it brings."""

    name: str
    bitrate_bps: int
    frame_interval_us: int
    payload_bytes: int
    ie: float  # equipment impairment
    bpl: float  # robustness against packet loss
    encode_delay_us: int
    decode_delay_us: int
    compress_delay_us: int = 0
    decompress_delay_us: int = 0

    def __post_init__(self):
        # framing consistency: payload_bytes * 8 / (frame_interval in s) == bitrate
        if self.payload_bytes * 8 * US_PER_S != self.bitrate_bps * self.frame_interval_us:
            raise ValueError(
                f"{self.name}: {self.payload_bytes} B per {self.frame_interval_us} us "
                f"frame does not yield {self.bitrate_bps} bit/s"
            )
        if self.ie < 0:
            raise ValueError(f"{self.name}: Ie must be >= 0")
        for part in (
            self.encode_delay_us,
            self.decode_delay_us,
            self.compress_delay_us,
            self.decompress_delay_us,
        ):
            if part < 0:
                raise ValueError(f"{self.name}: delay components must be >= 0")

    @property
    def codec_delay_us(self) -> int:
        """Encode + decode + compress + decompress, the non-network delay share."""
        return (
            self.encode_delay_us
            + self.decode_delay_us
            + self.compress_delay_us
            + self.decompress_delay_us
        )

    @property
    def packet_size_bytes(self) -> int:
        return self.payload_bytes + IP_UDP_RTP_OVERHEAD_BYTES


# G.711 is the default: conventional "Interactive Voice" profile, zero Ie.
# The low-rate alternatives carry their usual impairment and lookahead
# figures; G.723.1 is modeled at its 6.4 kbit/s wire rate so framing stays
# exact (24 B per 30 ms frame).
CODECS: dict[str, CodecProfile] = {
    "g711": CodecProfile(
        name="G.711",
        bitrate_bps=64_000,
        frame_interval_us=20_000,
        payload_bytes=160,
        ie=0.0,
        bpl=4.3,
        encode_delay_us=500,
        decode_delay_us=500,
    ),
    "g729": CodecProfile(
        name="G.729",
        bitrate_bps=8_000,
        frame_interval_us=20_000,
        payload_bytes=20,
        ie=11.0,
        bpl=19.0,
        encode_delay_us=15_000,
        decode_delay_us=5_000,
    ),
    "g7231": CodecProfile(
        name="G.723.1",
        bitrate_bps=6_400,
        frame_interval_us=30_000,
        payload_bytes=24,
        ie=15.0,
        bpl=16.1,
        encode_delay_us=37_500,
        decode_delay_us=7_500,
    ),
}

DEFAULT_CODEC = "g711"

# recv-tick sentinels kept as plain ints so a stream's log is one flat list
PENDING = -2
DROPPED = -1


class MediaStream:
    """One direction of one call's packet log.

    Send times are implicit (t0 + seq * frame_interval); the recv list holds
    one entry per emitted packet: the arrival tick, DROPPED, or PENDING.
    """

    __slots__ = ("call_id", "direction", "src", "dst", "codec", "t0", "n_packets", "recv")

    def __init__(self, call_id: int, direction: int, src: str, dst: str,
                 codec: CodecProfile, t0: int, n_packets: int):
        self.call_id = call_id
        self.direction = direction
        self.src = src
        self.dst = dst
        self.codec = codec
        self.t0 = t0
        self.n_packets = n_packets
        self.recv: list[int] = []

    def send_time(self, seq: int) -> int:
        return self.t0 + seq * self.codec.frame_interval_us

    @property
    def emitted(self) -> int:
        return len(self.recv)

    def mark_delivered(self, seq: int, t_recv: int) -> None:
        self.recv[seq] = t_recv

    def mark_dropped(self, seq: int) -> None:
        self.recv[seq] = DROPPED

    def pending_count(self) -> int:
        return self.recv.count(PENDING)


class VoicePacket:
    """A single voice frame in flight."""

    __slots__ = ("stream", "seq", "size_bytes", "t_send", "pid")

    def __init__(self, stream: MediaStream, seq: int, t_send: int):
        self.stream = stream
        self.seq = seq
        self.size_bytes = stream.codec.packet_size_bytes
        self.t_send = t_send
        self.pid = -1  # assigned by the fabric when tracing

    @property
    def src(self) -> str:
        return self.stream.src

    @property
    def dst(self) -> str:
        return self.stream.dst


class Call:
    """One established call and its two media streams."""

    __slots__ = ("call_id", "caller", "callee", "t_established", "duration", "state", "streams")

    def __init__(self, call_id: int, caller: str, callee: str,
                 t_established: int, duration: int, codec: CodecProfile):
        self.call_id = call_id
        self.caller = caller
        self.callee = callee
        self.t_established = t_established
        self.duration = duration
        self.state = "active"
        n = duration // codec.frame_interval_us
        self.streams = (
            MediaStream(call_id, DIR_FORWARD, caller, callee, codec, t_established, n),
            MediaStream(call_id, DIR_REVERSE, callee, caller, codec, t_established, n),
        )


@dataclass
class CallProcess:
    """Arrival process between two workstation pools, serial mode."""

    inter_arrival_mean_us: int
    duration_mean_us: int
    caller_pool: list[str]
    callee_pool: list[str]

    def __post_init__(self):
        if self.inter_arrival_mean_us <= 0:
            raise ValueError("inter_arrival mean must be > 0")
        if self.duration_mean_us <= 0:
            raise ValueError("duration mean must be > 0")


class CallScheduler:
    """Drives arrivals, pairs idle workstations, and paces media packets.

    Signaling is delegated to a session layer exposing
    initiate(caller, callee, on_established, on_closed) and teardown(session);
    media packets are handed one by one to fabric.send_media.
    """

    def __init__(self, sim: Simulator, proc: CallProcess, codec: CodecProfile,
                 session_layer, fabric, stream_name: str = "calls"):
        self.sim = sim
        self.proc = proc
        self.codec = codec
        self.session_layer = session_layer
        self.fabric = fabric
        self.calls: list[Call] = []
        self._rng = sim.rng.stream(f"call-arrivals:{stream_name}")
        self._busy: set[str] = set()
        self._next_call_id = 0
        self._pending_durations: dict[int, int] = {}  # session_id -> duration ticks

    def start(self) -> None:
        self._schedule_next_arrival()

    def is_busy(self, workstation: str) -> bool:
        return workstation in self._busy

    def _schedule_next_arrival(self) -> None:
        gap = exp_sample(self._rng, self.proc.inter_arrival_mean_us)
        self.sim.schedule_in(gap, self._on_arrival, kind="call-arrival")

    def _on_arrival(self, _arg) -> None:
        self._schedule_next_arrival()
        stats = self.sim.stats
        idle_callers = [w for w in self.proc.caller_pool if w not in self._busy]
        if not idle_callers:
            stats.calls_blocked += 1
            return
        caller = self._rng.choice(idle_callers)
        idle_callees = [w for w in self.proc.callee_pool
                        if w not in self._busy and w != caller]
        if not idle_callees:
            stats.calls_blocked += 1
            return
        callee = self._rng.choice(idle_callees)
        duration = exp_sample(self._rng, self.proc.duration_mean_us)
        self._busy.add(caller)
        self._busy.add(callee)
        stats.calls_started += 1
        session = self.session_layer.initiate(
            caller, callee,
            on_established=self._on_established,
            on_closed=self._on_closed,
        )
        self._pending_durations[session.session_id] = duration

    def _on_established(self, session) -> None:
        duration = self._pending_durations.pop(session.session_id)
        call = Call(self._next_call_id, session.caller, session.callee,
                    self.sim.now, duration, self.codec)
        self._next_call_id += 1
        self.calls.append(call)
        session.call = call
        self.sim.stats.calls_established += 1
        for stream in call.streams:
            if stream.n_packets > 0:
                self.sim.schedule(stream.t0, self._emit, (stream, 0), kind="media-emit")
        self.sim.schedule(call.t_established + duration, self._end_call,
                          (call, session), kind="call-end")

    def _emit(self, arg) -> None:
        stream, seq = arg
        packet = VoicePacket(stream, seq, self.sim.now)
        stream.recv.append(PENDING)
        stats = self.sim.stats
        stats.packets_generated += 1
        stats.packets_in_flight += 1
        if seq + 1 < stream.n_packets:
            self.sim.schedule_in(stream.codec.frame_interval_us, self._emit,
                                 (stream, seq + 1), kind="media-emit")
        self.fabric.send_media(packet)

    def _end_call(self, arg) -> None:
        call, session = arg
        call.state = "ended"
        self.sim.stats.calls_completed += 1
        self.session_layer.teardown(session)

    def _on_closed(self, session) -> None:
        # releases the pair whether setup succeeded or timed out
        self._pending_durations.pop(session.session_id, None)
        self._busy.discard(session.caller)
        self._busy.discard(session.callee)
