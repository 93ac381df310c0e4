"""Network transport: 802.11 DCF cells, a UMTS delay pipeline, and an IP cloud.

Every packet (voice or signaling) travels an ordered list of path segments.
Segment implementations never talk to each other; they hand completed or
dropped envelopes back to the Fabric, which advances the path and does the
delivery bookkeeping.  All times are integer microseconds.
"""

from __future__ import annotations

from collections import deque

from .simcore import Simulator, SimError

WIFI_ACK_BYTES = 14
WIFI_ACK_RATE_BPS = 1_000_000  # control frames at 802.11b base rate

# drop reasons as they appear in stats and segment traces
DROP_QUEUE_OVERFLOW = "queue-overflow"
DROP_COLLISION_RETRY = "collision-retry-exhausted"
DROP_BLER_RETX = "bler-retx-exhausted"
DROP_CLOUD_LOSS = "cloud-loss"


class UnknownEndpoint(SimError):
    """Route requested for a workstation no cell claims."""


class Envelope:
    """Transport wrapper that carries any payload across a segment path."""

    __slots__ = ("item", "size_bytes", "pid", "path", "hop", "hop_ingress", "on_end", "on_fail")

    def __init__(self, item, size_bytes, pid, path, on_end, on_fail):
        self.item = item
        self.size_bytes = size_bytes
        self.pid = pid
        self.path = path
        self.hop = 0
        self.hop_ingress = 0
        self.on_end = on_end
        self.on_fail = on_fail


class PathTracer:
    """Optional per-packet segment log: ingress/egress ticks and drop reason."""

    COLUMNS = ("packet_id", "segment", "ingress_ticks", "egress_ticks", "drop_reason")

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, pid: int, segment: str, ingress: int, egress: int, reason: str) -> None:
        self.rows.append((pid, segment, ingress, egress, reason))

    def segments_for(self, pid: int) -> list[tuple]:
        return [r for r in self.rows if r[0] == pid]

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            writer.writerows(self.rows)


class _Contender:
    """Per-node DCF state: FIFO queue plus the backoff countdown for its head."""

    __slots__ = ("node", "queue", "backoff", "cw", "retries")

    def __init__(self, node: str):
        self.node = node
        self.queue: deque = deque()
        self.backoff: int | None = None  # remaining idle slots; None = not contending
        self.cw = 0
        self.retries = 0


class WifiCell:
    """Slot-granular 802.11 DCF: DIFS sensing, binary exponential backoff with
    freeze/resume, collisions on equal countdown, positive ACK after SIFS.

    The access point contends like any station; downlink traffic queues there.
    A successful exchange occupies the medium for data airtime + SIFS + ACK,
    and the packet egresses the cell when the exchange completes.
    """

    def __init__(self, sim: Simulator, name: str, stations: list[str], *,
                 data_rate_bps: int = 11_000_000, slot_us: int = 20,
                 sifs_us: int = 10, difs_us: int = 50,
                 cw_min: int = 31, cw_max: int = 1023, retry_limit: int = 7,
                 phy_mac_overhead_bytes: int = 58, queue_cap: int = 50):
        if not cw_min < cw_max:
            raise ValueError("cw_min must be < cw_max")
        if retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        self.sim = sim
        self.name = name
        self.stations = list(stations)
        self.ap_id = f"{name}-ap"
        self.data_rate_bps = data_rate_bps
        self.slot_us = slot_us
        self.sifs_us = sifs_us
        self.difs_us = difs_us
        self.cw_min = cw_min
        self.cw_max = cw_max
        self.retry_limit = retry_limit
        self.phy_mac_overhead_bytes = phy_mac_overhead_bytes
        self.queue_cap = queue_cap
        self.fabric = None
        self._rng = sim.rng.stream(f"wifi-backoff:{name}")
        self._order = self.stations + [self.ap_id]
        self._contenders = {node: _Contender(node) for node in self._order}
        self._busy_until = 0
        self._round_event: int | None = None
        self._round_t0 = 0
        self._ack_us = round(WIFI_ACK_BYTES * 8 * 1_000_000 / WIFI_ACK_RATE_BPS)

    def bind(self, fabric: "Fabric") -> None:
        self.fabric = fabric

    def up_segments(self, ws: str) -> list[tuple]:
        return [(f"wifi-up:{self.name}", self._enqueue, ws)]

    def down_segments(self, ws: str) -> list[tuple]:
        return [(f"wifi-down:{self.name}", self._enqueue, self.ap_id)]

    def exchange_us(self, size_bytes: int) -> int:
        """Medium occupancy of one successful exchange: data + SIFS + ACK."""
        data = round((size_bytes + self.phy_mac_overhead_bytes) * 8 * 1_000_000
                     / self.data_rate_bps)
        return data + self.sifs_us + self._ack_us

    # -- DCF mechanics --------------------------------------------------

    def _enqueue(self, env: Envelope, node: str) -> None:
        c = self._contenders[node]
        if len(c.queue) >= self.queue_cap:
            self.fabric.segment_drop(env, DROP_QUEUE_OVERFLOW)
            return
        c.queue.append(env)
        if c.backoff is None:
            c.cw = self.cw_min
            c.retries = 0
            c.backoff = self._rng.randint(0, c.cw)
            self._join_round()

    def _active(self) -> list[_Contender]:
        return [c for c in map(self._contenders.get, self._order) if c.backoff is not None]

    def _join_round(self) -> None:
        """A contender armed mid-round: fold elapsed slots into everyone's
        counter, keep the slot phase, and recompute the next expiry."""
        now = self.sim.now
        if self._round_event is not None:
            self.sim.cancel(self._round_event)
            self._round_event = None
            if now > self._round_t0:
                elapsed = (now - self._round_t0) // self.slot_us
                for c in self._active():
                    if c.backoff >= elapsed:
                        c.backoff -= elapsed
                self._round_t0 += elapsed * self.slot_us
            t0 = self._round_t0
        else:
            t0 = max(now, self._busy_until) + self.difs_us
        self._arm_round(t0)

    def _arm_round(self, t0: int) -> None:
        active = self._active()
        if not active:
            self._round_event = None
            return
        self._round_t0 = t0
        min_b = min(c.backoff for c in active)
        fire_at = max(self.sim.now, t0 + min_b * self.slot_us)
        self._round_event = self.sim.schedule(fire_at, self._round_fire,
                                              target=self.name, kind="wifi-round")

    def _round_fire(self, _arg) -> None:
        self._round_event = None
        active = self._active()
        min_b = min(c.backoff for c in active)
        winners = [c for c in active if c.backoff == min_b]
        for c in active:
            if c.backoff > min_b:
                c.backoff -= min_b  # frozen residual carries to the next round
        now = self.sim.now
        if len(winners) == 1:
            w = winners[0]
            env = w.queue.popleft()
            self._busy_until = now + self.exchange_us(env.size_bytes)
            self.sim.schedule(self._busy_until, self.fabric.segment_done, env,
                              target=self.name, kind="wifi-deliver")
            w.cw = self.cw_min
            w.retries = 0
            w.backoff = self._rng.randint(0, w.cw) if w.queue else None
        else:
            # simultaneous expiry: all transmit, none gets an ACK; the medium
            # stays busy for the longest exchange
            longest = max(self.exchange_us(c.queue[0].size_bytes) for c in winners)
            self._busy_until = now + longest
            for c in winners:
                c.retries += 1
                if c.retries > self.retry_limit:
                    env = c.queue.popleft()
                    self.fabric.segment_drop(env, DROP_COLLISION_RETRY)
                    c.cw = self.cw_min
                    c.retries = 0
                    c.backoff = self._rng.randint(0, c.cw) if c.queue else None
                else:
                    c.cw = min(2 * c.cw + 1, self.cw_max)
                    c.backoff = self._rng.randint(0, c.cw)
        self._arm_round(self._busy_until + self.difs_us)


class _Bearer:
    __slots__ = ("items", "busy")

    def __init__(self):
        self.items: deque = deque()
        self.busy = False


class UmtsCell:
    """Dedicated-channel UMTS access: per-UE FIFO bearers, TTI-quantized air
    transmission with BLER retransmissions, then a fixed UTRAN/CN delay chain.

    One packet occupies one TTI per attempt; a failed attempt retransmits in
    the next TTI up to max_rlc_retx times, then the packet drops.  The fixed
    chain (interleaving, Iub, RNC, CN) is collapsed into a single scheduled
    step per direction; its components still sum in the segment trace.
    """

    def __init__(self, sim: Simulator, name: str, ues: list[str], *,
                 tti_us: int = 10_000, bearer_rate_bps: int = 64_000,
                 bler: float = 0.02, max_rlc_retx: int = 2,
                 nodeb_rnc_delay_us: int = 15_000, rnc_proc_delay_us: int = 25_000,
                 cn_delay_us: int = 25_000, air_interleave_delay_us: int = 40_000,
                 queue_cap: int = 50):
        # scenario validation keeps configured bler below 1; the cell itself
        # accepts the degenerate 1.0 so the every-packet-drops case is testable
        if not 0 <= bler <= 1:
            raise ValueError("bler must be in [0, 1]")
        for d in (nodeb_rnc_delay_us, rnc_proc_delay_us, cn_delay_us,
                  air_interleave_delay_us):
            if d < 0:
                raise ValueError("delays must be >= 0")
        self.sim = sim
        self.name = name
        self.stations = list(ues)
        self.tti_us = tti_us
        self.bearer_rate_bps = bearer_rate_bps
        self.bler = bler
        self.max_rlc_retx = max_rlc_retx
        self.nodeb_rnc_delay_us = nodeb_rnc_delay_us
        self.rnc_proc_delay_us = rnc_proc_delay_us
        self.cn_delay_us = cn_delay_us
        self.air_interleave_delay_us = air_interleave_delay_us
        self.queue_cap = queue_cap
        self.fabric = None
        self._rng = sim.rng.stream(f"umts-bler:{name}")
        self._up = {ue: _Bearer() for ue in ues}
        self._down = {ue: _Bearer() for ue in ues}
        # uplink: air first, then interleave + Iub + RNC + CN toward the cloud;
        # downlink mirrors it
        self.pipe_us = (air_interleave_delay_us + nodeb_rnc_delay_us
                        + rnc_proc_delay_us + cn_delay_us)

    def bind(self, fabric: "Fabric") -> None:
        self.fabric = fabric

    def up_segments(self, ue: str) -> list[tuple]:
        return [
            (f"umts-air-up:{self.name}", self._air_up, ue),
            (f"umts-utran-cn-up:{self.name}", self._pipe, None),
        ]

    def down_segments(self, ue: str) -> list[tuple]:
        return [
            (f"umts-cn-utran-down:{self.name}", self._pipe, None),
            (f"umts-air-down:{self.name}", self._air_down, ue),
        ]

    def next_tti_boundary(self, t: int) -> int:
        tti = self.tti_us
        return -(-t // tti) * tti

    def _pipe(self, env: Envelope, _node) -> None:
        self.sim.schedule_in(self.pipe_us, self.fabric.segment_done, env,
                             target=self.name, kind="umts-pipe")

    def _air_up(self, env: Envelope, ue: str) -> None:
        self._air_enqueue(self._up[ue], env)

    def _air_down(self, env: Envelope, ue: str) -> None:
        self._air_enqueue(self._down[ue], env)

    def _air_enqueue(self, bearer: _Bearer, env: Envelope) -> None:
        if bearer.busy or bearer.items:
            if len(bearer.items) >= self.queue_cap:
                self.fabric.segment_drop(env, DROP_QUEUE_OVERFLOW)
                return
            bearer.items.append(env)
        else:
            self._air_start(bearer, env)

    def _air_start(self, bearer: _Bearer, env: Envelope) -> None:
        bearer.busy = True
        first_end = self.next_tti_boundary(self.sim.now) + self.tti_us
        self.sim.schedule(first_end, self._attempt_end, (bearer, env, 1),
                          target=self.name, kind="umts-air")

    def _attempt_end(self, arg) -> None:
        bearer, env, attempt = arg
        if self.bler == 0.0 or self._rng.random() >= self.bler:
            self.fabric.segment_done(env)
        elif attempt <= self.max_rlc_retx:
            self.sim.schedule_in(self.tti_us, self._attempt_end,
                                 (bearer, env, attempt + 1),
                                 target=self.name, kind="umts-air")
            return
        else:
            self.fabric.segment_drop(env, DROP_BLER_RETX)
        if bearer.items:
            self._air_start(bearer, bearer.items.popleft())
        else:
            bearer.busy = False


class IpCloud:
    """Wide-area segment: uniform delay around a base, independent loss,
    no FIFO clamp (reordering allowed when the jitter width is nonzero)."""

    def __init__(self, sim: Simulator, *, base_delay_us: int = 30_000,
                 jitter_half_width_us: int = 5_000, loss_prob: float = 0.0):
        if base_delay_us - jitter_half_width_us < 0:
            raise ValueError("delay range must not go negative")
        if not 0 <= loss_prob <= 1:
            raise ValueError("loss_prob must be in [0, 1]")
        self.sim = sim
        self.base_delay_us = base_delay_us
        self.jitter_half_width_us = jitter_half_width_us
        self.loss_prob = loss_prob
        self.fabric = None
        self._rng_jitter = sim.rng.stream("cloud-jitter")
        self._rng_loss = sim.rng.stream("cloud-loss")

    def bind(self, fabric: "Fabric") -> None:
        self.fabric = fabric

    def forward(self, env: Envelope, _node) -> None:
        if self.loss_prob > 0.0 and self._rng_loss.random() < self.loss_prob:
            self.fabric.segment_drop(env, DROP_CLOUD_LOSS)
            return
        delay = self.base_delay_us
        hw = self.jitter_half_width_us
        if hw:
            delay += self._rng_jitter.randint(-hw, hw)
        self.sim.schedule_in(delay, self.fabric.segment_done, env,
                             target="cloud", kind="cloud-deliver")


class Fabric:
    """Routes packets between workstations across cells and the cloud.

    A path is a cached list of (label, transmit_fn, node) steps.  WiFi and
    UMTS endpoints contribute their access legs; distinct subnets are always
    joined by the cloud.  The proxy endpoint lives at the cloud edge.
    """

    PROXY = "proxy"

    def __init__(self, sim: Simulator, cloud: IpCloud, tracer: PathTracer | None = None):
        self.sim = sim
        self.cloud = cloud
        self.tracer = tracer
        self.cells_by_ws: dict[str, object] = {}
        self.cells: list = []
        self._paths: dict[tuple, list] = {}
        self._next_pid = 0
        cloud.bind(self)

    def attach_cell(self, cell) -> None:
        cell.bind(self)
        self.cells.append(cell)
        for ws in cell.stations:
            if ws in self.cells_by_ws:
                raise ValueError(f"workstation {ws} already attached")
            self.cells_by_ws[ws] = cell

    def _endpoint_cell(self, ws: str):
        if ws == self.PROXY:
            return None
        cell = self.cells_by_ws.get(ws)
        if cell is None:
            raise UnknownEndpoint(ws)
        return cell

    def _path(self, src: str, dst: str) -> list:
        key = (src, dst)
        path = self._paths.get(key)
        if path is None:
            src_cell = self._endpoint_cell(src)
            dst_cell = self._endpoint_cell(dst)
            path = []
            if src_cell is not None and src_cell is dst_cell:
                path += src_cell.up_segments(src) + src_cell.down_segments(dst)
            else:
                if src_cell is not None:
                    path += src_cell.up_segments(src)
                path.append(("cloud", self.cloud.forward, None))
                if dst_cell is not None:
                    path += dst_cell.down_segments(dst)
            self._paths[key] = path
        return path

    def route(self, src: str, dst: str) -> list[str]:
        """Ordered segment labels a packet from src to dst will traverse."""
        return [label for label, _fn, _node in self._path(src, dst)]

    def send(self, item, size_bytes: int, src: str, dst: str, on_end, on_fail) -> None:
        pid = self._next_pid
        self._next_pid = pid + 1
        env = Envelope(item, size_bytes, pid, self._path(src, dst), on_end, on_fail)
        self._enter(env)

    def _enter(self, env: Envelope) -> None:
        env.hop_ingress = self.sim.now
        _label, fn, node = env.path[env.hop]
        fn(env, node)

    def segment_done(self, env: Envelope) -> None:
        if self.tracer is not None:
            self.tracer.add(env.pid, env.path[env.hop][0], env.hop_ingress,
                            self.sim.now, "")
        env.hop += 1
        if env.hop == len(env.path):
            env.on_end(env.item, self.sim.now)
        else:
            self._enter(env)

    def segment_drop(self, env: Envelope, reason: str) -> None:
        if self.tracer is not None:
            self.tracer.add(env.pid, env.path[env.hop][0], env.hop_ingress,
                            self.sim.now, reason)
        env.on_fail(env.item, reason)

    # -- media bookkeeping ----------------------------------------------

    def send_media(self, packet) -> None:
        self.send(packet, packet.size_bytes, packet.src, packet.dst,
                  self._media_done, self._media_fail)

    def _media_done(self, packet, t_recv: int) -> None:
        packet.stream.mark_delivered(packet.seq, t_recv)
        stats = self.sim.stats
        stats.packets_delivered += 1
        stats.packets_in_flight -= 1

    def _media_fail(self, packet, reason: str) -> None:
        packet.stream.mark_dropped(packet.seq)
        stats = self.sim.stats
        stats.packets_dropped += 1
        stats.packets_in_flight -= 1
        stats.count_drop(reason)
