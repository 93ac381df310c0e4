"""QoS metrics engine: transmission rating and MOS, jitter, delay, PDV.

Packet arithmetic stays in integer microseconds (PDV in exact rationals)
until the final conversion to float seconds, so results are reproducible to
the last bit.  Jitter is the signed maximum over seq-consecutive delivered
pairs; PDV is the population variance of one-way delays.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .simcore import SimError
from .traffic import DIRECTION_LABELS, DROPPED, PENDING, CodecProfile

DEFAULT_IS = 6.8  # baseline signal impairment: zero-impairment R lands at 93.2
DEFAULT_ADVANTAGE = 0.0

GOOD = "Good"
ACCEPTABLE = "Acceptable"
POOR = "Poor"

# quality/effort rows keyed by integer score
MOS_TABLE = {
    5: ("Excellent", "No effort required"),
    4: ("Good", "No appreciable effort required"),
    3: ("Fair", "Moderate effort required"),
    2: ("Poor", "Considerable effort required"),
    1: ("Bad", "No meaning understood with effort"),
}

CSV_COLUMNS = ("scenario", "seed", "direction", "window_start_s", "samples",
               "jitter_s", "e2e_s", "pdv_s2", "mos", "delay_class", "jitter_class")


class DroppedPacket(SimError):
    pass


class InsufficientData(SimError):
    pass


class DomainError(SimError):
    pass


@dataclass(frozen=True)
class VoicePacketRecord:
    call_id: int
    direction: int
    seq: int
    t_send: int
    t_recv: int | None
    dropped: bool

    def __post_init__(self):
        if self.dropped != (self.t_recv is None):
            raise ValueError("dropped records are exactly those without t_recv")
        if self.t_recv is not None and self.t_recv < self.t_send:
            raise ValueError("t_recv must be >= t_send")


def records_from_stream(stream) -> list[VoicePacketRecord]:
    """Materialize a media stream's log; packets still in flight are omitted."""
    out = []
    t0 = stream.t0
    fi = stream.codec.frame_interval_us
    for seq, tick in enumerate(stream.recv):
        if tick == PENDING:
            continue
        if tick == DROPPED:
            out.append(VoicePacketRecord(stream.call_id, stream.direction, seq,
                                         t0 + seq * fi, None, True))
        else:
            out.append(VoicePacketRecord(stream.call_id, stream.direction, seq,
                                         t0 + seq * fi, tick, False))
    return out


@dataclass(frozen=True)
class DelayBudget:
    """End-to-end delay split, all milliseconds."""

    dn_ms: float
    de_ms: float
    dd_ms: float
    dc_ms: float
    dde_ms: float

    def __post_init__(self):
        for part in (self.dn_ms, self.de_ms, self.dd_ms, self.dc_ms, self.dde_ms):
            if part < 0:
                raise ValueError("delay components must be >= 0")

    @property
    def total_ms(self) -> float:
        return self.dn_ms + self.de_ms + self.dd_ms + self.dc_ms + self.dde_ms


def delay_budget(rec: VoicePacketRecord, codec: CodecProfile) -> DelayBudget:
    if rec.dropped:
        raise DroppedPacket(f"call {rec.call_id} seq {rec.seq}")
    return DelayBudget(
        dn_ms=(rec.t_recv - rec.t_send) / 1_000,
        de_ms=codec.encode_delay_us / 1_000,
        dd_ms=codec.decode_delay_us / 1_000,
        dc_ms=codec.compress_delay_us / 1_000,
        dde_ms=codec.decompress_delay_us / 1_000,
    )


def e2e_delay_ms(rec: VoicePacketRecord, codec: CodecProfile) -> float:
    """Mouth-to-ear delay: network transit plus the codec's fixed components."""
    if rec.dropped:
        raise DroppedPacket(f"call {rec.call_id} seq {rec.seq}")
    return (rec.t_recv - rec.t_send + codec.codec_delay_us) / 1_000


def jitter_us(records) -> int:
    """Signed max over seq-consecutive delivered pairs of
    [t'(n) - t'(n-1)] - [t(n) - t(n-1)], integer microseconds."""
    best = None
    prev = None
    for rec in records:
        if rec.dropped:
            continue
        if prev is not None:
            delta = (rec.t_recv - prev.t_recv) - (rec.t_send - prev.t_send)
            if best is None or delta > best:
                best = delta
        prev = rec
    if best is None:
        raise InsufficientData("jitter needs at least 2 delivered packets")
    return best


def jitter(records) -> float:
    """Same as jitter_us, in signed seconds."""
    return jitter_us(records) / 1_000_000


def pdv_us2(records) -> Fraction:
    """Population variance of one-way delays, exact, in microseconds squared."""
    n = 0
    s = 0
    q = 0
    for rec in records:
        if rec.dropped:
            continue
        d = rec.t_recv - rec.t_send
        n += 1
        s += d
        q += d * d
    if n == 0:
        raise InsufficientData("pdv needs at least 1 delivered packet")
    return Fraction(n * q - s * s, n * n)


def pdv(records) -> float:
    """Population variance of one-way delays, in seconds squared."""
    return float(pdv_us2(records) / 10**12)


def id_from_delay(d_ms: float) -> float:
    """Delay impairment: 0.024 d plus a steeper surcharge past 177.3 ms."""
    if d_ms < 0:
        raise DomainError(f"delay must be >= 0, got {d_ms}")
    rating = 0.024 * d_ms
    if d_ms > 177.3:
        rating += 0.11 * (d_ms - 177.3)
    return rating


@dataclass(frozen=True)
class EModelInputs:
    is_factor: float = DEFAULT_IS
    ie: float = 0.0
    ppl_pct: float = 0.0  # observed packet loss, percent
    bpl: float = 4.3
    id_factor: float = 0.0
    advantage: float = DEFAULT_ADVANTAGE


def r_factor(inputs: EModelInputs) -> float:
    """Transmission rating with loss folded into the equipment impairment,
    clamped to [0, 100]."""
    if inputs.ppl_pct > 0:
        ie_eff = inputs.ie + (95 - inputs.ie) * inputs.ppl_pct / (inputs.ppl_pct + inputs.bpl)
    else:
        ie_eff = inputs.ie
    r = 100.0 - inputs.is_factor - ie_eff - inputs.id_factor + inputs.advantage
    return min(100.0, max(0.0, r))


def mos_from_r(r: float) -> float:
    if not 0 <= r <= 100:
        raise DomainError(f"R must be in [0, 100], got {r}")
    return 1 + 0.035 * r + 7e-6 * r * (r - 60) * (100 - r)


def mos_label(score: float) -> tuple[str, str]:
    """Nearest quality/effort row for a score in [1, 5], half rounding up."""
    if not 1 <= score <= 5:
        raise DomainError(f"MOS must be in [1, 5], got {score}")
    row = int(score + 0.5)
    return MOS_TABLE[row]


@dataclass(frozen=True)
class QualityClass:
    delay_class: str
    jitter_class: str


def _delay_class(delay_ms: float) -> str:
    if delay_ms <= 150:
        return GOOD
    if delay_ms <= 300:
        return ACCEPTABLE
    return POOR


def _jitter_class(jitter_ms: float) -> str:
    magnitude = abs(jitter_ms)
    if magnitude <= 20:
        return GOOD
    if magnitude <= 50:
        return ACCEPTABLE
    return POOR


def classify(delay_ms: float, jitter_ms: float) -> QualityClass:
    """Guideline classes; boundary values belong to the better class and the
    jitter sign is diagnostic only."""
    return QualityClass(_delay_class(delay_ms), _jitter_class(jitter_ms))


@dataclass
class QoSBucket:
    """One reporting window of one direction; fields are None when the window
    holds no delivered packet (or, for jitter, no delivered pair)."""

    window_start_us: int
    width_us: int
    samples: int
    dropped: int
    jitter_s: float | None
    mean_e2e_s: float | None
    pdv_s2: float | None
    mos: float | None
    delay_class: str | None
    jitter_class: str | None
    in_warmup: bool


def bucketize(stream_records, codec: CodecProfile, *, run_length_us: int,
              width_us: int, warm_up_us: int = 0,
              is_factor: float = DEFAULT_IS,
              advantage: float = DEFAULT_ADVANTAGE) -> list[QoSBucket]:
    """Fold per-stream records into fixed windows over [0, run_length).

    stream_records: iterable of per-stream record lists (each seq-ordered).
    Windowing is by send time, the last window absorbing the boundary; a
    cross-window delivered pair counts toward the later packet's window.
    Window MOS combines the window's mean mouth-to-ear delay with its loss
    rate.  Warm-up windows are emitted and flagged, never silently skipped.
    """
    if width_us <= 0:
        raise ValueError("width must be > 0")
    n_win = -(-run_length_us // width_us)
    counts = [0] * n_win
    drops = [0] * n_win
    sums = [0] * n_win
    sumsqs = [0] * n_win
    jmax: list[int | None] = [None] * n_win
    last = n_win - 1
    for records in stream_records:
        prev = None
        for rec in records:
            w = rec.t_send // width_us
            if w > last:
                w = last
            if rec.dropped:
                drops[w] += 1
                continue
            d = rec.t_recv - rec.t_send
            counts[w] += 1
            sums[w] += d
            sumsqs[w] += d * d
            if prev is not None:
                delta = (rec.t_recv - prev.t_recv) - (rec.t_send - prev.t_send)
                if jmax[w] is None or delta > jmax[w]:
                    jmax[w] = delta
            prev = rec

    buckets = []
    codec_us = codec.codec_delay_us
    for w in range(n_win):
        start = w * width_us
        n = counts[w]
        if n == 0:
            buckets.append(QoSBucket(start, width_us, 0, drops[w], None, None,
                                     None, None, None, None, start < warm_up_us))
            continue
        mean_dn_us = Fraction(sums[w], n)
        mean_e2e_ms = float((mean_dn_us + codec_us) / 1_000)
        var_us2 = Fraction(n * sumsqs[w] - sums[w] * sums[w], n * n)
        loss_pct = 100.0 * drops[w] / (n + drops[w])
        r = r_factor(EModelInputs(is_factor=is_factor, ie=codec.ie,
                                  ppl_pct=loss_pct, bpl=codec.bpl,
                                  id_factor=id_from_delay(mean_e2e_ms),
                                  advantage=advantage))
        jit = jmax[w]
        jitter_s = None if jit is None else jit / 1_000_000
        buckets.append(QoSBucket(
            window_start_us=start,
            width_us=width_us,
            samples=n,
            dropped=drops[w],
            jitter_s=jitter_s,
            mean_e2e_s=float((mean_dn_us + codec_us) / 1_000_000),
            pdv_s2=float(var_us2 / 10**12),
            mos=mos_from_r(r),
            delay_class=_delay_class(mean_e2e_ms),
            jitter_class=None if jit is None else _jitter_class(jit / 1_000),
            in_warmup=start < warm_up_us,
        ))
    return buckets


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.9f}"


def write_metrics_csv(fh, scenario: str, seed: int,
                      buckets_by_direction: dict[int, list[QoSBucket]]) -> None:
    """One row per bucket, fixed column order, 9 fractional digits."""
    fh.write(",".join(CSV_COLUMNS) + "\n")
    for direction in sorted(buckets_by_direction):
        label = DIRECTION_LABELS[direction]
        for b in buckets_by_direction[direction]:
            row = (scenario, str(seed), label, _fmt(b.window_start_us / 1_000_000),
                   str(b.samples), _fmt(b.jitter_s), _fmt(b.mean_e2e_s),
                   _fmt(b.pdv_s2), _fmt(b.mos),
                   b.delay_class or "", b.jitter_class or "")
            fh.write(",".join(row) + "\n")
