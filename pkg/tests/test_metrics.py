"""Metrics engine: rating/MOS fixed points, jitter and PDV oracles, windows."""

import io
import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voipsim.metrics import (
    ACCEPTABLE,
    GOOD,
    MOS_TABLE,
    POOR,
    DomainError,
    DroppedPacket,
    EModelInputs,
    InsufficientData,
    QoSBucket,
    VoicePacketRecord,
    bucketize,
    classify,
    delay_budget,
    e2e_delay_ms,
    id_from_delay,
    jitter,
    jitter_us,
    mos_from_r,
    mos_label,
    pdv,
    pdv_us2,
    r_factor,
    records_from_stream,
    write_metrics_csv,
)
from voipsim.traffic import CODECS, MediaStream, PENDING

G711 = CODECS["g711"]


def rec(seq, t_send, t_recv, call_id=0, direction=0):
    dropped = t_recv is None
    return VoicePacketRecord(call_id, direction, seq, t_send, t_recv, dropped)


def trace(delays, spacing=20_000, t0=0):
    """Records with the given per-seq one-way delays; None marks a drop."""
    out = []
    for seq, d in enumerate(delays):
        t = t0 + seq * spacing
        out.append(rec(seq, t, None if d is None else t + d))
    return out


# --- transmission rating and MOS -------------------------------------------

def test_mos_endpoints_exact():
    assert mos_from_r(0) == 1.0
    assert mos_from_r(100) == 4.5


def test_mos_midpoint():
    # 1 + 0.035*50 + 7e-6*50*(-10)*50 = 2.575
    assert abs(mos_from_r(50) - 2.575) < 1e-12


def test_mos_default_rating():
    # zero impairment leaves R = 100 - 6.8
    assert r_factor(EModelInputs()) == pytest.approx(93.2)
    assert mos_from_r(93.2) == pytest.approx(4.409285824, abs=1e-9)


def test_mos_domain():
    with pytest.raises(DomainError):
        mos_from_r(-0.001)
    with pytest.raises(DomainError):
        mos_from_r(100.001)


def test_mos_strictly_increasing_above_ten():
    # the cubic dips below R=10; the usable range must be monotone
    rs = [10 + 90 * k / 4000 for k in range(4001)]
    scores = [mos_from_r(r) for r in rs]
    assert all(b > a for a, b in zip(scores, scores[1:]))


def test_loss_folds_into_equipment_impairment():
    # Ppl=2% on G.711: Ie_eff = 0 + 95*2/(2+4.3)
    got = r_factor(EModelInputs(ppl_pct=2.0, bpl=4.3))
    assert got == pytest.approx(93.2 - 190 / 6.3, abs=1e-12)


def test_rating_clamps_to_unit_interval():
    assert r_factor(EModelInputs(id_factor=500.0)) == 0.0
    assert r_factor(EModelInputs(advantage=50.0)) == 100.0


def test_delay_impairment_breakpoint():
    assert id_from_delay(0) == 0.0
    assert id_from_delay(100) == pytest.approx(2.4)
    # the surcharge starts strictly past 177.3 ms
    assert id_from_delay(177.3) == pytest.approx(0.024 * 177.3)
    assert id_from_delay(200) == pytest.approx(0.024 * 200 + 0.11 * 22.7)
    with pytest.raises(DomainError):
        id_from_delay(-1.0)


def test_mos_label_rows():
    assert set(MOS_TABLE) == {1, 2, 3, 4, 5}
    assert mos_label(4.5) == ("Excellent", "No effort required")
    assert mos_label(2.575) == ("Fair", "Moderate effort required")
    assert mos_label(3.49) == ("Fair", "Moderate effort required")
    assert mos_label(1.0) == ("Bad", "No meaning understood with effort")
    with pytest.raises(DomainError):
        mos_label(0.99)
    with pytest.raises(DomainError):
        mos_label(5.01)


# --- per-packet records ------------------------------------------------------

def test_record_consistency_enforced():
    with pytest.raises(ValueError):
        VoicePacketRecord(0, 0, 0, 100, 200, True)
    with pytest.raises(ValueError):
        VoicePacketRecord(0, 0, 0, 100, None, False)
    with pytest.raises(ValueError):
        VoicePacketRecord(0, 0, 0, 100, 99, False)


def test_records_from_stream_skips_in_flight():
    s = MediaStream(3, 1, "a", "b", G711, t0=1_000, n_packets=4)
    for _ in range(4):
        s.recv.append(PENDING)
    s.mark_delivered(0, 40_000)
    s.mark_dropped(1)
    s.mark_delivered(3, 90_000)
    got = records_from_stream(s)
    assert [r.seq for r in got] == [0, 1, 3]
    assert got[0].t_send == 1_000 and got[0].t_recv == 40_000
    assert got[1].dropped and got[1].t_recv is None
    assert got[2].t_send == 1_000 + 3 * 20_000


def test_delay_budget_totals_and_guard():
    r = rec(0, 0, 31_400)
    b = delay_budget(r, G711)
    assert b.dn_ms == pytest.approx(31.4)
    assert b.total_ms == pytest.approx(31.4 + 1.0)
    assert e2e_delay_ms(r, G711) == pytest.approx(32.4)
    with pytest.raises(DroppedPacket):
        e2e_delay_ms(rec(0, 0, None), G711)
    with pytest.raises(DroppedPacket):
        delay_budget(rec(0, 0, None), G711)


# --- jitter ------------------------------------------------------------------

def test_jitter_positive_example():
    # delays 10, 15, 12 ms: spreads +5 then -3; max is +5 ms
    records = trace([10_000, 15_000, 12_000])
    assert jitter_us(records) == 5_000
    assert jitter(records) == pytest.approx(0.005)


def test_jitter_negative_when_delays_shrink():
    records = trace([20_000, 15_000, 10_000])
    assert jitter_us(records) == -5_000
    assert jitter(records) == pytest.approx(-0.005)


def test_jitter_pairs_skip_drops():
    # the delivered neighbours of a dropped packet form the pair
    records = trace([10_000, None, 16_000])
    assert jitter_us(records) == 6_000


def test_jitter_needs_two_delivered():
    with pytest.raises(InsufficientData):
        jitter_us(trace([10_000]))
    with pytest.raises(InsufficientData):
        jitter_us(trace([10_000, None, None]))
    with pytest.raises(InsufficientData):
        jitter_us([])


def test_jitter_zero_for_constant_delay():
    assert jitter_us(trace([7_000] * 50)) == 0


# --- packet delay variation --------------------------------------------------

def test_pdv_worked_example():
    # delays 50/55/60 ms: population variance 50/3 ms^2
    records = trace([50_000, 55_000, 60_000])
    assert pdv_us2(records) == Fraction(50_000_000, 3)
    assert pdv(records) == pytest.approx(50 / 3 * 1e-6)


def test_pdv_degenerate_cases():
    assert pdv_us2(trace([12_345])) == 0
    assert pdv_us2(trace([9_000] * 10)) == 0
    with pytest.raises(InsufficientData):
        pdv_us2(trace([None, None]))


# --- property checks against definitional oracles ---------------------------

delays_st = st.lists(
    st.one_of(st.integers(min_value=0, max_value=400_000), st.none()),
    min_size=2, max_size=40)


@settings(max_examples=300, deadline=None)
@given(delays_st)
def test_jitter_matches_bruteforce(delays):
    records = trace(delays)
    kept = [(r.t_send, r.t_recv) for r in records if not r.dropped]
    if len(kept) < 2:
        with pytest.raises(InsufficientData):
            jitter_us(records)
        return
    expected = max((b[1] - a[1]) - (b[0] - a[0]) for a, b in zip(kept, kept[1:]))
    assert jitter_us(records) == expected


@settings(max_examples=300, deadline=None)
@given(delays_st, st.integers(min_value=0, max_value=10**9))
def test_jitter_invariant_under_time_shift(delays, shift):
    if sum(d is not None for d in delays) < 2:
        return
    base = jitter_us(trace(delays))
    shifted = jitter_us(trace(delays, t0=shift))
    bumped = jitter_us(trace([None if d is None else d + 5_000 for d in delays]))
    assert base == shifted == bumped


@settings(max_examples=300, deadline=None)
@given(delays_st)
def test_pdv_matches_statistics_pvariance(delays):
    records = trace(delays)
    kept = [Fraction(r.t_recv - r.t_send) for r in records if not r.dropped]
    if not kept:
        with pytest.raises(InsufficientData):
            pdv_us2(records)
        return
    assert pdv_us2(records) == statistics.pvariance(kept)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=400_000), min_size=1,
                max_size=30),
       st.integers(min_value=0, max_value=200_000))
def test_pdv_invariant_under_delay_shift(delays, bump):
    assert pdv_us2(trace(delays)) == pdv_us2(trace([d + bump for d in delays]))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0, max_value=100),
       st.floats(min_value=0, max_value=100))
def test_rating_never_leaves_unit_interval(ppl, id_factor):
    r = r_factor(EModelInputs(ppl_pct=ppl, id_factor=id_factor))
    assert 0.0 <= r <= 100.0
    # the score cubic dips to ~0.9888 near R=3.2 before recovering; 4.5 at R=100
    assert 0.988 <= mos_from_r(r) <= 4.5 + 1e-9


# --- quality classes ---------------------------------------------------------

def test_delay_class_boundaries_favour_better():
    assert classify(150, 0).delay_class == GOOD
    assert classify(150.001, 0).delay_class == ACCEPTABLE
    assert classify(300, 0).delay_class == ACCEPTABLE
    assert classify(300.001, 0).delay_class == POOR


def test_jitter_class_uses_magnitude():
    assert classify(0, 20).jitter_class == GOOD
    assert classify(0, -20).jitter_class == GOOD
    assert classify(0, 20.001).jitter_class == ACCEPTABLE
    assert classify(0, 50).jitter_class == ACCEPTABLE
    assert classify(0, -50.001).jitter_class == POOR


# --- windowed aggregation ----------------------------------------------------

def test_bucketize_window_count_is_ceiling():
    none = bucketize([], G711, run_length_us=3_600_000_000, width_us=10_000_000)
    assert len(none) == 360
    ragged = bucketize([], G711, run_length_us=3_605_000_000, width_us=10_000_000)
    assert len(ragged) == 361


def test_bucketize_constant_delay_stream():
    # 60 s of 20 ms frames at a fixed 31.4 ms transit
    n = 3_000
    records = trace([31_400] * n)
    buckets = bucketize([records], G711, run_length_us=60_000_000,
                        width_us=10_000_000)
    assert len(buckets) == 6
    assert sum(b.samples for b in buckets) == n
    expected_mos = mos_from_r(93.2 - id_from_delay(32.4))
    for b in buckets:
        assert b.samples == 500
        assert b.dropped == 0
        assert b.jitter_s == 0.0
        assert b.mean_e2e_s == pytest.approx(0.0324)
        assert b.pdv_s2 == 0.0
        assert b.mos == pytest.approx(expected_mos)
        assert b.delay_class == GOOD and b.jitter_class == GOOD


def test_bucketize_empty_window_has_no_metrics():
    records = trace([5_000] * 3)  # all inside the first window
    buckets = bucketize([records], G711, run_length_us=40_000_000,
                        width_us=10_000_000)
    assert buckets[0].samples == 3
    for b in buckets[1:]:
        assert b.samples == 0
        assert b.jitter_s is None and b.mean_e2e_s is None
        assert b.pdv_s2 is None and b.mos is None
        assert b.delay_class is None and b.jitter_class is None


def test_bucketize_flags_warmup_windows():
    buckets = bucketize([], G711, run_length_us=50_000_000, width_us=10_000_000,
                        warm_up_us=20_000_000)
    assert [b.in_warmup for b in buckets] == [True, True, False, False, False]


def test_bucketize_pair_lands_in_later_window():
    records = [rec(0, 9_000, 10_000), rec(1, 11_000, 17_000)]
    buckets = bucketize([records], G711, run_length_us=20_000, width_us=10_000)
    assert buckets[0].samples == 1 and buckets[0].jitter_s is None
    assert buckets[1].jitter_s == pytest.approx(0.005)


def test_bucketize_clamps_straggler_to_last_window():
    records = [rec(0, 95_000, 96_000), rec(1, 170_000, 171_000)]
    buckets = bucketize([records], G711, run_length_us=100_000, width_us=30_000)
    assert len(buckets) == 4
    assert buckets[3].samples == 2


def test_bucketize_loss_lowers_window_mos():
    clean = trace([31_400] * 100)
    lossy = trace([31_400] * 98 + [None, None])
    width = 10_000_000
    b_clean = bucketize([clean], G711, run_length_us=width, width_us=width)[0]
    b_lossy = bucketize([lossy], G711, run_length_us=width, width_us=width)[0]
    assert b_lossy.dropped == 2
    assert b_lossy.mos < b_clean.mos
    expected = mos_from_r(r_factor(EModelInputs(
        ppl_pct=2.0, bpl=G711.bpl, id_factor=id_from_delay(32.4))))
    assert b_lossy.mos == pytest.approx(expected)


def test_bucketize_drop_only_window():
    records = trace([None] * 5)
    b = bucketize([records], G711, run_length_us=10_000_000,
                  width_us=10_000_000)[0]
    assert b.samples == 0 and b.dropped == 5
    assert b.mos is None


def test_bucketize_merges_streams():
    a = trace([10_000] * 4)
    b = trace([30_000] * 4)
    bucket = bucketize([a, b], G711, run_length_us=1_000_000,
                       width_us=1_000_000)[0]
    assert bucket.samples == 8
    assert bucket.mean_e2e_s == pytest.approx(0.021)  # mean 20 ms + 1 ms codec
    # jitter pairs never straddle streams: both are internally constant
    assert bucket.jitter_s == 0.0


def test_bucketize_rejects_bad_width():
    with pytest.raises(ValueError):
        bucketize([], G711, run_length_us=1_000, width_us=0)


# --- CSV ---------------------------------------------------------------------

def test_csv_layout_golden():
    full = QoSBucket(window_start_us=0, width_us=10_000_000, samples=500,
                     dropped=0, jitter_s=0.002, mean_e2e_s=0.0324,
                     pdv_s2=1.5e-05, mos=4.4, delay_class=GOOD,
                     jitter_class=GOOD, in_warmup=True)
    empty = QoSBucket(window_start_us=10_000_000, width_us=10_000_000,
                      samples=0, dropped=0, jitter_s=None, mean_e2e_s=None,
                      pdv_s2=None, mos=None, delay_class=None,
                      jitter_class=None, in_warmup=False)
    fh = io.StringIO()
    write_metrics_csv(fh, "demo", 7, {1: [empty], 0: [full]})
    expected = "\n".join([
        "scenario,seed,direction,window_start_s,samples,jitter_s,e2e_s,"
        "pdv_s2,mos,delay_class,jitter_class",
        "demo,7,caller_to_callee,0.000000000,500,0.002000000,0.032400000,"
        "0.000015000,4.400000000,Good,Good",
        "demo,7,callee_to_caller,10.000000000,0,,,,,,",
        "",
    ])
    assert fh.getvalue() == expected
