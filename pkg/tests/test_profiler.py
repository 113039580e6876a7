import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skewserve.profiler import (CHANGED, COLD, DETECTED, ENDED, HOT, UPDATED, HotTracker,
                                ProfilerConfig, SkewProfiler, WindowRecord, detect_change,
                                estimate_skew, skew_prior, window_distance)

A, B, C = 0, 1, 2


def window(universe=10, **counts):
    c = np.zeros(universe, dtype=np.int64)
    for k, v in counts.items():
        c[int(k[1:])] = v
    return WindowRecord(c, int(c.sum()))


def feed(prof, labels, bypassed=False):
    out = []
    for y in labels:
        out.append(prof.ingest(int(y), bypassed))
    return out


def block(counts, rng=None):
    """30 labels with the given per-class counts, shuffled."""
    labels = np.repeat(list(counts), list(counts.values()))
    if rng is not None:
        labels = rng.permutation(labels)
    return labels


def kinds(prof):
    return [e.kind for e in prof.events]


# ------------------------------------------------------------- window distance

def test_window_distance_examples():
    w1 = window(c0=20, c1=10)
    assert window_distance(w1, w1) == 0
    assert window_distance(w1, window(c0=19, c1=11)) == 1
    assert window_distance(window(c0=30), window(c5=30)) == 30
    assert window_distance(w1, window(c0=19, c1=11), metric="l1") == 2


def test_window_distance_length_mismatch():
    with pytest.raises(ValueError):
        window_distance(window(c0=30), window(c0=29))


def test_window_record_validates():
    with pytest.raises(ValueError):
        WindowRecord(np.array([3, 1]), 5)
    w = WindowRecord.from_labels([1, 1, 2], 4)
    assert list(w.counts) == [0, 2, 1, 0]


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["linf", "l1"]))
def test_window_distance_is_a_metric(seed, metric):
    rng = np.random.default_rng(seed)
    ws = [WindowRecord.from_labels(rng.integers(0, 6, 30), 6) for _ in range(3)]
    d = lambda a, b: window_distance(a, b, metric)
    assert d(ws[0], ws[0]) == 0
    assert d(ws[0], ws[1]) == d(ws[1], ws[0])
    assert d(ws[0], ws[2]) <= d(ws[0], ws[1]) + d(ws[1], ws[2])
    if d(ws[0], ws[1]) == 0:
        assert np.array_equal(ws[0].counts, ws[1].counts)


# --------------------------------------------------------------- ingest

def test_window_boundary():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    out = feed(prof, [A] * 29)
    assert all(o is None for o in out) and prof.frame == 29
    feed(prof, [A])
    assert prof._prev is not None and prof._window_len == 0


def test_close_windows_extend_the_epoch():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    feed(prof, block({A: 20, B: 10}))
    est = feed(prof, block({A: 19, B: 11}))[-1]
    assert est is not None and est.epoch_len == 60
    assert est.dominant == (A, B)
    assert kinds(prof) == [DETECTED]


def test_distant_window_starts_new_epoch():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    feed(prof, block({A: 20, B: 10}))
    # distance is 30 here (class C goes 0 -> 30), well past pi_r
    assert feed(prof, block({C: 30}))[-1] is None
    assert prof.events == []
    est = feed(prof, block({C: 30}))[-1]
    assert est.dominant == (C,) and est.epoch_len == 60


def test_estimates_only_on_window_boundaries():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    rng = np.random.default_rng(0)
    for _ in range(10):
        for i, o in enumerate(feed(prof, block({A: 15, B: 15}, rng))):
            if o is not None:
                assert i == 29 and o.epoch_len % 30 == 0


def test_two_broken_windows_end_the_skew():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    for _ in range(3):
        feed(prof, block({A: 15, B: 15}))
    feed(prof, block({C: 30}))         # breaks the epoch, skew held in grace
    assert prof.live is not None and ENDED not in kinds(prof)
    feed(prof, block({A: 15, B: 15}))  # distance 30 from the broken window: second break
    assert prof.events[-1].kind == ENDED and prof.events[-1].reason == "windows unstable"


def test_wider_pi_r_absorbs_the_same_window():
    prof = SkewProfiler(ProfilerConfig(universe=10, pi_r=16))
    for _ in range(4):
        feed(prof, block({A: 15, B: 15}))
    feed(prof, block({A: 30}))         # distance 15 <= 16: stays in the epoch
    assert kinds(prof) == [DETECTED, UPDATED, UPDATED, UPDATED]


def test_no_grace_ends_on_first_break():
    prof = SkewProfiler(ProfilerConfig(universe=10, grace_windows=0))
    for _ in range(3):
        feed(prof, block({A: 15, B: 15}))
    feed(prof, block({A: 30}))
    assert prof.events[-1].kind == ENDED


def test_rejoined_epoch_keeps_counts():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    for _ in range(3):
        feed(prof, block({A: 15, B: 15}))
    feed(prof, block({A: 14, B: 13, C: 3}))   # distance 3 > 2: breaks, epoch held
    feed(prof, block({A: 15, B: 14, C: 1}))   # distance 2 to the break: new epoch, same key
    assert prof.events[-1].kind == UPDATED and prof.events[-1].reason == "epoch rejoined"
    assert prof.live.epoch_len == 150


def test_changed_event_for_a_different_confirmed_skew():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    for _ in range(3):
        feed(prof, block({A: 15, B: 15}))
    feed(prof, block({C: 15, 3: 15}))
    feed(prof, block({C: 15, 3: 15}))
    ev = prof.events[-1]
    assert ev.kind == CHANGED
    assert ev.previous.dominant == (A, B) and ev.estimate.dominant == (C, 3)


def test_confident_out_of_skew_predictions_end_the_skew():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    for _ in range(2):
        feed(prof, block({A: 15, B: 15}))
    assert prof.live is not None
    feed(prof, [C] * 30, bypassed=True)
    assert prof.events[-1].kind == ENDED
    assert prof.events[-1].reason == "confident predictions outside skew"


def test_flush_closes_live_skew():
    prof = SkewProfiler(ProfilerConfig(universe=10))
    for _ in range(2):
        feed(prof, block({A: 15, B: 15}))
    prof.flush()
    assert prof.events[-1].kind == ENDED and prof.live is None
    prof.flush()
    assert kinds(prof).count(ENDED) == 1


def test_out_of_range_label():
    with pytest.raises(ValueError):
        SkewProfiler(ProfilerConfig(universe=5)).ingest(5)


def test_uniform_stream_never_detects():
    prof = SkewProfiler(ProfilerConfig(universe=100))
    feed(prof, np.random.default_rng(1).integers(0, 100, 3000))
    assert prof.events == []


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_stationary_skew_never_switches(seed, n_dom):
    rng = np.random.default_rng(seed)
    dom = rng.choice(100, n_dom, replace=False)
    counts = np.bincount(np.arange(27) % n_dom, minlength=n_dom)
    base = {int(d): int(c) for d, c in zip(dom, counts)}
    others = [c for c in range(100) if c not in base]
    prof = SkewProfiler(ProfilerConfig(universe=100))
    for _ in range(20):
        # identical composition every window, shuffled order
        w = dict(base)
        w[others[0]] = 3
        feed(prof, block(w, rng))
    ks = kinds(prof)
    assert ks[0] == DETECTED and set(ks[1:]) <= {UPDATED}
    assert len({e.estimate.dominant for e in prof.events}) == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=0, max_size=400))
def test_profiler_deterministic(labels):
    runs = []
    for _ in range(2):
        prof = SkewProfiler(ProfilerConfig(universe=10))
        feed(prof, labels)
        runs.append([(e.kind, e.frame, e.estimate.key if e.estimate else None) for e in prof.events])
    assert runs[0] == runs[1]


# --------------------------------------------------------------- estimates

def test_single_class_epoch():
    est = estimate_skew(np.bincount([A] * 60, minlength=10), ProfilerConfig(universe=10))
    assert est.dominant == (A,)
    assert est.distribution.probs[A] == pytest.approx(1 - 9e-3)
    assert est.is_skew


def test_ten_of_hundred_skew():
    counts = np.zeros(100, dtype=np.int64)
    counts[:10] = 54
    counts[10:70] = 1        # 10% of 600 frames spread elsewhere
    est = estimate_skew(counts, ProfilerConfig(universe=100))
    assert est.dominant == tuple(range(10))
    assert est.mass == pytest.approx(0.9)


def test_uniform_counts_mean_no_skew():
    est = estimate_skew(np.full(100, 6), ProfilerConfig(universe=100))
    assert len(est.dominant) == 100 and not est.is_skew


def test_low_mass_is_not_a_skew():
    # 3 classes at 3% each pass the 2% threshold but hold only 9% of frames
    counts = np.zeros(100, dtype=np.int64)
    counts[:3] = 9
    counts[3:] = 3
    est = estimate_skew(counts, ProfilerConfig(universe=100))
    assert est.dominant == (0, 1, 2) and not est.is_skew


def test_hysteresis_keeps_live_classes():
    counts = np.zeros(100, dtype=np.int64)
    counts[:9] = 30
    counts[9] = 4            # 4/300 = 1.3%: under 2%, over 1%
    counts[10:] = 0
    cfg = ProfilerConfig(universe=100)
    assert 9 not in estimate_skew(counts, cfg).dominant
    assert 9 in estimate_skew(counts, cfg, keep=(9,)).dominant


def test_estimate_needs_a_window():
    with pytest.raises(ValueError):
        estimate_skew(np.array([5, 5]), ProfilerConfig(universe=2))


def test_skew_prior():
    d = skew_prior([30, 10, 2, 0], [0, 1], eps=0.01)
    np.testing.assert_allclose(d.probs, [0.98 * 0.75, 0.98 * 0.25, 0.01, 0.01])
    d = skew_prior([1, 3], [0, 1], eps=0.0)
    np.testing.assert_allclose(d.probs, [0.25, 0.75])
    with pytest.raises(ValueError):
        skew_prior([1, 0, 0], [0], eps=0.6)


def test_detect_change_examples():
    est = estimate_skew(np.bincount([A] * 30 + [B] * 30, minlength=10), ProfilerConfig(universe=10))
    inside = [A] * 30
    assert not detect_change(inside, [True] * 30, est, 0.2)
    assert detect_change([C] * 30, [True] * 30, est, 0.2)
    preds = [C] * 4 + [A] * 26
    assert detect_change(preds, [True] * 30, est, 0.1)          # 4/30 > 0.1
    assert not detect_change(preds, [True] * 30, est, 0.2)
    assert not detect_change(preds, [False] * 30, est, 0.1)      # not confident
    assert not detect_change([], [], est, 0.1)


@pytest.mark.parametrize("kw", [dict(w_min=0), dict(pi_r=-1), dict(pi_h=0),
                                dict(dominance_threshold=1.0), dict(metric="l2"),
                                dict(hysteresis=0.0), dict(key_match=1.5)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ProfilerConfig(universe=10, **kw)


# --------------------------------------------------------------- hot tracker

def test_hot_after_pi_h_appearances():
    t = HotTracker(pi_h=3)
    assert t.record_appearance("1,2") == COLD
    assert t.record_appearance("1,2") == COLD
    assert t.record_appearance("1,2") == HOT
    assert list(t.pending_compile) == ["1,2"]
    assert t.record_appearance("1,2") == HOT
    assert list(t.pending_compile) == ["1,2"]


def test_keys_counted_independently():
    t = HotTracker(pi_h=2)
    t.record_appearance("1")
    t.record_appearance("2")
    assert t.appearances == {"1": 1, "2": 1}


def test_hot_key_with_model_not_enqueued():
    t = HotTracker(pi_h=1)
    t.record_appearance("1", has_specific=True)
    assert t.is_hot("1") and not t.pending_compile


def test_similar_keys_share_a_count():
    t = HotTracker(pi_h=3, key_match=0.8)
    t.record_appearance("1,2,3,4,5")
    t.record_appearance("1,2,3,4,5,6")     # J = 5/6
    t.record_appearance("1,2,3,4")         # J = 4/5
    assert t.appearances == {"1,2,3,4,5": 3}
    assert t.pop_pending() == "1,2,3,4,5" and t.pop_pending() is None


def test_tracker_keeps_longest_estimate():
    cfg = ProfilerConfig(universe=10)
    short = estimate_skew(np.bincount([A] * 30, minlength=10), cfg)
    long = estimate_skew(np.bincount([A] * 90, minlength=10), cfg)
    t = HotTracker()
    t.record_appearance("0", long)
    t.record_appearance("0", short)
    assert t.estimates["0"] is long


def test_rare_classes_are_not_dominant_in_short_epochs():
    counts = np.zeros(100, dtype=np.int64)
    counts[:40] = 3          # 3/120 = 2.5% passes the share but not the count
    est = estimate_skew(counts, ProfilerConfig(universe=100))
    assert not est.is_skew
    assert estimate_skew(counts, ProfilerConfig(universe=100, min_count=3)).is_skew
