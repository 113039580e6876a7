"""Acceptance suite: one test per criterion, each with its own time limit.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
PASS/FAIL per criterion.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest

from skewserve.bank import CLASS_SPECIFIC, GENERAL, NO_SKEW, Cascade, ModelBank, ModelProfile
from skewserve.cli import EXIT_OK, main
from skewserve.perforation.network import (MacCounter, MaskSet, cost_of, forward, random_mask,
                                           random_network, reference_forward)
from skewserve.perforation.prune import PositionOracle, candidates, greedy_prune
from skewserve.perforation.select import TableEvaluator, binary_search_select
from skewserve.problayer import ClassDistribution, RescaleConfig, rescale, rescale_with_bypass_batch
from skewserve.profiler import CHANGED, DETECTED, ENDED, ProfilerConfig, SkewProfiler
from skewserve.scheduler import choose_model
from skewserve.sim.backend import ConfusionBackend
from skewserve.sim.stream import STRATIFIED, SegmentSpec, StreamSpec, generate_stream


class Clock:
    def __init__(self, limit):
        self.limit = limit
        self.t0 = time.perf_counter()

    def check(self):
        secs = time.perf_counter() - self.t0
        assert secs < self.limit, f"took {secs:.1f}s, limit {self.limit}s"
        return secs


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1, "rescaling matches the Bayes posterior on 50 discrete models")
def test_c01_bayes_consistency():
    clock = Clock(5)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(5, 21))
        f = int(rng.integers(8, 65))
        lik = rng.dirichlet(np.ones(f), k)               # P(x | i)
        train = rng.dirichlet(np.ones(k)) + 1e-3
        train /= train.sum()
        test = rng.dirichlet(np.ones(k))
        cfg = RescaleConfig(ClassDistribution(train), ClassDistribution(test))
        for x in range(f):
            post_train = lik[:, x] * train / np.sum(lik[:, x] * train)
            post_test = lik[:, x] * test / np.sum(lik[:, x] * test)
            worst = max(worst, float(np.max(np.abs(rescale(post_train, cfg) - post_test))))
    print(f"max abs error {worst:.2e}")
    assert worst <= 1e-12
    clock.check()


# ---------------------------------------------------------------- 2

@pytest.mark.criterion(2, "identity / zero-exclusion / normalization on 10,000 instances")
def test_c02_rescaling_invariants():
    clock = Clock(5)
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        n = int(rng.integers(2, 21))
        train = ClassDistribution.from_weights(rng.random(n) + 1e-3)
        w = rng.random(n)
        w[rng.random(n) < 0.3] = 0.0
        w[rng.integers(n)] = max(w.max(), 0.1)
        test = ClassDistribution.from_weights(w)
        v = rng.dirichlet(np.full(n, 0.5))
        v = np.maximum(v, 1e-300)
        v /= v.sum()
        assert np.max(np.abs(rescale(v, RescaleConfig(train, train)) - v)) <= 1e-12
        out = rescale(v, RescaleConfig(train, test))
        assert np.all(out[test.probs == 0] == 0.0)
        assert abs(out.sum() - 1.0) <= 1e-9
    clock.check()


# ---------------------------------------------------------------- 3, 4

def rescaling_gain(seed, n_dom, p, frames=10_000, universe=100, accuracy=0.70):
    spec = StreamSpec((SegmentSpec(n_dom, p, frames, seed=seed),), universe=universe, seed=seed)
    stream = generate_stream(spec)
    model = ModelProfile("m", GENERAL, NO_SKEW, 0, 1, accuracy)
    backend = ConfusionBackend(universe, {"m": accuracy}, seed=seed)
    v = backend.simulate(model, stream.labels, np.random.default_rng([seed, 1]))
    # the correct prior: the stream's own class distribution
    w = np.full(universe, (1 - p) / (universe - n_dom))
    w[list(stream.dominants[0])] = p / n_dom
    cfg = RescaleConfig(ClassDistribution.uniform(universe), ClassDistribution.from_weights(w))
    out, _ = rescale_with_bypass_batch(v, cfg)
    return float(np.mean(out.argmax(1) == stream.labels) - np.mean(v.argmax(1) == stream.labels))


@pytest.mark.criterion(3, "rescaling gain >= 0.10 at n=5 p=1, every seed")
def test_c03_strong_skew_gain():
    clock = Clock(30)
    gains = [rescaling_gain(s, 5, 1.0) for s in range(10)]
    print("gains", " ".join(f"{g:+.3f}" for g in gains))
    assert min(gains) >= 0.10
    clock.check()


@pytest.mark.criterion(4, "rescaling gain > 0 at n=10 p=0.9, every seed")
def test_c04_weak_skew_gain():
    clock = Clock(30)
    gains = [rescaling_gain(s, 10, 0.9) for s in range(10)]
    print("gains", " ".join(f"{g:+.3f}" for g in gains))
    assert min(gains) > 0
    clock.check()


# ---------------------------------------------------------------- 5

def switch_run(run):
    combos = list(itertools.product([1, 2, 3, 5, 10], [0.9, 1.0]))
    n, p = combos[run % len(combos)]
    rng = np.random.default_rng([run, 5])
    cls = rng.choice(100, 2 * n, replace=False)
    a, b = tuple(sorted(cls[:n])), tuple(sorted(cls[n:]))
    spec = StreamSpec((SegmentSpec(n, p, 300, a, seed=0, sampling=STRATIFIED),
                       SegmentSpec(n, p, 300, b, seed=1, sampling=STRATIFIED)), seed=run)
    prof = SkewProfiler(ProfilerConfig(universe=100, w_min=30, pi_r=2))
    for y in generate_stream(spec).labels:
        prof.ingest(int(y))
    switches = [e.frame for e in prof.events if e.kind in (CHANGED, ENDED)]
    detected = [e.frame for e in prof.events if e.kind == DETECTED and e.frame <= 300]
    early = [f for f in switches if f <= 300]
    late = [f for f in switches if f > 300]
    return bool(detected) and not early and len(late) == 1 and late[0] - 300 <= 60


@pytest.mark.criterion(5, "switch found within 2*w_min, no false switches, >= 95/100 runs")
def test_c05_switch_detection():
    clock = Clock(20)
    ok = sum(switch_run(r) for r in range(100))
    print(f"{ok}/100 runs")
    assert ok >= 95
    clock.check()


# ---------------------------------------------------------------- 6

def linear_scan(accs, need):
    for i, a in enumerate(accs):
        if a >= need:
            return i
    return None


def cascades_of_length(length, rng):
    if length <= 4:
        # every nondecreasing sequence over a coarse grid
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        yield from (list(c) for c in itertools.combinations_with_replacement(grid, length))
    yield [0.5] * length
    yield [round((i + 1) / length, 2) for i in range(length)]
    for _ in range(12):
        yield sorted(int(x) / 100 for x in rng.integers(0, 101, length))


@pytest.mark.criterion(6, "bisection equals linear scan; calls <= ceil(log2 len) + 1")
def test_c06_bisection_vs_linear_scan():
    clock = Clock(10)
    rng = np.random.default_rng(6)
    targets = [t / 100 for t in range(1, 101)]
    checked = 0
    for length in range(1, 65):
        bound = math.ceil(math.log2(length)) + 1
        for accs in cascades_of_length(length, rng):
            c = Cascade(tuple(ModelProfile(f"m{i}", GENERAL, NO_SKEW, 0, i, a)
                              for i, a in enumerate(accs)))
            for t in targets:
                for delta in (0.0, 0.02):
                    ev = TableEvaluator()
                    sel = binary_search_select(c, "1", t, delta, ev)
                    want = linear_scan(accs, t - delta)
                    if want is None:
                        assert sel.unmet and sel.index == length - 1
                    else:
                        assert not sel.unmet and sel.index == want
                    assert ev.calls <= bound
                    checked += 1
    print(f"{checked} selections")
    clock.check()


# ---------------------------------------------------------------- 7

@pytest.mark.criterion(7, "chooseModel equals exhaustive scan on 1,000 random banks")
def test_c07_scheduler_optimality():
    clock = Clock(5)
    rng = np.random.default_rng(77)
    for b in range(1000):
        n = int(rng.integers(1, 33))
        keys = [NO_SKEW, "1,2", "3"]
        bank = ModelBank()
        by_key = {k: [] for k in keys}
        for i in range(n):
            key = keys[0] if i == 0 else keys[int(rng.integers(0, 3))]
            macs = int(rng.integers(1, 50)) * 1_000_000
            acc = int(rng.integers(0, 101)) / 100
            kind = GENERAL if key == NO_SKEW else CLASS_SPECIFIC
            m = ModelProfile(f"b{b}m{i}", kind, key, 0, macs, acc)
            bank.register(m)
            by_key[key].append(m)
        epm = 1e-8
        epf = float(rng.uniform(0, 60e6)) * epm
        for key in keys:
            pool = by_key[key] or by_key[NO_SKEW]
            ok = [m for m in pool if m.macs * epm <= epf]
            if ok:
                best = max(m.accuracy for m in ok)
                want = min(m.macs for m in ok if m.accuracy == best), best
            else:
                cheap = min(m.macs for m in pool)
                want = cheap, max(m.accuracy for m in pool if m.macs == cheap)
            got = choose_model(epf, key, bank, epm)
            assert (got.macs, got.accuracy) == want
    clock.check()


# ---------------------------------------------------------------- 8

@pytest.mark.criterion(8, "perforation shape, bit-identity and MAC count on 200 random nets")
def test_c08_perforation_invariants():
    clock = Clock(30)
    rng = np.random.default_rng(88)
    for _ in range(200):
        net = random_network(rng, max_conv=6)
        s = net.input_shape
        x = rng.standard_normal((2, s.height, s.width, s.channels))
        assert np.array_equal(forward(net, MaskSet.full(net), x), reference_forward(net, x))
        ref_hidden = []
        forward(net, None, x[0], hidden=ref_hidden)
        for _ in range(3):
            mask = random_mask(net, rng)
            hidden, counter = [], MacCounter()
            y = forward(net, mask, x[0], counter=counter, hidden=hidden)
            assert y.shape == (net.n_classes,)
            assert hidden == ref_hidden
            assert counter.macs == cost_of(net, mask)[0]
    clock.check()


# ---------------------------------------------------------------- 9

@pytest.mark.criterion(9, "zero-importance position pruned first in 100/100 constructions")
def test_c09_greedy_pruner():
    clock = Clock(10)
    rng = np.random.default_rng(99)
    hits = 0
    for _ in range(100):
        net = random_network(rng, max_conv=4)
        first = [c.position for c, _ in candidates(net, MaskSet.full(net))]
        imp = {p: float(rng.uniform(0.01, 0.5)) for p in first}
        zero = first[int(rng.integers(len(first)))]
        imp[zero] = 0.0
        snaps = greedy_prune(net, PositionOracle(net, importance=imp))
        hits += snaps[1].step.position == zero
        macs = [s.macs for s in snaps]
        assert all(a > b for a, b in zip(macs, macs[1:]))
    print(f"{hits}/100")
    assert hits == 100
    clock.check()


# ---------------------------------------------------------------- 10

@pytest.mark.criterion(10, "bench n=10 p=0.9: accuracy up and >= 3x fewer MACs per frame")
def test_c10_end_to_end_bench(tmp_path, capsys):
    clock = Clock(60)
    assert main(["bench", "--preset", "skew-n10-p0.9", "--seeds", "0-9",
                 "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "bench.json").read_text())
    rows = doc["rows"]
    deltas = [r["delta"] for r in rows]
    ratio = sum(r["baseline_macs"] for r in rows) / sum(r["macs"] for r in rows)
    print(f"deltas {min(deltas):+.4f}..{max(deltas):+.4f} mean {np.mean(deltas):+.4f}; "
          f"MACs reduced {ratio:.2f}x")
    assert np.mean(deltas) > 0 and min(deltas) > 0
    assert ratio >= 3.0
    clock.check()


# ---------------------------------------------------------------- 11

@pytest.mark.criterion(11, "two identical runs give byte-identical reports")
def test_c11_determinism(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["run", "--preset", "skew-n5-p1", "--seed", "3", "--out", str(d)]) == EXIT_OK
        outs.append(((d / "report.json").read_bytes(), (d / "report.csv").read_bytes()))
    assert outs[0] == outs[1]
