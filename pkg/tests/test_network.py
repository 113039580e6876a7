import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skewserve.perforation.container import NetworkFormatError, load_network, save_network
from skewserve.perforation.network import (CONV, GAP, FC, SOFTMAX, LayerSpec, MacCounter, MaskSet,
                                           Network, ShapeError, TensorShape, build_network,
                                           cost_of, fill_map, forward, random_mask,
                                           random_network, reference_forward, toy_network)


# ------------------------------------------------------------------ oracle

def naive_conv(x, w, b, stride):
    """Loop-based 'same' convolution of one (H, W, C) map."""
    h, wd, _ = x.shape
    o, d = w.shape[0], w.shape[1]
    p = d // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((ho, wo, o))
    for i in range(ho):
        for j in range(wo):
            patch = xp[i * stride:i * stride + d, j * stride:j * stride + d, :]
            for k in range(o):
                out[i, j, k] = np.sum(patch * w[k]) + b[k]
    return out


def lower_fill(keep):
    """Masked channel c copies the nearest kept channel below it, else the highest kept."""
    kept = [i for i, k in enumerate(keep) if k]
    src = []
    for c in range(len(keep)):
        below = [i for i in kept if i <= c]
        src.append(below[-1] if below else kept[-1])
    return src


def oracle_forward(net, mask, x):
    """Perforated forward on full logical maps, written straight from the rules."""
    x = np.asarray(x, dtype=np.float64)
    j = 0
    for layer in net.layers:
        if layer.kind == CONV:
            h_out, w_out = -(-x.shape[0] // layer.stride), -(-x.shape[1] // layer.stride)
            if not mask.layer_mask[j]:
                x = x[::layer.stride, ::layer.stride]
                c = x.shape[2]
                x = x[:, :, [i % c for i in range(layer.out_channels)]]
            else:
                boost = mask.stride_boost[j]
                y = naive_conv(x, layer.weights, layer.bias, layer.stride * boost)
                up = np.empty((h_out, w_out, y.shape[2]))
                for a in range(h_out):
                    for bb in range(w_out):
                        up[a, bb] = y[a // boost, bb // boost]
                up = np.maximum(up, 0.0) if layer.activation == "relu" else up
                x = up[:, :, lower_fill(mask.channel_mask[j])]
            j += 1
        elif layer.kind == GAP:
            x = x.mean(axis=(0, 1))
        elif layer.kind == FC:
            x = layer.weights @ x + layer.bias
        elif layer.kind == SOFTMAX:
            e = np.exp(x - x.max())
            x = e / e.sum()
    return x


def single_conv_net(h=8, w=8, c_in=3, c_out=16, d=3, stride=1, n_classes=2, seed=0):
    return build_network((h, w, c_in), [(c_out, d, stride)], n_classes, seed=seed)


# ------------------------------------------------------------------ forward

def test_full_mask_is_bit_identical_to_reference():
    net = toy_network(seed=1)
    x = np.random.default_rng(0).standard_normal((4, 16, 16, 3))
    assert np.array_equal(forward(net, MaskSet.full(net), x), reference_forward(net, x))
    assert np.array_equal(forward(net, None, x[0]), reference_forward(net, x[0]))


def test_reference_matches_naive_loops():
    net = build_network((6, 5, 2), [(4, 3, 1), (3, 3, 2)], 5, seed=4)
    x = np.random.default_rng(1).standard_normal((6, 5, 2))
    np.testing.assert_allclose(reference_forward(net, x), oracle_forward(net, MaskSet.full(net), x),
                               atol=1e-12)


def test_two_layer_net_with_second_layer_skipped():
    net = build_network((5, 5, 2), [(3, 3, 1), (5, 3, 1)], 4, seed=7)
    x = np.random.default_rng(2).standard_normal((5, 5, 2))
    mask = MaskSet.full(net).with_layer(1, False)
    # by hand: conv1 + relu, tile 3 channels to 5 as (0,1,2,0,1), pool, fc, softmax
    l1 = net.layers[0]
    z = np.maximum(naive_conv(x, l1.weights, l1.bias, 1), 0)[:, :, [0, 1, 2, 0, 1]]
    fc = net.layers[3]
    logits = fc.weights @ z.mean(axis=(0, 1)) + fc.bias
    want = np.exp(logits - logits.max())
    want /= want.sum()
    np.testing.assert_allclose(forward(net, mask, x), want, atol=1e-12)


def test_stride_boost_restores_blocks():
    # one conv, 8x8, boost 2: pooled features equal the mean of the 4x4 strided map
    net = single_conv_net(n_classes=3)
    x = np.random.default_rng(3).standard_normal((8, 8, 3))
    l = net.layers[0]
    small = np.maximum(naive_conv(x, l.weights, l.bias, 2), 0)
    assert small.shape == (4, 4, 16)
    up = np.repeat(np.repeat(small, 2, 0), 2, 1)
    for a in range(0, 8, 2):
        for b in range(0, 8, 2):
            assert np.all(up[a:a + 2, b:b + 2] == up[a, b])
    fc = net.layers[2]
    logits = fc.weights @ up.mean(axis=(0, 1)) + fc.bias
    want = np.exp(logits - logits.max())
    want /= want.sum()
    got = forward(net, MaskSet.full(net).with_boost(0, 2), x)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_channel_fill_rule():
    assert list(fill_map(np.array([True, False, False, True]))) == [0, 0, 0, 1]
    assert list(fill_map(np.array([False, True, False, True]))) == [1, 0, 0, 1]
    with pytest.raises(ShapeError):
        fill_map(np.array([False, False]))


def test_fill_map_matches_rule_on_random_masks():
    rng = np.random.default_rng(5)
    for _ in range(200):
        keep = rng.random(int(rng.integers(1, 20))) < 0.5
        if not keep.any():
            keep[0] = True
        kept = np.flatnonzero(keep)
        logical_src = kept[fill_map(keep)]
        assert list(logical_src) == lower_fill(keep)


def test_hidden_shapes_match_unmasked():
    net = toy_network()
    rng = np.random.default_rng(9)
    ref = []
    forward(net, None, np.zeros((16, 16, 3)), hidden=ref)
    for _ in range(20):
        hid = []
        forward(net, random_mask(net, rng), rng.standard_normal((16, 16, 3)), hidden=hid)
        assert hid == ref


def test_input_shape_mismatch():
    net = toy_network()
    with pytest.raises(ShapeError):
        forward(net, None, np.zeros((8, 8, 3)))


def test_network_rejects_inconsistent_layers():
    w = np.zeros((4, 3, 3, 2))
    with pytest.raises(ShapeError, match="layer 0"):
        Network((LayerSpec(CONV, 3, 4, 3, 1, "relu", w, np.zeros(4)), LayerSpec(GAP),
                 LayerSpec(FC, 4, 2, weights=np.zeros((2, 4)), bias=np.zeros(2)),
                 LayerSpec(SOFTMAX)), TensorShape(4, 4, 3), 2)
    with pytest.raises(ShapeError):
        Network((LayerSpec(GAP), LayerSpec(SOFTMAX)), TensorShape(4, 4, 3), 3)


def test_mask_validation():
    net = toy_network()
    m = MaskSet.full(net)
    with pytest.raises(ShapeError):
        MaskSet((False,) * 4, m.channel_mask, m.stride_boost).validate(net)
    with pytest.raises(ShapeError):
        m.with_channels_off(0, np.arange(16)).validate(net)
    with pytest.raises(ShapeError):
        MaskSet(m.layer_mask[:3], m.channel_mask[:3], m.stride_boost[:3]).validate(net)


def test_mask_json_roundtrip():
    net = toy_network()
    m = random_mask(net, np.random.default_rng(0))
    assert MaskSet.from_json(m.to_json()) == m
    assert hash(MaskSet.from_json(m.to_json())) == hash(m)


# ------------------------------------------------------------------ cost

def test_cost_hand_arithmetic():
    net = single_conv_net(n_classes=2)
    fc_macs, fc_params = 16 * 2, 16 * 2 + 2
    full = MaskSet.full(net)
    assert cost_of(net, full) == (27_648 + fc_macs, 432 + 16 + fc_params)
    assert cost_of(net, full.with_boost(0, 2))[0] == 6_912 + fc_macs


def test_skipped_layer_costs_nothing():
    net = build_network((8, 8, 3), [(16, 3, 1), (16, 3, 1)], 2)
    full = cost_of(net)[0]
    skipped = cost_of(net, MaskSet.full(net).with_layer(1, False))[0]
    assert full - skipped == 8 * 8 * 16 * 9 * 16


def test_cost_matches_instrumented_forward_toy():
    net = toy_network()
    rng = np.random.default_rng(0)
    for _ in range(30):
        m = random_mask(net, rng)
        counter = MacCounter()
        forward(net, m, rng.standard_normal((16, 16, 3)), counter=counter)
        assert counter.macs == cost_of(net, m)[0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_nets_and_masks_follow_the_oracle(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, max_conv=4)
    mask = random_mask(net, rng)
    s = net.input_shape
    x = rng.standard_normal((s.height, s.width, s.channels))
    counter = MacCounter()
    got = forward(net, mask, x, counter=counter)
    assert got.shape == (net.n_classes,)
    np.testing.assert_allclose(got, oracle_forward(net, mask, x), atol=1e-10)
    assert counter.macs == cost_of(net, mask)[0]


# ------------------------------------------------------------------ container

@pytest.mark.parametrize("suffix", [".sknw", ".json"])
def test_container_roundtrip(tmp_path, suffix):
    net = toy_network(seed=3)
    p = tmp_path / f"net{suffix}"
    save_network(net, p)
    back = load_network(p)
    assert back.name == net.name and back.n_classes == net.n_classes
    x = np.random.default_rng(0).standard_normal((2, 16, 16, 3))
    assert np.array_equal(forward(back, None, x), forward(net, None, x))


def test_container_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.sknw"
    p.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(NetworkFormatError):
        load_network(p)
    good = tmp_path / "good.sknw"
    save_network(toy_network(), good)
    data = good.read_bytes()
    cut = tmp_path / "cut.sknw"
    cut.write_bytes(data[:-100])
    with pytest.raises(NetworkFormatError):
        load_network(cut)
    with pytest.raises(OSError):
        load_network(tmp_path / "missing.sknw")
