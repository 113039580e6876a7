"""A small NHWC convolutional network with layer, channel and stride perforation.

Feature maps travel as a pair ``(data, lmap)``: ``data`` holds only the
channels that were actually computed and ``lmap[c]`` names the computed
channel standing in for logical channel ``c``. Perforated channels and
skipped layers therefore cost nothing downstream: a convolution over a map
with repeated channels is the same as one over the distinct channels with
the repeated filter slices summed, and that is how it is evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CONV = "conv"
GAP = "global-average-pool"
FC = "fully-connected"
SOFTMAX = "softmax"
KINDS = (CONV, GAP, FC, SOFTMAX)


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ShapeError(f"tensor dimensions must be >= 1, got {self}")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    activation: str = "none"
    weights: np.ndarray | None = field(default=None, repr=False)
    bias: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        if self.kind == CONV:
            return self.out_channels * self.kernel * self.kernel * self.in_channels + self.out_channels
        if self.kind == FC:
            return self.out_channels * self.in_channels + self.out_channels
        return 0


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[LayerSpec, ...]
    input_shape: TensorShape
    n_classes: int
    name: str = "net"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        self._validate()

    def _validate(self):
        if not self.layers or self.layers[-1].kind != SOFTMAX:
            raise ShapeError("the last layer must be a softmax")
        h, w, c = self.input_shape.height, self.input_shape.width, self.input_shape.channels
        spatial = True
        n_conv = 0
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({layer.kind})"
            if layer.kind not in KINDS:
                raise ShapeError(f"{where}: unknown layer kind")
            if layer.kind == CONV:
                if not spatial:
                    raise ShapeError(f"{where}: convolution after pooling")
                if layer.kernel < 1 or layer.kernel % 2 == 0:
                    raise ShapeError(f"{where}: kernel must be odd and >= 1")
                if layer.stride < 1:
                    raise ShapeError(f"{where}: stride must be >= 1")
                if layer.in_channels != c:
                    raise ShapeError(f"{where}: expects {layer.in_channels} input channels, gets {c}")
                if layer.out_channels < 1:
                    raise ShapeError(f"{where}: needs at least one output channel")
                want = (layer.out_channels, layer.kernel, layer.kernel, layer.in_channels)
                if layer.weights is None or layer.weights.shape != want:
                    raise ShapeError(f"{where}: weights must have shape {want}")
                if layer.bias is None or layer.bias.shape != (layer.out_channels,):
                    raise ShapeError(f"{where}: bias must have shape ({layer.out_channels},)")
                h, w, c = _ceil_div(h, layer.stride), _ceil_div(w, layer.stride), layer.out_channels
                n_conv += 1
            elif layer.kind == GAP:
                if not spatial:
                    raise ShapeError(f"{where}: pooling twice")
                spatial = False
            elif layer.kind == FC:
                if spatial:
                    raise ShapeError(f"{where}: fully-connected layer before pooling")
                if layer.in_channels != c:
                    raise ShapeError(f"{where}: expects {layer.in_channels} inputs, gets {c}")
                want = (layer.out_channels, layer.in_channels)
                if layer.weights is None or layer.weights.shape != want:
                    raise ShapeError(f"{where}: weights must have shape {want}")
                if layer.bias is None or layer.bias.shape != (layer.out_channels,):
                    raise ShapeError(f"{where}: bias must have shape ({layer.out_channels},)")
                c = layer.out_channels
            elif layer.kind == SOFTMAX:
                if i != len(self.layers) - 1:
                    raise ShapeError(f"{where}: softmax must be the last layer")
                if spatial:
                    raise ShapeError(f"{where}: softmax over a spatial map")
                if c != self.n_classes:
                    raise ShapeError(f"{where}: softmax over {c} values, network has {self.n_classes} classes")
            if layer.activation not in ("relu", "none"):
                raise ShapeError(f"{where}: unknown activation {layer.activation!r}")
        if n_conv == 0:
            raise ShapeError("network has no convolutional layer")

    @property
    def conv_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == CONV]

    @property
    def convs(self) -> list[LayerSpec]:
        return [self.layers[i] for i in self.conv_indices]

    def conv_output_shapes(self) -> list[TensorShape]:
        h, w = self.input_shape.height, self.input_shape.width
        out = []
        for layer in self.convs:
            h, w = _ceil_div(h, layer.stride), _ceil_div(w, layer.stride)
            out.append(TensorShape(h, w, layer.out_channels))
        return out

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)


# ---------------------------------------------------------------- masks

@dataclass(frozen=True, eq=False)
class MaskSet:
    """Per-conv-layer perforation: layer on/off, kept channels, stride multiplier."""

    layer_mask: tuple[bool, ...]
    channel_mask: tuple[np.ndarray, ...]
    stride_boost: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_mask", tuple(bool(m) for m in self.layer_mask))
        chans = []
        for m in self.channel_mask:
            a = np.array(m, dtype=bool)
            a.setflags(write=False)
            chans.append(a)
        object.__setattr__(self, "channel_mask", tuple(chans))
        object.__setattr__(self, "stride_boost", tuple(int(b) for b in self.stride_boost))

    @classmethod
    def full(cls, net: Network) -> "MaskSet":
        convs = net.convs
        return cls(
            layer_mask=(True,) * len(convs),
            channel_mask=tuple(np.ones(c.out_channels, dtype=bool) for c in convs),
            stride_boost=(1,) * len(convs),
        )

    def validate(self, net: Network) -> None:
        convs = net.convs
        n = len(convs)
        if not (len(self.layer_mask) == len(self.channel_mask) == len(self.stride_boost) == n):
            raise ShapeError(f"mask covers {len(self.layer_mask)} conv layers, network has {n}")
        if not any(self.layer_mask):
            raise ShapeError("mask removes every convolutional layer")
        for j, layer in enumerate(convs):
            if self.channel_mask[j].shape != (layer.out_channels,):
                raise ShapeError(f"conv {j}: channel mask length {self.channel_mask[j].size}, "
                                 f"layer has {layer.out_channels} channels")
            if self.layer_mask[j] and not self.channel_mask[j].any():
                raise ShapeError(f"conv {j}: every channel masked")
            if self.stride_boost[j] < 1:
                raise ShapeError(f"conv {j}: stride boost must be >= 1")

    def __eq__(self, other):
        if not isinstance(other, MaskSet):
            return NotImplemented
        return (self.layer_mask == other.layer_mask and self.stride_boost == other.stride_boost
                and len(self.channel_mask) == len(other.channel_mask)
                and all(np.array_equal(a, b) for a, b in zip(self.channel_mask, other.channel_mask)))

    def __hash__(self):
        return hash((self.layer_mask, self.stride_boost,
                     tuple(m.tobytes() for m in self.channel_mask)))

    def with_layer(self, j: int, on: bool) -> "MaskSet":
        lm = list(self.layer_mask)
        lm[j] = on
        return replace(self, layer_mask=tuple(lm))

    def with_channels_off(self, j: int, idx) -> "MaskSet":
        cm = [m.copy() for m in self.channel_mask]
        cm[j][np.asarray(idx, dtype=np.int64)] = False
        return replace(self, channel_mask=tuple(cm))

    def with_boost(self, j: int, boost: int) -> "MaskSet":
        sb = list(self.stride_boost)
        sb[j] = boost
        return replace(self, stride_boost=tuple(sb))

    def to_json(self) -> dict:
        return {
            "layer_mask": [int(m) for m in self.layer_mask],
            "channel_mask": [[int(x) for x in m] for m in self.channel_mask],
            "stride_boost": list(self.stride_boost),
        }

    @classmethod
    def from_json(cls, d: dict) -> "MaskSet":
        return cls(d["layer_mask"], [np.array(m, dtype=bool) for m in d["channel_mask"]], d["stride_boost"])


# ------------------------------------------------------- channel maps

def fill_map(keep: np.ndarray) -> np.ndarray:
    """Logical -> computed channel index after channel perforation.

    A masked channel copies the nearest kept channel below it, wrapping
    around to the highest kept channel.
    """
    keep = np.asarray(keep, dtype=bool)
    kept = np.flatnonzero(keep)
    if kept.size == 0:
        raise ShapeError("channel mask keeps no channel")
    rank = np.cumsum(keep) - 1          # rank of the last kept channel at or below c
    rank[rank < 0] = kept.size - 1      # nothing below: wrap to the highest kept
    return rank.astype(np.int64)


def adjust_width(lmap: np.ndarray, width: int) -> np.ndarray:
    """Tile (cyclically) or truncate a channel map to ``width`` logical channels."""
    if lmap.size >= width:
        return lmap[:width].copy()
    return lmap[np.arange(width) % lmap.size]


def compact_map(lmap: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct computed channels a map refers to, and the map renumbered onto them."""
    used = np.unique(lmap)
    return used, np.searchsorted(used, lmap)


def compact(data, lmap):
    """Drop computed channels that no logical channel refers to."""
    used, new_map = compact_map(lmap)
    if used.size == data.shape[-1]:
        return data, lmap
    return data[..., used], new_map


def _fold(weights: np.ndarray, lmap: np.ndarray, n_phys: int) -> np.ndarray:
    """Sum weight slices along the last axis that read the same computed channel."""
    if n_phys == lmap.size and np.array_equal(lmap, np.arange(n_phys)):
        return weights
    onehot = np.zeros((lmap.size, n_phys))
    onehot[np.arange(lmap.size), lmap] = 1.0
    return weights @ onehot


# ------------------------------------------------------------ kernels

class MacCounter:
    """Multiply-accumulates per sample, tallied from the operands actually used."""

    def __init__(self):
        self.macs = 0

    def add(self, n: int):
        self.macs += int(n)


def _conv2d(x, w, b, stride, counter=None):
    """'Same'-padded convolution. x: (N,H,W,P); w: (O,d,d,P)."""
    d = w.shape[1]
    pad = d // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, (d, d), axis=(1, 2))[:, ::stride, ::stride]
    # win: (N, Hc, Wc, P, d, d)
    out = np.tensordot(win, w, axes=([3, 4, 5], [3, 1, 2]))
    if counter is not None:
        _, hc, wc, p, _, _ = win.shape
        counter.add(hc * wc * p * d * d * w.shape[0])
    return out + b


def _relu(x):
    return np.maximum(x, 0.0)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(net: Network, x):
    x = np.asarray(x, dtype=np.float64)
    s = net.input_shape
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (s.height, s.width, s.channels):
        raise ShapeError(f"input shape {x.shape[1:] if x.ndim == 4 else x.shape} does not match "
                         f"network input ({s.height}, {s.width}, {s.channels})")
    return x, single


def reference_forward(net: Network, x) -> np.ndarray:
    """Plain forward pass with no perforation machinery."""
    x, single = _as_batch(net, x)
    for layer in net.layers:
        if layer.kind == CONV:
            x = _conv2d(x, layer.weights, layer.bias, layer.stride)
        elif layer.kind == GAP:
            x = x.mean(axis=(1, 2))
        elif layer.kind == FC:
            x = x @ layer.weights.T + layer.bias
        elif layer.kind == SOFTMAX:
            x = _softmax(x)
        if layer.activation == "relu":
            x = _relu(x)
    return x[0] if single else x


def forward(net: Network, mask: MaskSet | None, x, counter: MacCounter | None = None,
            hidden: list | None = None) -> np.ndarray:
    """Perforated forward pass.

    Returns softmax outputs of shape (n_classes,) for one input or
    (N, n_classes) for a batch. If ``hidden`` is a list, the logical shape
    (H, W, C) of every conv layer's output is appended to it.
    """
    mask = mask or MaskSet.full(net)
    mask.validate(net)
    x, single = _as_batch(net, x)
    lmap = np.arange(x.shape[-1])
    j = 0
    for i, layer in enumerate(net.layers):
        if layer.kind == CONV:
            h_out, w_out = _ceil_div(x.shape[1], layer.stride), _ceil_div(x.shape[2], layer.stride)
            if not mask.layer_mask[j]:
                if layer.stride > 1:
                    x = x[:, ::layer.stride, ::layer.stride]
                lmap = adjust_width(lmap, layer.out_channels)
                x, lmap = compact(x, lmap)
            else:
                keep = mask.channel_mask[j]
                w, b = layer.weights, layer.bias
                if not keep.all():
                    w, b = w[keep], b[keep]
                w = _fold(w, lmap, x.shape[-1])
                boost = mask.stride_boost[j]
                y = _conv2d(x, w, b, layer.stride * boost, counter)
                if boost > 1:
                    y = np.repeat(np.repeat(y, boost, axis=1), boost, axis=2)[:, :h_out, :w_out]
                if layer.activation == "relu":
                    y = _relu(y)
                x = y
                lmap = fill_map(keep)
            if x.shape[1:3] != (h_out, w_out):
                raise ShapeError(f"layer {i} ({layer.kind}): perforation produced "
                                 f"{x.shape[1:3]}, expected {(h_out, w_out)}")
            if hidden is not None:
                hidden.append((x.shape[1], x.shape[2], lmap.size))
            j += 1
        elif layer.kind == GAP:
            x = x.mean(axis=(1, 2))
        elif layer.kind == FC:
            w = _fold(layer.weights, lmap, x.shape[-1])
            if counter is not None:
                counter.add(w.shape[0] * w.shape[1])
            x = x @ w.T + layer.bias
            lmap = np.arange(x.shape[-1])
            if layer.activation == "relu":
                x = _relu(x)
        elif layer.kind == SOFTMAX:
            if not (lmap.size == x.shape[-1] and np.array_equal(lmap, np.arange(lmap.size))):
                x = x[:, lmap]
            x = _softmax(x)
    return x[0] if single else x


def cost_of(net: Network, mask: MaskSet | None = None) -> tuple[int, int]:
    """(MACs, params) per frame for the perforated network, counted from shapes alone.

    A conv layer costs ``H_c * W_c * kept_out * d * d * distinct_in`` where
    ``H_c, W_c`` is the computed (stride-boosted) grid and ``distinct_in``
    the number of distinct computed channels feeding it. Skipped layers cost
    nothing; biases count as parameters only.
    """
    mask = mask or MaskSet.full(net)
    mask.validate(net)
    h, w = net.input_shape.height, net.input_shape.width
    lmap = np.arange(net.input_shape.channels)
    n_phys = lmap.size
    macs = params = 0
    j = 0
    for layer in net.layers:
        if layer.kind == CONV:
            h_out, w_out = _ceil_div(h, layer.stride), _ceil_div(w, layer.stride)
            if not mask.layer_mask[j]:
                used, lmap = compact_map(adjust_width(lmap, layer.out_channels))
                n_phys = used.size
            else:
                k = int(mask.channel_mask[j].sum())
                step = layer.stride * mask.stride_boost[j]
                hc, wc = _ceil_div(h, step), _ceil_div(w, step)
                d = layer.kernel
                macs += hc * wc * k * d * d * n_phys
                params += k * d * d * n_phys + k
                lmap = fill_map(mask.channel_mask[j])
                n_phys = k
            h, w = h_out, w_out
            j += 1
        elif layer.kind == FC:
            macs += n_phys * layer.out_channels
            params += n_phys * layer.out_channels + layer.out_channels
            n_phys = layer.out_channels
            lmap = np.arange(n_phys)
    return macs, params


# ------------------------------------------------------- construction

def _init_conv(rng, c_in, c_out, d):
    scale = 1.0 / np.sqrt(c_in * d * d)
    w = (rng.standard_normal((c_out, d, d, c_in)) * scale).astype(np.float32).astype(np.float64)
    b = (rng.standard_normal(c_out) * 0.1).astype(np.float32).astype(np.float64)
    return w, b


def _init_fc(rng, c_in, c_out):
    w = (rng.standard_normal((c_out, c_in)) / np.sqrt(c_in)).astype(np.float32).astype(np.float64)
    b = (rng.standard_normal(c_out) * 0.1).astype(np.float32).astype(np.float64)
    return w, b


def build_network(input_shape, conv_specs, n_classes, seed=0, name="net") -> Network:
    """Seeded network from ``conv_specs`` = [(out_channels, kernel, stride), ...].

    Weights are drawn once and rounded to float32 so they survive a
    round trip through the weight container unchanged.
    """
    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    layers = []
    for c_out, d, s in conv_specs:
        wt, b = _init_conv(rng, c, c_out, d)
        layers.append(LayerSpec(CONV, c, c_out, d, s, "relu", wt, b))
        c = c_out
    layers.append(LayerSpec(GAP))
    wt, b = _init_fc(rng, c, n_classes)
    layers.append(LayerSpec(FC, c, n_classes, weights=wt, bias=b))
    layers.append(LayerSpec(SOFTMAX))
    return Network(tuple(layers), TensorShape(h, w, input_shape[2]), n_classes, name)


def toy_network(seed: int = 0, n_classes: int = 100, name: str = "toy4") -> Network:
    """Four conv layers on a 16x16x3 input, pooled into a 100-way classifier."""
    return build_network((16, 16, 3), [(16, 3, 1), (32, 3, 2), (32, 3, 1), (64, 3, 2)],
                         n_classes, seed=seed, name=name)


def random_network(rng: np.random.Generator, max_conv: int = 6, name: str = "rand") -> Network:
    n_conv = int(rng.integers(1, max_conv + 1))
    h = int(rng.integers(3, 11))
    w = int(rng.integers(3, 11))
    c_in = int(rng.integers(1, 4))
    specs = []
    for _ in range(n_conv):
        specs.append((int(rng.integers(1, 13)), int(rng.choice([1, 3, 5])), int(rng.choice([1, 1, 2]))))
    n_classes = int(rng.integers(2, 11))
    return build_network((h, w, c_in), specs, n_classes, seed=int(rng.integers(2**31)), name=name)


def random_mask(net: Network, rng: np.random.Generator, max_boost: int = 4) -> MaskSet:
    convs = net.convs
    n = len(convs)
    layer_mask = rng.random(n) < 0.7
    if not layer_mask.any():
        layer_mask[rng.integers(n)] = True
    chans = []
    for layer in convs:
        m = rng.random(layer.out_channels) < 0.6
        if not m.any():
            m[rng.integers(layer.out_channels)] = True
        chans.append(m)
    boosts = [int(rng.choice([b for b in (1, 2, 3, 4) if b <= max_boost])) for _ in convs]
    return MaskSet(tuple(layer_mask), tuple(chans), tuple(boosts))
