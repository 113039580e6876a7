"""Greedy all-level perforation and cascade construction.

Each round tries every remaining perforation step (drop a conv layer, mask
a channel group, double a layer's stride), keeps the one that costs the
least accuracy, and records the result. No weights are ever updated.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..bank import GENERAL, NO_SKEW, Cascade, ModelBank, ModelProfile, pareto_filter
from .network import MaskSet, Network, cost_of, forward

LAYER = "layer"
CHANNELS = "channels"
STRIDE = "stride"


@dataclass(frozen=True)
class Candidate:
    kind: str
    layer: int
    group: int = -1   # channel group index, CHANNELS only
    level: int = 0    # doubling count after applying, STRIDE only

    @property
    def position(self) -> tuple:
        if self.kind == LAYER:
            return (LAYER, self.layer)
        if self.kind == CHANNELS:
            return (CHANNELS, self.layer, self.group)
        return (STRIDE, self.layer, self.level)

    def __str__(self):
        return ":".join(str(p) for p in self.position)


@dataclass(frozen=True)
class PruneSnapshot:
    mask: MaskSet
    macs: int
    params: int
    accuracy: float
    step: Candidate | None = None


def group_width(n_channels: int, group_size: int | None = None) -> int:
    return group_size if group_size else max(1, n_channels // 8)


def channel_groups(n_channels: int, group_size: int | None = None) -> list[np.ndarray]:
    g = group_width(n_channels, group_size)
    return [np.arange(s, min(s + g, n_channels)) for s in range(0, n_channels, g)]


def apply_candidate(mask: MaskSet, cand: Candidate, net: Network,
                    group_size: int | None = None) -> MaskSet:
    if cand.kind == LAYER:
        return mask.with_layer(cand.layer, False)
    if cand.kind == CHANNELS:
        groups = channel_groups(net.convs[cand.layer].out_channels, group_size)
        return mask.with_channels_off(cand.layer, groups[cand.group])
    return mask.with_boost(cand.layer, mask.stride_boost[cand.layer] * 2)


def candidates(net: Network, mask: MaskSet, group_size: int | None = None,
               max_boost: int = 4) -> list[tuple[Candidate, MaskSet]]:
    """Every single-step perforation of ``mask`` that strictly lowers MACs.

    Order: per conv layer, layer drop, then channel groups, then stride.
    The order breaks accuracy ties in :func:`greedy_prune`.
    """
    base, _ = cost_of(net, mask)
    n_on = sum(mask.layer_mask)
    out = []
    for j, layer in enumerate(net.convs):
        if not mask.layer_mask[j]:
            continue
        steps = []
        if n_on > 1:
            steps.append(Candidate(LAYER, j))
        keep = mask.channel_mask[j]
        n_keep = int(keep.sum())
        for g, idx in enumerate(channel_groups(layer.out_channels, group_size)):
            k = int(keep[idx].sum())
            if 0 < k < n_keep:
                steps.append(Candidate(CHANNELS, j, group=g))
        boost = mask.stride_boost[j]
        if boost * 2 <= max_boost:
            steps.append(Candidate(STRIDE, j, level=int(math.log2(boost)) + 1))
        for cand in steps:
            m = apply_candidate(mask, cand, net, group_size)
            if cost_of(net, m)[0] < base:
                out.append((cand, m))
    return out


def applied_positions(net: Network, mask: MaskSet, group_size: int | None = None) -> list[tuple]:
    """Positions (as in :attr:`Candidate.position`) already perforated in ``mask``."""
    pos = []
    for j, layer in enumerate(net.convs):
        if not mask.layer_mask[j]:
            pos.append((LAYER, j))
            continue
        keep = mask.channel_mask[j]
        for g, idx in enumerate(channel_groups(layer.out_channels, group_size)):
            if not keep[idx].any():
                pos.append((CHANNELS, j, g))
        b = mask.stride_boost[j]
        for level in range(1, int(math.log2(b)) + 1):
            pos.append((STRIDE, j, level))
    return pos


class PositionOracle:
    """Synthetic pruning evaluator.

    accuracy = floor + (full - floor) * prod(1 - importance[p]) over the
    perforated positions ``p``. Importances default to a depth-decaying
    schedule; explicit entries override it.
    """

    def __init__(self, net: Network, full: float = 0.72, floor: float = 0.01,
                 importance: dict | None = None, group_size: int | None = None,
                 layer_weight: float = 0.25, channel_weight: float = 0.025,
                 stride_weight: float = 0.08, decay: float = 0.8):
        if not (0.0 <= floor <= full <= 1.0):
            raise ValueError("need 0 <= floor <= full <= 1")
        self.net = net
        self.full = full
        self.floor = floor
        self.group_size = group_size
        self.importance = dict(importance or {})
        self.layer_weight = layer_weight
        self.channel_weight = channel_weight
        self.stride_weight = stride_weight
        self.decay = decay
        self.calls = 0

    def weight(self, position: tuple) -> float:
        if position in self.importance:
            return float(self.importance[position])
        kind, j = position[0], position[1]
        scale = self.decay ** j
        if kind == LAYER:
            return self.layer_weight * scale
        if kind == CHANNELS:
            c = self.net.convs[j].out_channels
            share = len(channel_groups(c, self.group_size)[position[2]]) / c
            # later groups matter a little less so ties resolve by position
            return self.channel_weight * scale * share * 8 * (1 - 0.02 * position[2])
        return self.stride_weight * scale * position[2]

    def __call__(self, mask: MaskSet) -> float:
        self.calls += 1
        keep = 1.0
        for p in applied_positions(self.net, mask, self.group_size):
            keep *= 1.0 - min(1.0, max(0.0, self.weight(p)))
        return self.floor + (self.full - self.floor) * keep


@dataclass(frozen=True, eq=False)
class EvalSet:
    inputs: np.ndarray   # (N, H, W, C)
    labels: np.ndarray   # (N,)

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 4 or y.shape != (x.shape[0],):
            raise ValueError("evalset needs inputs (N,H,W,C) and N labels")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.size


def teacher_evalset(net: Network, n: int, seed: int = 0, noise: float = 0.0) -> EvalSet:
    """Random inputs labelled by the unmasked network itself.

    With ``noise`` > 0 that fraction of labels is replaced at random, so the
    full network scores about ``1 - noise``.
    """
    rng = np.random.default_rng(seed)
    s = net.input_shape
    x = rng.standard_normal((n, s.height, s.width, s.channels))
    y = np.argmax(forward(net, None, x), axis=1)
    if noise > 0:
        flip = rng.random(n) < noise
        y[flip] = rng.integers(0, net.n_classes, int(flip.sum()))
    return EvalSet(x, y)


def evaluate(net: Network, mask: MaskSet | None, evalset: EvalSet, skew=None) -> float:
    """Top-1 accuracy; with a skew only samples of its dominant classes count."""
    if len(evalset) == 0:
        raise ValueError("evalset is empty")
    if np.any(evalset.labels < 0) or np.any(evalset.labels >= net.n_classes):
        raise ValueError("evalset labels outside the class universe")
    x, y = evalset.inputs, evalset.labels
    if skew is not None:
        dominant = getattr(skew, "dominant", skew)
        sel = np.isin(y, np.asarray(list(dominant), dtype=np.int64))
        if not sel.any():
            raise ValueError("evalset holds no samples of the skew's classes")
        x, y = x[sel], y[sel]
    pred = np.argmax(forward(net, mask, x), axis=1)
    return float(np.mean(pred == y))


def evalset_evaluator(net: Network, evalset: EvalSet, skew=None) -> Callable[[MaskSet], float]:
    return lambda mask: evaluate(net, mask, evalset, skew)


def greedy_prune(net: Network, evaluator: Callable[[MaskSet], float],
                 group_size: int | None = None, max_boost: int = 4,
                 max_rounds: int | None = None, workers: int = 1) -> list[PruneSnapshot]:
    """Greedy perforation until no step lowers the cost further.

    Snapshot 0 is the unmasked network. Every later snapshot applies the
    candidate with the smallest accuracy drop (first in candidate order on
    ties), so MACs strictly decrease along the list.
    """
    mask = MaskSet.full(net)
    acc = float(evaluator(mask))
    macs, params = cost_of(net, mask)
    snaps = [PruneSnapshot(mask, macs, params, acc)]
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while max_rounds is None or len(snaps) <= max_rounds:
            options = candidates(net, mask, group_size, max_boost)
            if not options:
                break
            masks = [m for _, m in options]
            scores = list(pool.map(evaluator, masks)) if pool else [evaluator(m) for m in masks]
            drops = acc - np.asarray(scores, dtype=np.float64)
            best = int(np.argmin(drops))
            cand, mask = options[best]
            acc = float(scores[best])
            macs, params = cost_of(net, mask)
            snaps.append(PruneSnapshot(mask, macs, params, acc, cand))
    finally:
        if pool:
            pool.shutdown()
    return snaps


def snapshot_profiles(snapshots: Sequence[PruneSnapshot], name: str) -> list[ModelProfile]:
    return [
        ModelProfile(
            id=f"{name}-p{k}", kind=GENERAL, skew_key=NO_SKEW,
            params=s.params, macs=s.macs, accuracy=min(1.0, max(0.0, s.accuracy)),
            network_ref=f"{name}#{k}", mask=s.mask.to_json(),
        )
        for k, s in enumerate(snapshots)
    ]


def build_cascade(snapshots: Sequence[PruneSnapshot], name: str = "net",
                  bank: ModelBank | None = None) -> Cascade:
    """Pareto cascade over the snapshots; optionally registered as the bank's general cascade."""
    profiles = snapshot_profiles(snapshots, name)
    cascade = pareto_filter(profiles)
    if bank is not None:
        for m in profiles:
            bank.register(m)
    return cascade
