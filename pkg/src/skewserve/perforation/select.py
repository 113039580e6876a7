"""Per-skew model selection from the shared cascade."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..bank import CLASS_SPECIFIC, NO_SKEW, Cascade, ModelBank, ModelProfile, skew_key

DEFAULT_DELTA = 0.02


@dataclass(frozen=True)
class Selection:
    model: ModelProfile
    index: int
    accuracy: float
    calls: int
    unmet: bool


def _key_of(skew) -> str:
    if skew is None:
        return NO_SKEW
    if isinstance(skew, str):
        return skew
    if hasattr(skew, "key"):
        return skew.key
    return skew_key(skew)


def binary_search_select(cascade: Cascade, skew, target_acc: float, delta: float,
                         evaluator: Callable[[ModelProfile, object], float]) -> Selection:
    """Cheapest cascade member whose per-skew accuracy reaches ``target_acc - delta``.

    Bisects on the index, assuming per-skew accuracy rises along the
    cascade. Each member is evaluated at most once, so the evaluator runs
    at most ``ceil(log2(len + 1))`` times. If no member qualifies, the top
    model is returned with ``unmet=True``.
    """
    if not (0.0 < target_acc <= 1.0):
        raise ValueError(f"target accuracy {target_acc} outside (0, 1]")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    models = cascade.models
    seen: dict[int, float] = {}

    def acc(i):
        if i not in seen:
            seen[i] = float(evaluator(models[i], skew))
        return seen[i]

    need = target_acc - delta
    lo, hi = 0, len(models)
    while lo < hi:
        mid = (lo + hi) // 2
        if acc(mid) >= need:
            hi = mid
        else:
            lo = mid + 1
    if lo == len(models):
        top = len(models) - 1
        return Selection(models[top], top, acc(top), len(seen), True)
    return Selection(models[lo], lo, acc(lo), len(seen), False)


class TableEvaluator:
    """Declared per-skew accuracies: ``table[(model_id, skew_key)]``.

    Missing entries fall back to ``table[(model_id, "*")]`` and then to the
    profile's own accuracy.
    """

    def __init__(self, table: dict | None = None):
        self.table = dict(table or {})
        self.calls = 0

    def __call__(self, model: ModelProfile, skew) -> float:
        self.calls += 1
        key = _key_of(skew)
        for k in ((model.id, key), (model.id, "*")):
            if k in self.table:
                return float(self.table[k])
        return model.accuracy


def compile_for_skew(bank: ModelBank, cascade: Cascade, skew, target_acc: float,
                     evaluator: Callable[[ModelProfile, object], float],
                     delta: float = DEFAULT_DELTA) -> tuple[ModelProfile, Selection | None]:
    """Select for ``skew`` from the shared cascade and register the winner under its key.

    Calling again for a key that already has this winner registered leaves
    the bank untouched; the returned selection is then None.
    """
    key = _key_of(skew)
    if key == NO_SKEW:
        raise ValueError("cannot compile for the no-skew key")
    if bank.has_specific(key):
        existing = bank.lookup(key)[0].top
        return existing, None
    sel = binary_search_select(cascade, skew, target_acc, delta, evaluator)
    w = sel.model
    profile = ModelProfile(
        id=f"{w.id}@{key}", kind=CLASS_SPECIFIC, skew_key=key,
        params=w.params, macs=w.macs, accuracy=min(1.0, max(0.0, sel.accuracy)),
        network_ref=w.network_ref or w.id, mask=w.mask,
    )
    bank.register(profile)
    return profile, sel
