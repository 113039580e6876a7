"""Model profiles, Pareto cascades, and the skew-keyed model bank."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Sequence

GENERAL = "general"
CLASS_SPECIFIC = "class-specific"
NO_SKEW = "N/A"
KEY_SEP = ","


class BankError(ValueError):
    pass


class DuplicateModelError(BankError):
    code = "duplicate-id"


def skew_key(classes: Iterable[int]) -> str:
    """Canonical key for a set of dominant classes: sorted ids joined by commas."""
    ids = sorted({int(c) for c in classes})
    if not ids:
        raise BankError("a skew key needs at least one class")
    return KEY_SEP.join(str(c) for c in ids)


def parse_skew_key(key: str) -> list[int]:
    if key == NO_SKEW:
        return []
    return [int(tok) for tok in key.split(KEY_SEP)]


def jaccard(a: str, b: str) -> float:
    sa, sb = set(parse_skew_key(a)), set(parse_skew_key(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def nearest_key(key: str, known, min_similarity: float = 1.0) -> str | None:
    """Known key with the highest Jaccard overlap with ``key``, if it reaches ``min_similarity``.

    Exact matches always win; ties go to the smallest key in sort order.
    """
    known = sorted(known)
    if key in known:
        return key
    if min_similarity >= 1.0 or key == NO_SKEW:
        return None
    best, best_sim = None, -1.0
    for k in known:
        if k == NO_SKEW:
            continue
        sim = jaccard(key, k)
        if sim > best_sim:
            best, best_sim = k, sim
    return best if best is not None and best_sim >= min_similarity else None


@dataclass(frozen=True)
class ModelProfile:
    id: str
    kind: str
    skew_key: str
    params: int
    macs: int
    accuracy: float
    network_ref: str | None = None
    mask: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in (GENERAL, CLASS_SPECIFIC):
            raise BankError(f"{self.id}: unknown kind {self.kind!r}")
        if self.params < 0 or self.macs < 0:
            raise BankError(f"{self.id}: params and macs must be nonnegative")
        if not (0.0 <= self.accuracy <= 1.0):
            raise BankError(f"{self.id}: accuracy {self.accuracy} outside [0, 1]")
        if (self.skew_key == NO_SKEW) != (self.kind == GENERAL):
            raise BankError(f'{self.id}: skew_key must be "N/A" exactly for general models')

    def to_json(self) -> dict:
        d = asdict(self)
        if d["mask"] is None:
            del d["mask"]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelProfile":
        try:
            return cls(
                id=str(d["id"]),
                kind=d["kind"],
                skew_key=d["skew_key"],
                params=int(d["params"]),
                macs=int(d["macs"]),
                accuracy=float(d["accuracy"]),
                network_ref=d.get("network_ref"),
                mask=d.get("mask"),
            )
        except KeyError as exc:
            raise BankError(f"model entry is missing field {exc.args[0]!r}") from None


def dominates(a: ModelProfile, b: ModelProfile) -> bool:
    return (a.macs <= b.macs and a.accuracy >= b.accuracy
            and (a.macs < b.macs or a.accuracy > b.accuracy))


def pareto_filter(models: Sequence[ModelProfile]) -> "Cascade":
    """Drop dominated models; of exact (macs, accuracy) ties the earliest survives.

    Sort by (macs asc, accuracy desc), then sweep keeping each model that is
    strictly more accurate than everything cheaper-or-equal seen so far.
    """
    if not models:
        raise BankError("cannot Pareto-filter an empty model list")
    order = sorted(range(len(models)), key=lambda i: (models[i].macs, -models[i].accuracy, i))
    kept = []
    best = -1.0
    for i in order:
        if models[i].accuracy > best:
            kept.append(models[i])
            best = models[i].accuracy
    return Cascade(tuple(kept))


@dataclass(frozen=True)
class Cascade:
    """Accuracy- and cost-monotone sequence of models, cheapest first."""

    models: tuple[ModelProfile, ...]

    def __post_init__(self):
        if not self.models:
            raise BankError("a cascade must hold at least one model")
        for a, b in zip(self.models, self.models[1:]):
            if a.accuracy > b.accuracy or a.macs > b.macs:
                raise BankError(f"cascade not monotone at {a.id} -> {b.id}")

    def __len__(self):
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    def __getitem__(self, i):
        return self.models[i]

    @property
    def top(self) -> ModelProfile:
        return self.models[-1]

    @property
    def cheapest(self) -> ModelProfile:
        return self.models[0]


def is_monotone(models: Sequence[ModelProfile]) -> bool:
    return all(a.accuracy <= b.accuracy and a.macs <= b.macs for a, b in zip(models, models[1:]))


class ModelBank:
    """Cascades keyed by skew, plus the general cascade.

    Writers serialise on a lock and publish a freshly built cascade by a
    single dict assignment, so readers never see a half-updated cascade.
    """

    def __init__(self):
        self._cascades: dict[str, Cascade] = {}
        self._seen_ids: set[str] = set()
        self._order: dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def general(self) -> Cascade | None:
        return self._cascades.get(NO_SKEW)

    @property
    def entries(self) -> dict[str, Cascade]:
        return {k: c for k, c in self._cascades.items() if k != NO_SKEW}

    def keys(self) -> list[str]:
        return sorted(self.entries)

    def has_specific(self, key: str) -> bool:
        return key != NO_SKEW and key in self._cascades

    def register(self, m: ModelProfile) -> bool:
        """Insert ``m`` into its cascade; returns False if it was dominated."""
        with self._lock:
            if m.id in self._seen_ids:
                raise DuplicateModelError(f"model id {m.id!r} already registered")
            self._seen_ids.add(m.id)
            self._order[m.id] = len(self._order)
            current = self._cascades.get(m.skew_key)
            pool = list(current.models) if current else []
            pool.append(m)
            # registration order decides exact ties
            pool.sort(key=lambda p: self._order[p.id])
            cascade = pareto_filter(pool)
            self._cascades[m.skew_key] = cascade
            return m in cascade.models

    def find(self, model_id: str) -> ModelProfile | None:
        for cascade in self._cascades.values():
            for m in cascade:
                if m.id == model_id:
                    return m
        return None

    def lookup(self, key: str, min_similarity: float = 1.0) -> tuple[Cascade, bool]:
        """Cascade for ``key`` and whether it fell back to the general one.

        With ``min_similarity`` < 1 a class-specific cascade whose key
        overlaps ``key`` at least that much (Jaccard) also serves.
        """
        general = self.general
        if general is None:
            raise BankError("bank has no general cascade")
        if key == NO_SKEW:
            return general, False
        match = nearest_key(key, self.entries, min_similarity)
        if match is None:
            return general, True
        return self._cascades[match], False

    def profiles(self) -> list[ModelProfile]:
        out = []
        if self.general is not None:
            out.extend(self.general)
        for key in self.keys():
            out.extend(self._cascades[key])
        return out

    def to_json(self) -> list[dict]:
        return [m.to_json() for m in self.profiles()]

    @classmethod
    def from_profiles(cls, profiles: Iterable[ModelProfile]) -> "ModelBank":
        bank = cls()
        for m in profiles:
            bank.register(m)
        return bank

    @classmethod
    def from_json(cls, data) -> "ModelBank":
        if not isinstance(data, list):
            raise BankError("model bank document must be a JSON array of entries")
        return cls.from_profiles(ModelProfile.from_json(d) for d in data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ModelBank":
        return cls.from_json(json.loads(Path(path).read_text()))
