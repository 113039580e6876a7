"""Synthesized class-skewed label streams."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from ..bank import NO_SKEW, skew_key

IID = "iid"
STRATIFIED = "stratified"
DEFAULT_INTERVAL = 1.0 / 3.0
DEFAULT_DURATION = 1800  # ten minutes at 3 fps


class SpecError(ValueError):
    """Raised for an invalid stream description; the message names the field."""


@dataclass(frozen=True)
class SegmentSpec:
    """One stretch of stream with a fixed skew.

    ``n_dominant = 0`` gives a uniformly random (unskewed) segment. With
    ``sampling="stratified"`` every ``block`` frames hold the rounded
    expected composition in shuffled order instead of iid draws.
    ``measure`` marks frames that count toward measured aggregates;
    ``charge_after`` overrides the stream-wide charging default.
    """

    n_dominant: int
    p: float = 0.9
    duration: int = DEFAULT_DURATION
    dominant_classes: tuple[int, ...] | None = None
    seed: int = 0
    sampling: str = IID
    block: int = 30
    measure: bool = True
    charge_after: bool | None = None

    def __post_init__(self):
        for name in ("n_dominant", "duration", "seed", "block"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise SpecError(f"{name}: expected an integer, got {v!r}")
        if isinstance(self.p, bool) or not isinstance(self.p, (int, float, np.floating)):
            raise SpecError(f"p: expected a number, got {self.p!r}")
        if self.dominant_classes is not None:
            object.__setattr__(self, "dominant_classes", tuple(int(c) for c in self.dominant_classes))
            if len(set(self.dominant_classes)) != self.n_dominant:
                raise SpecError("dominant_classes: must list n_dominant distinct classes")
        if self.n_dominant < 0:
            raise SpecError("n_dominant: must be >= 0")
        if not (0.0 < self.p <= 1.0):
            raise SpecError(f"p: {self.p} outside (0, 1]")
        if self.duration < 1:
            raise SpecError("duration: must be >= 1 frame")
        if self.sampling not in (IID, STRATIFIED):
            raise SpecError(f"sampling: unknown mode {self.sampling!r}")
        if self.block < 1:
            raise SpecError("block: must be >= 1")


@dataclass(frozen=True)
class StreamSpec:
    segments: tuple[SegmentSpec, ...]
    frame_interval: float = DEFAULT_INTERVAL
    universe: int = 100
    seed: int = 0
    charge_between: bool = True

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise SpecError("segments: stream needs at least one segment")
        if not self.frame_interval > 0:
            raise SpecError("frame_interval: must be positive")
        if self.universe < 2:
            raise SpecError("universe: need at least two classes")
        for i, seg in enumerate(self.segments):
            if seg.n_dominant > self.universe:
                raise SpecError(f"segments[{i}].n_dominant: exceeds universe {self.universe}")
            if seg.n_dominant == self.universe and seg.p < 1.0:
                raise SpecError(f"segments[{i}].p: no classes left outside the dominant set")
            if seg.dominant_classes and max(seg.dominant_classes) >= self.universe:
                raise SpecError(f"segments[{i}].dominant_classes: class outside universe")

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_interval

    @property
    def n_frames(self) -> int:
        return sum(s.duration for s in self.segments)

    def charges_after(self, i: int) -> bool:
        seg = self.segments[i]
        if seg.charge_after is not None:
            return seg.charge_after
        return self.charge_between and i < len(self.segments) - 1

    def to_json(self) -> dict:
        d = asdict(self)
        for seg in d["segments"]:
            if seg["dominant_classes"] is not None:
                seg["dominant_classes"] = list(seg["dominant_classes"])
        return d

    @classmethod
    def from_json(cls, d) -> "StreamSpec":
        if not isinstance(d, dict):
            raise SpecError("stream: expected a JSON object")
        if "segments" not in d:
            raise SpecError("segments: missing")
        if not isinstance(d["segments"], list):
            raise SpecError("segments: expected a list")
        segs = []
        seg_fields = set(SegmentSpec.__dataclass_fields__)
        for i, s in enumerate(d["segments"]):
            if not isinstance(s, dict):
                raise SpecError(f"segments[{i}]: expected an object")
            unknown = set(s) - seg_fields
            if unknown:
                raise SpecError(f"segments[{i}].{sorted(unknown)[0]}: unknown field")
            if "n_dominant" not in s:
                raise SpecError(f"segments[{i}].n_dominant: missing")
            try:
                segs.append(SegmentSpec(**s))
            except SpecError as exc:
                raise SpecError(f"segments[{i}].{exc}") from None
            except TypeError as exc:
                raise SpecError(f"segments[{i}]: {exc}") from None
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"{sorted(unknown)[0]}: unknown field")
        rest = {k: v for k, v in d.items() if k != "segments"}
        try:
            return cls(tuple(segs), **rest)
        except TypeError as exc:
            raise SpecError(str(exc)) from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "StreamSpec":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"stream file is not valid JSON ({exc})") from None
        return cls.from_json(d)


@dataclass
class Stream:
    labels: np.ndarray          # true label per frame
    segment: np.ndarray         # segment index per frame
    dominants: list[tuple[int, ...]] = field(default_factory=list)

    def __len__(self):
        return self.labels.size

    def __iter__(self):
        return iter(enumerate(self.labels.tolist()))

    def segment_key(self, i: int) -> str:
        d = self.dominants[i]
        return skew_key(d) if d else NO_SKEW


def _segment_labels(seg: SegmentSpec, dominant: np.ndarray, universe: int, rng) -> np.ndarray:
    n = seg.duration
    if dominant.size == 0:
        return rng.integers(0, universe, n)
    others = np.setdiff1d(np.arange(universe), dominant)
    if seg.sampling == IID:
        from_dom = rng.random(n) < seg.p
        labels = np.empty(n, dtype=np.int64)
        labels[from_dom] = rng.choice(dominant, int(from_dom.sum()))
        labels[~from_dom] = rng.choice(others, int((~from_dom).sum())) if others.size else dominant[0]
        return labels
    out = []
    for start in range(0, n, seg.block):
        b = min(seg.block, n - start)
        k_dom = int(round(seg.p * b)) if others.size else b
        base, extra = divmod(k_dom, dominant.size)
        counts = np.full(dominant.size, base)
        counts[rng.choice(dominant.size, extra, replace=False)] += 1
        block = np.repeat(dominant, counts)
        k_other = b - k_dom
        if k_other:
            block = np.concatenate([block, rng.choice(others, k_other, replace=k_other > others.size)])
        out.append(rng.permutation(block))
    return np.concatenate(out).astype(np.int64)


def generate_stream(spec: StreamSpec) -> Stream:
    """Labels for every frame; deterministic in ``spec`` (including its seeds)."""
    labels, seg_idx, dominants = [], [], []
    for i, seg in enumerate(spec.segments):
        rng = np.random.default_rng([spec.seed, i, seg.seed])
        if seg.dominant_classes is not None:
            dominant = np.array(sorted(seg.dominant_classes), dtype=np.int64)
        else:
            dominant = np.sort(rng.choice(spec.universe, seg.n_dominant, replace=False))
        labels.append(_segment_labels(seg, dominant, spec.universe, rng))
        seg_idx.append(np.full(seg.duration, i, dtype=np.int64))
        dominants.append(tuple(int(c) for c in dominant))
    return Stream(np.concatenate(labels), np.concatenate(seg_idx), dominants)
