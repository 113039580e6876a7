"""Stand-ins for classifier inference: a confusion-model simulator and a trace replayer."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..bank import ModelBank, ModelProfile
from ..problayer import check_softmax

EASY = "easy"
HARD = "hard"
DIFFICULTY_PRESETS = {EASY: 1.15, HARD: 0.85}


class BackendError(ValueError):
    pass


def stable_seed(*parts) -> list[int]:
    """Seed sequence from ints and strings; independent of PYTHONHASHSEED."""
    out = []
    for p in parts:
        out.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return out


@dataclass
class Noise:
    """Per-frame random draws shared by every model (common random numbers).

    Two models scored on the same noise differ only through their accuracy,
    which keeps paired comparisons tight.
    """

    labels: np.ndarray
    u_correct: np.ndarray
    confuse_pick: np.ndarray
    beta_right: np.ndarray
    beta_wrong: np.ndarray
    u_runner: np.ndarray
    gamma: np.ndarray

    def __len__(self):
        return self.labels.size


class ConfusionBackend:
    """Synthesizes softmax vectors from a model's accuracy.

    With probability ``a`` the peak sits on the true label, otherwise on one
    of the label's confusable classes. The peak height is
    ``0.5 + 0.5 * Beta`` so the argmax is always the peak. On a miss the true
    label is the runner-up (``runner_up_share`` of the leftover mass) with
    probability ``runner_up_prob``; the rest of the mass is spread by a
    symmetric Dirichlet with the given ``concentration``.
    """

    def __init__(self, universe: int, accuracy: dict[str, float], difficulty: dict | None = None,
                 n_confusable: int = 3, concentration: float = 1.0, seed: int = 0,
                 deterministic: bool = False, peak: float = 0.8,
                 right_beta=(5.0, 1.5), wrong_beta=(2.0, 3.0),
                 runner_up_share: float = 0.6, runner_up_prob: float = 0.7):
        if universe < 2:
            raise BackendError("universe needs at least two classes")
        for ref, a in accuracy.items():
            if not (0.0 < a <= 1.0):
                raise BackendError(f"model {ref!r}: accuracy {a} outside (0, 1]")
        if not (0.5 <= peak < 1.0):
            raise BackendError("peak must lie in [0.5, 1)")
        self.universe = universe
        self.accuracy = dict(accuracy)
        self.difficulty = dict(difficulty or {})
        self.concentration = concentration
        self.seed = seed
        self.deterministic = deterministic
        self.peak = peak
        self.right_beta = tuple(right_beta)
        self.wrong_beta = tuple(wrong_beta)
        self.runner_up_share = runner_up_share
        self.runner_up_prob = runner_up_prob
        rng = np.random.default_rng(stable_seed(seed, "confusion"))
        k = min(n_confusable, universe - 1)
        conf = np.empty((universe, k), dtype=np.int64)
        for c in range(universe):
            pool = np.delete(np.arange(universe), c)
            conf[c] = rng.choice(pool, k, replace=False)
        self.confusable = conf

    @classmethod
    def from_bank(cls, bank: ModelBank, universe: int, **kw) -> "ConfusionBackend":
        acc = {}
        for m in bank.profiles():
            if m.kind == "general":
                acc[m.network_ref or m.id] = max(m.accuracy, 1e-6)
        return cls(universe, acc, **kw)

    def base_accuracy(self, model: ModelProfile) -> float:
        for ref in (model.network_ref, model.id):
            if ref is not None and ref in self.accuracy:
                return self.accuracy[ref]
        raise BackendError(f"unknown model {model.id!r}")

    def effective_accuracy(self, model: ModelProfile, skew_key: str | None = None) -> float:
        a = self.base_accuracy(model)
        mod = self.difficulty.get(skew_key, 1.0) if skew_key is not None else 1.0
        if isinstance(mod, str):
            mod = DIFFICULTY_PRESETS[mod]
        return min(1.0, a * mod)

    def draw(self, labels, rng: np.random.Generator) -> Noise:
        labels = np.asarray(labels, dtype=np.int64)
        n = labels.size
        return Noise(
            labels=labels,
            u_correct=rng.random(n),
            confuse_pick=rng.integers(0, self.confusable.shape[1], n),
            beta_right=rng.beta(*self.right_beta, n),
            beta_wrong=rng.beta(*self.wrong_beta, n),
            u_runner=rng.random(n),
            gamma=rng.gamma(self.concentration, size=(n, self.universe)),
        )

    def _compose(self, a, noise: Noise, rows) -> np.ndarray:
        y = noise.labels[rows]
        n = y.size
        correct = noise.u_correct[rows] < a
        wrong_peak = self.confusable[y, noise.confuse_pick[rows]]
        peak_at = np.where(correct, y, wrong_peak)
        if self.deterministic:
            q = np.full(n, self.peak)
        else:
            q = 0.5 + 0.5 * np.where(correct, noise.beta_right[rows], noise.beta_wrong[rows])
        runner = ~correct & (noise.u_runner[rows] < self.runner_up_prob)
        rest = 1.0 - q
        idx = np.arange(n)
        out = np.zeros((n, self.universe))
        if self.deterministic:
            spread = np.ones((n, self.universe))
        else:
            spread = noise.gamma[rows].copy()
        spread[idx, peak_at] = 0.0
        spread[idx[runner], y[runner]] = 0.0
        tot = spread.sum(axis=1)
        free = rest * np.where(runner, 1.0 - self.runner_up_share, 1.0)
        ok = tot > 0
        out[ok] = spread[ok] * (free[ok] / tot[ok])[:, None]
        out[idx, peak_at] += q
        out[idx[runner], y[runner]] += rest[runner] * self.runner_up_share
        # leftover mass with nowhere to go (tiny universes) returns to the peak
        out[idx[~ok], peak_at[~ok]] += free[~ok]
        return out

    def softmax(self, model: ModelProfile, noise: Noise, i: int, skew_key: str | None = None) -> np.ndarray:
        a = self.effective_accuracy(model, skew_key)
        return self._compose(a, noise, np.array([i]))[0]

    def softmax_batch(self, model: ModelProfile, noise: Noise, skew_key: str | None = None) -> np.ndarray:
        a = self.effective_accuracy(model, skew_key)
        return self._compose(a, noise, np.arange(len(noise)))

    def simulate(self, model: ModelProfile, labels, rng: np.random.Generator,
                 skew_key: str | None = None) -> np.ndarray:
        """Fresh softmax outputs for ``labels`` (one row per label)."""
        return self.softmax_batch(model, self.draw(labels, rng), skew_key)


class TraceBackend:
    """Replays recorded softmax vectors, one NDJSON record per frame.

    Records look like ``{"frame": 0, "true_label": 3, "softmax": [...]}``;
    the selected model has no influence on the output.
    """

    def __init__(self, frames: np.ndarray, labels: np.ndarray, vectors: np.ndarray):
        self.frames = frames
        self.labels = labels
        self.vectors = vectors

    @property
    def universe(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def load(cls, path) -> "TraceBackend":
        frames, labels, vecs = [], [], []
        width = None
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                v = check_softmax(rec["softmax"], width)
                frames.append(int(rec["frame"]))
                labels.append(int(rec["true_label"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise BackendError(f"{path}:{n}: bad trace record ({exc})") from None
            width = v.size
            vecs.append(v)
        if not vecs:
            raise BackendError(f"{path}: trace is empty")
        order = np.argsort(frames, kind="stable")
        return cls(np.asarray(frames)[order], np.asarray(labels)[order], np.stack(vecs)[order])

    @staticmethod
    def save(path, labels, vectors) -> None:
        with open(path, "w") as fh:
            for i, (y, v) in enumerate(zip(labels, vectors)):
                fh.write(json.dumps({"frame": i, "true_label": int(y),
                                     "softmax": [float(x) for x in v]}) + "\n")

    def __len__(self):
        return self.labels.size

    def draw(self, labels, rng=None):
        n = len(labels)
        if n > len(self):
            raise BackendError(f"trace holds {len(self)} frames, stream needs {n}")
        return None

    def softmax(self, model, noise, i: int, skew_key=None) -> np.ndarray:
        return self.vectors[i]
