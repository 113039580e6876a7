"""Prior-shift rescaling of classifier outputs.

A classifier trained under class prior ``P(i)`` and deployed where the
prior is ``P_t(i)`` can be corrected after the softmax without touching
its weights: multiply each class probability by ``P_t(i) / P(i)`` and
renormalise. When the classifier is already confident the vector is left
alone, so classes outside the assumed skew can still be recognised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIST_TOL = 1e-9
SOFTMAX_TOL = 1e-6
DEFAULT_OMEGA = 0.9


class RescaleError(ValueError):
    """The rescaling denominator vanished; the caller should keep the input."""


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    """Probability vector over the class universe."""

    probs: np.ndarray

    def __post_init__(self):
        p = _as_vector(self.probs, "distribution")
        if np.any(p < 0):
            raise ValueError("distribution has negative entries")
        if abs(p.sum() - 1.0) > DIST_TOL:
            raise ValueError(f"distribution sums to {p.sum():.12g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __eq__(self, other):
        if not isinstance(other, ClassDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    @classmethod
    def uniform(cls, n: int) -> "ClassDistribution":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def from_weights(cls, weights) -> "ClassDistribution":
        w = _as_vector(weights, "weights")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        return cls(w / w.sum())

    @classmethod
    def from_counts(cls, counts, eps: float = 0.0) -> "ClassDistribution":
        """Additively smoothed empirical frequencies, ``(f + eps) / (1 + n*eps)``."""
        c = _as_vector(counts, "counts")
        total = c.sum()
        if total <= 0:
            raise ValueError("counts are all zero")
        freq = c / total
        if eps:
            freq = (freq + eps) / (1.0 + eps * c.size)
            freq = freq / freq.sum()
        return cls(freq)

    def to_list(self) -> list[float]:
        return [float(x) for x in self.probs]


def check_softmax(v, n: int | None = None) -> np.ndarray:
    """Validate a softmax output and return it as a float array."""
    arr = _as_vector(v, "softmax vector")
    if n is not None and arr.size != n:
        raise ValueError(f"softmax vector has length {arr.size}, expected {n}")
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > SOFTMAX_TOL:
        raise ValueError("softmax vector must be nonnegative and sum to 1")
    return arr


@dataclass(frozen=True, eq=False)
class RescaleConfig:
    train_prior: ClassDistribution
    test_prior: ClassDistribution
    omega: float = DEFAULT_OMEGA

    def __post_init__(self):
        if len(self.train_prior) != len(self.test_prior):
            raise ValueError("train and test priors differ in length")
        if np.any(self.train_prior.probs == 0):
            raise ValueError("train prior has a zero entry; every class must be seen in training")
        if not (0.0 < self.omega <= 1.0):
            raise ValueError(f"omega must lie in (0, 1], got {self.omega}")
        ratio = self.test_prior.probs / self.train_prior.probs
        ratio.setflags(write=False)
        object.__setattr__(self, "ratio", ratio)

    @property
    def n_classes(self) -> int:
        return len(self.train_prior)


def rescale(v, cfg: RescaleConfig) -> np.ndarray:
    """Move a softmax vector from the training prior to the test prior.

    ``out[i] = r[i] * v[i] / sum_j r[j] * v[j]`` with ``r = P_t / P``.

    Raises
    ------
    RescaleError
        If all of ``v``'s mass sits on classes with zero test prior.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (cfg.n_classes,):
        raise ValueError(f"softmax vector has shape {v.shape}, expected ({cfg.n_classes},)")
    w = cfg.ratio * v
    denom = w.sum()
    if not denom > 0:
        raise RescaleError("rescaling denominator is zero")
    return w / denom


def rescale_batch(vs, cfg: RescaleConfig) -> np.ndarray:
    """Row-wise :func:`rescale`; rows with a zero denominator are returned unchanged."""
    vs = np.asarray(vs, dtype=np.float64)
    w = vs * cfg.ratio
    denom = w.sum(axis=1, keepdims=True)
    ok = denom[:, 0] > 0
    out = vs.copy()
    out[ok] = w[ok] / denom[ok]
    return out


def rescale_with_bypass(v, cfg: RescaleConfig) -> tuple[np.ndarray, bool]:
    """Rescale unless the classifier is already confident (``max(v) >= omega``).

    The bypass covers the whole vector so the result stays normalised.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.max() >= cfg.omega:
        return v, True
    return rescale(v, cfg), False


def rescale_with_bypass_batch(vs, cfg: RescaleConfig) -> tuple[np.ndarray, np.ndarray]:
    vs = np.asarray(vs, dtype=np.float64)
    bypassed = vs.max(axis=1) >= cfg.omega
    out = vs.copy()
    todo = ~bypassed
    if todo.any():
        out[todo] = rescale_batch(vs[todo], cfg)
    return out, bypassed


def predict(v) -> int:
    # np.argmax returns the first maximum, which is the lowest-index tie rule
    return int(np.argmax(np.asarray(v)))
