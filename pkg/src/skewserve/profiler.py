"""Windowed class-skew detection on a stream of predicted labels.

Every ``w_min`` predictions form a window. A window whose per-class counts
stay within ``pi_r`` of the previous window extends the current epoch; the
epoch's counts give the skew estimate. A window that breaks the test starts
a new epoch. While a skew is live the profiler tolerates ``grace_windows``
broken windows before declaring it over, and a burst of confident
predictions outside the dominant set ends it immediately.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .bank import jaccard, nearest_key, skew_key
from .problayer import ClassDistribution

COLD = "cold"
HOT = "hot"

DETECTED = "detected"
UPDATED = "updated"
CHANGED = "changed"
ENDED = "ended"


@dataclass(frozen=True, eq=False)
class WindowRecord:
    counts: np.ndarray
    window_len: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or np.any(c < 0):
            raise ValueError("window counts must be a nonnegative 1-d vector")
        if int(c.sum()) != self.window_len:
            raise ValueError(f"counts sum to {int(c.sum())}, window_len is {self.window_len}")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_labels(cls, labels, universe: int) -> "WindowRecord":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(np.bincount(labels, minlength=universe), len(labels))


@dataclass(frozen=True)
class ProfilerConfig:
    universe: int
    w_min: int = 30
    pi_r: int = 2
    dominance_threshold: float | None = None  # absolute frequency; default 2/universe
    change_fraction: float = 0.2
    pi_h: int = 3
    metric: str = "linf"
    smoothing: float = 1e-3
    min_mass: float = 0.5
    grace_windows: int = 1
    hysteresis: float = 0.5   # a live dominant class stays until below this share of the threshold
    key_match: float = 1.0    # Jaccard overlap at which a re-formed epoch rejoins the live skew
    min_count: int = 4        # a newly dominant class must appear at least this often in the epoch

    def __post_init__(self):
        if self.universe < 2:
            raise ValueError("universe needs at least two classes")
        if self.w_min < 1:
            raise ValueError("w_min must be >= 1")
        if self.pi_r < 0:
            raise ValueError("pi_r must be >= 0")
        if self.pi_h < 1:
            raise ValueError("pi_h must be >= 1")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("dominance_threshold must lie in (0, 1)")
        if not (0.0 <= self.change_fraction < 1.0):
            raise ValueError("change_fraction must lie in [0, 1)")
        if self.metric not in ("linf", "l1"):
            raise ValueError(f"unknown window metric {self.metric!r}")
        if self.smoothing < 0 or self.grace_windows < 0:
            raise ValueError("smoothing and grace_windows must be nonnegative")
        if not (0.0 < self.hysteresis <= 1.0) or not (0.0 < self.key_match <= 1.0):
            raise ValueError("hysteresis and key_match must lie in (0, 1]")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")

    @property
    def threshold(self) -> float:
        if self.dominance_threshold is None:
            return 2.0 / self.universe
        return self.dominance_threshold


def window_distance(s1: WindowRecord, s2: WindowRecord, metric: str = "linf") -> int:
    """Largest per-class count difference between two equal-length windows."""
    if s1.window_len != s2.window_len:
        raise ValueError(f"window lengths differ ({s1.window_len} vs {s2.window_len})")
    n = max(s1.counts.size, s2.counts.size)
    a = np.pad(s1.counts, (0, n - s1.counts.size))
    b = np.pad(s2.counts, (0, n - s2.counts.size))
    diff = np.abs(a - b)
    if metric == "l1":
        return int(diff.sum())
    return int(diff.max())


@dataclass(frozen=True, eq=False)
class SkewEstimate:
    dominant: tuple[int, ...]
    distribution: ClassDistribution
    epoch_len: int
    mass: float
    is_skew: bool

    @property
    def key(self) -> str:
        return skew_key(self.dominant)

    def to_json(self) -> dict:
        return {
            "skew_key": self.key,
            "dominant": list(self.dominant),
            "epoch_len": self.epoch_len,
            "mass": self.mass,
            "distribution": self.distribution.to_list(),
        }


def skew_prior(counts, dominant, eps: float) -> ClassDistribution:
    """Test-time prior for a skew: ``eps`` on every non-dominant class, the rest
    split over the dominant classes in proportion to their counts.

    Keeping stray predictions out of the prior stops a weak model's errors
    from feeding back into the rescaling that is meant to correct them.
    """
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.size
    dominant = np.asarray(dominant, dtype=np.int64)
    if dominant.size == n:
        return ClassDistribution.from_counts(counts, eps=eps)
    probs = np.full(n, eps)
    rest = 1.0 - eps * (n - dominant.size)
    if rest <= 0:
        raise ValueError(f"smoothing {eps} leaves no mass for the dominant classes")
    dom_counts = counts[dominant]
    probs[dominant] = rest * dom_counts / dom_counts.sum()
    return ClassDistribution(probs / probs.sum())


def estimate_skew(counts, cfg: ProfilerConfig, keep=()) -> SkewEstimate:
    """Dominant classes and smoothed distribution from an epoch's counts.

    A class is dominant when its epoch frequency reaches the dominance
    threshold and it was seen at least ``min_count`` times (in short epochs
    of an unskewed stream many classes reach the share by chance alone, two
    or so hits each); classes in ``keep`` (the live skew's) only need
    ``hysteresis`` times the threshold. If no class qualifies, every class
    is reported dominant.
    The estimate counts as a skew only when the dominant set is a proper
    subset of the universe holding at least ``min_mass`` of the frames.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total < cfg.w_min:
        raise ValueError(f"epoch has {total} frames, fewer than w_min={cfg.w_min}")
    freq = counts / total
    is_dom = (freq >= cfg.threshold) & (counts >= cfg.min_count)
    if len(keep):
        kept = np.asarray(keep, dtype=np.int64)
        is_dom[kept] |= freq[kept] >= cfg.threshold * cfg.hysteresis
    dominant = np.flatnonzero(is_dom)
    if dominant.size == 0:
        dominant = np.arange(counts.size)
    mass = float(freq[dominant].sum())
    is_skew = dominant.size < counts.size and mass >= cfg.min_mass
    return SkewEstimate(
        dominant=tuple(int(c) for c in dominant),
        distribution=skew_prior(counts, dominant, cfg.smoothing),
        epoch_len=total,
        mass=mass,
        is_skew=is_skew,
    )


def detect_change(preds, bypassed, estimate: SkewEstimate, change_fraction: float,
                  w_min: int | None = None) -> bool:
    """True when confident predictions outside the dominant set exceed ``change_fraction``.

    Only the last ``w_min`` entries are considered (all of them if ``w_min`` is None).
    """
    preds = np.asarray(preds, dtype=np.int64)
    flags = np.asarray(bypassed, dtype=bool)
    if w_min is not None:
        preds, flags = preds[-w_min:], flags[-w_min:]
    if preds.size == 0:
        return False
    outside = ~np.isin(preds, estimate.dominant)
    return float(np.count_nonzero(outside & flags)) / preds.size > change_fraction


class HotTracker:
    """Counts skew appearances and queues newly hot skews for compilation.

    With ``key_match`` < 1 an appearance is credited to an already counted
    key whose class set overlaps it at least that much (Jaccard).
    """

    def __init__(self, pi_h: int = 3, key_match: float = 1.0):
        if pi_h < 1:
            raise ValueError("pi_h must be >= 1")
        if not (0.0 < key_match <= 1.0):
            raise ValueError("key_match must lie in (0, 1]")
        self.pi_h = pi_h
        self.key_match = key_match
        self.appearances: dict[str, int] = {}
        self.status: dict[str, str] = {}
        self.pending_compile: deque[str] = deque()
        self.estimates: dict[str, SkewEstimate] = {}
        self._lock = threading.Lock()

    def canonical(self, key: str) -> str:
        return nearest_key(key, self.appearances, self.key_match) or key

    def record_appearance(self, key: str, estimate: SkewEstimate | None = None,
                          has_specific: bool = False) -> str:
        with self._lock:
            key = self.canonical(key)
            n = self.appearances.get(key, 0) + 1
            self.appearances[key] = n
            if estimate is not None:
                prev = self.estimates.get(key)
                if prev is None or estimate.epoch_len >= prev.epoch_len:
                    self.estimates[key] = estimate
            was_hot = self.status.get(key) == HOT
            state = HOT if n >= self.pi_h else COLD
            self.status[key] = state
            if state == HOT and not was_hot and not has_specific:
                self.pending_compile.append(key)
            return state

    def pop_pending(self) -> str | None:
        with self._lock:
            return self.pending_compile.popleft() if self.pending_compile else None

    def is_hot(self, key: str) -> bool:
        return self.status.get(key) == HOT


@dataclass(frozen=True)
class SkewEvent:
    kind: str
    frame: int
    estimate: SkewEstimate | None = None
    previous: SkewEstimate | None = None
    reason: str = ""

    def to_json(self) -> dict:
        d = {"kind": self.kind, "frame": self.frame, "reason": self.reason}
        if self.estimate is not None:
            d["estimate"] = self.estimate.to_json()
        if self.previous is not None:
            d["previous_key"] = self.previous.key
        return d


@dataclass
class SkewProfiler:
    cfg: ProfilerConfig
    frame: int = 0
    live: SkewEstimate | None = None
    events: list[SkewEvent] = field(default_factory=list)

    def __post_init__(self):
        self._reset_detection()
        self._recent_pred: deque[int] = deque(maxlen=self.cfg.w_min)
        self._recent_flag: deque[bool] = deque(maxlen=self.cfg.w_min)

    def _reset_detection(self):
        self._window = np.zeros(self.cfg.universe, dtype=np.int64)
        self._window_len = 0
        self._prev: WindowRecord | None = None
        self._epoch = np.zeros(self.cfg.universe, dtype=np.int64)
        self._epoch_is_live = False
        self._held: np.ndarray | None = None
        self._fails = 0

    def _emit(self, kind, estimate=None, previous=None, reason=""):
        ev = SkewEvent(kind, self.frame, estimate, previous, reason)
        self.events.append(ev)
        return ev

    def ingest(self, y: int, bypassed: bool = False) -> SkewEstimate | None:
        """Feed one prediction; returns the estimate emitted at a window boundary, if any."""
        y = int(y)
        if not (0 <= y < self.cfg.universe):
            raise ValueError(f"label {y} outside the class universe")
        self.frame += 1
        self._window[y] += 1
        self._window_len += 1
        self._recent_pred.append(y)
        self._recent_flag.append(bool(bypassed))
        if self._window_len < self.cfg.w_min:
            return None
        window = WindowRecord(self._window.copy(), self._window_len)
        self._window[:] = 0
        self._window_len = 0
        return self._close_window(window)

    def _close_window(self, window: WindowRecord) -> SkewEstimate | None:
        cfg = self.cfg
        if self.live is not None and detect_change(
                self._recent_pred, self._recent_flag, self.live, cfg.change_fraction, cfg.w_min):
            self._emit(ENDED, previous=self.live, reason="confident predictions outside skew")
            self.live = None
            self._reset_detection()
            self._prev = window
            self._epoch = window.counts.copy()
            return None

        if self._prev is None:
            self._prev = window
            self._epoch = window.counts.copy()
            return None

        dist = window_distance(self._prev, window, cfg.metric)
        self._prev = window
        if dist > cfg.pi_r:
            self._break_epoch(window)
            return None

        self._epoch += window.counts
        keep = self.live.dominant if self.live is not None else ()
        est = estimate_skew(self._epoch, cfg, keep)
        if self.live is None:
            if est.is_skew:
                self.live = est
                self._epoch_is_live = True
                self._fails = 0
                self._emit(DETECTED, est)
            return est

        if self._epoch_is_live:
            self._fails = 0
            if est.is_skew:
                self.live = est
                self._emit(UPDATED, est, reason="epoch extended")
            else:
                self._emit(ENDED, previous=self.live, reason="skew dissolved")
                self.live = None
                self._epoch_is_live = False
            return est

        # a fresh epoch formed while the old skew was held in grace
        self._fails = 0
        if (est.is_skew and self._held is not None
                and jaccard(est.key, self.live.key) >= cfg.key_match):
            self._epoch += self._held
            est = estimate_skew(self._epoch, cfg, keep)
            self.live = est
            self._emit(UPDATED, est, reason="epoch rejoined")
        elif est.is_skew:
            prev = self.live
            self.live = est
            self._emit(CHANGED, est, previous=prev)
        else:
            self._emit(ENDED, previous=self.live, reason="skew dissolved")
            self.live = None
        self._held = None
        self._epoch_is_live = self.live is not None
        return est

    def _break_epoch(self, window: WindowRecord):
        if self.live is not None:
            if self._epoch_is_live:
                self._held = self._epoch.copy()
            self._fails += 1
            if self._fails > self.cfg.grace_windows:
                self._emit(ENDED, previous=self.live, reason="windows unstable")
                self.live = None
                self._held = None
                self._fails = 0
        self._epoch = window.counts.copy()
        self._epoch_is_live = False

    def flush(self) -> None:
        """End the session (e.g. the device goes on charge); closes any live skew."""
        if self.live is not None:
            self._emit(ENDED, previous=self.live, reason="session end")
        self.live = None
        self._reset_detection()
        self._recent_pred.clear()
        self._recent_flag.clear()
