"""Energy-budgeted model choice and the detect / interpret / compile mode machine."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .bank import NO_SKEW, ModelBank, ModelProfile, nearest_key
from .problayer import DEFAULT_OMEGA, ClassDistribution, RescaleConfig
from .profiler import CHANGED, DETECTED, ENDED, UPDATED, HotTracker, SkewEstimate, SkewEvent

DETECTING = "detecting"
INTERPRETATION = "interpretation"
COMPILATION_PENDING = "compilation-pending"

DEFAULT_ENERGY_PER_MAC = 1e-8


@dataclass(frozen=True)
class Budget:
    remain_energy: float     # joules
    remaining_time: float    # seconds
    frame_rate: float        # frames per second
    energy_per_mac: float = DEFAULT_ENERGY_PER_MAC

    def __post_init__(self):
        if self.remain_energy < 0:
            raise ValueError("remaining energy cannot be negative")
        if self.energy_per_mac <= 0:
            raise ValueError("energy_per_mac must be positive")


def compute_epf(b: Budget) -> float:
    """Energy available per frame: E / (T * F)."""
    if b.remaining_time <= 0 or b.frame_rate <= 0:
        raise ValueError("remaining time and frame rate must be positive")
    if b.remain_energy == 0:
        return 0.0
    return b.remain_energy / (b.remaining_time * b.frame_rate)


def frame_energy(m: ModelProfile, energy_per_mac: float = DEFAULT_ENERGY_PER_MAC) -> float:
    return m.macs * energy_per_mac


def choose_from(models, epf: float, energy_per_mac: float = DEFAULT_ENERGY_PER_MAC) -> ModelProfile:
    """Most accurate affordable model (lower MACs on ties); the cheapest if none is affordable."""
    models = list(models)
    if not models:
        raise ValueError("no models to choose from")
    best = None
    for m in models:
        if m.macs * energy_per_mac > epf:
            continue
        if best is None or m.accuracy > best.accuracy or (
                m.accuracy == best.accuracy and m.macs < best.macs):
            best = m
    if best is None:
        best = min(models, key=lambda m: (m.macs, -m.accuracy))
    return best


def choose_model(epf: float, skew, bank: ModelBank,
                 energy_per_mac: float = DEFAULT_ENERGY_PER_MAC,
                 key_match: float = 1.0) -> ModelProfile:
    key = NO_SKEW if skew is None else getattr(skew, "key", skew)
    cascade, _ = bank.lookup(key, key_match)
    return choose_from(cascade, epf, energy_per_mac)


@dataclass(frozen=True)
class SchedulerState:
    mode: str = DETECTING
    current_skew: SkewEstimate | None = None
    rescale: RescaleConfig | None = None

    def __post_init__(self):
        if self.mode != DETECTING and self.current_skew is None:
            raise ValueError(f"mode {self.mode} needs a live skew estimate")


@dataclass
class CompileRecord:
    key: str
    model_id: str | None
    macs: int | None
    accuracy: float | None
    unmet: bool = False
    error: str | None = None

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("key", "model_id", "macs", "accuracy", "unmet", "error")}


def run_compile_queue(tracker: HotTracker, bank: ModelBank, charging: bool,
                      compile_fn: Callable[[str, SkewEstimate | None], tuple],
                      log: list | None = None) -> int:
    """Compile every pending hot skew while on charge; returns how many were compiled.

    ``compile_fn(key, estimate)`` returns ``(profile, selection)``. A failing
    key is logged and skipped; the rest of the queue still drains.
    """
    if not charging:
        return 0
    done = 0
    while (key := tracker.pop_pending()) is not None:
        if bank.has_specific(key):
            continue
        try:
            profile, sel = compile_fn(key, tracker.estimates.get(key))
        except Exception as exc:  # noqa: BLE001 - reported per key, drain continues
            if log is not None:
                log.append(CompileRecord(key, None, None, None, error=f"{type(exc).__name__}: {exc}"))
            continue
        done += 1
        if log is not None:
            log.append(CompileRecord(key, profile.id, profile.macs, profile.accuracy,
                                     unmet=bool(sel.unmet) if sel is not None else False))
    return done


@dataclass
class Scheduler:
    """Owns the mode machine for one stream.

    Skew appearances are counted when an episode closes, using the episode's
    final (most refined) key.
    """

    bank: ModelBank
    tracker: HotTracker
    train_prior: ClassDistribution
    omega: float = DEFAULT_OMEGA
    energy_per_mac: float = DEFAULT_ENERGY_PER_MAC
    rescaling: bool = True
    key_match: float = 1.0
    state: SchedulerState = field(default_factory=SchedulerState)

    def _mode_for(self, est: SkewEstimate) -> str:
        if self.tracker.canonical(est.key) in self.tracker.pending_compile:
            return COMPILATION_PENDING
        return INTERPRETATION

    def prior_for(self, est: SkewEstimate):
        """Test prior for rescaling under ``est``.

        A skew served by a class-specific model keeps the distribution it
        was compiled for: that estimate came from long epochs, while the live
        one is built from the (weaker) specialised model's own predictions.
        """
        match = nearest_key(est.key, self.bank.entries, self.key_match)
        if match is None:
            return est.distribution
        # the bank files a model under its estimate's key, the tracker under
        # the first key counted for that skew; the two can differ
        for stored in self.tracker.estimates.values():
            if stored.key == match:
                return stored.distribution
        near = nearest_key(match, self.tracker.estimates, self.key_match)
        if near is not None:
            return self.tracker.estimates[near].distribution
        return est.distribution

    def _enter(self, est: SkewEstimate):
        rescale = None
        if self.rescaling:
            rescale = RescaleConfig(self.train_prior, self.prior_for(est), self.omega)
        self.state = SchedulerState(self._mode_for(est), est, rescale)

    def _close(self, est: SkewEstimate | None):
        if est is not None:
            key = self.tracker.canonical(est.key)
            specific = not self.bank.lookup(key, self.key_match)[1]
            self.tracker.record_appearance(key, est, specific)

    def on_skew_event(self, event: SkewEvent) -> SchedulerState:
        if event.kind == DETECTED:
            self._enter(event.estimate)
        elif event.kind == UPDATED:
            if self.state.current_skew is not None:
                self._enter(event.estimate)
        elif event.kind == CHANGED:
            # the old episode closes and the new skew is already confirmed
            self._close(event.previous)
            self._enter(event.estimate)
        elif event.kind == ENDED:
            self._close(event.previous)
            self.state = SchedulerState()
        return self.state

    def choose(self, epf: float) -> ModelProfile:
        skew = self.state.current_skew
        return choose_model(epf, skew.key if skew is not None else NO_SKEW,
                            self.bank, self.energy_per_mac, self.key_match)

    def refresh_mode(self):
        """Re-derive the mode after the bank or queue changed (e.g. after charging)."""
        if self.state.current_skew is not None:
            self._enter(self.state.current_skew)
