"""The end-to-end stream loop: scheduler -> backend -> probability layer -> profiler."""
from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from ..bank import NO_SKEW, ModelBank, ModelProfile
from ..perforation.select import DEFAULT_DELTA, compile_for_skew
from ..problayer import (DEFAULT_OMEGA, ClassDistribution, RescaleConfig, RescaleError,
                         rescale_with_bypass_batch, rescale_with_bypass)
from ..profiler import HotTracker, ProfilerConfig, SkewEstimate, SkewProfiler
from ..scheduler import DEFAULT_ENERGY_PER_MAC, Budget, Scheduler, compute_epf, run_compile_queue
from .backend import ConfusionBackend, TraceBackend, stable_seed
from .report import RunReport
from .stream import StreamSpec, generate_stream


class RunError(RuntimeError):
    def __init__(self, message: str, report: RunReport | None = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SimConfig:
    omega: float = DEFAULT_OMEGA
    w_min: int = 30
    pi_r: int = 2
    pi_h: int = 3
    dominance_threshold: float | None = None   # None: 2 / universe
    key_match: float = 1.0      # Jaccard overlap at which two skew keys count as one
    delta: float = DEFAULT_DELTA
    target: float | None = None     # None: general top accuracy + 2 * delta
    smoothing: float = 1e-3
    change_fraction: float = 0.2
    min_mass: float = 0.5
    grace_windows: int = 1
    hysteresis: float = 0.5
    min_count: int = 4
    metric: str = "linf"
    energy_per_mac: float = DEFAULT_ENERGY_PER_MAC
    rescaling: bool = True
    profiling: bool = True
    compiling: bool = True
    eval_frames: int = 5000
    seed: int = 0

    def with_features_off(self) -> "SimConfig":
        return replace(self, rescaling=False, profiling=False, compiling=False)

    def profiler_config(self, universe: int) -> ProfilerConfig:
        return ProfilerConfig(universe=universe, w_min=self.w_min, pi_r=self.pi_r,
                              dominance_threshold=self.dominance_threshold,
                              change_fraction=self.change_fraction, pi_h=self.pi_h,
                              metric=self.metric, smoothing=self.smoothing,
                              min_mass=self.min_mass, grace_windows=self.grace_windows,
                              hysteresis=self.hysteresis, key_match=self.key_match,
                              min_count=self.min_count)

    def compile_target(self, bank: ModelBank) -> float:
        if self.target is not None:
            return self.target
        return min(1.0, bank.general.top.accuracy + 2 * self.delta)


def skew_distribution(key: str, universe: int, p: float = 0.9) -> ClassDistribution:
    """Prior with mass ``p`` spread evenly over the key's classes."""
    dom = [int(c) for c in key.split(",")]
    probs = np.full(universe, (1.0 - p) / max(1, universe - len(dom)))
    probs[dom] = p / len(dom)
    return ClassDistribution.from_weights(probs)


class MonteCarloEvaluator:
    """Per-skew accuracy of a cascade member, measured on simulated frames.

    Labels put the estimate's dominant mass evenly on its dominant classes
    and the rest evenly elsewhere; outputs are rescaled with the estimate's
    smoothed distribution, as they would be in service. Every member is
    scored on the same draws for a given skew.
    """

    def __init__(self, backend: ConfusionBackend, train_prior: ClassDistribution,
                 omega: float = DEFAULT_OMEGA, n_frames: int = 2000, seed: int = 0,
                 default_p: float = 0.9):
        self.backend = backend
        self.train_prior = train_prior
        self.omega = omega
        self.n_frames = n_frames
        self.seed = seed
        self.default_p = default_p
        self.calls = 0
        self._noise = {}

    def _setup(self, skew):
        universe = self.backend.universe
        if isinstance(skew, SkewEstimate):
            key, dist = skew.key, skew.distribution
            draw_from = skew_distribution(key, universe, min(skew.mass, 1.0))
        else:
            key = str(skew)
            dist = draw_from = skew_distribution(key, universe, self.default_p)
        if key not in self._noise:
            rng = np.random.default_rng(stable_seed(self.seed, "evaluate", key))
            labels = rng.choice(universe, self.n_frames, p=draw_from.probs)
            self._noise[key] = self.backend.draw(labels, rng)
        return key, dist, self._noise[key]

    def __call__(self, model: ModelProfile, skew) -> float:
        self.calls += 1
        key, dist, noise = self._setup(skew)
        v = self.backend.softmax_batch(model, noise, key)
        cfg = RescaleConfig(self.train_prior, dist, self.omega)
        out, _ = rescale_with_bypass_batch(v, cfg)
        return float(np.mean(np.argmax(out, axis=1) == noise.labels))


def copy_bank(bank: ModelBank) -> ModelBank:
    return ModelBank.from_profiles(bank.profiles())


def run_end_to_end(spec: StreamSpec, bank: ModelBank, energy: float, time: float | None = None,
                   cfg: SimConfig = SimConfig(), backend=None, difficulty: dict | None = None,
                   train_prior: ClassDistribution | None = None) -> RunReport:
    """Serve every frame of ``spec`` and log the decisions.

    ``bank`` is copied, so class-specific models compiled during the run do
    not leak into the caller's bank. ``time`` defaults to the stream's
    duration; energy per frame is recomputed from what is left each frame.
    """
    bank = copy_bank(bank)
    if bank.general is None:
        raise RunError("bank has no general cascade")
    universe = spec.universe
    stream = generate_stream(spec)
    n = len(stream)
    fps = spec.frame_rate
    total_time = time if time is not None else n / fps
    if backend is None:
        backend = ConfusionBackend.from_bank(bank, universe, seed=cfg.seed, difficulty=difficulty)
    noise = backend.draw(stream.labels, np.random.default_rng(stable_seed(cfg.seed, "stream")))
    if isinstance(backend, TraceBackend):
        if backend.universe != universe:
            raise RunError(f"trace has {backend.universe} classes, stream {universe}")
        # recorded frames carry their own ground truth
        stream.labels = backend.labels[:n].astype(np.int64)
    train_prior = train_prior or ClassDistribution.uniform(universe)

    tracker = HotTracker(cfg.pi_h, cfg.key_match)
    sched = Scheduler(bank, tracker, train_prior, cfg.omega, cfg.energy_per_mac,
                      cfg.rescaling, cfg.key_match)
    profiler = SkewProfiler(cfg.profiler_config(universe)) if cfg.profiling else None
    evaluator = MonteCarloEvaluator(backend, train_prior, cfg.omega, cfg.eval_frames, cfg.seed)
    general = bank.general
    target = cfg.compile_target(bank)

    def compile_fn(key, est):
        return compile_for_skew(bank, general, est if est is not None else key,
                                target, evaluator, cfg.delta)

    report = RunReport(
        config={
            "stream": spec.to_json(),
            "sim": asdict(cfg),
            "budget": {"energy": energy, "time": total_time, "frame_rate": fps,
                       "energy_per_mac": cfg.energy_per_mac},
            "compile_target": target,
            "bank": bank.to_json(),
        },
        general_top={"id": general.top.id, "macs": general.top.macs, "params": general.top.params},
    )

    def dispatch(t, start):
        for ev in profiler.events[start:]:
            sched.on_skew_event(ev)
            d = ev.to_json()
            d["frame"] = t
            report.skew_events.append(d)

    remaining = float(energy)
    t = 0
    try:
        for t in range(n):
            seg = int(stream.segment[t])
            t_left = max(total_time - t / fps, 1.0 / fps)
            epf = compute_epf(Budget(max(remaining, 0.0), t_left, fps, cfg.energy_per_mac))
            model = sched.choose(epf)
            v = backend.softmax(model, noise, t, stream.segment_key(seg))
            state = sched.state
            bypassed = bool(v.max() >= cfg.omega)
            rescaled = False
            out = v
            if state.rescale is not None:
                try:
                    out, bypassed = rescale_with_bypass(v, state.rescale)
                    rescaled = not bypassed
                except RescaleError:
                    out = v
            pred = int(np.argmax(out))
            remaining -= model.macs * cfg.energy_per_mac
            report.record(frame=t, segment=seg, true_label=int(stream.labels[t]),
                          predicted_label=pred, model_id=model.id, macs=model.macs,
                          params=model.params, bypassed=bypassed, rescaled=rescaled,
                          mode=state.mode, measured=spec.segments[seg].measure)
            if profiler is not None:
                start = len(profiler.events)
                profiler.ingest(pred, bypassed)
                dispatch(t, start)
            last_of_segment = t == n - 1 or stream.segment[t + 1] != seg
            if last_of_segment and profiler is not None:
                if spec.charges_after(seg) or t == n - 1:
                    start = len(profiler.events)
                    profiler.flush()
                    dispatch(t, start)
                if spec.charges_after(seg) and cfg.compiling:
                    log = []
                    run_compile_queue(tracker, bank, True, compile_fn, log)
                    for rec in log:
                        d = rec.to_json()
                        d["frame"] = t
                        report.compile_events.append(d)
                    sched.refresh_mode()
    except Exception as exc:
        report.error = f"frame {t}: {type(exc).__name__}: {exc}"
        raise RunError(report.error, report) from exc
    report.config["appearances"] = dict(sorted(tracker.appearances.items()))
    return report
