"""Skew-aware inference serving: prior rescaling, skew detection, perforated cascades."""
from .bank import Cascade, ModelBank, ModelProfile, pareto_filter, skew_key
from .problayer import ClassDistribution, RescaleConfig, predict, rescale, rescale_with_bypass
from .profiler import HotTracker, ProfilerConfig, SkewEstimate, SkewProfiler
from .scheduler import Budget, Scheduler, choose_model, compute_epf

__version__ = "0.1.0"
