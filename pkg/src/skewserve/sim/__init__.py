"""Synthetic streams, a confusion-model backend and the end-to-end loop."""
from .backend import ConfusionBackend, TraceBackend
from .loop import SimConfig, run_end_to_end
from .report import RunReport, compute_metrics
from .stream import SegmentSpec, StreamSpec, generate_stream
