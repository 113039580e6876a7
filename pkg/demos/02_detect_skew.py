"""Watching the windowed skew detector on a stream that changes its mix.

Three stretches: 3 classes, then uniform traffic, then 2 other classes.
Only the classifier's predictions are fed in, as in service.
"""
import numpy as np

from skewserve.profiler import UPDATED, ProfilerConfig, SkewProfiler
from skewserve.sim.stream import STRATIFIED, SegmentSpec, StreamSpec, generate_stream

spec = StreamSpec((
    SegmentSpec(3, 1.0, 300, seed=0, sampling=STRATIFIED),
    SegmentSpec(0, 1.0, 300, seed=1),
    SegmentSpec(2, 1.0, 300, seed=2, sampling=STRATIFIED),
), universe=100, seed=4)
stream = generate_stream(spec)
print("true dominants per segment:", stream.dominants)

prof = SkewProfiler(ProfilerConfig(universe=100))
rng = np.random.default_rng(0)
for y in stream.labels:
    # a 95%-accurate classifier
    pred = y if rng.random() < 0.95 else rng.integers(100)
    prof.ingest(int(pred))
prof.flush()

for ev in prof.events:
    if ev.kind == UPDATED:
        continue
    key = ev.estimate.key if ev.estimate is not None else "-"
    prev = ev.previous.key if ev.previous is not None else "-"
    print(f"frame {ev.frame:4d}  {ev.kind:<8} now {key:<10} was {prev:<10} {ev.reason}")
