"""Rescaling a classifier's outputs once the class mix of the stream is known.

A synthetic 100-class model with 70% top-1 accuracy sees a stream where 5
classes make up every frame. Dividing out the (uniform) training prior and
multiplying in the stream prior removes most confusions with classes that
never show up.
"""
import numpy as np

from skewserve.bank import GENERAL, NO_SKEW, ModelProfile
from skewserve.problayer import ClassDistribution, RescaleConfig, rescale_with_bypass_batch
from skewserve.sim.backend import ConfusionBackend
from skewserve.sim.stream import SegmentSpec, StreamSpec, generate_stream

U = 100
stream = generate_stream(StreamSpec((SegmentSpec(5, 1.0, 5000),), universe=U, seed=1))
dominant = list(stream.dominants[0])
print("dominant classes:", dominant)

model = ModelProfile("general", GENERAL, NO_SKEW, 0, 1, 0.70)
backend = ConfusionBackend(U, {"general": 0.70}, seed=1)
v = backend.simulate(model, stream.labels, np.random.default_rng(0))

w = np.zeros(U)
w[dominant] = 1.0
for omega in (1.0, 0.9, 0.7):
    cfg = RescaleConfig(ClassDistribution.uniform(U), ClassDistribution.from_weights(w), omega)
    out, bypassed = rescale_with_bypass_batch(v, cfg)
    print(f"omega={omega:.1f}  plain {np.mean(v.argmax(1) == stream.labels):.3f}"
          f"  rescaled {np.mean(out.argmax(1) == stream.labels):.3f}"
          f"  bypassed {bypassed.mean():.2f}")

# a wrong prior hurts: pretend five other classes dominate
wrong = np.zeros(U)
wrong[[c for c in range(U) if c not in dominant][:5]] = 1.0
cfg = RescaleConfig(ClassDistribution.uniform(U), ClassDistribution.from_weights(wrong))
out, _ = rescale_with_bypass_batch(v, cfg)
print(f"wrong prior        rescaled {np.mean(out.argmax(1) == stream.labels):.3f}")
