"""A recurring skew, served with and without skew awareness.

The preset replays the same 10-class skew over three charging sessions;
by the fourth the skew is hot and a class-specific model has been picked
from the cascade. Only that last session is measured.
"""
from skewserve.presets import PRESETS, bench_config, toy_bank
from skewserve.sim.loop import run_end_to_end
from skewserve.sim.report import compute_metrics

bank = toy_bank()
spec = PRESETS["skew-n10-p0.9"](0)
on = run_end_to_end(spec, bank, 1000.0, cfg=bench_config(0))
off = run_end_to_end(spec, bank, 1000.0, cfg=bench_config(0).with_features_off())

for name, rep in (("skew-aware", on), ("baseline", off)):
    m = compute_metrics(rep)["measured"]
    print(f"{name:<11} accuracy {m['accuracy']:.4f}  mean MACs {m['mean_macs']:>11,.0f}"
          f"  model {m['modal_model']}")

print("compiled:", [(e["key"], e["model_id"]) for e in on.compile_events])
kinds = [e["kind"] for e in on.skew_events]
print("skew events:", {k: kinds.count(k) for k in sorted(set(kinds))})
