"""How the energy budget steers model choice.

Energy per frame is remaining energy over remaining frames. The scheduler
serves the most accurate model whose per-frame cost fits under it.
"""
from skewserve.presets import toy_bank
from skewserve.scheduler import Budget, choose_model, compute_epf

bank = toy_bank()
top = bank.general.top
print(f"general top: {top.id}, {top.macs:,} MACs = {top.macs * 1e-8:.4f} J/frame at 1e-8 J/MAC")

for joules in (10.0, 5.0, 2.0, 1.0, 0.5, 0.1):
    b = Budget(joules, remaining_time=600, frame_rate=3)
    epf = compute_epf(b)
    m = choose_model(epf, "*", bank)
    print(f"{joules:5.1f} J for 1800 frames: epf {epf:.5f} J -> {m.id:<9} acc {m.accuracy:.3f}")
