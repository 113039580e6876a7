"""From one network to a cascade of cheaper variants, then a per-skew pick.

The toy 4-conv network is perforated greedily (skip a layer, drop a channel
group, or double a stride, whichever costs least accuracy). The snapshots
form a Pareto cascade. Bisection then finds the cheapest member that is
good enough on a given skew.
"""
from skewserve.bank import ModelBank
from skewserve.perforation.network import cost_of, toy_network
from skewserve.perforation.prune import PositionOracle, build_cascade, greedy_prune
from skewserve.perforation.select import TableEvaluator, binary_search_select

net = toy_network(seed=0)
macs, params = cost_of(net)
print(f"full network: {macs:,} MACs, {params:,} params")

snaps = greedy_prune(net, PositionOracle(net, full=0.72))
bank = ModelBank()
cascade = build_cascade(snaps, name="toy4", bank=bank)
print(f"{len(snaps)} snapshots, {len(cascade)} on the cascade")
for m in cascade.models[::4]:
    print(f"  {m.id:<9} {m.macs:>9,} MACs  acc {m.accuracy:.3f}")

# pretend the skew "1,2,3" is easy: every member scores 25 points higher there
easy = TableEvaluator({(m.id, "1,2,3"): min(1.0, m.accuracy + 0.25) for m in cascade})
for target in (0.6, 0.8, 0.95):
    general = binary_search_select(cascade, "*", target, 0.02, TableEvaluator())
    skewed = binary_search_select(cascade, "1,2,3", target, 0.02, easy)
    print(f"target {target:.2f}: general -> {general.model.id} ({general.model.macs:,} MACs)"
          f"{' unmet' if general.unmet else ''};"
          f" skew -> {skewed.model.id} ({skewed.model.macs:,} MACs, {skewed.calls} evaluations)")
