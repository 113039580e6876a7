"""Layer/channel/stride perforation of small conv nets and cascade building."""
from .network import MaskSet, Network, cost_of, forward, reference_forward, toy_network
from .prune import PositionOracle, build_cascade, greedy_prune
from .select import Selection, binary_search_select, compile_for_skew
