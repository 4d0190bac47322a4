"""Expected-utility maximization with non-concave, random utilities on
finite scenario trees: no-arbitrage and growth certificates, dynamic
programming, value bounds and brute-force oracles."""
from .arbitrage import (ArbitrageWitness, NodeCertificate, TreeCertificate, certify_node,
                        certify_tree, verify_certificate)
from .dp import (ArbitrageError, DPResult, assemble_strategy, backward_induct, check_bounds,
                 check_growth_propagation, compute_J, evaluate_strategy, terminal_wealth)
from .market import (ScenarioTree, SubspaceBasis, TreeError, increments, load_tree, product_tree,
                     support_hull_basis, tree_from_dict, wealth_bounds)
from .onestep import OneStepProblem, ValueCurve, build_value_curve, maximize_one_step, wealth_grid
from .oracle import brute_force_value, find_arbitrage, probe_unbounded
from .utility import (GrowthCertificate, UtilityModel, default_growth, empirical_elasticity,
                      falsify_growth, kramkov_f, lift_growth, load_utility, refpoint_certificate)

__version__ = "0.1.0"
