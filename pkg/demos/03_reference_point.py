#!/usr/bin/env python3
"""
S-shaped utility measured against a reference wealth, on two periods.

Gains above the reference B = 1 are valued by x**0.5 and losses are
penalized 2.25 times as much. Holding nothing keeps wealth exactly at
the reference, so the optimal value is at least 0.
"""
import nonconcave_dp as nd
from nonconcave_dp import samples
from nonconcave_dp.utility import UtilityModel, default_growth

tree = samples.binomial_b2()
u = UtilityModel("two_piece_power", {"alpha": 0.5, "beta": 0.5, "loss_aversion": 2.25}, 1.0)
growth = nd.lift_growth(u, default_growth(u))
print("growth certificate:", growth)

res = nd.backward_induct(tree, u, growth, x0=1.0)
plan = nd.assemble_strategy(res)
print("v* =", res.v_star)
for nid in sorted(plan.wealth):
    pos = plan.position.get(nid)
    print(f"  {nid:4s} wealth {plan.wealth[nid]:.4f}", "" if pos is None else f"position {pos[0]:+.4f}")

table = nd.compute_J(tree, growth, res.certificate, u)
rep = nd.check_bounds(res.values, table, x0=1.0, v_star=res.v_star)
print("value bound holds:", rep.passed, " v* <=", rep.root_bound)
