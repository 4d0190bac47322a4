#!/usr/bin/env python3
"""
A goal-reaching investor: utility is 0 below 1.5, rises linearly to 1 at
wealth 2 and stays flat. The utility is neither concave nor convex, so the
one-period objective has flat stretches and kinks.

Starting from x0 = 1 every position in [1, 2] reaches the goal in the up
state and loses everything useful in the down state, giving value 1/2.
The solver returns the smallest such position.
"""
import numpy as np

import nonconcave_dp as nd
from nonconcave_dp import samples

tree = samples.binomial_b1()
u = samples.ramp_utility()
res = nd.backward_induct(tree, u, x0=1.0)
plan = nd.assemble_strategy(res)
print("v* =", res.v_star, " position =", plan.position["r"])

# the value curve at the root is the piecewise-linear envelope
curve = res.values["r"]
for x in (0.25, 0.75, 1.0, 2.0):
    print(f"U_0({x:4.2f}) = {float(curve(x)):.4f}")

# exhaustive check of the root problem
grid = np.linspace(-1.0, 2.0, 3001)
brute = 0.5 * u.u(1 + grid) + 0.5 * u.u(1 - 0.5 * grid)
print("brute force max =", brute.max(), "first at xi =", grid[np.argmax(brute)])
