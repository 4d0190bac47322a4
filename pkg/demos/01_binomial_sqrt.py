#!/usr/bin/env python3
"""
Square-root utility on a one- and a two-period binomial market.

With u(x) = sqrt(x) the one-period optimum from x0 = 1 is to hold one unit
of the asset: wealth becomes 2 or 0.5 and the expected utility is
(sqrt(2) + sqrt(0.5)) / 2 = 3 sqrt(2) / 4. Repeating the step gives the
square of that factor over two periods, 9/8.
"""
import numpy as np

import nonconcave_dp as nd
from nonconcave_dp import samples

u = samples.sqrt_utility()

b1 = samples.binomial_b1()
res = nd.backward_induct(b1, u, x0=1.0)
plan = nd.assemble_strategy(res)
print("one period : v* =", res.v_star, " closed form =", 3 * np.sqrt(2) / 4)
print("             position at root =", plan.position["r"])

b2 = samples.binomial_b2()
res2 = nd.backward_induct(b2, u, x0=1.0)
print("two periods: v* =", res2.v_star, " closed form =", 9 / 8)

# the value curves after one period are m * sqrt(x)
curve = res2.values["ru"]
x = np.array([0.25, 1.0, 2.5])
print("U_1(x) / sqrt(x) at", x, "=", curve(x) / np.sqrt(x))

# polynomial envelope U_t(x) <= J_t (x**g + 1)
table = nd.compute_J(b1, samples.sqrt_growth(), res.certificate, u)
print("J_0 =", table.J["r"], " bound on v*(1):", 2 * table.J["r"])
