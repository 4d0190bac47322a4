#!/usr/bin/env python3
"""
A bounded, increasing, piecewise-linear utility whose asymptotic
elasticity is infinite.

Near every n + 1/2 the function rises with slope 1 over a short stretch
while its level stays below 1/2, so x u'(x) / u(x) grows roughly like 2x.
A growth certificate with exponent 1 still holds, which is all the dynamic
programming needs.
"""
import nonconcave_dp as nd
from nonconcave_dp import samples
from nonconcave_dp.utility import UtilityModel, empirical_elasticity

model = UtilityModel("kramkov_f")
print(" n    f(n)       elasticity at n+1/2")
for n in (1, 2, 5, 7, 10, 20, 47, 48):
    e = empirical_elasticity(model, x=n + 0.5, h=1e-9)
    print(f"{n:2d}  {nd.kramkov_f(float(n))[0]:+.6f}  {e:10.4f}")

cert = samples.kf_growth()
print("falsifier finds a counterexample:", nd.falsify_growth(model, cert) is not None)

lifted = nd.lift_growth(model, cert)
res = nd.backward_induct(samples.binomial_b2(), model, lifted)
rep = nd.check_growth_propagation(res, lifted)
print("v* =", res.v_star, " growth preserved through layers:", rep.passed)
print("propagated constants:", rep.C_bar)
