"""Acceptance criteria, one test each. Run ``pytest tests/test_acceptance.py -v``;
the terminal summary lists one PASS/FAIL line per criterion."""
import json
import math
from functools import lru_cache

import numpy as np
import pytest

from nonconcave_dp import samples
from nonconcave_dp.arbitrage import certify_tree, verify_certificate
from nonconcave_dp.cli import main
from nonconcave_dp.dp import (ArbitrageError, assemble_strategy, backward_induct, check_bounds,
                              check_growth_propagation, compute_J, evaluate_strategy)
from nonconcave_dp.market import increments
from nonconcave_dp.oracle import brute_force_value, find_arbitrage
from nonconcave_dp.utility import (GrowthCertificate, UtilityModel, empirical_elasticity,
                                   falsify_growth, kramkov_f, lift_growth)

SQRT_B1 = 3 * math.sqrt(2) / 4
RANDOM_SEEDS = range(1000, 1050)
NA_SEEDS = range(2000, 2200)


@lru_cache(maxsize=None)
def random_case(seed):
    rng = np.random.default_rng(seed)
    tree = samples.random_tree(rng)
    return tree, samples.random_piecewise_utility(rng)


def test_criterion_01_one_period_sqrt(acceptance):
    res = backward_induct(samples.binomial_b1(), samples.sqrt_utility(), x0=1.0)
    xi = assemble_strategy(res).position["r"][0]
    ok = abs(res.v_star - SQRT_B1) <= 1e-3 and abs(xi - 1.0) <= 1e-3
    assert acceptance(1, ok, f"v*={res.v_star:.7f} (target {SQRT_B1:.7f}), xi={xi:.7f}")


def test_criterion_02_two_period_sqrt(acceptance):
    res = backward_induct(samples.binomial_b2(), samples.sqrt_utility(), x0=1.0)
    worst = 0.0
    for nid in res.tree.layer(1):
        c = res.values[nid]
        m = c.grid >= 0.01
        rel = np.abs(c.values[m] / (SQRT_B1 * np.sqrt(c.grid[m])) - 1.0)
        worst = max(worst, float(rel.max()))
    ok = abs(res.v_star - 1.125) <= 2e-3 and worst <= 1e-3
    assert acceptance(2, ok, f"v*={res.v_star:.7f} (target 1.125), layer-1 rel err {worst:.1e}")


def test_criterion_03_ramp_tie_break(acceptance):
    res = backward_induct(samples.binomial_b1(), samples.ramp_utility(), x0=1.0)
    xi = assemble_strategy(res).position["r"][0]
    grid = np.linspace(-1.0, 2.0, 3001)
    u = samples.ramp_utility()
    brute = 0.5 * u.u(np.maximum(1 + grid, 0)) + 0.5 * u.u(np.maximum(1 - 0.5 * grid, 0))
    ok = abs(res.v_star - 0.5) <= 1e-3 and abs(brute.max() - 0.5) <= 1e-12 and abs(xi - 1.0) <= 1e-9
    assert acceptance(3, ok, f"v*={res.v_star:.7f}, xi={float(xi)!r}")


def test_criterion_04_oracle_bracketing(acceptance):
    worst_gap = worst_paste = 0.0
    for seed in RANDOM_SEEDS:
        tree, u = random_case(seed)
        res = backward_induct(tree, u, x0=1.0)
        size = 2001 if tree.asset_count == 1 else 1681
        rep = brute_force_value(tree, u, 1.0, size, cert=res.certificate).compare(res.v_star)
        plan = assemble_strategy(res)
        paste = abs(evaluate_strategy(tree, plan, u) - res.v_star) / max(abs(res.v_star), 1e-12)
        worst_gap, worst_paste = max(worst_gap, rep.gap), max(worst_paste, paste)
    ok = worst_gap <= 2e-2 and worst_paste <= 2e-2
    assert acceptance(4, ok, f"50 trees: max oracle gap {worst_gap:.2e}, "
                             f"max pasting gap {worst_paste:.2e}")


def test_criterion_05_certificate_soundness(acceptance):
    failures = checked = 0
    for seed in RANDOM_SEEDS:
        tree, _ = random_case(seed)
        cert = certify_tree(tree)
        for nid, nc in cert.nodes.items():
            rep = verify_certificate(increments(tree, nid), nc, n_dirs=10_000, rng=seed)
            failures += not rep.passed
            checked += 1
    disagree = 0
    for seed in NA_SEEDS:
        tree = samples.random_tree(seed, arbitrage_node=bool(seed % 2))
        disagree += certify_tree(tree).arbitrage_free != (find_arbitrage(tree) is None)
    ok = failures == 0 and disagree == 0
    assert acceptance(5, ok, f"{checked} nodes, {failures} violations; "
                             f"{disagree}/200 certify/search disagreements")


def test_criterion_06_growth_propagation(acceptance):
    u = samples.kf_utility()
    g = lift_growth(u, GrowthCertificate(1.0, 1.0, 0.5))
    res = backward_induct(samples.binomial_b2(), u, g)
    rep = check_growth_propagation(res, g, lambdas=(1.0, 1.5, 2.0, 4.0, 8.0, 16.0), n_x=40)
    assert acceptance(6, rep.passed and rep.worst_slack >= -1e-6,
                      f"worst slack {rep.worst_slack:.3e} at {rep.worst_node}")


def test_criterion_07_value_bounds(acceptance):
    tree, u = samples.binomial_b1(), samples.sqrt_utility()
    res = backward_induct(tree, u, x0=1.0)
    table = compute_J(tree, samples.sqrt_growth(), res.certificate, u)
    target = 0.5 * (math.sqrt(3) + math.sqrt(2))
    rep = check_bounds(res.values, table, 0.5, x0=1.0, v_star=res.v_star)
    ok = (all(table.J[l] == 1.0 for l in tree.leaves()) and abs(table.J["r"] - target) <= 1e-9
          and rep.passed and res.v_star <= 2 * table.J["r"])
    assert acceptance(7, ok, f"J_0={table.J['r']:.12f} (target {target:.12f}), "
                             f"worst slack {rep.worst_slack:.3e}")


def test_criterion_08_infinite_elasticity_example(acceptance):
    model = UtilityModel("kramkov_f")
    # exact up to the rounding of the reference expression itself
    values_exact = all(abs(kramkov_f(float(n))[0] - (0.5 - 1.0 / (n + 1))) <= 2 * np.spacing(1.0)
                       for n in range(51))
    slopes_one = True
    for n in range(51):
        a = 1.0 / (4 * (n + 1) * (n + 2))
        x = np.linspace(n + 0.5 - a, n + 0.5 + a, 9)[1:-1]
        slopes_one &= bool(np.all(kramkov_f(x)[1] == 1.0))
    elasticity_ok = True
    for n in range(51):
        x = n + 0.5
        e = empirical_elasticity(model, x=x, h=1e-9)
        elasticity_ok &= abs(e - x / kramkov_f(x)[0]) <= 1e-3
    e1 = empirical_elasticity(model, x=1.5, h=1e-9)
    e7 = empirical_elasticity(model, x=7.5, h=1e-9)
    falsifier_ok = falsify_growth(model, GrowthCertificate(1.0, 1.0, 0.5)) is None
    parts = {"f(n) exact": values_exact, "slope 1": slopes_one, "elasticity formula": elasticity_ok,
             "AE(1.5)=18": abs(e1 - 18.0) <= 1e-3, "AE(7.5)>100": e7 > 100.0,
             "growth (1,1,1/2)": falsifier_ok}
    failed = [k for k, v in parts.items() if not v]
    ok = not failed
    assert acceptance(8, ok, f"elasticity at 7.5 = {e7:.4f}; failed parts: {failed or 'none'}"), \
        f"failed parts {failed}; elasticity at n=7 is {e7}"


def test_criterion_09_degenerate_and_boundary(acceptance, tmp_path, capsys, data_dir):
    tree, u = random_case(1001)
    res = backward_induct(tree, u, x0=0.0)
    expected = sum(tree.unconditional_prob(l) * u.u(0.0, l) for l in tree.leaves())
    plan = assemble_strategy(res)
    zero_ok = res.v_star == expected and all(np.all(p == 0) for p in plan.position.values())

    deg = samples.degenerate_tree()
    sq = samples.sqrt_utility()
    dres = backward_induct(deg, sq, x0=2.0)
    c = dres.values["r"]
    deg_ok = (np.allclose(c.values, sq.u(c.grid), atol=1e-12)
              and np.all(dres.policy.positions["r"] == 0.0))

    code = main(["optimize", "--tree", f"{data_dir}/arb.json", "--utility",
                 f"{data_dir}/sqrt.json", "--out", str(tmp_path)])
    capsys.readouterr()
    try:
        backward_induct(samples.arbitrage_tree(), sq)
        refused = False
    except ArbitrageError:
        refused = True
    arb_ok = code == 3 and refused and not (tmp_path / "run.json").exists()
    ok = zero_ok and deg_ok and arb_ok
    assert acceptance(9, ok, f"x0=0: {zero_ok}, DEG: {deg_ok}, ARB exit {code}")


def test_criterion_10_determinism(acceptance, tmp_path, capsys, data_dir):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        args = ["--tree", f"{data_dir}/b2.json", "--utility", f"{data_dir}/kf.json", "--out", str(out)]
        assert main(["optimize", *args]) == 0
        assert main(["certify-na", "--seed", "3", *args]) == 0
        assert main(["export", "--out", str(out)]) == 0
        blobs.append([(out / f).read_bytes() for f in ("run.json", "certificate.json", "curves.csv")])
    capsys.readouterr()
    same = blobs[0] == blobs[1]
    json.loads(blobs[0][0])
    assert acceptance(10, same, f"{sum(len(b) for b in blobs[0])} bytes compared, identical={same}")
