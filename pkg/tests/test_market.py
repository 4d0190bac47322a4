import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nonconcave_dp import samples
from nonconcave_dp.arbitrage import certify_tree
from nonconcave_dp.market import (TreeError, dump_tree, increments, load_tree, make_increments,
                                  project, support_hull_basis, tree_from_dict, wealth_bounds)


def _b1_dict():
    return {"assets": 1, "horizon": 1, "nodes": [
        {"id": "r", "parent": None, "prob": 1.0, "price": [1.0]},
        {"id": "u", "parent": "r", "prob": 0.5, "price": [2.0]},
        {"id": "d", "parent": "r", "prob": 0.5, "price": [0.5]},
    ]}


def test_b1_structure(b1):
    assert b1.horizon == 1 and b1.asset_count == 1
    assert b1.leaves() == ["rd", "ru"]
    incs = increments(b1, "r")
    assert dict(zip(incs.child_ids, incs.deltas[:, 0])) == {"rd": -0.5, "ru": 1.0}
    assert np.allclose(incs.probs, 0.5)


def test_b2_prices_multiply(b2):
    assert len(b2.leaves()) == 4
    assert b2.nodes["ruu"].price[0] == 4.0
    assert b2.nodes["rud"].price[0] == 1.0
    assert b2.unconditional_prob("rdd") == pytest.approx(0.25)
    assert b2.path("rud") == ["r", "ru", "rud"]


def test_roundtrip_json(b2):
    again = load_tree(dump_tree(b2))
    assert dump_tree(again) == dump_tree(b2)


def test_probabilities_within_tolerance_are_renormalized():
    data = _b1_dict()
    data["nodes"][1]["prob"] = 0.5 + 4e-13
    tree = tree_from_dict(data)
    assert sum(tree.nodes[c].cond_prob for c in ("u", "d")) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["nodes"][1].update(prob=0.6), "summing"),
    (lambda d: d["nodes"][1].update(parent="zz"), "dangling"),
    (lambda d: d["nodes"][2].update(price=[float("nan")]), "non-finite"),
    (lambda d: d["nodes"][2].update(price=[1.0, 2.0]), "length"),
    (lambda d: d["nodes"].append({"id": "u", "parent": "r", "prob": 0.1, "price": [1.0]}), "duplicate"),
    (lambda d: d.update(horizon=2), "leaf"),
    (lambda d: d["nodes"][0].update(parent="u"), "root"),
])
def test_schema_violations(mutate, message):
    data = _b1_dict()
    mutate(data)
    with pytest.raises(TreeError, match=message):
        tree_from_dict(data)


def test_load_tree_rejects_bad_json():
    with pytest.raises(TreeError):
        load_tree("{not json")


def test_increments_on_leaf_raises(b1):
    with pytest.raises(ValueError):
        increments(b1, "ru")


def test_hull_basis_cases():
    basis, linear = support_hull_basis(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert basis.dim == 1 and linear
    assert np.allclose(basis.vectors, [[1.0, 0.0]])
    basis, linear = support_hull_basis(np.array([[1.0, 1.0], [2.0, 1.0]]))
    assert basis.dim == 1 and not linear
    basis, linear = support_hull_basis(np.zeros((1, 2)))
    assert basis.dim == 0 and linear
    basis, linear = support_hull_basis(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]))
    assert basis.dim == 2 and linear


@given(arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 3)),
              elements=st.floats(-5, 5, allow_nan=False)))
def test_projection_idempotent_and_orthonormal(Y):
    basis, _ = support_hull_basis(Y)
    V = basis.vectors
    assert np.allclose(V @ V.T, np.eye(basis.dim), atol=1e-9)
    v = Y.sum(axis=0)
    p = project(v, basis)
    assert np.allclose(project(p, basis), p, atol=1e-9)


@given(st.integers(0, 10 ** 6))
def test_random_tree_invariants(seed):
    tree = samples.random_tree(seed)
    for t in range(tree.horizon + 1):
        total = sum(tree.unconditional_prob(n) for n in tree.layer(t))
        assert total == pytest.approx(1.0, abs=1e-12)
    assert load_tree(dump_tree(tree)).to_dict() == tree.to_dict()


def test_wealth_bounds(b2):
    cert = certify_tree(b2)
    w = wealth_bounds(b2, 1.0, cert)
    # beta = 0.5 at the root: wealth can at most triple
    assert w["ru"] == pytest.approx(3.0)
    assert w["ruu"] == pytest.approx(3.0 * (1 + 2.0 / 1.0))
    with pytest.raises(ValueError):
        wealth_bounds(b2, -1.0, cert)


def test_make_increments_defaults():
    incs = make_increments([1.0, -1.0])
    assert incs.deltas.shape == (2, 1)
    assert np.allclose(incs.probs, 0.5)
    assert json.dumps(list(incs.child_ids)) == '["0", "1"]'
