import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nonconcave_dp import samples
from nonconcave_dp.arbitrage import (ArbitrageWitness, NodeCertificate, certificate_from_dict,
                                     certify_node, certify_tree, verify_certificate)
from nonconcave_dp.market import increments, make_increments


def _is_arbitrage(incs, direction):
    pay = incs.deltas @ direction
    return np.all(pay >= -1e-12) and np.any(pay > 1e-12)


def test_b1_certificate(b1):
    c = certify_node(increments(b1, "r"))
    assert isinstance(c, NodeCertificate)
    assert c.beta == pytest.approx(0.5)
    assert c.kappa == pytest.approx(0.5)
    assert c.dim == 1


def test_arbitrage_witness():
    cert = certify_tree(samples.arbitrage_tree())
    assert not cert.arbitrage_free
    w = cert.witness
    assert w.node == "r" and np.allclose(w.direction, [1.0])


def test_degenerate_node_is_trivially_certified():
    c = certify_node(increments(samples.degenerate_tree(), "r"))
    assert c.dim == 0 and c.beta == 1.0 and c.kappa == 1.0


def test_origin_on_facet_is_arbitrage():
    incs = make_increments([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    res = certify_node(incs)
    assert isinstance(res, ArbitrageWitness)
    assert _is_arbitrage(incs, res.direction)


def test_affine_hull_missing_origin():
    incs = make_increments([[1.0, 1.0], [2.0, 1.0]])
    res = certify_node(incs)
    assert isinstance(res, ArbitrageWitness)
    assert _is_arbitrage(incs, res.direction)


def test_square_inradius():
    incs = make_increments([[1, 1], [1, -1], [-1, 1], [-1, -1]], [0.1, 0.2, 0.3, 0.4])
    c = certify_node(incs)
    assert c.beta == pytest.approx(1.0)
    assert c.kappa == pytest.approx(0.1)


def test_lower_dimensional_support_in_higher_space():
    # collinear support in R^2 through the origin
    incs = make_increments([[1.0, 2.0], [-0.5, -1.0]])
    c = certify_node(incs)
    assert c.dim == 1
    assert c.beta == pytest.approx(0.5 * np.sqrt(5.0))


@given(st.integers(0, 10 ** 6))
def test_certificate_inequality_on_random_nodes(seed):
    tree = samples.random_tree(seed)
    cert = certify_tree(tree)
    assert cert.arbitrage_free
    for nid, nc in cert.nodes.items():
        rep = verify_certificate(increments(tree, nid), nc, n_dirs=500, rng=seed)
        assert rep.passed, (nid, rep)


@given(st.integers(0, 10 ** 6), st.floats(0.1, 10.0))
def test_beta_scales_with_increments(seed, s):
    tree = samples.random_tree(seed)
    incs = increments(tree, tree.root)
    scaled = make_increments(incs.deltas * s, incs.probs)
    a, b = certify_node(incs), certify_node(scaled)
    assert b.beta == pytest.approx(s * a.beta, rel=1e-9)
    assert b.kappa == a.kappa


@given(st.integers(0, 10 ** 6))
def test_random_arbitrage_witness_is_an_arbitrage(seed):
    tree = samples.random_tree(seed, arbitrage_node=True)
    cert = certify_tree(tree)
    assert not cert.arbitrage_free
    assert _is_arbitrage(increments(tree, cert.witness.node), cert.witness.direction)


def test_verify_rejects_inflated_beta(b1):
    incs = increments(b1, "r")
    c = certify_node(incs)
    bad = NodeCertificate(c.node, c.basis, c.beta * 1.5, c.kappa)
    assert not verify_certificate(incs, bad).passed


def test_export_roundtrip(b2):
    cert = certify_tree(b2)
    data = json.loads(cert.to_json())
    again = certificate_from_dict(data, b2.asset_count)
    assert again.to_dict() == cert.to_dict()
    deg = certify_tree(samples.degenerate_tree())
    again = certificate_from_dict(json.loads(deg.to_json()), 1)
    assert again.nodes["r"].dim == 0
