"""Small reference markets and utilities, and seeded random generators for
desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .market import ScenarioTree, product_tree, tree_from_dict
from .utility import GrowthCertificate, UtilityModel


def binomial_b1() -> ScenarioTree:
    """One period, price 1 -> 2 or 0.5 with probability 1/2 each."""
    return product_tree([1.0], [[2.0], [0.5]], [0.5, 0.5], 1, ids=["u", "d"])


def binomial_b2() -> ScenarioTree:
    """Two i.i.d. periods of :func:`binomial_b1`."""
    return product_tree([1.0], [[2.0], [0.5]], [0.5, 0.5], 2, ids=["u", "d"])


def arbitrage_tree() -> ScenarioTree:
    """One period with increments +1 and +2: a free lunch."""
    return product_tree([1.0], [[2.0], [3.0]], [0.5, 0.5], 1, ids=["u", "uu"])


def degenerate_tree() -> ScenarioTree:
    """One period whose single child has the same price."""
    return product_tree([1.0], [[1.0]], [1.0], 1, ids=["s"])


def sqrt_utility() -> UtilityModel:
    return UtilityModel("power", {"p": 0.5})


def sqrt_growth() -> GrowthCertificate:
    return GrowthCertificate(0.5, 1.0, 0.0)


def ramp_utility() -> UtilityModel:
    """0 up to 1.5, linear to 1 at 2, then flat."""
    return UtilityModel("ramp", {"lo": 1.5, "hi": 2.0, "low": 0.0, "high": 1.0})


def kf_utility() -> UtilityModel:
    return UtilityModel("kramkov_f")


def kf_growth() -> GrowthCertificate:
    return GrowthCertificate(1.0, 1.0, 0.5)


# --------------------------------------------------------------------------
# random generators

def _probs(rng, n):
    p = rng.uniform(0.2, 1.0, n)
    return p / p.sum()


def _unit(angle):
    return np.array([np.cos(angle), np.sin(angle)])


def _na_increments(rng, d, n):
    mag = lambda size=None: rng.uniform(0.1, 0.6, size)
    if d == 1:
        signs = np.array([1.0, -1.0] + list(rng.choice([-1.0, 1.0], n - 2)))
        return (signs * mag(n))[:, None]
    if n == 2 or rng.random() < 0.3:
        e = _unit(rng.uniform(0, 2 * np.pi))
        signs = np.array([1.0, -1.0] + list(rng.choice([-1.0, 1.0], n - 2)))
        return (signs * mag(n))[:, None] * e
    # angular gaps all below pi - 0.3 so the origin is well inside
    while True:
        gaps = rng.dirichlet(np.ones(n)) * 2 * np.pi
        if np.all(gaps < np.pi - 0.3):
            break
    angles = rng.uniform(0, 2 * np.pi) + np.concatenate([[0.0], np.cumsum(gaps[:-1])])
    return np.array([_unit(a) * mag() for a in angles])


def _arb_increments(rng, d, n):
    mag = rng.uniform(0.1, 0.6, n)
    if d == 1:
        return (rng.choice([-1.0, 1.0]) * mag)[:, None]
    base = rng.uniform(0, 2 * np.pi)
    angles = base + rng.uniform(0, np.deg2rad(100), n)
    return np.array([_unit(a) * m for a, m in zip(angles, mag)])


def random_tree(rng, horizon=None, d=None, max_children=3, arbitrage_node=False) -> ScenarioTree:
    """Random tree with ``T <= 2``, ``d <= 2`` and 2..``max_children``
    children per node.

    Increments keep the origin well inside the support hull at every node,
    except at one randomly chosen node when ``arbitrage_node`` is set.
    """
    rng = np.random.default_rng(rng)
    T = int(rng.integers(1, 3)) if horizon is None else horizon
    d = int(rng.integers(1, 3)) if d is None else d
    layers = [["r"]]
    fanout = {}
    for _ in range(T):
        nxt = []
        for nid in layers[-1]:
            fanout[nid] = int(rng.integers(2, max_children + 1))
            nxt.extend(f"{nid}{i}" for i in range(fanout[nid]))
        layers.append(nxt)
    internal = [n for layer in layers[:-1] for n in layer]
    arb = internal[int(rng.integers(len(internal)))] if arbitrage_node else None

    nodes = [{"id": "r", "parent": None, "prob": 1.0, "price": [1.0] * d}]
    price = {"r": np.ones(d)}
    for nid in internal:
        n = fanout[nid]
        deltas = _arb_increments(rng, d, n) if nid == arb else _na_increments(rng, d, n)
        for i, (dy, p) in enumerate(zip(deltas, _probs(rng, n))):
            cid = f"{nid}{i}"
            price[cid] = price[nid] + dy
            nodes.append({"id": cid, "parent": nid, "prob": float(p), "price": price[cid].tolist()})
    return tree_from_dict({"assets": d, "horizon": T, "nodes": nodes})


def random_piecewise_utility(rng, n_pieces=None, x_max=3.0) -> UtilityModel:
    """Random continuous, non-decreasing piecewise-quadratic utility with a
    linear last piece; generally neither concave nor convex."""
    rng = np.random.default_rng(rng)
    n = int(rng.integers(2, 5)) if n_pieces is None else n_pieces
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0.2, x_max, n - 1))])
    value = float(rng.uniform(0.0, 0.5))
    coeffs = []
    for i in range(n):
        if i + 1 < n:
            width = knots[i + 1] - knots[i]
            a = float(rng.uniform(0.0, 2.0))
            b = float(rng.uniform(-a / (2 * width), 1.0))
            coeffs.append([value, a, b])
            value = value + a * width + b * width ** 2
        else:
            coeffs.append([value, float(rng.uniform(0.0, 0.5))])
    return UtilityModel("piecewise_polynomial", {"knots": knots.tolist(), "coeffs": coeffs})
