"""Brute-force reference solvers for small trees.

These enumerate positions on fixed grids and evaluate expected utility
exactly; they share no code with the one-period optimizer and exist to
check it. A strategy on a tree is a position per node, so for a given
realized wealth the search below a node does not depend on how that
wealth was reached; the enumeration is organized accordingly.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .arbitrage import TreeCertificate, certify_tree
from .dp import terminal_wealth
from .market import ScenarioTree, SubspaceBasis, increments

SEARCH_CAP = 10 ** 7


class OracleCapExceeded(ValueError):
    """The requested enumeration is too large."""


@dataclass
class OracleReport:
    best_value: float
    best_strategy: dict[str, np.ndarray]
    grid_spec: dict
    on_boundary: bool = False
    verdict: bool | None = None
    gap: float | None = None
    extra: dict = field(default_factory=dict)

    def compare(self, dp_value: float, rel_tol: float = 2e-2) -> "OracleReport":
        """Record the relative gap to a DP value and a pass/fail verdict."""
        denom = max(abs(dp_value), abs(self.best_value), 1e-12)
        self.gap = abs(dp_value - self.best_value) / denom
        self.verdict = self.gap <= rel_tol
        return self

    def to_dict(self) -> dict:
        return {
            "best_value": self.best_value,
            "best_strategy": {n: [float(v) for v in p] for n, p in sorted(self.best_strategy.items())},
            "grid": self.grid_spec,
            "on_boundary": self.on_boundary,
            "verdict": self.verdict,
            "gap": self.gap,
        }


class _Grid:
    """Position grid at one node, in fraction-of-wealth units."""

    def __init__(self, Z, basis: SubspaceBasis, size: int, radius: float, interval: bool):
        k = basis.dim
        self.basis = basis
        if k == 0:
            self.theta = np.zeros((1, 0))
            self.radius = 0.0
            return
        if k == 1 and interval:
            z = Z[:, 0]
            lo = max((-1.0 / v for v in z if v > 0), default=-radius)
            hi = min((-1.0 / v for v in z if v < 0), default=radius)
            axis = np.linspace(lo, hi, size)
            self.theta = axis[:, None]
            self.radius = max(abs(lo), abs(hi))
            self._edge = (lo, hi)
            return
        m = max(2, int(round(size ** (1.0 / k))))
        lo, hi = np.full(k, -radius), np.full(k, radius)
        self._edge = None
        if interval:
            # bounding box of the admissible polytope, clipped to the ball box
            corners = _polytope_corners(Z)
            if len(corners):
                lo, hi = np.maximum(corners.min(axis=0), lo), np.minimum(corners.max(axis=0), hi)
                self._edge = (lo, hi)
        axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
        theta = np.array(list(itertools.product(*axes)))
        self.theta = theta[np.all(1.0 + theta @ Z.T >= -1e-12, axis=1)]
        self.radius = radius

    def on_boundary(self, theta) -> bool:
        if self.theta.shape[1] == 0:
            return False
        if self._edge is not None:
            return False
        return bool(np.max(np.abs(theta)) >= self.radius * (1 - 1e-9))


def _polytope_corners(Z):
    # vertices of {theta : 1 + <theta, z> >= 0 for every row z}
    k = Z.shape[1]
    out = []
    for rows in itertools.combinations(range(len(Z)), k):
        A = Z[list(rows)]
        if abs(np.linalg.det(A)) > 1e-12:
            v = np.linalg.solve(A, -np.ones(k))
            if np.all(1.0 + Z @ v >= -1e-9):
                out.append(v)
    return np.array(out).reshape(-1, k)


def _node_grids(tree, cert, size, radius_factor, radius):
    grids = {}
    for nid in tree.internal_nodes():
        incs = increments(tree, nid)
        if cert is not None:
            nc = cert.nodes[nid]
            basis, R, interval = nc.basis, radius_factor / nc.beta, True
        else:
            basis = SubspaceBasis(np.eye(tree.asset_count), tree.asset_count)
            R, interval = radius, False
        grids[nid] = (_Grid(basis.coords(incs.deltas), basis, size, R, interval), incs)
    return grids


def brute_force_value(tree: ScenarioTree, utility, x0: float, per_node_grid_size: int = 2001,
                      cert: TreeCertificate | None = None, radius_factor: float = 1.05,
                      radius: float | None = None) -> OracleReport:
    """Maximize exact expected utility over per-node position grids.

    With a no-arbitrage certificate the grid at a node covers the
    admissible set in the support span: the admissible interval when the
    span is one-dimensional, otherwise the box of half-width
    ``radius_factor / beta`` (per unit wealth) filtered for admissibility.
    Without a certificate (``radius`` required) the box is taken in full
    coordinates; that mode is meant for probing arbitrage markets.
    """
    if cert is None and radius is None:
        cert = certify_tree(tree)
        if not cert.arbitrage_free:
            raise ValueError("market has arbitrage; pass an explicit radius")
    grids = _node_grids(tree, cert, per_node_grid_size, radius_factor, radius)
    sizes = [len(grids[n][0].theta) for n in tree.layer(0)]
    largest = max(len(g.theta) for g, _ in grids.values())
    if largest ** tree.horizon > SEARCH_CAP:
        raise OracleCapExceeded(f"{largest}^{tree.horizon} strategy combinations exceed {SEARCH_CAP}")

    def best(nid, wealth):
        # best expected utility below nid for each entry of wealth; also argmax
        if tree.is_leaf(nid):
            return np.asarray(utility.u(wealth, nid), dtype=float), None
        grid, incs = grids[nid]
        pos = grid.basis.embed(grid.theta)  # (G, d)
        total = np.zeros((wealth.size, len(pos)))
        for cid, p, dy in incs:
            w = wealth[:, None] * (1.0 + pos @ dy)
            w = np.maximum(w, 0.0)
            v, _ = best(cid, w.ravel())
            total += p * v.reshape(w.shape)
        top = total.max(axis=1, keepdims=True)
        ties = total >= top - 1e-12 * np.maximum(1.0, np.abs(top))
        j = np.argmax(ties, axis=1)
        return total[np.arange(wealth.size), j], j

    strategy, boundary = {}, False
    wealth = {tree.root: float(x0)}
    value = None
    for nid in tree.internal_nodes():
        w = wealth[nid]
        v, j = best(nid, np.array([w]))
        if value is None:
            value = float(v[0])
        grid, incs = grids[nid]
        theta = grid.theta[j[0]]
        boundary = boundary or (w > 0 and grid.on_boundary(theta))
        strategy[nid] = w * grid.basis.embed(theta)
        for cid, dy in zip(incs.child_ids, incs.deltas):
            wealth[cid] = max(w + float(dy @ strategy[nid]), 0.0)
    # the enumerated value must be reproduced exactly by the reported strategy
    wealths = terminal_wealth(tree, strategy, x0)
    exact = float(sum(tree.unconditional_prob(l) * utility.u(wealths[l], l) for l in tree.leaves()))
    spec = {"per_node": per_node_grid_size, "root_points": sizes[0], "radius_factor": radius_factor,
            "radius": radius}
    return OracleReport(exact, strategy, spec, boundary, extra={"enumerated": value})


def probe_unbounded(tree: ScenarioTree, utility, x0: float, per_node_grid_size: int = 401,
                    radius: float = 1.0, doublings: int = 3) -> tuple[bool, list[OracleReport]]:
    """Flag arbitrage-like unboundedness.

    Runs the unconstrained-box oracle at radii ``radius * 2**i`` and reports
    ``True`` when the best strategy sits on the box boundary for two
    consecutive radii while the value keeps increasing.
    """
    reports = [brute_force_value(tree, utility, x0, per_node_grid_size, cert=None,
                                 radius=radius * 2 ** i) for i in range(doublings)]
    flagged = any(a.on_boundary and b.on_boundary and b.best_value > a.best_value
                  for a, b in zip(reports, reports[1:]))
    return flagged, reports


def find_arbitrage(tree: ScenarioTree, per_node_grid_size: int = 40401,
                   pos_tol: float = 1e-9, neg_tol: float = 1e-12) -> dict[str, np.ndarray] | None:
    """Search zero-initial-wealth strategies for an arbitrage.

    Positions are enumerated on a box grid in full coordinates. A root
    position that keeps every child's wealth non-negative and makes one
    positive is an arbitrage (hold nothing afterwards); positions leaving
    every child at zero wealth pass the search on to the children.
    """
    d = tree.asset_count
    m = max(3, int(round(per_node_grid_size ** (1.0 / d))))
    if m ** d > SEARCH_CAP:
        raise OracleCapExceeded(f"{m ** d} positions per node exceed {SEARCH_CAP}")
    axis = np.linspace(-1.0, 1.0, m)
    positions = np.array(list(itertools.product(axis, repeat=d)))

    def search(nid):
        if tree.is_leaf(nid):
            return None
        incs = increments(tree, nid)
        pay = positions @ incs.deltas.T  # (G, n)
        ok = np.all(pay >= -neg_tol, axis=1)
        wins = ok & np.any(pay > pos_tol, axis=1)
        if np.any(wins):
            # largest winning position; first in grid order among equals
            norms = np.where(wins, np.linalg.norm(positions, axis=1), -1.0)
            return {nid: positions[int(np.argmax(norms))]}
        # only positions with zero payoff everywhere keep all wealth at zero
        for cid in incs.child_ids:
            found = search(cid)
            if found is not None:
                return found
        return None

    return search(tree.root)
