"""Backward induction on a scenario tree, strategy pasting and bounds.

``U_T = u`` on the leaves; every internal node's value curve is the
one-period value of its children's curves. The optimal strategy is pasted
forward from the root by re-solving each node's one-period problem at the
realized wealth.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arbitrage import TreeCertificate, certify_tree
from .market import ScenarioTree, increments, wealth_bounds
from .onestep import OneStepProblem, TerminalCurve, ValueCurve, build_value_curve, wealth_grid
from .utility import GrowthCertificate, UtilityModel

logger = logging.getLogger(__name__)

THREADS_ENV = "NONCONCAVE_DP_THREADS"
ADMISSIBILITY_TOL = 1e-12


class ArbitrageError(RuntimeError):
    """The market admits arbitrage; the optimization problem is ill-posed."""


class InadmissibleStrategy(ValueError):
    """A strategy drives wealth negative at some node."""


class BoundUnavailable(ValueError):
    """The polynomial bound needs a growth certificate with ``x_bar > 0``."""


@dataclass
class ValueFunctionTable:
    curves: dict[str, ValueCurve]
    times: dict[str, int]

    def layer(self, t: int) -> dict[str, ValueCurve]:
        return {n: c for n, c in sorted(self.curves.items()) if self.times[n] == t}

    def __getitem__(self, node: str) -> ValueCurve:
        return self.curves[node]


@dataclass
class PolicyTable:
    """Per-node maximizers on the wealth grid, plus the one-period problems
    needed to re-optimize at off-grid wealth."""

    grids: dict[str, np.ndarray]
    positions: dict[str, np.ndarray]  # (n_grid, d)
    problems: dict[str, OneStepProblem] = field(repr=False, default_factory=dict)
    tol: float = 1e-4

    def lookup(self, node: str, wealth: float) -> np.ndarray:
        """Stored maximizer at the nearest grid wealth not above ``wealth``."""
        g = self.grids[node]
        j = max(int(np.searchsorted(g, wealth, side="right")) - 1, 0)
        return self.positions[node][j]

    def position(self, node: str, wealth: float) -> np.ndarray:
        """Maximizer re-solved at the exact wealth."""
        return self.problems[node].solve(wealth, self.tol).xi_star


@dataclass
class DPResult:
    tree: ScenarioTree
    utility: UtilityModel
    certificate: TreeCertificate
    x0: float
    values: ValueFunctionTable
    policy: PolicyTable
    w_max: dict[str, float]
    growth: GrowthCertificate | None = None

    @property
    def v_star(self) -> float:
        """Value-curve estimate of the optimal expected utility at ``x0``."""
        return float(self.values[self.tree.root](self.x0))


def _n_threads(threads):
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def backward_induct(tree: ScenarioTree, utility: UtilityModel, growth: GrowthCertificate | None = None,
                    na: TreeCertificate | None = None, x0: float = 1.0, n_grid: int = 256,
                    tol: float = 1e-4, threads: int | None = None) -> DPResult:
    """Dynamic programming from the leaves to the root.

    Grids at each node cover ``[0, W_max(node)]`` (see
    :func:`~nonconcave_dp.market.wealth_bounds`). Nodes of one layer are
    independent and may run on ``threads`` workers (default from the
    ``NONCONCAVE_DP_THREADS`` environment variable).
    """
    if x0 < 0:
        raise ValueError("x0 must be non-negative")
    na = certify_tree(tree) if na is None else na
    if not na.arbitrage_free:
        raise ArbitrageError(f"arbitrage at node {na.witness.node!r}; refusing to optimize")
    missing = set(tree.internal_nodes()) - set(na.nodes)
    if missing:
        raise ValueError(f"certificate does not cover nodes {sorted(missing)}")

    w_max = wealth_bounds(tree, x0, na)
    times = {n: tree.nodes[n].time for n in tree.nodes}
    curves: dict[str, ValueCurve] = {}
    grids: dict[str, np.ndarray] = {}
    positions: dict[str, np.ndarray] = {}
    problems: dict[str, OneStepProblem] = {}

    for leaf in tree.leaves():
        g = wealth_grid(w_max[leaf], n_grid)
        curves[leaf] = ValueCurve(g, utility.u(g, leaf))
        grids[leaf] = g

    def solve_node(nid):
        incs = increments(tree, nid)
        if tree.nodes[nid].time == tree.horizon - 1:
            kids = [TerminalCurve(utility, c, w_max[c]) for c in incs.child_ids]
        else:
            kids = [curves[c] for c in incs.child_ids]
        problem = OneStepProblem(incs, kids, na.nodes[nid])
        g = wealth_grid(w_max[nid], n_grid)
        curve, sols = build_value_curve(nid, g, incs, kids, na.nodes[nid], tol, problem=problem)
        return nid, g, curve, np.array([s.xi_star for s in sols]), problem

    workers = _n_threads(threads)
    for t in range(tree.horizon - 1, -1, -1):
        layer = tree.layer(t)
        if workers > 1 and len(layer) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                done = list(pool.map(solve_node, layer))
        else:
            done = [solve_node(n) for n in layer]
        for nid, g, curve, xis, problem in done:
            curves[nid], grids[nid], positions[nid], problems[nid] = curve, g, xis, problem

    return DPResult(tree, utility, na, float(x0), ValueFunctionTable(curves, times),
                    PolicyTable(grids, positions, problems, tol), w_max, growth)


@dataclass
class StrategyPlan:
    """Forward plan: realized wealth at every node and position at every
    internal node."""

    wealth: dict[str, float]
    position: dict[str, np.ndarray]

    def to_dict(self) -> dict:
        out = {}
        for nid in sorted(self.wealth):
            entry = {"wealth": self.wealth[nid]}
            if nid in self.position:
                entry["position"] = [float(v) for v in self.position[nid]]
            out[nid] = entry
        return out


def assemble_strategy(result: DPResult, x0: float | None = None) -> StrategyPlan:
    """Paste the one-period maximizers forward from the root."""
    tree, policy = result.tree, result.policy
    x0 = result.x0 if x0 is None else float(x0)
    if x0 > result.x0 * (1 + 1e-12) + 1e-300:
        raise ValueError("x0 exceeds the wealth range the tables were built for")
    wealth = {tree.root: x0}
    position = {}
    for nid in tree.internal_nodes():
        w = wealth[nid]
        if w > result.w_max[nid] * (1 + 1e-9) + 1e-12:
            raise RuntimeError(f"wealth {w:g} at node {nid!r} exits its grid [0, {result.w_max[nid]:g}]")
        xi = policy.position(nid, w) if w > 0 else np.zeros(tree.asset_count)
        position[nid] = xi
        incs = increments(tree, nid)
        for cid, dy in zip(incs.child_ids, incs.deltas):
            wc = w + float(dy @ xi)
            if wc < -1e-9:
                raise RuntimeError(f"pasted strategy makes wealth negative at {cid!r}: {wc:g}")
            wealth[cid] = max(wc, 0.0)
    return StrategyPlan(wealth, position)


def terminal_wealth(tree: ScenarioTree, positions, x0: float) -> dict[str, float]:
    """Wealth at every node under a strategy ``{node: position}``.

    Raises :class:`InadmissibleStrategy` when wealth goes negative.
    """
    if isinstance(positions, StrategyPlan):
        positions = positions.position
    wealth = {tree.root: float(x0)}
    for nid in tree.internal_nodes():
        xi = np.asarray(positions.get(nid, np.zeros(tree.asset_count)), dtype=float)
        incs = increments(tree, nid)
        for cid, dy in zip(incs.child_ids, incs.deltas):
            wc = wealth[nid] + float(dy @ xi)
            if wc < -ADMISSIBILITY_TOL:
                raise InadmissibleStrategy(f"wealth {wc:g} < 0 at node {cid!r}")
            wealth[cid] = max(wc, 0.0)
    return wealth


def evaluate_strategy(tree: ScenarioTree, strategy, utility: UtilityModel, x0: float | None = None) -> float:
    """Exact expected terminal utility of a strategy.

    ``strategy`` is a :class:`StrategyPlan` or a mapping from internal node
    ids to position vectors (missing nodes hold nothing).
    """
    if x0 is None:
        if not isinstance(strategy, StrategyPlan):
            raise ValueError("x0 is required for a bare position mapping")
        x0 = strategy.wealth[tree.root]
    wealth = terminal_wealth(tree, strategy, x0)
    return float(sum(tree.unconditional_prob(leaf) * utility.u(wealth[leaf], leaf)
                     for leaf in tree.leaves()))


# --------------------------------------------------------------------------
# polynomial bounds

@dataclass
class BoundTable:
    J: dict[str, float]
    gamma_bar: float

    def upper(self, node: str, x) -> np.ndarray:
        return self.J[node] * (np.power(x, self.gamma_bar) + 1.0)


def compute_J(tree: ScenarioTree, growth: GrowthCertificate, na: TreeCertificate,
              utility: UtilityModel) -> BoundTable:
    """Envelope ``U_t(x) <= J_t (x**g + 1)`` by backward conditional expectation.

    ``J_T = max((u+(x_bar) + c) / x_bar**g, u+(x_bar))`` and
    ``J_t = E[J_{t+1} (1 + |dS_{t+1}| / beta_{t+1})**g | node]``.
    """
    if growth.x_bar <= 0:
        raise BoundUnavailable("x_bar = 0: the terminal bound divides by x_bar**gamma_bar")
    if not na.arbitrage_free:
        raise ArbitrageError("bounds need a full no-arbitrage certificate")
    g, xb = growth.gamma_bar, growth.x_bar
    J = {}
    for leaf in tree.leaves():
        up = max(float(utility.u(xb, leaf)), 0.0)
        J[leaf] = max((up + growth.c_at(leaf)) / xb ** g, up)
    for t in range(tree.horizon - 1, -1, -1):
        for nid in tree.layer(t):
            incs = increments(tree, nid)
            beta = na.nodes[nid].beta
            norms = np.linalg.norm(incs.deltas, axis=1)
            J[nid] = float(sum(p * J[c] * (1.0 + nrm / beta) ** g
                               for c, p, nrm in zip(incs.child_ids, incs.probs, norms)))
    return BoundTable(J, g)


@dataclass
class BoundReport:
    passed: bool
    worst_slack: float
    worst_node: str | None
    root_value: float | None = None
    root_bound: float | None = None


def check_bounds(values: ValueFunctionTable, bounds: BoundTable, gamma_bar: float | None = None,
                 x0: float | None = None, v_star: float | None = None, atol: float = 1e-6) -> BoundReport:
    """Check ``U_t(x) <= J_t (x**g + 1)`` at every grid point of every node,
    and ``v* <= (1 + x0**g) J_0`` at the root when ``x0``, ``v_star`` given.

    Slack is ``bound - value``; the check passes when it is ``>= -atol``.
    """
    g = bounds.gamma_bar if gamma_bar is None else gamma_bar
    worst, worst_node = np.inf, None
    for nid, curve in sorted(values.curves.items()):
        slack = float(np.min(bounds.J[nid] * (curve.grid ** g + 1.0) - curve.values))
        if slack < worst:
            worst, worst_node = slack, nid
    passed = worst >= -atol
    root_bound = None
    if x0 is not None and v_star is not None:
        root = min(values.curves, key=lambda n: (values.times[n], n))
        root_bound = (1.0 + x0 ** g) * bounds.J[root]
        passed = passed and v_star <= root_bound + atol
    return BoundReport(passed, worst, worst_node, v_star, root_bound)


# --------------------------------------------------------------------------
# growth preservation through the layers

@dataclass
class GrowthPropagationReport:
    passed: bool
    worst_slack: float
    worst_node: str | None
    C_bar: dict[str, float]


def propagated_constants(result: DPResult, growth: GrowthCertificate) -> dict[str, float]:
    """``C_bar`` per node: ``C_lifted`` on leaves, then
    ``C_bar(node) = E[C_bar(child)] + E[U_child^-(0)]``."""
    tree = result.tree
    C = {leaf: growth.lifted_at(leaf) for leaf in tree.leaves()}
    for t in range(tree.horizon - 1, -1, -1):
        for nid in tree.layer(t):
            incs = increments(tree, nid)
            C[nid] = float(sum(p * (C[c] + max(-float(result.values[c].values[0]), 0.0))
                               for c, p in zip(incs.child_ids, incs.probs)))
    return C


def check_growth_propagation(result: DPResult, growth: GrowthCertificate, lambdas=None,
                             n_x: int = 40, atol: float = 1e-6) -> GrowthPropagationReport:
    """Check ``U_t+(lam x) <= lam**g U_t+(x) + lam**g C_bar(node)`` at every node.

    For each ``lam`` the ``n_x`` test wealths are spread over
    ``(0, W_max(node) / lam]`` so that ``lam x`` stays inside the node's
    grid. Leaves use the exact utility.
    """
    from .utility import DEFAULT_LAMBDAS

    lams = np.asarray(DEFAULT_LAMBDAS if lambdas is None else lambdas, dtype=float)
    tree, g = result.tree, growth.gamma_bar
    C = propagated_constants(result, growth)
    worst, worst_node = np.inf, None
    for nid in sorted(tree.nodes):
        top = result.w_max[nid]
        if top <= 0:
            continue
        if tree.is_leaf(nid):
            U = lambda x, n=nid: np.asarray(result.utility.u(x, n))
        else:
            U = result.values[nid]
        for lam in lams:
            xs = np.linspace(top / lam / n_x, top / lam, n_x)
            lhs = np.maximum(U(lam * xs), 0.0)
            rhs = lam ** g * (np.maximum(U(xs), 0.0) + C[nid])
            slack = float(np.min(rhs - lhs))
            if slack < worst:
                worst, worst_node = slack, nid
    return GrowthPropagationReport(worst >= -atol, worst, worst_node, C)
