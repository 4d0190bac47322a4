"""Finite scenario trees: nodes, conditional laws, price increments and
the geometry of conditional supports.

A tree node is an atom of the filtration at its time. The conditional law
of the next price increment at a node is the list of its children with
their conditional probabilities.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12
RANK_RTOL = 1e-9
LINEAR_TOL = 1e-10


class TreeError(ValueError):
    """Raised when a serialized tree violates the schema or an invariant."""


@dataclass(frozen=True)
class TreeNode:
    id: str
    time: int
    parent: str | None
    price: np.ndarray
    cond_prob: float
    children: tuple[str, ...] = ()


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a linear subspace of R^d.

    ``vectors`` has shape ``(k, d)``; ``k == 0`` encodes the trivial
    subspace ``{0}``.
    """

    vectors: np.ndarray
    ambient_dim: int

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def coords(self, v):
        """Coordinates of ``v`` (shape ``(..., d)``) in this basis."""
        return np.asarray(v, dtype=float) @ self.vectors.T

    def embed(self, z):
        """Map basis coordinates (shape ``(..., k)``) back into R^d."""
        z = np.asarray(z, dtype=float)
        if self.dim == 0:
            return np.zeros(z.shape[:-1] + (self.ambient_dim,))
        return z @ self.vectors


@dataclass
class ScenarioTree:
    asset_count: int
    horizon: int
    nodes: dict[str, TreeNode]
    root: str
    _uncond: dict[str, float] = field(default_factory=dict, repr=False)

    def node(self, node_id: str) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def is_leaf(self, node_id: str) -> bool:
        return self.nodes[node_id].time == self.horizon

    def layer(self, t: int) -> list[str]:
        """Node ids at time ``t``, sorted."""
        return sorted(n.id for n in self.nodes.values() if n.time == t)

    def leaves(self) -> list[str]:
        return self.layer(self.horizon)

    def internal_nodes(self) -> list[str]:
        """Internal node ids, breadth-first (by time, then id)."""
        return [i for t in range(self.horizon) for i in self.layer(t)]

    def unconditional_prob(self, node_id: str) -> float:
        if not self._uncond:
            probs = {self.root: 1.0}
            for nid in self.internal_nodes():
                for c in self.nodes[nid].children:
                    probs[c] = probs[nid] * self.nodes[c].cond_prob
            self._uncond.update(probs)
        return self._uncond[node_id]

    def path(self, node_id: str) -> list[str]:
        """Node ids from the root down to ``node_id``."""
        out = [node_id]
        while self.nodes[out[-1]].parent is not None:
            out.append(self.nodes[out[-1]].parent)
        return out[::-1]

    def to_dict(self) -> dict:
        nodes = []
        for t in range(self.horizon + 1):
            for nid in self.layer(t):
                n = self.nodes[nid]
                nodes.append({"id": n.id, "parent": n.parent, "prob": n.cond_prob,
                              "price": [float(p) for p in n.price]})
        return {"assets": self.asset_count, "horizon": self.horizon, "nodes": nodes}


def tree_from_dict(data: dict) -> ScenarioTree:
    """Build and validate a :class:`ScenarioTree` from its JSON-schema dict."""
    try:
        d = int(data["assets"])
        T = int(data["horizon"])
        raw = list(data["nodes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise TreeError(f"malformed tree header: {exc}") from None
    if d < 1 or T < 1:
        raise TreeError("assets and horizon must be positive integers")

    parents: dict[str, str | None] = {}
    prices: dict[str, np.ndarray] = {}
    probs: dict[str, float] = {}
    order: list[str] = []
    for entry in raw:
        try:
            nid = entry["id"]
            parent = entry["parent"]
            prob = float(entry["prob"])
            price = np.asarray(entry["price"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise TreeError(f"malformed node entry {entry!r}: {exc}") from None
        if not isinstance(nid, str) or not nid:
            raise TreeError("node ids must be non-empty strings")
        if nid in parents:
            raise TreeError(f"duplicate node id {nid!r}")
        if price.shape != (d,):
            raise TreeError(f"node {nid!r}: price must have length {d}")
        if not np.all(np.isfinite(price)):
            raise TreeError(f"node {nid!r}: non-finite price")
        if not (0.0 < prob <= 1.0 + PROB_TOL):
            raise TreeError(f"node {nid!r}: probability {prob} outside (0, 1]")
        parents[nid], prices[nid], probs[nid] = parent, price, prob
        order.append(nid)

    roots = [i for i in order if parents[i] is None]
    if len(roots) != 1:
        raise TreeError(f"expected exactly one root, found {len(roots)}")
    root = roots[0]
    if abs(probs[root] - 1.0) > PROB_TOL:
        raise TreeError("root probability must be 1")

    children: dict[str, list[str]] = {i: [] for i in order}
    for i in order:
        p = parents[i]
        if p is None:
            continue
        if p not in parents:
            raise TreeError(f"node {i!r}: dangling parent reference {p!r}")
        children[p].append(i)

    times = {root: 0}
    queue = deque([root])
    while queue:
        nid = queue.popleft()
        for c in children[nid]:
            times[c] = times[nid] + 1
            queue.append(c)
    if len(times) != len(order):
        raise TreeError("tree contains a cycle or unreachable nodes")

    for nid in order:
        kids = children[nid]
        if times[nid] == T:
            if kids:
                raise TreeError(f"node {nid!r} at time {T} has children")
            continue
        if not kids:
            raise TreeError(f"leaf {nid!r} at time {times[nid]}, expected {T}")
        total = math.fsum(probs[c] for c in kids)
        if abs(total - 1.0) > PROB_TOL:
            raise TreeError(f"children of {nid!r} have probabilities summing to {total!r}")
        # sums already equal to 1 up to rounding are left alone, which
        # keeps load/dump round trips stable
        if abs(total - 1.0) > 4 * len(kids) * np.finfo(float).eps:
            for c in kids:
                probs[c] /= total

    nodes = {
        i: TreeNode(id=i, time=times[i], parent=parents[i], price=prices[i],
                    cond_prob=1.0 if i == root else probs[i],
                    children=tuple(sorted(children[i])))
        for i in order
    }
    return ScenarioTree(asset_count=d, horizon=T, nodes=nodes, root=root)


def load_tree(text: str) -> ScenarioTree:
    """Parse and validate a serialized (JSON) scenario tree."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TreeError(f"tree is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise TreeError("tree JSON must be an object")
    return tree_from_dict(data)


def dump_tree(tree: ScenarioTree) -> str:
    return json.dumps(tree.to_dict(), indent=2, sort_keys=True)


def product_tree(price0, moves, probs, horizon: int, ids: list[str] | None = None) -> ScenarioTree:
    """Build a non-recombining multiplicative tree.

    Every node branches into ``len(moves)`` children whose prices are the
    parent price multiplied elementwise by ``moves[i]``. Child ids append
    ``ids[i]`` (default: the branch index) to the parent id.
    """
    price0 = np.atleast_1d(np.asarray(price0, dtype=float))
    moves = [np.atleast_1d(np.asarray(m, dtype=float)) for m in moves]
    ids = ids or [str(i) for i in range(len(moves))]
    nodes = [{"id": "r", "parent": None, "prob": 1.0, "price": price0.tolist()}]
    frontier = [("r", price0)]
    for _ in range(horizon):
        nxt = []
        for nid, price in frontier:
            for tag, m, p in zip(ids, moves, probs):
                cid = nid + tag
                nodes.append({"id": cid, "parent": nid, "prob": float(p),
                              "price": (price * m).tolist()})
                nxt.append((cid, price * m))
        frontier = nxt
    return tree_from_dict({"assets": len(price0), "horizon": horizon, "nodes": nodes})


@dataclass(frozen=True)
class Increments:
    """Conditional law of the price increment at one node."""

    node: str
    child_ids: tuple[str, ...]
    probs: np.ndarray
    deltas: np.ndarray  # (n_children, d)

    def __len__(self):
        return len(self.child_ids)

    def __iter__(self):
        return iter(zip(self.child_ids, self.probs, self.deltas))


def increments(tree: ScenarioTree, node_id: str) -> Increments:
    """Children of ``node_id`` with their conditional probabilities and
    price increments ``child price - node price``."""
    node = tree.node(node_id)
    if node.time >= tree.horizon:
        raise ValueError(f"node {node_id!r} is a leaf")
    kids = node.children
    probs = np.array([tree.nodes[c].cond_prob for c in kids])
    deltas = np.array([tree.nodes[c].price - node.price for c in kids])
    return Increments(node_id, kids, probs, deltas)


def make_increments(deltas, probs=None, node: str = "") -> Increments:
    """Build an :class:`Increments` directly from arrays (no tree needed)."""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim == 1:
        deltas = deltas[:, None]
    n = deltas.shape[0]
    probs = np.full(n, 1.0 / n) if probs is None else np.asarray(probs, dtype=float)
    return Increments(node, tuple(str(i) for i in range(n)), probs, deltas)


def support_hull_basis(incs) -> tuple[SubspaceBasis, bool]:
    """Orthonormal basis of the affine hull of the increment support.

    Returns the basis of the direction space of the hull and a flag telling
    whether the hull passes through the origin, in which case the basis
    spans the hull itself as a linear subspace.
    """
    Y = incs.deltas if isinstance(incs, Increments) else np.atleast_2d(np.asarray(incs, float))
    d = Y.shape[1]
    anchor = Y[0]
    centered = Y - anchor
    if len(Y) > 1:
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        k = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        vectors = vt[:k]
    else:
        vectors = np.zeros((0, d))
    basis = SubspaceBasis(_canonical_signs(vectors), d)
    residual = anchor - project(anchor, basis)
    scale = max(1.0, float(np.max(np.abs(Y))))
    return basis, bool(np.linalg.norm(residual) <= LINEAR_TOL * scale)


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # flip each vector so its largest-magnitude entry is positive
    out = vectors.copy()
    for row in out:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1
    return out


def project(v, basis: SubspaceBasis) -> np.ndarray:
    """Orthogonal projection of ``v`` onto the span of ``basis``."""
    v = np.asarray(v, dtype=float)
    if basis.dim == 0:
        return np.zeros_like(v)
    return (v @ basis.vectors.T) @ basis.vectors


def wealth_bounds(tree: ScenarioTree, x0: float, cert) -> dict[str, float]:
    """Largest wealth reachable at every node from ``x0``.

    Uses the position bound ``|xi| <= x / beta`` at each internal node, so
    one step multiplies wealth by at most ``1 + max_i |dS_i| / beta``.
    """
    if x0 < 0:
        raise ValueError("x0 must be non-negative")
    bounds = {tree.root: float(x0)}
    for nid in tree.internal_nodes():
        try:
            nc = cert.nodes[nid]
        except KeyError:
            raise KeyError(f"certificate has no entry for node {nid!r}") from None
        incs = increments(tree, nid)
        growth = 1.0 + float(np.max(np.linalg.norm(incs.deltas, axis=1))) / nc.beta
        for c in incs.child_ids:
            bounds[c] = bounds[nid] * growth
    return bounds
