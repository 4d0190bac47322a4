"""Node-wise no-arbitrage certificates.

At every internal node the market is arbitrage-free iff the origin lies in
the relative interior of the convex hull of the conditional increment
support. When it does, the radius ``beta`` of the largest ball around the
origin inside that hull (within the support's span ``D``) and the smallest
child probability ``kappa`` give the quantitative bound

    P(<u, dS> <= -beta | node) >= kappa   for every unit u in D.

Otherwise an explicit direction earning a non-negative, somewhere positive
payoff from zero wealth is returned.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .market import Increments, ScenarioTree, SubspaceBasis, increments, support_hull_basis

NA_RTOL = 1e-9


@dataclass(frozen=True)
class NodeCertificate:
    node: str
    basis: SubspaceBasis
    beta: float
    kappa: float

    @property
    def dim(self) -> int:
        return self.basis.dim


@dataclass(frozen=True)
class ArbitrageWitness:
    node: str
    direction: np.ndarray


@dataclass
class TreeCertificate:
    nodes: dict[str, NodeCertificate] = field(default_factory=dict)
    witness: ArbitrageWitness | None = None

    @property
    def arbitrage_free(self) -> bool:
        return self.witness is None

    def to_dict(self) -> dict:
        if self.witness is not None:
            return {"witness": {"node": self.witness.node,
                                "direction": [float(v) for v in self.witness.direction]}}
        return {"nodes": {
            nid: {"beta": c.beta, "kappa": c.kappa, "dim": c.dim,
                  "basis": c.basis.vectors.tolist()}
            for nid, c in sorted(self.nodes.items())
        }}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def certificate_from_dict(data: dict, asset_count: int) -> TreeCertificate:
    if "witness" in data:
        w = data["witness"]
        return TreeCertificate(witness=ArbitrageWitness(w["node"], np.asarray(w["direction"], float)))
    nodes = {}
    for nid, c in data["nodes"].items():
        vecs = np.asarray(c["basis"], dtype=float).reshape(int(c["dim"]), asset_count)
        nodes[nid] = NodeCertificate(nid, SubspaceBasis(vecs, asset_count),
                                     float(c["beta"]), float(c["kappa"]))
    return TreeCertificate(nodes=nodes)


def _facets(Z: np.ndarray):
    """Unit outward normals and offsets ``n.z + b <= 0`` of conv(Z) in R^k."""
    k = Z.shape[1]
    if k == 1:
        hi, lo = Z.max(), Z.min()
        return np.array([[1.0], [-1.0]]), np.array([-hi, lo])
    try:
        hull = ConvexHull(Z)
    except QhullError:
        hull = ConvexHull(Z, qhull_options="QJ")
    eq = hull.equations
    return eq[:, :k], eq[:, k]


def certify_node(incs: Increments) -> NodeCertificate | ArbitrageWitness:
    """Certify no-arbitrage at one node, or return an arbitrage witness."""
    Y = incs.deltas
    basis, is_linear = support_hull_basis(incs)
    scale = float(np.max(np.linalg.norm(Y, axis=1)))

    if not is_linear:
        # the whole support sits on an affine plane missing the origin
        anchor = Y[0]
        w = anchor - (basis.coords(anchor) @ basis.vectors if basis.dim else 0.0)
        return ArbitrageWitness(incs.node, w / np.linalg.norm(w))

    if basis.dim == 0:
        return NodeCertificate(incs.node, basis, 1.0, 1.0)

    Z = basis.coords(Y)
    normals, offsets = _facets(Z)
    distances = -offsets
    tol = NA_RTOL * scale
    worst = int(np.argmin(distances))
    if distances[worst] <= tol:
        u = -normals[worst]
        return ArbitrageWitness(incs.node, basis.embed(u / np.linalg.norm(u)))
    kappa = float(np.min(incs.probs))
    return NodeCertificate(incs.node, basis, float(distances[worst]), kappa)


@dataclass
class VerificationReport:
    passed: bool
    worst_margin: float
    worst_mass: float
    worst_direction: np.ndarray | None
    n_checked: int


def verify_certificate(incs: Increments, cert: NodeCertificate, n_dirs: int = 1000,
                       rng: np.random.Generator | int | None = 0) -> VerificationReport:
    """Check the (beta, kappa) inequality on a set of unit directions in D.

    Directions: both basis directions when ``dim D == 1``; otherwise
    ``n_dirs`` uniform samples on the unit sphere of D plus every facet
    normal of the support hull when ``dim D <= 3``. The margin at a direction
    is ``max_i -<u, dS_i> - beta``; the mass is the conditional probability
    of children with ``<u, dS_i> <= -beta``.
    """
    Y = incs.deltas
    if cert.basis.ambient_dim != Y.shape[1]:
        raise ValueError("certificate and increments have different dimensions")
    k = cert.dim
    if k == 0:
        return VerificationReport(True, np.inf, 1.0, None, 0)
    Z = cert.basis.coords(Y)
    if k == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(rng)
        dirs = rng.standard_normal((n_dirs, k))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        if k <= 3:
            normals, _ = _facets(Z)
            dirs = np.vstack([dirs, normals, -normals])
    proj = dirs @ Z.T  # (n_dirs, n_children)
    scale = float(np.max(np.abs(Z)))
    eps = 1e-12 * max(1.0, scale)
    qualifying = proj <= -cert.beta + eps
    mass = qualifying.astype(float) @ incs.probs
    margin = np.max(-proj, axis=1) - cert.beta
    i_mass = int(np.argmin(mass))
    passed = bool(np.all(mass >= cert.kappa - 1e-12) and np.all(margin >= -eps))
    return VerificationReport(passed, float(margin.min()), float(mass[i_mass]),
                              cert.basis.embed(dirs[i_mass]), len(dirs))


def certify_tree(tree: ScenarioTree) -> TreeCertificate:
    """Certify every internal node breadth-first; stop at the first witness."""
    out = TreeCertificate()
    for nid in tree.internal_nodes():
        res = certify_node(increments(tree, nid))
        if isinstance(res, ArbitrageWitness):
            return TreeCertificate(nodes=out.nodes, witness=res)
        out.nodes[nid] = res
    return out
