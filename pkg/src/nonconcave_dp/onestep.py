"""One-period problem at a single node.

Given wealth ``x``, the node's increments ``dS_i`` with probabilities
``p_i`` and non-decreasing continuous continuation values ``V_i``,
maximize

    g(xi) = sum_i p_i V_i(x + <xi, dS_i>)

over positions ``xi`` in the support span ``D`` keeping every child's
wealth non-negative. Writing ``xi = x * theta`` makes the feasible set a
fixed polytope ``{theta : 1 + <theta, z_i> >= 0}`` (``z_i`` are the
increments in D coordinates), contained in the ball of radius ``1/beta``.
The objective is non-concave, so the search is a multi-resolution grid
followed by local polishing; in one dimension every kink of the
continuation curves is also enumerated, which makes the search exact for
piecewise-linear curves.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .arbitrage import NodeCertificate
from .market import Increments

logger = logging.getLogger(__name__)

COARSE_POINTS = {1: 401, 2: 41, 3: 17}
REFINE_POINTS = 11
REFINE_ROUNDS = 3
N_STARTS = 4
MAX_KINK_LINES = 48
NEG_WEALTH_TOL = 1e-12
BOUNDARY_MARGIN = 1e-10


class CurveRangeWarning(UserWarning):
    """A value curve was evaluated beyond its last knot."""


class MonotonicityError(RuntimeError):
    """Raw one-step values decreased by more than the repair threshold."""


class ValueCurve:
    """Continuous, non-decreasing piecewise-linear function on ``[0, inf)``.

    Above the last knot the last segment's slope is used; that region is
    out of range and :func:`eval_curve` warns about it.
    """

    def __init__(self, grid, values):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size == 0:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if grid[0] != 0.0:
            raise ValueError("value curve grid must start at 0")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("value curve grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("value curve has non-finite values")
        drop = -np.diff(values)
        if drop.size and np.max(drop) > 1e-12 * max(1.0, float(np.max(np.abs(values)))):
            raise ValueError("value curve must be non-decreasing")
        self.grid = grid
        self.values = values
        self._slope = (values[-1] - values[-2]) / (grid[-1] - grid[-2]) if grid.size > 1 else 0.0

    @property
    def x_max(self) -> float:
        return float(self.grid[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.grid, self.values)
        above = x > self.grid[-1]
        if np.any(above):
            out = np.where(above, self.values[-1] + self._slope * (x - self.grid[-1]), out)
        return out

    def breakpoints(self, lo=0.0, hi=np.inf):
        g = self.grid
        return g[(g >= lo) & (g <= hi)]

    def __repr__(self):
        return f"ValueCurve(n={self.grid.size}, x_max={self.x_max:g})"


class TerminalCurve:
    """Exact terminal utility ``x -> u(x, node)`` used as a continuation."""

    def __init__(self, model, node=None, x_max=np.inf):
        self.model = model
        self.node = node
        self.x_max = x_max

    def __call__(self, x):
        return np.asarray(self.model.u(np.maximum(x, 0.0), self.node), dtype=float)

    def breakpoints(self, lo=0.0, hi=np.inf):
        return self.model.breakpoints(self.node, lo, hi)


def _major_kinks(curve, hi, count):
    # the kinks of a curve in [0, hi] with the largest slope changes
    if isinstance(curve, ValueCurve):
        g, v = curve.grid, curve.values
        if g.size < 3:
            return np.zeros(0)
        slope = np.diff(v) / np.diff(g)
        jump = np.abs(np.diff(slope))
        inner = g[1:-1]
        keep = inner <= hi
        inner, jump = inner[keep], jump[keep]
        if inner.size > count:
            inner = inner[np.sort(np.argsort(-jump, kind="stable")[:count])]
        return inner
    b = curve.breakpoints(0.0, hi)
    return b[:count]


def eval_curve(curve: ValueCurve, x: float) -> float:
    """Evaluate a value curve at a single wealth level."""
    if x < 0:
        raise ValueError("value curves are defined for non-negative wealth only")
    if x > curve.x_max * (1 + 1e-12):
        warnings.warn(f"evaluating value curve at {x:g} beyond its last knot {curve.x_max:g}",
                      CurveRangeWarning, stacklevel=2)
    return float(curve(x))


def wealth_grid(w_max: float, n_grid: int = 256, ratio: float = 50.0) -> np.ndarray:
    """Geometrically spaced grid of ``n_grid + 1`` points on ``[0, w_max]``.

    The last spacing is ``ratio`` times the first.
    """
    if w_max <= 0:
        return np.zeros(1)
    r = ratio ** (1.0 / max(n_grid - 1, 1))
    j = np.arange(n_grid + 1)
    grid = w_max * np.expm1(j * np.log(r)) / np.expm1(n_grid * np.log(r))
    grid[0], grid[-1] = 0.0, w_max
    return grid


@dataclass
class OneStepSolution:
    xi_star: np.ndarray
    value: float
    payoffs: np.ndarray


class OneStepProblem:
    """Precomputed one-period problem at one node, solvable for many wealths."""

    def __init__(self, incs: Increments, child_curves, cert: NodeCertificate):
        if cert is None:
            raise ValueError("a no-arbitrage certificate is required")
        if len(child_curves) != len(incs):
            raise ValueError("need one continuation curve per child")
        self.incs = incs
        self.curves = list(child_curves)
        self.cert = cert
        self.basis = cert.basis
        self.k = cert.dim
        self.Z = self.basis.coords(incs.deltas)  # (n, k)
        self.p = incs.probs
        self.radius = 1.0 / cert.beta
        self._active = np.nonzero(np.linalg.norm(self.Z, axis=1) > 0)[0]
        if self.k:
            self._coarse = self._coarse_candidates()

    # -- feasible polytope in theta coordinates -------------------------------

    def _feasible(self, theta):
        return np.all(1.0 + theta @ self.Z.T >= -NEG_WEALTH_TOL, axis=-1)

    def _vertices(self):
        k, Z = self.k, self.Z[self._active]
        verts = []
        for rows in itertools.combinations(range(len(Z)), k):
            A = Z[list(rows)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            verts.append(np.linalg.solve(A, -np.ones(k)))
        verts = np.array(verts).reshape(-1, k)
        return verts[self._feasible(verts)] if verts.size else verts

    def _coarse_candidates(self):
        k = self.k
        m = COARSE_POINTS.get(k, 7)
        verts = self._vertices()
        if len(verts):
            lo, hi = verts.min(axis=0), verts.max(axis=0)
        else:
            lo, hi = np.full(k, -self.radius), np.full(k, self.radius)
        axes = [np.linspace(a, b, m) for a, b in zip(lo, hi)]
        grid = np.array(list(itertools.product(*axes)))
        grid = grid[self._feasible(grid)]
        self._verts = verts
        self._cell = np.maximum((hi - lo) / (m - 1), 1e-12 * self.radius)
        return np.vstack([np.zeros((1, k)), verts, grid])

    def _interval(self):
        z = self.Z[:, 0]
        lo = max((-1.0 / v for v in z if v > 0), default=-self.radius)
        hi = min((-1.0 / v for v in z if v < 0), default=self.radius)
        return lo, hi

    # -- objective -----------------------------------------------------------

    def objective(self, xs, theta):
        """Expected continuation value; ``xs`` (W,) and ``theta`` (W, M, k)."""
        pay = xs[:, None, None] * (1.0 + theta @ self.Z.T)  # (W, M, n)
        pay = np.maximum(pay, 0.0)
        val = np.zeros(pay.shape[:2])
        for i, curve in enumerate(self.curves):
            val += self.p[i] * curve(pay[..., i])
        return val

    # -- solver --------------------------------------------------------------

    def solve_batch(self, xs, tol: float = 1e-4, tie_tol: float | None = None):
        """Maximizers and values for an array of wealth levels.

        Returns ``(thetas, values)`` with ``xi = x * basis.embed(theta)``.
        """
        if tol <= 0:
            raise ValueError("tol must be positive")
        xs = np.asarray(xs, dtype=float)
        W, k = xs.size, self.k
        if k == 0:
            theta = np.zeros((W, 1, 0))
            return np.zeros((W, 0)), self.objective(xs, theta)[:, 0]

        cands = [np.broadcast_to(self._coarse, (W,) + self._coarse.shape)]
        if k == 1:
            cands.append(self._kink_candidates(xs))
        elif k == 2:
            cands.append(self._arrangement_candidates(xs))
        theta = np.concatenate(cands, axis=1)
        vals = self._masked_objective(xs, theta)
        pool_t, pool_v = [theta], [vals]

        # local search from several well-separated starting points
        starts = self._starts(theta, vals)  # (W, S, k)
        S = starts.shape[1]
        xs_rep = np.repeat(xs, S)
        flat = starts.reshape(W * S, k)
        if k == 1:
            polished = self._golden_1d(xs_rep, flat[:, 0], half_width=self._cell[0])[:, None]
        else:
            polished = self._refine(xs_rep, flat)
        polished = polished.reshape(W, S, k)
        pool_t.append(polished)
        pool_v.append(self._masked_objective(xs, polished))

        theta = np.concatenate(pool_t, axis=1)
        vals = np.concatenate(pool_v, axis=1)
        theta, _ = self._tie_break(xs, theta, vals, tie_tol)
        # maximizers on the polytope boundary are pulled towards the origin
        # so that rounding can never make a child's wealth negative
        edge = np.min(1.0 + theta @ self.Z.T, axis=1) < BOUNDARY_MARGIN
        theta = np.where(edge[:, None], theta * (1.0 - BOUNDARY_MARGIN), theta)
        return theta, self.objective(xs, theta[:, None, :])[:, 0]

    def _starts(self, theta, vals):
        # best candidate, then the best ones at least two cells away from all
        # starts chosen so far
        W = theta.shape[0]
        rows = np.arange(W)
        v = vals.copy()
        out = []
        for _ in range(N_STARTS):
            j = np.argmax(v, axis=1)
            pick = theta[rows, j]
            out.append(pick)
            near = np.all(np.abs(theta - pick[:, None, :]) <= 2 * self._cell, axis=-1)
            v = np.where(near, -np.inf, v)
            if np.all(np.isneginf(v)):
                break
        return np.stack(out, axis=1)

    def _arrangement_candidates(self, xs, max_lines=MAX_KINK_LINES):
        # vertices of the arrangement of lines along which some child's
        # wealth sits on a kink of its curve (wealth 0 gives the polytope
        # edges); exact when the curves are linear between kinks
        lines = []  # (child, c) meaning <theta, z_i> = b / x - 1
        safe = np.where(xs > 0, xs, 1.0)
        zmax = float(np.max(np.linalg.norm(self.Z, axis=1)))
        top = float(np.max(xs)) * (1.0 + self.radius * zmax)
        per_child = max(1, max_lines // max(len(self._active), 1))
        for i in self._active:
            b = _major_kinks(self.curves[i], top, per_child)
            for bb in np.union1d(b, [0.0]):
                lines.append((i, bb))
        W = xs.size
        if len(lines) < 2:
            return np.zeros((W, 0, 2))
        pts = []
        for (i, bi), (j, bj) in itertools.combinations(lines, 2):
            A = self.Z[[i, j]]
            det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            if abs(det) < 1e-12 * max(1.0, np.abs(A).max() ** 2):
                continue
            rhs = np.stack([bi / safe - 1.0, bj / safe - 1.0], axis=1)  # (W, 2)
            pts.append(np.linalg.solve(A, rhs.T).T)
        if not pts:
            return np.zeros((W, 0, 2))
        return np.stack(pts, axis=1)

    def _refine(self, xs, best):
        W = xs.size
        rows = np.arange(W)
        width = self._cell.copy()
        best_v = self._masked_objective(xs, best[:, None, :])[:, 0]
        for _ in range(REFINE_ROUNDS):
            local = self._local_grid(best, width)
            lv = self._masked_objective(xs, local)
            j = np.argmax(lv, axis=1)
            better = lv[rows, j] > best_v
            best = np.where(better[:, None], local[rows, j], best)
            best_v = np.maximum(best_v, lv[rows, j])
            width = width * 2.0 / (REFINE_POINTS - 1)
        return self._pattern_search(xs, best, float(np.max(width)))

    def _masked_objective(self, xs, theta):
        vals = self.objective(xs, theta)
        return np.where(self._feasible(theta), vals, -np.inf)

    def _kink_candidates(self, xs):
        # theta at which a child's wealth lands exactly on a kink of its curve
        z = self.Z[:, 0]
        cols = []
        safe = np.where(xs > 0, xs, 1.0)
        for i in self._active:
            reach = float(np.max(xs)) * (1.0 + self.radius * abs(z[i]))
            b = self.curves[i].breakpoints(0.0, reach)
            if b.size:
                cols.append((b[None, :] / safe[:, None] - 1.0) / z[i])
        if not cols:
            return np.zeros((xs.size, 0, 1))
        t = np.concatenate(cols, axis=1)
        t = np.clip(t, -self.radius, self.radius)
        return t[..., None]

    def _golden_1d(self, xs, center, half_width):
        lo_f, hi_f = self._interval()
        a = np.clip(center - half_width, lo_f, hi_f)
        b = np.clip(center + half_width, lo_f, hi_f)
        invphi = (np.sqrt(5.0) - 1.0) / 2.0

        def f(t):
            return self.objective(xs, t[:, None, None])[:, 0]

        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(60):
            left = fc >= fd  # keep [a, d]
            a, b = np.where(left, a, c), np.where(left, d, b)
            new = np.where(left, b - invphi * (b - a), a + invphi * (b - a))
            fnew = f(new)
            c, d = np.where(left, new, d), np.where(left, c, new)
            fc, fd = np.where(left, fnew, fd), np.where(left, fc, fnew)
        return 0.5 * (a + b)

    def _local_grid(self, best, width):
        axes = [np.linspace(-w, w, REFINE_POINTS) for w in width]
        offsets = np.array(list(itertools.product(*axes)))
        return best[:, None, :] + offsets[None, :, :]

    def _pattern_search(self, xs, start, step):
        W, k = start.shape
        dirs = np.array([d for d in itertools.product((-1.0, 0.0, 1.0), repeat=k) if any(d)])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        cur = start.copy()
        cur_v = self._masked_objective(xs, cur[:, None, :])[:, 0]
        steps = np.full(W, step)
        floor = 1e-9 * self.radius
        for _ in range(200):
            if np.all(steps < floor):
                break
            trial = cur[:, None, :] + steps[:, None, None] * dirs[None]
            tv = self._masked_objective(xs, trial)
            j = np.argmax(tv, axis=1)
            tbest = tv[np.arange(W), j]
            move = tbest > cur_v
            cur = np.where(move[:, None], trial[np.arange(W), j], cur)
            cur_v = np.where(move, tbest, cur_v)
            steps = np.where(move, steps, steps / 2)
        return cur

    def _tie_break(self, xs, theta, vals, tie_tol):
        W = xs.size
        best_v = np.max(vals, axis=1)
        out = np.zeros((W, self.k))
        for w in range(W):
            if xs[w] == 0:
                continue
            eps = (1e-9 if tie_tol is None else tie_tol) * max(1.0, abs(best_v[w]))
            ok = vals[w] >= best_v[w] - eps
            t = theta[w][ok]
            xi = self.basis.embed(t)
            order = np.lexsort(xi.T[::-1])
            out[w] = t[order[0]]
        return out, best_v

    def solve(self, x: float, tol: float = 1e-4, tie_tol: float | None = None) -> OneStepSolution:
        thetas, values = self.solve_batch(np.array([float(x)]), tol, tie_tol)
        return self.solution(float(x), thetas[0], float(values[0]))

    def solution(self, x: float, theta, value: float) -> OneStepSolution:
        xi = x * self.basis.embed(theta)
        payoffs = x + self.incs.deltas @ xi
        return OneStepSolution(xi, value, payoffs)


def maximize_one_step(x: float, incs: Increments, child_curves, cert: NodeCertificate,
                      tol: float = 1e-4, tie_tol: float | None = None) -> OneStepSolution:
    """Globally maximize the one-period expected continuation value.

    Among candidates whose value is within ``tie_tol`` (relative, default
    ``1e-9``) of the best, the lexicographically smallest position wins.
    """
    if x < 0:
        raise ValueError("wealth must be non-negative")
    return OneStepProblem(incs, child_curves, cert).solve(x, tol, tie_tol)


def build_value_curve(node: str, grid, incs: Increments, child_curves, cert: NodeCertificate,
                      tol: float = 1e-4, problem: OneStepProblem | None = None):
    """Value curve of the one-period problem on a wealth grid.

    Returns the monotone :class:`ValueCurve` and the maximizer at every
    grid point. Raw values dropping by more than ``tol`` are repaired by a
    running maximum with a warning; drops beyond ``10 * tol`` are errors.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or grid[0] != 0.0:
        raise ValueError("wealth grid must start at 0")
    problem = problem or OneStepProblem(incs, child_curves, cert)
    thetas, raw = problem.solve_batch(grid, tol)
    running = np.maximum.accumulate(raw)
    drop = float(np.max(running - raw))
    scale = max(1.0, float(np.max(np.abs(raw))))
    if drop > 10 * tol * scale:
        raise MonotonicityError(f"node {node!r}: one-step values drop by {drop:g}")
    if drop > tol * scale:
        logger.warning("node %r: repaired non-monotone values (max drop %g)", node, drop)
    sols = [problem.solution(x, th, v) for x, th, v in zip(grid, thetas, raw)]
    return ValueCurve(grid, running), sols
