"""Random utilities on terminal nodes and their growth certificates.

A :class:`UtilityModel` is a deterministic core function ``ut`` shifted by
an optional reference point ``B`` that may depend on the terminal node::

    u(x, node) = ut(x - B(node))

Cores are non-decreasing and continuous; below the left end of a core's
domain the core is held at its limit value there.

A :class:`GrowthCertificate` ``(gamma_bar, x_bar, c)`` claims

    u(lam * x, node) <= lam**gamma_bar * (u(x, node) + c(node))

for all ``lam >= 1`` and ``x >= x_bar``. Such a claim can be falsified on
grids but never proved from point evaluations, so certificates are either
supplied by the user or derived analytically per family.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

FAMILIES = ("power", "two_piece_power", "ramp", "kramkov_f", "piecewise_polynomial", "exponential")

DEFAULT_LAMBDAS = (1.0, 1.5, 2.0, 4.0, 8.0, 16.0)


class UtilityError(ValueError):
    """Invalid utility description."""


class GrowthFalsified(ValueError):
    """A growth certificate failed on a validation grid."""

    def __init__(self, counterexample):
        super().__init__(f"growth certificate falsified: {counterexample}")
        self.counterexample = counterexample


# --------------------------------------------------------------------------
# the bounded function with infinite asymptotic elasticity

def _kf_a(n):
    return 1.0 / (4.0 * (n + 1.0) * (n + 2.0))


def _kf_at_int(n):
    return (n - 1.0) / (2.0 * (n + 1.0))


def kramkov_f(x):
    """Bounded, non-decreasing, piecewise-linear function with infinite
    asymptotic elasticity.

    On every ``[n, n+1]`` it passes through ``(n, f(n))``,
    ``(n+1/2-a_n, f(n)+a_n)``, ``(n+1/2+a_n, f(n+1)-a_n)`` and
    ``(n+1, f(n+1))`` with ``f(n) = 1/2 - 1/(n+1)`` and
    ``a_n = 1/(4(n+1)(n+2))``; the middle segment has slope exactly 1.

    Returns ``(value, derivative)``; the derivative is ``nan`` at knots.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("kramkov_f is defined on [0, inf)")
    n = np.floor(x)
    a = _kf_a(n)
    f0, f1 = _kf_at_int(n), _kf_at_int(n + 1.0)
    p1, p2 = n + 0.5 - a, n + 0.5 + a
    v1, v2 = f0 + a, f1 - a
    s = x - n
    val = np.where(
        x <= p1, f0 + (v1 - f0) * s / (0.5 - a),
        np.where(x <= p2, v1 + (x - p1),
                 v2 + (f1 - v2) * (x - p2) / (n + 1.0 - p2)))
    # exact values at the integer knots
    val = np.where(s == 0.0, f0, val)
    slope = np.where(x < p1, (v1 - f0) / (0.5 - a),
                     np.where(x < p2, 1.0, (f1 - v2) / (n + 1.0 - p2)))
    at_knot = (s == 0.0) | (x == p1) | (x == p2)
    deriv = np.where(at_knot, np.nan, slope)
    if val.ndim == 0:
        return float(val), float(deriv)
    return val, deriv


def _kf_knots(lo, hi):
    out = []
    for n in range(max(0, int(math.floor(lo))), int(math.ceil(hi)) + 1):
        a = _kf_a(n)
        out.extend((n, n + 0.5 - a, n + 0.5 + a))
    return np.array(out, dtype=float)


# --------------------------------------------------------------------------
# utility model

@dataclass(frozen=True)
class UtilityModel:
    family: str
    params: dict = field(default_factory=dict)
    reference: float | dict | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UtilityError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        _VALIDATORS[self.family](self.params)
        ref = self.reference
        values = ref.values() if isinstance(ref, dict) else ([] if ref is None else [ref])
        for b in values:
            if not (math.isfinite(b) and b >= 0):
                raise UtilityError("reference points must be finite and non-negative")
        for node in self._ref_nodes():
            u0 = float(self.u(0.0, node))
            if not math.isfinite(u0):
                raise UtilityError(f"u(0) is not finite at node {node!r}")

    def _ref_nodes(self):
        return list(self.reference) if isinstance(self.reference, dict) else [None]

    def shift(self, node=None) -> float:
        ref = self.reference
        if ref is None:
            return 0.0
        if isinstance(ref, dict):
            if node is None:
                raise UtilityError("per-node reference points need a node id")
            try:
                return float(ref[node])
            except KeyError:
                raise UtilityError(f"no reference point for node {node!r}") from None
        return float(ref)

    @property
    def max_shift(self) -> float:
        ref = self.reference
        if ref is None:
            return 0.0
        return float(max(ref.values())) if isinstance(ref, dict) else float(ref)

    def core(self, y):
        """The unshifted core function, clamped at its left endpoint."""
        y = np.maximum(np.asarray(y, dtype=float), _LEFT[self.family](self.params))
        return _CORES[self.family](y, self.params)

    def u(self, x, node=None):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("utility is defined for non-negative wealth only")
        out = self.core(x - self.shift(node))
        return float(out) if out.ndim == 0 else out

    def breakpoints(self, node=None, lo=0.0, hi=np.inf):
        """Wealth levels in ``[lo, hi]`` where ``u(., node)`` may fail to be
        differentiable."""
        b = self.shift(node)
        pts = _KINKS[self.family](self.params, lo - b, hi - b) + b
        left = _LEFT[self.family](self.params)
        if math.isfinite(left):
            pts = np.append(pts, left + b)
        pts = pts[(pts >= lo) & (pts <= hi)]
        return np.unique(pts)

    def to_dict(self) -> dict:
        out = {"family": self.family, "params": dict(self.params)}
        if isinstance(self.reference, dict):
            out["reference"] = {"type": "per_node", "value": dict(self.reference)}
        elif self.reference is not None:
            out["reference"] = {"type": "constant", "value": self.reference}
        return out


def eval_u(model: UtilityModel, x, node=None):
    """``u(x, node)``; raises for negative wealth."""
    return model.u(x, node)


def _power(y, p):
    return p.get("scale", 1.0) * np.power(y, p["p"])


def _two_piece(y, p):
    gains = np.power(np.maximum(y, 0.0), p["alpha"])
    losses = -p.get("loss_aversion", 1.0) * np.power(np.maximum(-y, 0.0), p["beta"])
    return np.where(y >= 0, gains, losses)


def _ramp(y, p):
    lo, hi = p["lo"], p["hi"]
    v0, v1 = p.get("low", 0.0), p.get("high", 1.0)
    return v0 + (v1 - v0) * np.clip((y - lo) / (hi - lo), 0.0, 1.0)


def _kf(y, p):
    return kramkov_f(y)[0] if np.ndim(y) else np.float64(kramkov_f(y)[0])


def _pp_eval(y, p):
    knots = np.asarray(p["knots"], dtype=float)
    coeffs = p["coeffs"]
    j = np.clip(np.searchsorted(knots, y, side="right") - 1, 0, len(knots) - 1)
    out = np.zeros_like(y, dtype=float)
    for i, c in enumerate(coeffs):
        mask = j == i
        if np.any(mask):
            out = np.where(mask, np.polynomial.polynomial.polyval(y - knots[i], c), out)
    return out


def _exp(y, p):
    return p.get("scale", 1.0) * np.exp(p.get("rate", 1.0) * y)


_CORES = {"power": _power, "two_piece_power": _two_piece, "ramp": _ramp,
          "kramkov_f": _kf, "piecewise_polynomial": _pp_eval, "exponential": _exp}

_LEFT = {
    "power": lambda p: 0.0,
    "two_piece_power": lambda p: -np.inf,
    "ramp": lambda p: -np.inf,
    "kramkov_f": lambda p: 0.0,
    "piecewise_polynomial": lambda p: float(p["knots"][0]),
    "exponential": lambda p: -np.inf,
}

_KINKS = {
    "power": lambda p, lo, hi: np.array([]),
    "two_piece_power": lambda p, lo, hi: np.array([0.0]),
    "ramp": lambda p, lo, hi: np.array([p["lo"], p["hi"]], dtype=float),
    "kramkov_f": lambda p, lo, hi: _kf_knots(max(lo, 0.0), min(hi, 1e6)) if hi >= 0 else np.array([]),
    "piecewise_polynomial": lambda p, lo, hi: np.asarray(p["knots"], dtype=float),
    "exponential": lambda p, lo, hi: np.array([]),
}


def _check_power(p):
    if p.get("p", 0) <= 0 or p.get("scale", 1.0) < 0:
        raise UtilityError("power utility needs p > 0 and scale >= 0")


def _check_two_piece(p):
    if p.get("alpha", 0) <= 0 or p.get("beta", 0) <= 0 or p.get("loss_aversion", 1.0) < 0:
        raise UtilityError("two_piece_power needs alpha > 0, beta > 0, loss_aversion >= 0")


def _check_ramp(p):
    if not p.get("hi", 0) > p.get("lo", 0) or p.get("high", 1.0) < p.get("low", 0.0):
        raise UtilityError("ramp needs hi > lo and high >= low")


def _check_pp(p):
    knots = np.asarray(p.get("knots", []), dtype=float)
    coeffs = p.get("coeffs", [])
    if knots.ndim != 1 or len(knots) == 0 or len(coeffs) != len(knots):
        raise UtilityError("piecewise_polynomial needs one coefficient list per knot")
    if np.any(np.diff(knots) <= 0):
        raise UtilityError("knots must be strictly increasing")
    P = np.polynomial.polynomial
    for i in range(1, len(knots)):
        left = P.polyval(knots[i] - knots[i - 1], coeffs[i - 1])
        right = P.polyval(0.0, coeffs[i])
        if abs(left - right) > 1e-9 * max(1.0, abs(left)):
            raise UtilityError(f"discontinuity at knot {knots[i]}: {left} vs {right}")
    for i, c in enumerate(coeffs):
        width = knots[i + 1] - knots[i] if i + 1 < len(knots) else 100.0 * (1.0 + abs(knots[i]))
        s = np.linspace(0.0, width, 201)
        dc = P.polyder(np.asarray(c, dtype=float)) if len(c) > 1 else [0.0]
        slopes = P.polyval(s, dc)
        if np.min(slopes) < -1e-12:
            raise UtilityError(f"piece {i} is decreasing")
        lead = np.trim_zeros(np.asarray(c, dtype=float), "b")
        if i + 1 == len(knots) and len(lead) > 1 and lead[-1] < 0:
            raise UtilityError("last piece must not eventually decrease")


def _check_exp(p):
    if p.get("rate", 1.0) < 0 or p.get("scale", 1.0) < 0:
        raise UtilityError("exponential needs rate >= 0 and scale >= 0")


_VALIDATORS = {"power": _check_power, "two_piece_power": _check_two_piece, "ramp": _check_ramp,
               "kramkov_f": lambda p: None, "piecewise_polynomial": _check_pp,
               "exponential": _check_exp}


# --------------------------------------------------------------------------
# growth certificates

@dataclass(frozen=True)
class GrowthCertificate:
    gamma_bar: float
    x_bar: float
    c: float | dict = 0.0
    C_lifted: dict | None = None

    def __post_init__(self):
        if not self.gamma_bar > 0:
            raise UtilityError("gamma_bar must be positive")
        if self.x_bar < 0:
            raise UtilityError("x_bar must be non-negative")
        cs = self.c.values() if isinstance(self.c, dict) else [self.c]
        if any(v < 0 for v in cs):
            raise UtilityError("c must be non-negative")

    def c_at(self, node=None) -> float:
        if isinstance(self.c, dict):
            return float(self.c[node])
        return float(self.c)

    def lifted_at(self, node=None) -> float:
        if self.C_lifted is None:
            raise ValueError("certificate has not been lifted; call lift_growth first")
        return float(self.C_lifted[node] if node in self.C_lifted else self.C_lifted[None])

    def to_dict(self) -> dict:
        out = {"gamma_bar": self.gamma_bar, "x_bar": self.x_bar, "c": self.c}
        if self.C_lifted is not None:
            out["C_lifted"] = {("" if k is None else k): v for k, v in self.C_lifted.items()}
        return out


@dataclass(frozen=True)
class GrowthCounterexample:
    lam: float
    x: float
    node: str | None
    lhs: float
    rhs: float


def default_x_grid(x_bar: float, n: int = 40) -> np.ndarray:
    lo = x_bar if x_bar > 0 else 1e-3
    grid = np.geomspace(lo, 100.0 * (x_bar + 1.0), n)
    grid[0] = x_bar
    return grid


def _below_grid(x_bar: float, n: int = 20) -> np.ndarray:
    return np.linspace(0.0, x_bar, n, endpoint=False) if x_bar > 0 else np.zeros(1)


def _nodes_for(model, nodes):
    if nodes is not None:
        return list(nodes)
    return model._ref_nodes()


def falsify_growth(model: UtilityModel, cert: GrowthCertificate, lambda_grid=None, x_grid=None,
                   nodes=None, atol: float = 1e-9) -> GrowthCounterexample | None:
    """First grid point violating the growth inequality, or ``None``.

    Only points with ``lam >= 1`` and ``x >= x_bar`` are tested.
    """
    lams = np.asarray(DEFAULT_LAMBDAS if lambda_grid is None else lambda_grid, dtype=float)
    xs = np.asarray(default_x_grid(cert.x_bar) if x_grid is None else x_grid, dtype=float)
    lams = lams[lams >= 1.0]
    xs = xs[xs >= cert.x_bar]
    g = cert.gamma_bar
    for node in _nodes_for(model, nodes):
        c = cert.c_at(node)
        for lam in lams:
            with np.errstate(over="ignore"):
                lhs = model.u(lam * xs, node)
                rhs = lam ** g * model.u(xs, node) + lam ** g * c
            bad = np.nonzero(~(lhs <= rhs + atol))[0]
            if bad.size:
                i = bad[0]
                return GrowthCounterexample(float(lam), float(xs[i]), node, float(lhs[i]), float(rhs[i]))
    return None


def check_lifted(model: UtilityModel, cert: GrowthCertificate, lambda_grid=None, x_grid=None,
                 nodes=None, atol: float = 1e-9) -> GrowthCounterexample | None:
    """Falsifier for the lifted inequality
    ``u+(lam x) <= lam**g u+(x) + lam**g C_lifted`` over all ``x >= 0``."""
    lams = np.asarray(DEFAULT_LAMBDAS if lambda_grid is None else lambda_grid, dtype=float)
    if x_grid is None:
        x_grid = np.concatenate([_below_grid(cert.x_bar), default_x_grid(cert.x_bar)])
    xs = np.asarray(x_grid, dtype=float)
    g = cert.gamma_bar
    for node in _nodes_for(model, nodes):
        C = cert.lifted_at(node)
        for lam in lams[lams >= 1.0]:
            with np.errstate(over="ignore"):
                lhs = np.maximum(model.u(lam * xs, node), 0.0)
                rhs = lam ** g * np.maximum(model.u(xs, node), 0.0) + lam ** g * C
            bad = np.nonzero(~(lhs <= rhs + atol))[0]
            if bad.size:
                i = bad[0]
                return GrowthCounterexample(float(lam), float(xs[i]), node, float(lhs[i]), float(rhs[i]))
    return None


def lift_growth(model: UtilityModel, cert: GrowthCertificate, nodes=None) -> GrowthCertificate:
    """Populate ``C_lifted(node) = max(u(x_bar, node), 0) + c(node)``.

    The lifted constant extends the growth inequality (for positive parts)
    from ``x >= x_bar`` to every ``x >= 0``.
    """
    cex = falsify_growth(model, cert, nodes=nodes)
    if cex is not None:
        raise GrowthFalsified(cex)
    lifted = {node: max(float(model.u(cert.x_bar, node)), 0.0) + cert.c_at(node)
              for node in _nodes_for(model, nodes)}
    out = replace(cert, C_lifted=lifted)
    cex = check_lifted(model, out, nodes=nodes)
    if cex is not None:
        raise GrowthFalsified(cex)
    return out


def empirical_elasticity(model: UtilityModel, node=None, x: float = 1.0, h: float | None = None) -> float:
    """Central finite-difference estimate of ``x u'(x) / u(x)``. Diagnostic only."""
    if x <= 0:
        raise ValueError("x must be positive")
    h = 1e-6 * max(1.0, x) if h is None else h
    ux = model.u(x, node)
    if ux == 0:
        raise ZeroDivisionError("u(x) = 0, elasticity undefined")
    slope = (model.u(x + h, node) - model.u(max(x - h, 0.0), node)) / (x + h - max(x - h, 0.0))
    return float(x * slope / ux)


def refpoint_certificate(u_tilde_cert, lipschitz, B_max: float) -> GrowthCertificate:
    """Growth certificate for ``u(x) = ut(x - B)`` from one for ``ut``.

    ``u_tilde_cert = (gamma_bar, x_tilde, C)`` certifies ``ut`` itself and
    ``lipschitz = (K, x_hat)`` bounds ``ut' <= K`` on ``[x_hat, inf)``.
    Then ``x_bar = max(x_tilde, x_hat) + B_max`` and ``c = K B_max + C``.
    """
    g, x_tilde, C = u_tilde_cert
    K, x_hat = lipschitz
    if not math.isfinite(B_max) or B_max < 0:
        raise ValueError("B_max must be finite and non-negative")
    return GrowthCertificate(float(g), max(x_tilde, x_hat) + B_max, K * B_max + C)


def default_growth(model: UtilityModel) -> GrowthCertificate | None:
    """Analytically valid certificate for the built-in families, if known."""
    p, B = model.params, model.max_shift
    fam = model.family
    if fam in ("power", "two_piece_power"):
        g = p["p"] if fam == "power" else p["alpha"]
        scale = p.get("scale", 1.0) if fam == "power" else 1.0
        if B == 0:
            return GrowthCertificate(g, 1.0, 0.0)
        if g > 1:
            return None
        # ut' = scale g y**(g-1) <= scale g for y >= 1
        return refpoint_certificate((g, 1.0, 0.0), (scale * g, 1.0), B)
    if fam == "ramp":
        return GrowthCertificate(1.0, p["hi"] + B, max(0.0, -p.get("high", 1.0)))
    if fam == "kramkov_f":
        return GrowthCertificate(1.0, 1.0 + B, 0.5)
    if fam == "piecewise_polynomial":
        last = np.trim_zeros(np.asarray(p["coeffs"][-1], dtype=float), "b")
        if len(last) > 2:
            return None
        a = last[0] if len(last) else 0.0
        b = last[1] if len(last) > 1 else 0.0
        k = float(p["knots"][-1])
        x_bar = k + B if k + B > 0 else 1.0
        if isinstance(model.reference, dict):
            c = {n: max(0.0, b * (k + s) - a) for n, s in model.reference.items()}
        else:
            c = max(0.0, b * (k + B) - a)
        return GrowthCertificate(1.0, x_bar, c)
    return None


# --------------------------------------------------------------------------
# JSON interface

def utility_from_dict(data: dict) -> tuple[UtilityModel, GrowthCertificate | None]:
    """Parse a utility JSON object into a model and its growth certificate.

    Without a ``"growth"`` entry the family default certificate is used.
    """
    try:
        family = data["family"]
        params = dict(data.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise UtilityError(f"malformed utility JSON: {exc}") from None
    ref = data.get("reference")
    reference = None
    if ref is not None:
        kind = ref.get("type", "constant")
        if kind == "constant":
            reference = float(ref["value"])
        elif kind == "per_node":
            reference = {str(k): float(v) for k, v in ref["value"].items()}
        else:
            raise UtilityError(f"unknown reference type {kind!r}")
    model = UtilityModel(family, params, reference)
    growth = data.get("growth")
    if growth is None:
        return model, default_growth(model)
    c = growth.get("c", 0.0)
    c = {str(k): float(v) for k, v in c.items()} if isinstance(c, dict) else float(c)
    return model, GrowthCertificate(float(growth["gamma_bar"]), float(growth["x_bar"]), c)


def load_utility(text: str) -> tuple[UtilityModel, GrowthCertificate | None]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UtilityError(f"utility file is not valid JSON: {exc}") from None
    return utility_from_dict(data)
