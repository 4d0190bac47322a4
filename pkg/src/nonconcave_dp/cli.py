"""Command-line driver.

Subcommands: validate, certify-na, certify-utility, optimize, oracle,
elasticity, export. Settings come from flags, then an optional JSON
``--config`` file, then defaults. Exit codes:

    0  success
    2  invalid input (schema, invariants, unreadable files)
    3  arbitrage detected
    4  growth certificate falsified
    5  tolerance or comparison failure
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dp, oracle
from .arbitrage import certify_tree, verify_certificate
from .market import TreeError, increments, load_tree
from .utility import (GrowthFalsified, UtilityError, empirical_elasticity, falsify_growth,
                      lift_growth, load_utility)

EXIT_OK, EXIT_INVALID, EXIT_ARBITRAGE, EXIT_GROWTH, EXIT_TOLERANCE = 0, 2, 3, 4, 5

DEFAULTS = {"x0": 1.0, "n_grid": 256, "tol": 1e-4, "oracle_grid": 2001, "seed": 0,
            "out": ".", "layer": None, "rel_tol": 2e-2, "n_dirs": 1000, "n_max": 10}

RUN_FILE = "run.json"
CURVES_FILE = "curves.csv"

logger = logging.getLogger(__name__)


class InputError(Exception):
    """Bad or unreadable input; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    tree: str | None
    utility: str | None
    x0: float
    n_grid: int
    tol: float
    oracle_grid: int
    seed: int
    out: str
    layer: int | None
    rel_tol: float
    n_dirs: int
    n_max: int
    run: str | None = None
    x: list | None = None

    def validate(self):
        if not self.x0 >= 0:
            raise InputError("x0 must be non-negative")
        if self.n_grid < 16:
            raise InputError("n_grid must be at least 16")
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if self.oracle_grid < 2:
            raise InputError("oracle grid needs at least 2 points")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--tree", help="scenario tree JSON")
    common.add_argument("--utility", help="utility JSON")
    common.add_argument("--x0", type=float)
    common.add_argument("--n-grid", dest="n_grid", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--oracle-grid", dest="oracle_grid", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--layer", type=int)
    common.add_argument("--rel-tol", dest="rel_tol", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nonconcave-dp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check tree and utility inputs")
    s = sub.add_parser("certify-na", parents=[common], help="no-arbitrage certificate")
    s.add_argument("--n-dirs", dest="n_dirs", type=int)
    sub.add_parser("certify-utility", parents=[common], help="falsify and lift the growth certificate")
    sub.add_parser("optimize", parents=[common], help="dynamic programming run")
    sub.add_parser("oracle", parents=[common], help="brute-force comparison")
    s = sub.add_parser("elasticity", parents=[common], help="empirical elasticity table")
    s.add_argument("--x", type=float, action="append", help="wealth level (repeatable)")
    s.add_argument("--n-max", dest="n_max", type=int)
    s = sub.add_parser("export", parents=[common], help="value curves CSV from a run artifact")
    s.add_argument("--run", help=f"run artifact (default OUT/{RUN_FILE})")
    return p


def _config(args) -> RunConfig:
    values = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError("config must be a JSON object")
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, val in vars(args).items():
        if val is not None and key not in ("config", "verbose"):
            values[key] = val
    fields = RunConfig.__dataclass_fields__
    unknown = sorted(set(values) - set(fields))
    if unknown:
        raise InputError(f"unknown settings: {unknown}")
    try:
        cfg = RunConfig(**{k: values.get(k) for k in fields})
        cfg.x0, cfg.tol, cfg.rel_tol = float(cfg.x0), float(cfg.tol), float(cfg.rel_tol)
        cfg.n_grid, cfg.oracle_grid, cfg.seed = int(cfg.n_grid), int(cfg.oracle_grid), int(cfg.seed)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad setting: {exc}") from None
    cfg.validate()
    return cfg


def _read(path, what):
    if not path:
        raise InputError(f"--{what} is required")
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path}: {exc}") from None


def _tree(cfg):
    return load_tree(_read(cfg.tree, "tree"))


def _utility(cfg):
    return load_utility(_read(cfg.utility, "utility"))


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write(cfg, name, text):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _floats(a):
    return [float(v) for v in np.ravel(a)]


# --------------------------------------------------------------------------
# subcommands

def cmd_validate(cfg):
    report = {}
    if cfg.tree:
        tree = _tree(cfg)
        report["tree"] = {"assets": tree.asset_count, "horizon": tree.horizon,
                          "nodes": len(tree.nodes), "leaves": len(tree.leaves())}
    if cfg.utility:
        model, growth = _utility(cfg)
        report["utility"] = {"family": model.family,
                             "growth": None if growth is None else growth.to_dict()}
        if cfg.tree and isinstance(model.reference, dict):
            missing = sorted(set(tree.leaves()) - set(model.reference))
            if missing:
                raise InputError(f"no reference point for leaves {missing}")
    if not report:
        raise InputError("nothing to validate; pass --tree and/or --utility")
    _emit({"valid": True, **report})
    return EXIT_OK


def cmd_certify_na(cfg):
    tree = _tree(cfg)
    cert = certify_tree(tree)
    out = cert.to_dict()
    if not cert.arbitrage_free:
        _emit(out)
        return EXIT_ARBITRAGE
    checks = {}
    for nid in tree.internal_nodes():
        rep = verify_certificate(increments(tree, nid), cert.nodes[nid], cfg.n_dirs, cfg.seed)
        margin = rep.worst_margin if np.isfinite(rep.worst_margin) else None
        checks[nid] = {"passed": rep.passed, "worst_margin": margin,
                       "worst_mass": rep.worst_mass, "directions": rep.n_checked}
    out["verification"] = {"seed": cfg.seed, "n_dirs": cfg.n_dirs, "nodes": checks}
    _write(cfg, "certificate.json", json.dumps(out, indent=2, sort_keys=True) + "\n")
    _emit(out)
    return EXIT_OK if all(c["passed"] for c in checks.values()) else EXIT_TOLERANCE


def _leaf_nodes(model):
    if isinstance(model.reference, dict):
        return sorted(model.reference)
    return [None]


def cmd_certify_utility(cfg):
    model, growth = _utility(cfg)
    if growth is None:
        raise InputError(f"no growth certificate given and none known for family {model.family!r}")
    nodes = _leaf_nodes(model)
    cex = falsify_growth(model, growth, nodes=nodes)
    if cex is None:
        try:
            lifted = lift_growth(model, growth, nodes=nodes)
        except GrowthFalsified as exc:
            cex = exc.counterexample
    if cex is not None:
        _emit({"falsified": True, "certificate": growth.to_dict(),
               "counterexample": {"lambda": cex.lam, "x": cex.x, "node": cex.node,
                                  "lhs": cex.lhs, "rhs": cex.rhs}})
        return EXIT_GROWTH
    _emit({"falsified": False, "certificate": lifted.to_dict()})
    return EXIT_OK


def _growth_for(model, growth, tree):
    if growth is None:
        return None
    nodes = tree.leaves() if isinstance(model.reference, dict) else None
    if isinstance(growth.c, dict) and nodes is None:
        nodes = tree.leaves()
    return lift_growth(model, growth, nodes=nodes)


def _run_artifact(cfg, tree, model, result, growth):
    plan = dp.assemble_strategy(result)
    realized = dp.evaluate_strategy(tree, plan, model)
    curves = {}
    for nid in sorted(result.values.curves):
        c = result.values[nid]
        entry = {"t": tree.nodes[nid].time, "wealth": _floats(c.grid), "value": _floats(c.values)}
        if nid in result.policy.positions:
            entry["position"] = [_floats(p) for p in result.policy.positions[nid]]
        curves[nid] = entry
    bounds = None
    if growth is not None and growth.x_bar > 0:
        table = dp.compute_J(tree, growth, result.certificate, model)
        rep = dp.check_bounds(result.values, table, x0=cfg.x0, v_star=result.v_star)
        bounds = {"gamma_bar": table.gamma_bar, "J": {n: table.J[n] for n in sorted(table.J)},
                  "J0_expect": table.J[tree.root], "upper": rep.root_bound,
                  "passed": rep.passed, "worst_slack": rep.worst_slack}
    return {
        "x0": cfg.x0, "n_grid": cfg.n_grid, "tol": cfg.tol, "seed": cfg.seed,
        "v_star": result.v_star, "strategy_value": realized,
        "tree": tree.to_dict(), "utility": model.to_dict(),
        "certificate": result.certificate.to_dict(),
        "growth": None if growth is None else growth.to_dict(),
        "bounds": bounds,
        "policy": plan.to_dict(),
        "curves": curves,
    }


def cmd_optimize(cfg):
    tree = _tree(cfg)
    model, growth = _utility(cfg)
    cert = certify_tree(tree)
    if not cert.arbitrage_free:
        _emit({"error": "arbitrage", **cert.to_dict()})
        return EXIT_ARBITRAGE
    try:
        growth = _growth_for(model, growth, tree)
    except GrowthFalsified as exc:
        _emit({"error": "growth certificate falsified", "counterexample": str(exc.counterexample)})
        return EXIT_GROWTH
    result = dp.backward_induct(tree, model, growth, cert, cfg.x0, cfg.n_grid, cfg.tol)
    art = _run_artifact(cfg, tree, model, result, growth)
    path = _write(cfg, RUN_FILE, json.dumps(art, indent=2, sort_keys=True) + "\n")
    summary = {"v_star": art["v_star"], "strategy_value": art["strategy_value"],
               "artifact": str(path), "bounds_passed": None if art["bounds"] is None
               else art["bounds"]["passed"]}
    _emit(summary)
    if art["bounds"] is not None and not art["bounds"]["passed"]:
        return EXIT_TOLERANCE
    gap = abs(art["strategy_value"] - art["v_star"]) / max(1.0, abs(art["v_star"]))
    return EXIT_OK if gap <= cfg.rel_tol else EXIT_TOLERANCE


def cmd_oracle(cfg):
    tree = _tree(cfg)
    model, _ = _utility(cfg)
    cert = certify_tree(tree)
    if not cert.arbitrage_free:
        flagged, reps = oracle.probe_unbounded(tree, model, cfg.x0)
        _emit({"error": "arbitrage", "unbounded": flagged, **cert.to_dict(),
               "values": [r.best_value for r in reps]})
        return EXIT_ARBITRAGE
    result = dp.backward_induct(tree, model, None, cert, cfg.x0, cfg.n_grid, cfg.tol)
    try:
        rep = oracle.brute_force_value(tree, model, cfg.x0, cfg.oracle_grid, cert=cert)
    except oracle.OracleCapExceeded as exc:
        raise InputError(str(exc)) from None
    rep.compare(result.v_star, cfg.rel_tol)
    out = {"dp_value": result.v_star, "rel_tol": cfg.rel_tol, **rep.to_dict()}
    _write(cfg, "oracle.json", json.dumps(out, indent=2, sort_keys=True) + "\n")
    _emit(out)
    return EXIT_OK if rep.verdict else EXIT_TOLERANCE


def cmd_elasticity(cfg):
    model, _ = _utility(cfg)
    if cfg.x:
        xs = [float(v) for v in cfg.x]
    elif model.family == "kramkov_f":
        xs = [n + 0.5 for n in range(cfg.n_max + 1)]
    else:
        xs = [float(v) for v in np.geomspace(0.5, 2.0 ** cfg.n_max, cfg.n_max + 1)]
    node = _leaf_nodes(model)[0]
    rows = []
    for x in xs:
        u = float(model.u(x, node))
        try:
            e = empirical_elasticity(model, node, x)
        except ZeroDivisionError:
            e = None
        rows.append({"x": x, "u": u, "elasticity": e})
    _emit({"family": model.family, "node": node, "rows": rows})
    return EXIT_OK


def curves_csv(art: dict, layer: int | None = None) -> str:
    """CSV of value curves and stored positions, 9 significant digits."""
    d = int(art["tree"]["assets"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "node", "wealth", "value"] + [f"xi_{i + 1}" for i in range(d)])
    entries = sorted(art["curves"].items(), key=lambda kv: (kv[1]["t"], kv[0]))
    for nid, c in entries:
        if layer is not None and c["t"] != layer:
            continue
        pos = c.get("position")
        order = np.argsort(c["wealth"], kind="stable")
        for j in order:
            xi = ["%.9g" % v for v in pos[j]] if pos is not None else [""] * d
            w.writerow([c["t"], nid, "%.9g" % c["wealth"][j], "%.9g" % c["value"][j]] + xi)
    return buf.getvalue()


def cmd_export(cfg):
    path = Path(cfg.run) if cfg.run else Path(cfg.out) / RUN_FILE
    try:
        art = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read run artifact {path}: {exc}") from None
    name = CURVES_FILE if cfg.layer is None else f"curves_t{cfg.layer}.csv"
    out = _write(cfg, name, curves_csv(art, cfg.layer))
    _emit({"csv": str(out)})
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "certify-na": cmd_certify_na,
            "certify-utility": cmd_certify_utility, "optimize": cmd_optimize,
            "oracle": cmd_oracle, "elasticity": cmd_elasticity, "export": cmd_export}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[cfg.command](cfg)
    except (InputError, TreeError, UtilityError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except dp.ArbitrageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_ARBITRAGE


def entry():
    sys.exit(main())
