"""Command-line front end.

Configuration is a JSON file whose keys mirror the flags below; precedence
is built-in defaults < config file < command-line flags.  A previously
written report may be passed as the config file: its ``config`` entry is
used, which reproduces the report exactly.  Infinite exponents are written
as the string ``"inf"``.

Exit codes: 0 success, 1 internal error, 2 config, 3 domain, 4 unbounded,
5 kink, 6 no-root.  Errors are printed to stderr as a JSON object.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time

import numpy as np

from wdro import __version__
from wdro.choice import (ChoiceGenerator, choice_probabilities, gev_closed_form,
                         mnl_closed_form, nested_logit_closed_form,
                         paired_combinatorial_logit, representative_agent_value,
                         solve_alpha0)
from wdro.core import INF, EmpiricalDistribution, LossSpec, SmoothnessCertificate
from wdro.duality import empirical_risk, worst_case_dual, worst_case_inf
from wdro.equivalence import closed_form_value, exactness_report, fit_regularized
from wdro.errors import ConfigError, WdroError
from wdro.oracle import SearchGrid, oracle_worst_case
from wdro.regularization import (Sampler, asymptotic_gap_curve, geometric_alphas,
                                 gradient_certificate, labeled_points, lower_bound,
                                 upper_bound)

EXIT_CODES = {"config": 2, "domain": 3, "unbounded": 4, "kink": 5, "no-root": 6}

SUBCOMMANDS = ("worst-case", "oracle", "equivalence-check", "bounds", "asymptotics",
               "choice", "fit")

DEFAULTS = {
    "loss": {"family": "linear", "beta": [1.0], "univariate": None, "pieces": None},
    "q": 2.0,
    "p": 1.0,
    "alpha": 0.1,
    "seed": 0,
    "data": {"path": None, "label_column": None, "task": None, "points": None,
             "sampler": None, "n": 50, "dim": None, "low": -1.0, "high": 1.0},
    "tolerance": 1e-9,
    "search": {"levels": 64, "mode": "directional"},
    "certificate": None,
    "asymptotics": {"k_min": 1, "k_max": 10, "base": 2.0},
    "choice": {"family": "mnl", "zbar": [0.0, 0.0], "nests": None, "tau": None,
               "mu": 0.5, "eta": 1.0},
    "fit": {"step": 1.0, "max_iter": 20000, "patience": 40, "tol": 1e-10},
    "output": {"report": None, "csv": None},
    "timing": False,
}

_DEFAULT_UNIVARIATE = {"linear": "identity", "regression": "absolute",
                       "classification": "hinge", "quadratic": "square"}


# ---------------------------------------------------------------- config ---
def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _exponent(v, name):
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "infinity"):
            return INF
        try:
            v = float(v)
        except ValueError:
            raise ConfigError(f"{name} must be a number or 'inf', got {v!r}") from None
    v = float(v)
    if not v >= 1.0:
        raise ConfigError(f"{name} must lie in [1, inf], got {v}")
    return v


def _floats(text, name):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of numbers") from None


def load_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    return raw


def _flag_overrides(args):
    o = {}

    def put(path, value):
        if value is None:
            return
        d = o
        for k in path[:-1]:
            d = d.setdefault(k, {})
        d[path[-1]] = value

    put(("loss", "family"), args.family)
    put(("loss", "beta"), None if args.beta is None else _floats(args.beta, "--beta"))
    put(("loss", "univariate"), args.loss)
    put(("q",), args.q)
    put(("p",), args.p)
    put(("alpha",), args.alpha)
    put(("seed",), args.seed)
    put(("data", "path"), args.data)
    put(("data", "label_column"), args.label_column)
    put(("data", "task"), args.task)
    put(("data", "sampler"), args.sampler)
    put(("data", "n"), args.n)
    put(("data", "dim"), args.dim)
    put(("asymptotics", "k_max"), args.k_max)
    put(("choice", "family"), args.choice_family)
    put(("choice", "zbar"), None if args.zbar is None else _floats(args.zbar, "--zbar"))
    put(("output", "report"), args.out)
    put(("output", "csv"), args.csv)
    if args.timing:
        o["timing"] = True
    return o


def resolve_config(args):
    cfg = DEFAULTS
    if args.config:
        cfg = _merge(cfg, load_config_file(args.config))
    cfg = _merge(cfg, _flag_overrides(args))
    cfg["subcommand"] = args.subcommand
    return validate_config(cfg)


def validate_config(cfg):
    unknown = set(cfg) - set(DEFAULTS) - {"subcommand"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg["p"] = _exponent(cfg["p"], "p")
    cfg["q"] = _exponent(cfg["q"], "q")
    try:
        cfg["alpha"] = float(cfg["alpha"])
        cfg["seed"] = int(cfg["seed"])
    except (TypeError, ValueError):
        raise ConfigError("alpha must be a number and seed an integer") from None
    if not cfg["alpha"] >= 0:
        raise ConfigError("alpha must be nonnegative")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    path = cfg["data"]["path"]
    if path is not None and not os.path.isfile(path):
        raise ConfigError(f"dataset not found: {path}")
    loss = cfg["loss"]
    if loss["univariate"] is None and loss["family"] in _DEFAULT_UNIVARIATE:
        loss["univariate"] = _DEFAULT_UNIVARIATE[loss["family"]]
    return cfg


# --------------------------------------------------------------- dataset ---
def ingest_dataset(path, label_column=None, task=None):
    """Read a CSV with a header row into a uniform empirical distribution.

    Feature columns must be numeric.  With ``label_column`` the label is
    appended as the last coordinate; ``task='classification'`` requires
    labels in {-1, +1}.  Returns ``(EmpiricalDistribution, labels or None)``.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"dataset not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column is not None and label_column not in header:
        raise ConfigError(f"{path}: no column named {label_column!r}")
    li = header.index(label_column) if label_column is not None else None
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        vals = []
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ConfigError(f"{path}: row {r}, column {header[c]!r}: "
                                  f"{cell.strip()!r} is not numeric") from None
            if not math.isfinite(v):
                raise ConfigError(f"{path}: row {r}, column {header[c]!r}: non-finite value")
            vals.append(v)
        if li is not None:
            labels.append(vals.pop(li))
        feats.append(vals)
    if not feats:
        raise ConfigError(f"{path}: no data rows")
    X = np.array(feats, dtype=float)
    if li is None:
        return EmpiricalDistribution(X), None
    y = np.array(labels)
    binary = np.isin(y, (-1.0, 1.0))
    if task == "classification" and not binary.all():
        bad = int(np.argmin(binary)) + 1
        raise ConfigError(f"{path}: schema error, mixed label alphabet; row {bad} label "
                          f"{y[bad - 1]!r} is not -1 or +1")
    return EmpiricalDistribution(np.column_stack([X, y])), y


# ------------------------------------------------------------- builders ---
def build_loss(cfg):
    spec = cfg["loss"]
    fam = spec["family"]
    if fam == "piecewise-max":
        pieces = spec["pieces"]
        if not pieces:
            raise ConfigError("piecewise-max needs a non-empty 'pieces' list")
        return LossSpec.piecewise_max([pc["beta"] for pc in pieces],
                                      [pc.get("loss", "identity") for pc in pieces])
    if fam == "quadratic":
        return LossSpec.quadratic(spec["beta"])
    ctor = {"linear": LossSpec.linear, "regression": LossSpec.regression,
            "classification": LossSpec.classification}
    if fam not in ctor:
        raise ConfigError(f"unknown loss family {fam!r}")
    return ctor[fam](spec["beta"], spec["univariate"])


def _sampler(cfg, dim):
    d = cfg["data"]
    return Sampler(d["sampler"], int(d["dim"] or dim), float(d["low"]), float(d["high"]))


def build_data(cfg, loss):
    d = cfg["data"]
    if d["path"] is not None:
        P, _ = ingest_dataset(d["path"], d["label_column"], d["task"] or (
            "classification" if loss.family == "classification" else None))
        return P
    if d["points"] is not None:
        return EmpiricalDistribution(d["points"])
    if d["sampler"] is not None:
        S = _sampler(cfg, loss.dim)
        return EmpiricalDistribution(labeled_points(loss, S.draw(int(d["n"]), cfg["seed"])))
    raise ConfigError("no data: give data.path, data.points or data.sampler")


def build_certificate(cfg, loss):
    c = cfg["certificate"]
    if c is None:
        try:
            return gradient_certificate(loss, cfg["q"])
        except WdroError:
            return None
    return SmoothnessCertificate(kappa=float(c["kappa"]), h=float(c.get("h", 0.0)),
                                 C=float(c.get("C", 0.0)), q=c.get("q"))


# ------------------------------------------------------------- commands ---
def _worst(loss, P, cfg):
    if cfg["p"] == INF:
        value, pts = worst_case_inf(loss, P, cfg["alpha"], cfg["q"])
        return {"worst_case": value, "method": "per-sample ball maximization"}
    cert = worst_case_dual(loss, P, cfg["p"], cfg["alpha"], cfg["q"], tol=cfg["tolerance"])
    return {"worst_case": cert.dual_value, "method": "dual golden-section",
            "lambda_star": cert.lambda_star, "bracket": list(cert.bracket),
            "iterations": cert.iterations, "warnings": list(cert.warnings)}


def cmd_worst_case(cfg):
    loss = build_loss(cfg)
    P = build_data(cfg, loss)
    out = {"erm": empirical_risk(loss, P), "n": P.n, "dim": P.dim}
    out.update(_worst(loss, P, cfg))
    return out, None


def cmd_oracle(cfg):
    loss = build_loss(cfg)
    P = build_data(cfg, loss)
    grid = SearchGrid(levels=int(cfg["search"]["levels"]), mode=cfg["search"]["mode"])
    value, cand = oracle_worst_case(loss, P, cfg["p"], cfg["alpha"], cfg["q"], grid)
    dual = _worst(loss, P, cfg)["worst_case"]
    return {"erm": empirical_risk(loss, P), "oracle": value, "budget_used": cand.budget_used,
            "dual": dual, "gap": dual - value, "witness": cand.points.tolist()}, None


def cmd_equivalence(cfg):
    loss = build_loss(cfg)
    P = build_data(cfg, loss)
    rep = exactness_report(loss, P, cfg["alpha"], cfg["q"], cfg["p"])
    return {"dual": rep.dual_value, "closed_form": rep.closed_form_value,
            "abs_gap": rep.abs_gap, "rel_gap": rep.rel_gap,
            "lambda_star": rep.lambda_star, "instance": rep.instance}, None


def cmd_bounds(cfg):
    loss = build_loss(cfg)
    P = build_data(cfg, loss)
    cert = build_certificate(cfg, loss)
    p, a, q = cfg["p"], cfg["alpha"], cfg["q"]
    out = {"erm": empirical_risk(loss, P)}
    out.update(_worst(loss, P, cfg))
    out["upper"] = upper_bound(loss, P, p, a, q, cert)
    out["lower"] = None if cert is None else lower_bound(loss, P, p, a, q, cert)
    if cert is not None:
        out["certificate"] = {"kappa": cert.kappa, "h": cert.h, "C": cert.C, "q": cert.q}
    return out, None


def cmd_asymptotics(cfg):
    loss = build_loss(cfg)
    if cfg["data"]["sampler"] is None:
        raise ConfigError("asymptotics needs data.sampler")
    a = cfg["asymptotics"]
    alphas = geometric_alphas(int(a["k_max"]), float(a["base"]), int(a["k_min"]))
    curve = asymptotic_gap_curve(loss, _sampler(cfg, loss.dim), int(cfg["data"]["n"]),
                                 alphas, cfg["p"], cfg["q"], seed=cfg["seed"])
    r = curve.ratios()
    out = {"alphas": alphas, "gap_ratio_first": r[0], "gap_ratio_last": r[-1],
           "rows": len(curve.rows)}
    return out, curve.to_csv()


def _generator(c):
    fam = c["family"]
    d = len(c["zbar"])
    eta = float(c["eta"])
    if fam == "mnl":
        return ChoiceGenerator.mnl(d, eta), mnl_closed_form
    if fam == "nested":
        G = ChoiceGenerator.nested(c["nests"] or [], c["tau"] or [], eta)
        return G, lambda z: nested_logit_closed_form(z, G.nests, G.tau)
    if fam == "pcl":
        D0, g = paired_combinatorial_logit(float(c["mu"]))
        return ChoiceGenerator.gev(D0, g, d, 1.0, eta), lambda z: gev_closed_form(z, g)
    raise ConfigError(f"unknown choice family {fam!r}; choose mnl, nested or pcl")


def cmd_choice(cfg):
    c = cfg["choice"]
    G, closed = _generator(c)
    z = np.asarray(c["zbar"], dtype=float)
    a0 = solve_alpha0(G, z)
    prob = choice_probabilities(G, z)
    out = {"alpha0": a0, "probabilities": prob.tolist(),
           "value": representative_agent_value(prob, z, G)}
    if G.eta == 1.0:
        ref = closed(z)
        out["closed_form"] = ref.tolist()
        out["max_abs_gap"] = float(np.max(np.abs(prob - ref)))
    return out, None


def cmd_fit(cfg):
    loss = build_loss(cfg)
    P = build_data(cfg, loss)
    f = cfg["fit"]
    res = fit_regularized(loss.family, P, cfg["alpha"], cfg["q"], cfg["loss"]["univariate"],
                          step=float(f["step"]), max_iter=int(f["max_iter"]),
                          patience=int(f["patience"]), tol=float(f["tol"]), seed=cfg["seed"])
    fitted = type(loss)(loss.family, res.beta, loss.pieces)
    return {"beta": res.beta.tolist(), "objective": res.objective,
            "closed_form_check": closed_form_value(fitted, P, cfg["alpha"], cfg["q"]),
            "iterations": res.iterations, "converged": res.converged,
            "warning": res.warning}, None


COMMANDS = {"worst-case": cmd_worst_case, "oracle": cmd_oracle,
            "equivalence-check": cmd_equivalence, "bounds": cmd_bounds,
            "asymptotics": cmd_asymptotics, "choice": cmd_choice, "fit": cmd_fit}


# --------------------------------------------------------------- output ---
def _jsonable(x):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _unbounded(results):
    return any(isinstance(v, (float, np.floating)) and math.isinf(v) for v in results.values())


def run_subcommand(cfg):
    """Run one configured subcommand; returns ``(report dict, csv text or None)``."""
    t0 = time.perf_counter()
    results, table = COMMANDS[cfg["subcommand"]](cfg)
    report = {"tool": "wdro", "version": __version__, "subcommand": cfg["subcommand"],
              "seed": cfg["seed"], "config": cfg, "results": results,
              "unbounded": _unbounded(results)}
    if cfg["timing"]:
        report["wall_clock_s"] = time.perf_counter() - t0
    return _jsonable(report), table


def render_report(report) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"


def build_parser():
    ap = argparse.ArgumentParser(prog="wdro", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"wdro {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file or previous report")
        sp.add_argument("--family", help="loss family: linear, regression, classification, "
                                         "piecewise-max, quadratic")
        sp.add_argument("--beta", help="comma-separated coefficients")
        sp.add_argument("--loss", help="univariate loss name")
        sp.add_argument("--q", help="ground-norm exponent (number or inf)")
        sp.add_argument("--p", help="Wasserstein order (number or inf)")
        sp.add_argument("--alpha", type=float, help="ball radius")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data", help="CSV dataset with a header row")
        sp.add_argument("--label-column")
        sp.add_argument("--task", choices=("regression", "classification"))
        sp.add_argument("--sampler", choices=("gaussian", "uniform", "rademacher"))
        sp.add_argument("--n", type=int, help="sample size for the sampler")
        sp.add_argument("--dim", type=int, help="sampler dimension")
        sp.add_argument("--k-max", type=int, help="asymptotics: radii 2**-k up to this k")
        sp.add_argument("--choice-family", choices=("mnl", "nested", "pcl"))
        sp.add_argument("--zbar", help="comma-separated mean utilities")
        sp.add_argument("--out", help="report path (default stdout)")
        sp.add_argument("--csv", help="CSV path for curve output")
        sp.add_argument("--timing", action="store_true",
                        help="add wall-clock seconds (makes reports non-reproducible)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        report, table = run_subcommand(cfg)
        text = render_report(report)
        out = cfg["output"]
        if table is not None:
            if out["csv"]:
                with open(out["csv"], "w", encoding="utf-8", newline="") as fh:
                    fh.write(table)
            else:
                sys.stdout.write(table)
        if out["report"]:
            with open(out["report"], "w", encoding="utf-8") as fh:
                fh.write(text)
        elif table is None or out["csv"]:
            sys.stdout.write(text)
    except WdroError as exc:
        sys.stderr.write(json.dumps({"error": exc.category, "message": str(exc)}) + "\n")
        return EXIT_CODES.get(exc.category, 1)
    except Exception as exc:  # noqa: BLE001
        sys.stderr.write(json.dumps({"error": "internal",
                                     "message": f"{type(exc).__name__}: {exc}"}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
