"""Command-line front end: ``tubewcp <command> [options]``.

Every command resolves a single JSON experiment config (file plus flag
overrides), runs one computation and emits a deterministic JSON report.
Files are staged under temporary names and renamed into ``--out`` only
after the command has finished, so a failing command leaves no partial
output behind.

Exit codes: 0 success, 2 config error, 3 degenerate metric, 4 assumption
failure or missing constant, 5 not certified, 6 no convergence, 7 a
comparison verdict failed.
"""

from __future__ import annotations

import os

_threads = os.environ.get("TUBEWCP_THREADS")
if _threads:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import copy  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import tempfile  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, replace  # noqa: E402

import jsonschema  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .analysis import (  # noqa: E402
    Reaction,
    Weight,
    iteration_lemma_verdict,
    lipschitz_probe,
    sobolev_constant_estimate,
    volume_growth_fit,
    weight_admissibility,
)
from .errors import (  # noqa: E402
    BadExponent,
    ConfigError,
    DegenerateMetric,
    DegenerateParametrization,
    ExponentOutOfRange,
    MissingConstant,
    NoAdmissibleEps,
    NoConvergence,
    NonIntegrable,
    NotCertified,
)
from .fermi import (  # noqa: E402
    estimate_K1,
    epsilon1,
    make_chart,
    metric_grid_table,
    rts_tensors,
    sample_tube,
)
from .geometry import MANIFOLDS, ParamSurface, codimension, make_manifold, sample_params  # noqa: E402
from .pde import field_sidecar, make_grid, solve, write_field_csv  # noqa: E402
from .reach import sample_manifold, tube_exists  # noqa: E402
from .wcp import FLAGSHIP, EllipticProblem, ThetaInputs, epsilon0_solve, run_wcp, theta_constants  # noqa: E402

SCHEMA_VERSION = 1
DEFAULT_WINDOW = (-2.0, 2.0)
SURFACE_TRIM = 0.05

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_ASSUMPTION = 4
EXIT_NOT_CERTIFIED = 5
EXIT_NO_CONVERGENCE = 6
EXIT_VERDICT = 7

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_interval = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "manifold": {
            "type": "object",
            "required": ["id"],
            "additionalProperties": False,
            "properties": {"id": {"type": "string"}, "params": {"type": "object"}},
        },
        "window": {"oneOf": [_interval, {"type": "array", "items": _interval, "minItems": 2, "maxItems": 2}]},
        "periodic": {"type": "array", "items": {"type": "boolean"}},
        "eps": _pos,
        "k": {"type": "integer", "minimum": 1},
        "t": _pos,
        "weight": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"offset": _num, "coef": _num, "power": _num, "cap": {"type": ["number", "null"]}},
        },
        "reaction": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"scale": _num, "const": _num},
        },
        "Lambda": _num,
        "q": {"type": "number", "minimum": 1},
        "m": _pos,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"nx": {"type": "integer", "minimum": 3}, "ny": {"type": "integer", "minimum": 3}},
        },
        "metric_grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"nx": {"type": "integer", "minimum": 2}, "ny": {"type": "integer", "minimum": 1}},
        },
        "boundary": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"u": _num, "v": _num},
        },
        "ladder": {
            "type": "object",
            "additionalProperties": False,
            "required": ["R0", "rungs"],
            "properties": {"R0": _pos, "rungs": {"type": "integer", "minimum": 2}},
        },
        "center": {"oneOf": [_num, _interval]},
        "radii": {"type": "array", "items": _pos, "minItems": 2},
        "samples": {"type": "integer", "minimum": 2},
        "resolution": _pos,
        "gamma": _num,
        "epsilon1": _pos,
        "R_large": _pos,
        "constants": {
            "type": "object",
            "additionalProperties": False,
            "properties": {name: {"type": ["number", "null"]} for name in ThetaInputs.__dataclass_fields__},
        },
        "synthetic_theta1": {"enum": ["identity"]},
        "lemma": {
            "type": "object",
            "additionalProperties": False,
            "required": ["radii", "L", "theta", "gamma", "C"],
            "properties": {
                "radii": {"type": "array", "items": _num},
                "L": {"type": "array", "items": _num},
                "g": {"type": "array", "items": _num},
                "theta": _num,
                "gamma": _num,
                "C": _num,
            },
        },
        "seed": {"type": "integer"},
    },
}


# ----------------------------------------------------------------------------
# Output handling
# ----------------------------------------------------------------------------


def _jsonable(obj):
    """Plain-JSON copy with numpy scalars unwrapped and non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(doc):
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"


class Staging:
    """Collect output files under temporary names; rename all on commit."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self._pending = []
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

    def _temp(self, name):
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.out_dir)
        os.close(fd)
        self._pending.append((tmp, os.path.join(self.out_dir, name)))
        return tmp

    def text(self, name, content):
        if self.out_dir is None:
            return
        with open(self._temp(name), "w") as fh:
            fh.write(content)

    def json(self, name, doc):
        self.text(name, dumps(doc))

    def table(self, name, header, rows):
        if self.out_dir is None:
            return
        with open(self._temp(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) for v in row])

    def field(self, name, grid, values):
        if self.out_dir is None:
            return
        write_field_csv(self._temp(name), grid, values)

    def commit(self):
        for tmp, dest in self._pending:
            os.replace(tmp, dest)
        self._pending = []

    def discard(self):
        for tmp, _ in self._pending:
            if os.path.exists(tmp):
                os.remove(tmp)
        self._pending = []


# ----------------------------------------------------------------------------
# Config resolution
# ----------------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args):
    """Config file (or an empty document) with command-line overrides applied and validated."""
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    else:
        cfg = {"schema_version": SCHEMA_VERSION}
    cfg = copy.deepcopy(cfg)
    if args.manifold is not None:
        cfg["manifold"] = {"id": args.manifold, "params": cfg.get("manifold", {}).get("params", {})}
    for item in args.param or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        cfg.setdefault("manifold", {"id": "", "params": {}}).setdefault("params", {})[key] = _parse_value(val)
    if args.window is not None:
        if len(args.window) == 2:
            cfg["window"] = list(args.window)
        elif len(args.window) == 4:
            cfg["window"] = [list(args.window[:2]), list(args.window[2:])]
        else:
            raise ConfigError("--window takes 2 numbers (curve) or 4 numbers (surface)")
    if args.eps is not None:
        cfg["eps"] = args.eps
    if args.samples is not None:
        cfg["samples"] = args.samples
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from None
    if "manifold" in cfg and cfg["manifold"]["id"] not in MANIFOLDS:
        raise ConfigError(f"unknown manifold id {cfg['manifold']['id']!r}; known: {sorted(MANIFOLDS)}")
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing {', '.join(missing)}")


def _base(cfg):
    _require(cfg, "manifold")
    try:
        return make_manifold(cfg["manifold"]["id"], cfg["manifold"].get("params"))
    except TypeError as exc:
        raise ConfigError(f"bad manifold parameters: {exc}") from None


def _window(cfg, base):
    """Explicit window, else the base domain with infinite directions cut to DEFAULT_WINDOW."""
    if "window" in cfg:
        win = cfg["window"]
        surf = isinstance(base, ParamSurface)
        if surf != isinstance(win[0], list):
            raise ConfigError("window must be one interval for curves and two for surfaces")
        return tuple(tuple(w) for w in win) if surf else tuple(win)
    if isinstance(base, ParamSurface):
        win = []
        for (lo, hi), per in zip(base.domain, base.periodic):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                win.append(DEFAULT_WINDOW)
            elif per:
                win.append((lo, hi))
            else:
                # keep coordinate singularities at closed ends (sphere poles) out of the default
                pad = SURFACE_TRIM * (hi - lo)
                win.append((lo + pad, hi - pad))
        return tuple(win)
    return tuple(base.domain) if all(map(math.isfinite, base.domain)) else DEFAULT_WINDOW


def _chart(cfg):
    _require(cfg, "eps")
    base = _base(cfg)
    if "k" in cfg and cfg["k"] != codimension(base):
        raise ConfigError(f"k = {cfg['k']} does not match the codimension {codimension(base)} of the manifold")
    return make_chart(base, cfg["eps"], _window(cfg, base), cfg.get("periodic"))


def _weight(cfg):
    return Weight.from_dict(cfg.get("weight", {}))


def _reaction(cfg):
    return Reaction.from_dict(cfg.get("reaction", {}))


def _radii(cfg):
    if "radii" in cfg:
        return [float(r) for r in cfg["radii"]]
    lad = cfg.get("ladder", FLAGSHIP["ladder"])
    return [lad["R0"] * 2.0**j for j in range(lad["rungs"])]


def _center(cfg, base):
    c = cfg.get("center", [0.0, 0.0] if isinstance(base, ParamSurface) else 0.0)
    return np.asarray(c, float) if isinstance(base, ParamSurface) else float(c)


def _growth(cfg, base, window):
    radii = _radii(cfg)
    win = None if isinstance(base, ParamSurface) else window
    return volume_growth_fit(base, _center(cfg, base), radii, window=win)


def _fibre_samples(chart, n=9):
    """A few base parameters spread over the chart domain."""
    axes = [sample_params(iv, n if chart.m == 1 else 3, per) for iv, per in zip(chart.intervals, chart.periodic)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, chart.m)


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------


def cmd_metric(cfg, args, out):
    chart = _chart(cfg)
    mg = cfg.get("metric_grid", {})
    X, Y = sample_tube(chart, mg.get("nx", 32), mg.get("ny", 16))
    header, rows = metric_grid_table(chart, X, Y)
    K1 = estimate_K1(chart, X, Y)
    lam = rows[:, -1]
    summary = {
        "chart": chart.to_dict(),
        "K1": K1,
        "epsilon1": epsilon1(K1),
        "eps_below_epsilon1": bool(chart.eps < epsilon1(K1)),
        "lambda_min": float(lam.min()),
        "lambda_max": float(lam.max()),
        "samples": len(rows),
    }
    out.table("metric.csv", header, rows)
    return summary, EXIT_OK, "metric_summary.json"


def cmd_rts(cfg, args, out):
    chart = _chart(cfg)
    n = cfg.get("metric_grid", {}).get("nx", 8)
    axes = [sample_params(iv, n, per) for iv, per in zip(chart.intervals, chart.periodic)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, chart.m)
    T = rts_tensors(chart, X)
    report = {
        "chart": chart.to_dict(),
        "points": [{"x": X[i], "h": T.h[i], "r": T.r[i], "t": T.t[i], "s": T.s[i]} for i in range(len(X))],
    }
    return report, EXIT_OK, "rts.json"


def _reach_report(cfg, chart):
    base = chart.base
    n = cfg.get("samples", 2001)
    win = chart.domain
    samples = sample_manifold(base, win, n)
    ok, witnesses, res = tube_exists(samples, chart.eps, cfg.get("resolution", 0.25))
    i = int(np.argmin(res.rho))
    return {
        "eps": chart.eps,
        "window": win,
        "samples": len(samples.points),
        "spacing": samples.spacing,
        "min_rho": res.min_rho,
        "argmin": samples.params[i],
        "method": res.estimate(i).method,
        "tube_exists": bool(ok),
        "witnesses": witnesses,
    }


def cmd_reach(cfg, args, out):
    chart = _chart(cfg)
    return _reach_report(cfg, chart), EXIT_OK, "reach.json"


def _assumptions(cfg):
    """Verdicts for A1, A2, A4 and the tube (reach) assumption."""
    chart = _chart(cfg)
    weight, t, k = _weight(cfg), float(cfg.get("t", 3.0)), chart.k
    verdicts = {}
    try:
        C_a = weight_admissibility(weight, t, k, chart.eps, X=_fibre_samples(chart))
        verdicts["A1"] = {"status": "PASS", "constants": {"C_a": C_a}, "parameters": {"t": t, "k": k}}
    except (BadExponent, NonIntegrable) as exc:
        verdicts["A1"] = {"status": "FAIL", "reason": str(exc), "parameters": {"t": t, "k": k}}
    m = float(cfg.get("m", 1.0))
    X, Y = sample_tube(chart, 9, 4)
    L_f = lipschitz_probe(_reaction(cfg), m, X, Y)
    verdicts["A2"] = {"status": "PASS" if math.isfinite(L_f) else "FAIL", "constants": {"L_f": L_f},
                      "parameters": {"m": m}, "sampling": {"points": len(X)}}
    growth = _growth(cfg, chart.base, chart.domain)
    ok = growth.gamma > 0 and math.isfinite(growth.C1)
    verdicts["A4"] = {"status": "PASS" if ok else "FAIL",
                      "constants": {"C1": growth.C1, "gamma": growth.gamma, "R0": growth.R0},
                      "sampling": growth.to_dict()}
    reach = _reach_report(cfg, chart)
    verdicts["tube"] = {"status": "PASS" if reach["tube_exists"] else "FAIL",
                        "constants": {"reach": reach["min_rho"]}, "parameters": {"eps": chart.eps},
                        "witnesses": reach["witnesses"], "sampling": {"samples": reach["samples"],
                                                                      "spacing": reach["spacing"]}}
    failures = [name for name, v in verdicts.items() if v["status"] != "PASS"]
    return verdicts, failures


def cmd_check_assumptions(cfg, args, out):
    verdicts, failures = _assumptions(cfg)
    if failures:
        print(f"tubewcp: assumption check failed: {', '.join(failures)}", file=sys.stderr)
    return {"verdicts": verdicts, "failures": failures}, EXIT_ASSUMPTION if failures else EXIT_OK, "assumptions.json"


def cmd_sobolev(cfg, args, out):
    chart = _chart(cfg)
    weight, t, k = _weight(cfg), float(cfg.get("t", 3.0)), chart.k
    C_a = weight_admissibility(weight, t, k, chart.eps, X=_fibre_samples(chart))
    est = sobolev_constant_estimate(weight, t, k, chart.eps, C_a=C_a)
    report = {"C_a": C_a, "C_S": est.C_S, "exponent": est.exponent, "quotients": est.quotients,
              "C_a_pow_minus_t": est.closed_form_factor, "t": t, "k": k, "eps": chart.eps}
    return report, EXIT_OK, "sobolev.json"


def cmd_epsilon0(cfg, args, out):
    _require(cfg, "gamma")
    gamma = float(cfg["gamma"])
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    inputs = ThetaInputs(**{k: v for k, v in cfg.get("constants", {}).items()})
    if "epsilon1" in cfg:
        eps1 = float(cfg["epsilon1"])
    elif "manifold" in cfg and "eps" in cfg:
        chart = _chart(cfg)
        eps1 = epsilon1(estimate_K1(chart, *sample_tube(chart)))
    else:
        raise MissingConstant("epsilon1 (give it or a manifold and eps to estimate it)")
    R_large = float(cfg.get("R_large", 1e3))
    if cfg.get("synthetic_theta1") == "identity":
        res = epsilon0_solve(inputs, gamma, eps1, theta1_fn=lambda e: e)
        theta_at = res.epsilon0
    else:
        res = epsilon0_solve(inputs, gamma, eps1)
        theta_at = float(theta_constants(inputs.replace(eps=res.epsilon0)).theta(R_large))
    report = {"epsilon0": res.epsilon0, "epsilon1": res.epsilon1, "target": res.target,
              "residual": res.residual, "iterations": res.iterations, "gamma": gamma,
              "R_large": R_large, "theta_at_R_large": theta_at, "inputs": asdict(inputs)}
    return report, EXIT_OK, "epsilon0.json"


def _experiment(cfg):
    """Config with flagship defaults for every key except the boundary data."""
    merged = copy.deepcopy(FLAGSHIP)
    merged.update({k: v for k, v in cfg.items() if k != "schema_version"})
    return merged


def cmd_solve(cfg, args, out):
    if args.config:
        _require(cfg, "boundary")
    exp = _experiment(cfg)
    chart = _chart(exp)
    grid = make_grid(chart, exp["grid"]["nx"], exp["grid"]["ny"])
    base_problem = EllipticProblem(grid, _weight(exp), float(exp["Lambda"]), float(exp["q"]), _reaction(exp))
    report = {"grid": grid.to_dict(), "solutions": {}}
    op = None
    for name, value in sorted(exp["boundary"].items()):
        res = solve(replace(base_problem, dirichlet=float(value)), op=op)
        op = res.operator
        out.field(f"{name}.csv", grid, res.u.values)
        report["solutions"][name] = field_sidecar(grid, res)["solver"] | {
            "dirichlet": value, "min": float(res.u.values.min()), "max": float(res.u.values.max())}
    return report, EXIT_OK, "solve.json"


def cmd_verify_wcp(cfg, args, out):
    if args.config:
        _require(cfg, "boundary")
    exp = _experiment(cfg)
    if not {"u", "v"} <= set(exp["boundary"]):
        raise ConfigError("boundary data needs both u and v")
    if not args.force:
        verdicts, failures = _assumptions(exp)
        if failures:
            print(f"tubewcp: assumption check failed: {', '.join(failures)} (use --force to run anyway)",
                  file=sys.stderr)
            return {"assumptions": verdicts, "failures": failures}, EXIT_ASSUMPTION, "wcp_report.json"
    run = run_wcp(exp)
    rep = run.report
    doc = rep.to_dict() | {"solves": run.solves}
    out.field("u.csv", run.problem.grid, run.u.values)
    out.field("v.csv", run.problem.grid, run.v.values)
    v = rep.verdicts
    checked = ["pointwise"]
    if not v["hypothesis_void"]:
        checked += ["contraction", "sandwich", "audit"]
    failed = [name for name in checked if not v[name]]
    if not v["hypothesis_void"] and v["iteration"] != "ForcedZero":
        failed.append("iteration")
    doc["failed_verdicts"] = failed
    if failed:
        print(f"tubewcp: verdicts failed: {', '.join(failed)}", file=sys.stderr)
    return doc, EXIT_VERDICT if failed else EXIT_OK, "wcp_report.json"


def cmd_volume_growth(cfg, args, out):
    base = _base(cfg)
    window = _window(cfg, base)
    fit = _growth(cfg, base, window)
    report = fit.to_dict() | {"center": _center(cfg, base), "window": window}
    return report, EXIT_OK, "volume_growth.json"


def cmd_iterate_lemma(cfg, args, out):
    _require(cfg, "lemma")
    lem = cfg["lemma"]
    if not lem["gamma"] > 0:
        raise ConfigError("gamma must be positive")
    if len(lem["radii"]) != len(lem["L"]):
        raise ConfigError("lemma radii and L must have the same length")
    verdict = iteration_lemma_verdict(lem["radii"], lem["L"], lem["theta"], lem["gamma"], lem["C"], lem.get("g"))
    return verdict.to_dict(), EXIT_OK, "iteration.json"


COMMANDS = {
    "metric": cmd_metric,
    "rts": cmd_rts,
    "reach": cmd_reach,
    "check-assumptions": cmd_check_assumptions,
    "sobolev": cmd_sobolev,
    "epsilon0": cmd_epsilon0,
    "solve": cmd_solve,
    "verify-wcp": cmd_verify_wcp,
    "volume-growth": cmd_volume_growth,
    "iterate-lemma": cmd_iterate_lemma,
}

# commands whose report always goes to stdout
STDOUT_COMMANDS = {"epsilon0"}


def build_parser():
    parser = argparse.ArgumentParser(prog="tubewcp", description="Fermi-tube geometry and comparison checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory (files are written only when given)")
    common.add_argument("--seed", type=int, help="recorded in the resolved config")
    common.add_argument("--force", action="store_true", help="run verify-wcp even if assumptions fail")
    common.add_argument("--json", action="store_true", help="print the report on stdout")
    common.add_argument("--manifold", help=f"manifold id: {', '.join(sorted(MANIFOLDS))}")
    common.add_argument("--param", action="append", metavar="KEY=VALUE", help="manifold parameter")
    common.add_argument("--window", nargs="+", type=float, metavar="A",
                        help="parameter window: a b for curves, a1 b1 a2 b2 for surfaces")
    common.add_argument("--eps", type=float, help="tube radius")
    common.add_argument("--samples", type=int, help="samples per parameter direction for reach")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _exit_code(exc):
    if isinstance(exc, (DegenerateMetric, DegenerateParametrization)):
        return EXIT_DEGENERATE
    if isinstance(exc, (MissingConstant, BadExponent, NonIntegrable, ExponentOutOfRange, NoAdmissibleEps)):
        return EXIT_ASSUMPTION
    if isinstance(exc, NotCertified):
        return EXIT_NOT_CERTIFIED
    if isinstance(exc, NoConvergence):
        return EXIT_NO_CONVERGENCE
    return EXIT_CONFIG


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = load_config(args)
        out = Staging(args.out)
        report, code, filename = COMMANDS[args.command](cfg, args, out)
        doc = {"command": args.command, "config": cfg, "report": report, "exit_code": code,
               "metadata": {"version": __version__, "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}}
        out.json(filename, doc)
        out.commit()
    except (ValueError, KeyError, ArithmeticError, RuntimeError) as exc:
        if out is not None:
            out.discard()
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"tubewcp: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return _exit_code(exc)
    if args.json or args.out is None or args.command in STDOUT_COMMANDS:
        sys.stdout.write(dumps(doc))
    return code


if __name__ == "__main__":
    sys.exit(main())
