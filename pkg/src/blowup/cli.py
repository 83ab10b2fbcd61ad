"""Command-line front end: one JSON run configuration per command.

Exit codes: 0 success (an empty critical-point list is a result), 2 invalid
configuration, 3 numerical failure. Failures print a JSON error object.
"""

import argparse
import copy
import datetime
import json
import sys
import warnings

import jsonschema
import numpy as np

from . import io
from .assembler import assemble, energy, residual_norm, residual_sweep, solution_rule
from .bubbles import BubbleParams, kernel_residual
from .critical import SearchOptions, multistart
from .errors import BlowupError, ConfigError, GeometryError, IncompatibleSign
from .geometry import domain_from_dict
from .green import build_engine
from .reduced import Configuration, Regime, reduced_gradient, reduced_value

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 6}
_mat = {"type": "array", "items": _vec}

DOMAIN_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["ball", "annulus", "perforated", "mesh"]},
        "n": {"type": "integer", "minimum": 3},
        "center": _vec,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "r_inner": {"type": "number", "exclusiveMinimum": 0},
        "r_outer": {"type": "number", "exclusiveMinimum": 0},
        "outer": {"$ref": "#/$defs/domain"},
        "hole_center": _vec,
        "hole_radius": {"type": "number", "exclusiveMinimum": 0},
        "panels": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["point", "normal", "area"],
                "properties": {"point": _vec, "normal": _vec, "area": {"type": "number"}},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

REGIME_SCHEMA = {
    "type": "object",
    "required": ["kind", "n"],
    "properties": {
        "kind": {"enum": ["MBN", "MAC", "TAC", "TC"]},
        "n": {"type": "integer", "minimum": 3, "maximum": 6},
        "kappa": {"type": "integer", "minimum": 1},
        "eps_sign": {"enum": [1, -1]},
        "lambdas": {"type": "array", "items": {"enum": [1, -1]}},
        "hole_center": _vec,
        "interaction_sign": {"enum": [1, -1]},
        "epsilon": {"type": "number"},
        "eps_list": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "log_rates": {"type": "array", "items": {"type": "number"}},
        "points": _mat,
        "sigmas": {"type": "array", "items": _vec},
        "base": _vec,
    },
    "required": ["log_rates"],
    "additionalProperties": False,
}

ENGINE_SCHEMA = {
    "type": "object",
    "properties": {
        "method": {"enum": ["auto", "analytic", "collocation", "point"]},
        "n_boundary": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}

OUTPUT_SCHEMA = {
    "type": "object",
    "properties": {"path": {"type": "string"}, "csv": {"type": "string"}, "grid": {"type": "string"}},
    "additionalProperties": False,
}

SEARCH_SCHEMA = {
    "type": "object",
    "properties": {k: {"type": "number"} for k in SearchOptions.__dataclass_fields__},
    "additionalProperties": False,
}

_options = {
    "robin-map": {
        "origin": _vec,
        "axes": {"type": "array", "items": _vec, "minItems": 2, "maxItems": 2},
        "extent": {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 2,
                                              "maxItems": 2}, "minItems": 2, "maxItems": 2},
        "resolution": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2, "maxItems": 2},
    },
    "reduce": {
        "count": {"type": "integer", "minimum": 1},
        "method": {"enum": ["auto", "minimize", "saddle"]},
        "search": SEARCH_SCHEMA,
        "landscape": {
            "type": "object",
            "properties": {
                "axes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
                "extent": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "resolution": {"type": "array", "items": {"type": "integer", "minimum": 2}},
            },
            "required": ["axes", "extent"],
            "additionalProperties": False,
        },
    },
    "assemble": {
        "start": _vec,
        "end": _vec,
        "count": {"type": "integer", "minimum": 2},
        "energy": {"type": "boolean"},
        "budget": {"type": "integer", "minimum": 1},
    },
    "residual-sweep": {"budget": {"type": "integer", "minimum": 1}},
    "kernel-check": {
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 3, "maximum": 6}},
        "deltas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "samples": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
    },
    "green-probe": {"x": _mat, "y": _mat},
}

# blocks each command needs
_required = {
    "robin-map": ["domain"],
    "reduce": ["domain", "regime"],
    "assemble": ["domain", "regime", "config"],
    "residual-sweep": ["domain", "regime", "config"],
    "kernel-check": [],
    "green-probe": ["domain", "options"],
}


def run_schema(command):
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": {"domain": DOMAIN_SCHEMA},
        "type": "object",
        "properties": {
            "domain": {"$ref": "#/$defs/domain"},
            "regime": REGIME_SCHEMA,
            "config": CONFIG_SCHEMA,
            "engine": ENGINE_SCHEMA,
            "options": {"type": "object", "properties": _options[command], "additionalProperties": False},
            "output": OUTPUT_SCHEMA,
            "seed": {"type": "integer", "minimum": 0},
            "threads": {"type": "integer", "minimum": 1},
        },
        "required": _required[command],
        "additionalProperties": False,
    }


def apply_overrides(cfg, pairs):
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in pairs or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return cfg


def load_config(path, command, overrides=()):
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    cfg = apply_overrides(cfg, overrides)
    try:
        jsonschema.validate(cfg, run_schema(command))
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    return cfg


# Helpers -----------------------------------------------------------------


def _engine(cfg):
    try:
        dom = domain_from_dict(cfg["domain"])
    except (GeometryError, ValueError, TypeError) as exc:
        raise ConfigError(f"domain: {exc}") from None
    e = cfg.get("engine", {})
    return build_engine(dom, e.get("n_boundary"), e.get("tol"), e.get("method", "auto"))


def _regime(cfg):
    r = {k: v for k, v in cfg["regime"].items() if k not in ("epsilon", "eps_list")}
    try:
        return Regime.from_dict(r)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _configuration(cfg, regime):
    try:
        return Configuration.from_dict(dict(cfg["config"], regime=regime))
    except ValueError as exc:
        raise ConfigError(f"config: {exc}") from None


def _metadata(cfg, engine=None, extra=None):
    meta = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "versions": io.versions(),
    }
    if "regime" in cfg:
        meta["regime"] = cfg["regime"]
    if engine is not None:
        meta["domain"] = cfg["domain"]
        meta["c_n"] = engine.c_n
        meta["engine"] = {
            "scheme": engine.scheme,
            "method": engine.method,
            "tol": engine.tol,
            "collocation_residual": engine.collocation_residual,
        }
    meta.update(extra or {})
    return meta


def _out(cfg, default, key="path"):
    return cfg.get("output", {}).get(key, default)


def _epsilon(cfg):
    eps = cfg["regime"].get("epsilon")
    if eps is None:
        raise ConfigError("regime.epsilon is required for this command")
    return float(eps)


def _summary(obj):
    print(json.dumps(obj, sort_keys=True))


# Commands ----------------------------------------------------------------


def cmd_robin_map(cfg):
    engine = _engine(cfg)
    dom = engine.domain
    n = dom.n
    opt = cfg.get("options", {})
    lo, hi = dom.bounding_box()
    origin = np.asarray(opt.get("origin", 0.5 * (lo + hi)), dtype=float)
    axes = np.asarray(opt.get("axes", np.eye(n)[:2]), dtype=float)
    if origin.shape != (n,) or axes.shape != (2, n):
        raise ConfigError("slice origin and axes must live in the domain dimension")
    axes = axes / np.linalg.norm(axes, axis=1)[:, None]
    half = 0.5 * float(np.max(hi - lo))
    extent = opt.get("extent", [[-half, half], [-half, half]])
    nu, nv = opt.get("resolution", [41, 41])
    us = np.linspace(*extent[0], nu)
    vs = np.linspace(*extent[1], nv)
    U, V = np.meshgrid(us, vs, indexing="ij")
    pts = origin + U[..., None] * axes[0] + V[..., None] * axes[1]
    flat = pts.reshape(-1, n)
    # keep a margin so the map stays inside the collocation accuracy zone
    inside = dom.boundary_distance(flat) > 1e-3 * dom.diameter
    tau = np.full(len(flat), np.nan)
    if np.any(inside):
        tau[inside] = engine.robin(flat[inside])
    if not np.any(np.isfinite(tau)):
        raise ConfigError("the slice does not meet the domain")
    k = int(np.nanargmin(tau))
    cell = [float(us[1] - us[0]), float(vs[1] - vs[0])]
    summary = {
        "command": "robin-map",
        "min_point": flat[k].tolist(),
        "min_value": float(tau[k]),
        "grid_cell": cell,
        "interior_nodes": int(inside.sum()),
    }
    rows = []
    for (u, v), x, t in zip(np.stack([U.ravel(), V.ravel()], axis=1), flat, tau):
        if np.isfinite(t):
            rows.append([u, v, *x, t])
    path = _out(cfg, "robin_map.csv")
    meta = _metadata(cfg, engine, {"min_point": summary["min_point"], "min_value": summary["min_value"]})
    io.write_csv(path, ["u", "v"] + [f"x{i + 1}" for i in range(n)] + ["tau"], rows, meta)
    summary["output"] = path
    return summary


def _landscape(engine, regime, config, grid, path, meta):
    ax = grid["axes"]
    res = grid.get("resolution", [41, 41])
    base = config.vector
    if max(ax) >= len(base):
        raise ConfigError(f"landscape axis outside 0..{len(base) - 1}")
    rows = []
    for a in np.linspace(*grid["extent"][0], res[0]):
        for b in np.linspace(*grid["extent"][1], res[1]):
            v = base.copy()
            v[ax[0]], v[ax[1]] = a, b
            try:
                c = Configuration.from_vector(regime, v)
                val = reduced_value(engine, regime, c)
                gn = float(np.linalg.norm(reduced_gradient(engine, regime, c)))
            except BlowupError:
                val, gn = np.nan, np.nan
            rows.append([a, b, val, gn])
    io.write_csv(path, [f"q{ax[0]}", f"q{ax[1]}", "value", "grad_norm"], rows, dict(meta, base=base.tolist()))


def cmd_reduce(cfg, threads=1):
    engine = _engine(cfg)
    regime = _regime(cfg)
    opt = cfg.get("options", {})
    search = dict(opt.get("search", {}))
    for key in ("max_iters", "retries"):
        if key in search:
            search[key] = int(search[key])
    try:
        sopts = SearchOptions.from_dict(search)
    except ValueError as exc:
        raise ConfigError(f"options.search: {exc}") from None
    seed = int(cfg.get("seed", 0))
    workers = int(cfg.get("threads", threads))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = multistart(engine, regime, seed, int(opt.get("count", 32)), sopts, opt.get("method", "auto"), workers)
    meta = _metadata(cfg, engine, {"seed": seed, "search": sopts.__dict__})
    path = _out(cfg, "reduce.json")
    io.write_json(path, {"metadata": meta, "result": res.to_dict()})
    if "landscape" in opt:
        if "config" in cfg:
            base = _configuration(cfg, regime)
        elif res.points:
            base = res.points[0].config
        else:
            raise ConfigError("landscape needs a config block or a critical point to slice through")
        _landscape(engine, regime, base, opt["landscape"], _out(cfg, "landscape.csv", "grid"), meta)
    return {
        "command": "reduce",
        "critical_points": len(res.points),
        "classifications": [cp.classification for cp in res.points],
        "escaped": len(res.escapes),
        "failed": res.failures,
        "output": path,
    }


def cmd_assemble(cfg):
    engine = _engine(cfg)
    regime = _regime(cfg)
    config = _configuration(cfg, regime)
    eps = _epsilon(cfg)
    sol = assemble(engine, regime, eps, config)
    opt = cfg.get("options", {})
    n = regime.n
    centers = sol.centers
    start = np.asarray(opt.get("start", centers[0] - 0.9 * sol.domain.boundary_distance(centers[:1])[0] * np.eye(n)[0]))
    end = np.asarray(opt.get("end", centers[0] + 0.9 * sol.domain.boundary_distance(centers[:1])[0] * np.eye(n)[0]))
    count = int(opt.get("count", 201))
    t = np.linspace(0.0, 1.0, count)
    pts = start + t[:, None] * (end - start)
    inside = sol.domain.boundary_distance(pts) > 0
    vals = np.full(count, np.nan)
    vals[inside] = sol.value(pts[inside])
    finite = vals[np.isfinite(vals)]
    summary = {
        "command": "assemble",
        "deltas": sol.deltas.tolist(),
        "sign_change": bool(np.any(finite > 0) and np.any(finite < 0)),
        "boundary_residual": max(b.boundary_residual for b in sol.bubbles),
    }
    if opt.get("energy", False):
        rule = solution_rule(sol, budget=int(opt.get("budget", 2_000_000)))
        summary["energy"] = energy(sol, rule)
        summary["residual_norm"] = residual_norm(sol, rule)
    meta = _metadata(cfg, engine, {"epsilon": eps, "deltas": summary["deltas"], "centers": centers.tolist()})
    path = _out(cfg, "solution.csv")
    io.write_csv(path, ["t"] + [f"x{i + 1}" for i in range(n)] + ["V"], [[s, *x, v] for s, x, v in zip(t, pts, vals)],
                 meta)
    summary["output"] = path
    return summary


def cmd_residual_sweep(cfg):
    engine = _engine(cfg)
    regime = _regime(cfg)
    config = _configuration(cfg, regime)
    eps = cfg["regime"].get("eps_list")
    if eps is None:
        default = [1e-2, 3e-3, 1e-3, 3e-4] if regime.kind == "TC" else [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]
        eps = [regime.eps_sign * e for e in default]
    opt = cfg.get("options", {})
    rep = residual_sweep(engine, regime, config, eps, budget=int(opt.get("budget", 2_000_000)))
    meta = _metadata(cfg, engine)
    path = _out(cfg, "residual_sweep.json")
    io.write_json(path, {"metadata": meta, "result": rep.to_dict()})
    if "csv" in cfg.get("output", {}):
        io.write_csv(cfg["output"]["csv"], ["eps", "residual"], rep.rows(),
                     dict(meta, fitted_slope=rep.slope, fit_r2=rep.r2))
    return {"command": "residual-sweep", "fitted_slope": rep.slope, "fit_r2": rep.r2, "output": path}


def cmd_kernel_check(cfg):
    opt = cfg.get("options", {})
    dims = opt.get("dims", [3, 4, 5, 6])
    deltas = opt.get("deltas", [1.0, 1e-2])
    count = int(opt.get("samples", 50))
    tol = float(opt.get("tol", 1e-4))
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    checks = []
    for n in dims:
        for dl in deltas:
            params = BubbleParams(dl, rng.uniform(-1, 1, n))
            # sample a shell 0.1..5 delta around the center
            u = rng.standard_normal((count, n))
            u /= np.linalg.norm(u, axis=1)[:, None]
            pts = params.z + dl * rng.uniform(0.1, 5.0, count)[:, None] * u
            worst = max(kernel_residual(params, pts, j) for j in range(n + 1))
            checks.append({"n": n, "delta": dl, "residual": worst, "pass": bool(worst < tol)})
    ok = all(c["pass"] for c in checks)
    path = _out(cfg, "kernel_check.json")
    io.write_json(path, {"metadata": _metadata(cfg, extra={"tol": tol}), "result": {"pass": ok, "checks": checks}})
    summary = {"command": "kernel-check", "pass": ok, "worst": max(c["residual"] for c in checks), "output": path}
    if not ok:
        raise _CheckFailed(summary)
    return summary


def cmd_green_probe(cfg):
    engine = _engine(cfg)
    opt = cfg["options"]
    x = np.asarray(opt.get("x", []), dtype=float)
    y = np.asarray(opt.get("y", []), dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != engine.n:
        raise ConfigError("options.x and options.y must be equally long lists of points")
    rows = []
    for xi, yi in zip(x, y):
        H = float(engine.regular_part(xi, yi))
        hx, hy = engine.grad_regular_part(xi, yi)
        rec = {"x": xi.tolist(), "y": yi.tolist(), "H": H, "grad_x_H": hx.tolist(), "grad_y_H": hy.tolist(),
               "tau_x": float(engine.robin(xi)), "tau_y": float(engine.robin(yi))}
        rec["G"] = float(engine.green(xi, yi)) if np.linalg.norm(xi - yi) > 1e-12 * engine.domain.diameter else None
        rows.append(rec)
    path = _out(cfg, "green_probe.json")
    io.write_json(path, {"metadata": _metadata(cfg, engine), "result": rows})
    return {"command": "green-probe", "pairs": len(rows), "output": path}


class _CheckFailed(Exception):
    def __init__(self, summary):
        super().__init__(summary)
        self.summary = summary


COMMANDS = {
    "robin-map": cmd_robin_map,
    "reduce": cmd_reduce,
    "assemble": cmd_assemble,
    "residual-sweep": cmd_residual_sweep,
    "kernel-check": cmd_kernel_check,
    "green-probe": cmd_green_probe,
}


def build_parser():
    p = argparse.ArgumentParser(prog="blowup", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON run configuration")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry (dotted key, JSON value)")
        s.add_argument("-o", "--output", help="output path (overrides output.path)")
    return p


def _error(kind, message, code):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}))
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.output:
            overrides.append(f"output.path={json.dumps(args.output)}")
        cfg = load_config(args.config, args.command, overrides)
        if args.command == "reduce":
            summary = cmd_reduce(cfg, threads=max(1, args.threads))
        else:
            summary = COMMANDS[args.command](cfg)
    except (ConfigError, IncompatibleSign) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_CONFIG)
    except _CheckFailed as exc:
        _summary(exc.summary)
        return EXIT_NUMERIC
    except (BlowupError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_NUMERIC)
    except ValueError as exc:
        return _error("ConfigError", str(exc), EXIT_CONFIG)
    _summary(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
