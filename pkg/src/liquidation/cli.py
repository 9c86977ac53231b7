"""Command-line entry point: ``liquidation <command> [flags]``.

Settings come from built-in defaults, then the ``--config`` JSON file, then
flags (flags win). Every artifact carries the resolved settings and the
package version in its first line.

Exit codes: 0 ok, 1 unknown command, 2 invalid config, 3 numerical guard,
4 I/O failure. Failures print a one-line JSON error document on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._io import read_csv, write_csv, write_json
from .base_solver import lower_bound, poisson_counts, solve_base, upper_bound
from .continuous import solve_continuous
from .errors import (ConfigurationError, DegenerateFlowError, DomainError, GridMismatchError,
                     LiquidationError, ModelError, NumericalGuardError, ZeroLikelihoodError)
from .markov_solver import solve_markov
from .model import DepthFunction, RegimeModel, model_from_dict
from .partial_solver import solve_partial
from .simulator import mc_cost
from . import reproduce

COMMANDS = ("solve-base", "solve-markov", "solve-partial", "continuous", "bounds", "simulate",
            "reproduce-table1", "reproduce-figures", "diff-surfaces")

EXIT_OK, EXIT_COMMAND, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

DEFAULTS = {
    "depth": {"coefficient": 0.5, "gamma": 2.0},
    "lam": 1.0,
    "K": 20,
    "T_max": 1.0,
    "dt": 0.01,
    "mesh_h": 0.05,
    "constrained": False,
    "half_step": "averaged",
    "seed": 0,
    "n_paths": 100_000,
    "start": 0,
    "policy": "auto",
    "out": "out",
}

log = logging.getLogger("liquidation")


class CommandError(LiquidationError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="liquidation", description="Optimal liquidation solvers and simulator.")
    p.add_argument("command", nargs="?", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("inputs", nargs="*", help="CSV files for diff-surfaces")
    p.add_argument("--command", dest="command_flag", metavar="NAME")
    p.add_argument("--config", type=Path, metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--mesh-h", dest="mesh_h", type=float)
    p.add_argument("--paths", dest="n_paths", type=int)
    p.add_argument("--constrained", type=_bool, metavar="BOOL")
    p.add_argument("--K", dest="K", type=int)
    p.add_argument("--T-max", dest="T_max", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--coefficient", type=float)
    p.add_argument("--half-step", dest="half_step", choices=("averaged", "lagged"))
    p.add_argument("--start", help="start regime index or comma-separated belief")
    p.add_argument("--policy", choices=("auto", "base", "markov", "belief"))
    p.add_argument("--dump-filter", action="store_true", help="log belief updates while simulating")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _read_config(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError("config must be a JSON object")
    return doc


def resolve(args) -> dict:
    """Merge defaults, config file and flags (flags win) and validate ranges.

    ``reproduce-table1`` without ``--config`` uses the bundled three-regime
    configuration as its file layer.
    """
    doc = _read_config(args.config) if args.config is not None else {}
    command = args.command_flag or args.command or doc.get("command")
    if command is None:
        raise ConfigurationError("no command given")
    if command not in COMMANDS:
        raise CommandError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    if command == "reproduce-table1" and args.config is None:
        doc = reproduce.bundled_config()
    cfg = json.loads(json.dumps(DEFAULTS))
    cfg.update(doc)
    if doc:
        cfg["_file"] = doc
    for key in ("out", "seed", "dt", "mesh_h", "n_paths", "constrained", "K", "T_max", "lam",
                "half_step", "policy"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    if args.start is not None:
        cfg["start"] = [float(x) for x in args.start.split(",")] if "," in args.start else int(args.start)
    depth = dict(cfg.get("depth", {}))
    if args.gamma is not None:
        depth["gamma"] = args.gamma
    if args.coefficient is not None:
        depth["coefficient"] = args.coefficient
    cfg["depth"] = depth
    cfg["command"] = command
    cfg["inputs"] = list(args.inputs)
    _validate(cfg)
    return cfg


def _validate(cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigurationError(msg)

    for key, typ in (("K", int), ("seed", int), ("n_paths", int)):
        need(isinstance(cfg[key], typ) and not isinstance(cfg[key], bool), f"{key} must be an integer")
    need(cfg["K"] >= 1, "K must be at least 1")
    need(cfg["seed"] >= 0, "seed must be nonnegative")
    need(cfg["n_paths"] >= 1, "paths must be at least 1")
    need(float(cfg["T_max"]) > 0, "T_max must be positive")
    need(float(cfg["dt"]) > 0, "dt must be positive")
    need(0 < float(cfg["mesh_h"]) <= 1, "mesh-h must lie in (0, 1]")
    need(float(cfg["lam"]) > 0, "lam must be positive")
    need(cfg["half_step"] in ("averaged", "lagged"), "half_step must be 'averaged' or 'lagged'")
    try:
        DepthFunction(**cfg["depth"])
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad depth parameters: {exc}") from exc
    if cfg["command"] == "diff-surfaces":
        need(len(cfg["inputs"]) == 2, "diff-surfaces takes exactly two CSV paths")
    if "regimes" in cfg:
        model_from_dict(cfg)[0].check()


def _meta(cfg):
    return {k: v for k, v in cfg.items() if k not in ("reference", "_file")}


def _model(cfg) -> tuple[RegimeModel, DepthFunction]:
    if "regimes" in cfg:
        return model_from_dict(cfg)
    return RegimeModel.poisson(float(cfg["lam"])), DepthFunction(**cfg["depth"])


class Summary:
    def __init__(self, quiet):
        self.quiet = quiet
        self.t0 = time.perf_counter()

    def line(self, text=""):
        if not self.quiet:
            print(text)

    def done(self):
        self.line(f"elapsed {time.perf_counter() - self.t0:.2f} s")


def _out(cfg) -> Path:
    p = Path(cfg["out"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_solve_base(cfg, say):
    model, F = _model(cfg)
    if model.m != 1:
        raise ConfigurationError("solve-base needs a single-regime model; use solve-markov")
    lam = float(model.intensities[0])
    s = solve_base(lam, F, cfg["K"], cfg["T_max"], cfg["dt"])
    path = s.to_csv(_out(cfg) / "base_surface.csv", _meta(cfg))
    say.line(f"solve-base  lam={lam} K={cfg['K']} T_max={cfg['T_max']} dt={cfg['dt']}")
    say.line(f"  v(K, T_max) = {s.v[-1, -1]:.6g}    a(K, T_max) = {s.a[-1, -1]}")
    say.line(f"  wrote {path}")


def cmd_solve_markov(cfg, say):
    model, F = _model(cfg)
    s = solve_markov(model, F, cfg["K"], cfg["T_max"], cfg["dt"], constrained=cfg["constrained"])
    path = s.to_csv(_out(cfg) / "markov_surface.csv", _meta(cfg))
    say.line(f"solve-markov  m={model.m} K={cfg['K']} T_max={cfg['T_max']} dt={cfg['dt']} "
             f"constrained={cfg['constrained']}")
    for i in range(model.m):
        say.line(f"  regime {i}: v(K, T_max) = {s.v[i, -1, -1]:.6g}    a = {s.a[i, -1, -1]}")
    say.line(f"  wrote {path}")


def cmd_solve_partial(cfg, say):
    model, F = _model(cfg)
    s = solve_partial(model, F, cfg["K"], cfg["T_max"], cfg["dt"], cfg["mesh_h"],
                      constrained=cfg["constrained"], half_step=cfg["half_step"])
    out = _out(cfg)
    path = s.to_csv(out / "belief_surface.csv", _meta(cfg))
    sl = s.slice_csv(out / "belief_slice.csv", cfg["K"], cfg["T_max"], _meta(cfg))
    say.line(f"solve-partial  m={model.m} K={cfg['K']} T_max={cfg['T_max']} dt={cfg['dt']} "
             f"h={cfg['mesh_h']} nodes={len(s.mesh)} constrained={cfg['constrained']}")
    for i, node in enumerate(s.mesh.corners()):
        say.line(f"  corner {i}: v(K, T_max) = {s.v[-1, -1, node]:.6g}")
    uni = s.mesh.interpolate(s.v[-1, -1], np.full(model.m, 1 / model.m))
    say.line(f"  uniform belief: v(K, T_max) = {uni:.6g}")
    say.line(f"  wrote {path} and {sl}")


def cmd_continuous(cfg, say):
    model, F = _model(cfg)
    lam = float(model.intensities[0]) if model.m == 1 else float(cfg["lam"])
    dt = min(float(cfg["dt"]), 1e-3)
    sol = solve_continuous(lam, F.gamma, cfg["T_max"], dt)
    path = sol.to_csv(_out(cfg) / "continuous.csv", _meta(cfg))
    say.line(f"continuous  lam={lam} gamma={F.gamma} T_max={cfg['T_max']} dt={dt}")
    say.line(f"  u(T_max) = {sol.u[-1]:.8g}    a(T_max) = {sol.a_frac[-1]:.8g}    "
             f"route gap = {sol.route_gap:.2e}")
    say.line(f"  wrote {path}")


def cmd_bounds(cfg, say):
    model, F = _model(cfg)
    K, T = cfg["K"], cfg["T_max"]
    rows = []
    if model.m == 1:
        # counts are Poisson whatever the size law
        p = poisson_counts(float(model.intensities[0]) * T, K + 1)
        lo = lower_bound(p, F, K)
        up, c = upper_bound(p, F, K)
        rows.append(("exact", lo, None, up, None, c))
    else:
        for i in range(model.m):
            (lo, lo_se), (up, up_se, c) = reproduce.mc_bounds(model, F, K, T, i, cfg["n_paths"], cfg["seed"] + i)
            rows.append((i, lo, lo_se, up, up_se, c))
    path = write_csv(_out(cfg) / "bounds.csv", ["start", "lower", "lower_se", "upper", "upper_se", "c"],
                     [[("" if x is None else x) for x in r] for r in rows], _meta(cfg))
    say.line(f"bounds  K={K} T={T}")
    for r in rows:
        say.line(f"  start {r[0]}: lower {r[1]:.6g}   upper {r[3]:.6g} (c={r[5]})")
    say.line(f"  wrote {path}")


def cmd_simulate(cfg, say, dump_filter=False):
    model, F = _model(cfg)
    K, T = cfg["K"], cfg["T_max"]
    kind = cfg["policy"]
    if kind == "auto":
        kind = "base" if model.m == 1 else "markov"
    if kind == "base":
        if model.m != 1:
            raise ConfigurationError("policy 'base' needs a single-regime model")
        pol = solve_base(float(model.intensities[0]), F, K, T, cfg["dt"])
    elif kind == "markov":
        pol = solve_markov(model, F, K, T, cfg["dt"], constrained=cfg["constrained"])
    else:
        pol = solve_partial(model, F, K, T, cfg["dt"], cfg["mesh_h"], constrained=cfg["constrained"],
                            half_step=cfg["half_step"])
    use_filter = kind == "belief"
    start = cfg["start"]
    out = _out(cfg)
    if dump_filter and use_filter:
        trace = dump_filter_trace(model, pol, K, T, cfg["seed"], start, out / "filter_trace.csv", _meta(cfg))
        say.line(f"  filter trace of one path written to {trace}")
    res = mc_cost(model, pol, K, T, cfg["n_paths"], cfg["seed"], start=start,
                  constrained=cfg["constrained"] if kind != "base" else None, use_filter=use_filter,
                  keep_costs=True)
    js = res.to_json(out / "simulate.json", _meta(cfg))
    cs = res.to_csv(out / "simulate_paths.csv", cfg["seed"], _meta(cfg))
    if kind == "base":
        solved = float(pol.v[K, -1])
    elif kind == "markov":
        solved = float(pol.v[int(start), K, -1]) if np.ndim(start) == 0 else float("nan")
    else:
        pi0 = np.eye(model.m)[start] if np.ndim(start) == 0 else np.asarray(start, dtype=float)
        solved = float(pol.mesh.interpolate(pol.v[K, -1], pi0))
    se = "n/a" if res.se is None else f"{res.se:.4g}"
    say.line(f"simulate  policy={kind} paths={cfg['n_paths']} seed={cfg['seed']} K={K} T={T}")
    say.line(f"  mean cost {res.mean:.6g} (se {se})    solved value {solved:.6g}")
    say.line(f"  wrote {js} and {cs}")


def dump_filter_trace(model, policy, k, T, seed, start, path, meta=None):
    """Belief trajectory of one simulated path: quiet-period drift on the
    solver grid plus a row at every arrival (``event`` = order size, 0 otherwise)."""
    from .filtering import FlowCache, conditional_flow
    from .simulator import execute, simulate_path
    fp = simulate_path(model, T, seed, start)
    pi0 = np.eye(model.m)[start] if np.ndim(start) == 0 else np.asarray(start, dtype=float)
    rep = execute(fp, policy, k, use_filter=True, pi0=pi0)
    cache = FlowCache(model, policy.dt)
    rows, pi, last = [], pi0, 0.0
    events = list(zip(fp.times[: len(rep.beliefs)], fp.sizes, rep.beliefs))
    grid = np.arange(0.0, T + 1e-12, policy.dt)
    for t in grid:
        while events and events[0][0] <= t:
            te, y, post = events.pop(0)
            rows.append((te, *post, int(y)))
            pi, last = post, te
        rows.append((t, *conditional_flow(cache, pi, t - last), 0))
    header = ["t"] + [f"pi{i}" for i in range(model.m)] + ["event"]
    return write_csv(path, header, rows, meta)


def cmd_reproduce_table1(cfg, say):
    doc = dict(cfg.get("_file") or reproduce.bundled_config())
    doc.update({k: cfg[k] for k in ("K", "T_max", "regimes", "depth") if k in cfg})
    cells, timings = reproduce.table1(doc, dt=cfg["dt"], h=cfg["mesh_h"], n_paths=cfg["n_paths"],
                                      seed=cfg["seed"], half_step=cfg["half_step"])
    rows = [(c.group, c.label, c.value, "" if c.reference is None else c.reference,
             "" if c.rel_err is None else c.rel_err, "" if c.se is None else c.se) for c in cells]
    path = write_csv(_out(cfg) / "table1.csv", ["group", "label", "value", "reference", "rel_err", "se"],
                     rows, _meta(cfg))
    say.line(f"reproduce-table1  dt={cfg['dt']} h={cfg['mesh_h']} paths={cfg['n_paths']}")
    for c in cells:
        ref = "" if c.reference is None else f"ref {c.reference:8.2f}  rel {100 * c.rel_err:+6.2f}%"
        say.line(f"  {c.group:24s} {c.label:8s} {c.value:9.3f}  {ref}")
    for k, v in timings.items():
        say.line(f"  time {k}: {v:.1f} s")
    say.line(f"  wrote {path}")


def cmd_reproduce_figures(cfg, say):
    out = _out(cfg)
    meta = _meta(cfg)
    F = DepthFunction(**cfg["depth"])
    s = reproduce.action_surface(1.0, F, 20, 2.0, cfg["dt"])
    p1 = s.to_csv(out / "fig1_actions.csv", meta)
    doc = reproduce.bundled_config()
    model, F3 = model_from_dict(doc)
    times, dv, da = reproduce.constraint_gap(model, F3, 20, 3.0, cfg["dt"])
    head = ["T"] + [f"dv{i}" for i in range(model.m)] + [f"da{i}" for i in range(model.m)]
    p2 = write_csv(out / "fig2_constraint_gap.csv", head,
                   ([t, *g, *(int(x) for x in d)] for t, g, d in zip(times, dv.T, da.T)), meta)
    field = reproduce.belief_field(model, F3, 20, 1.0, cfg["dt"], cfg["mesh_h"])
    p3 = write_csv(out / "fig3_belief_field.csv", ["T"] + [f"pi{i}" for i in range(model.m)] + ["v", "a"],
                   reproduce.belief_field_rows(field, 20), meta)
    say.line("reproduce-figures")
    for p in (p1, p2, p3):
        say.line(f"  wrote {p}")


def diff_surfaces(a_path, b_path) -> dict:
    """Row-by-row difference of two surface CSVs written by this package."""
    ha, ra = read_csv(a_path)
    hb, rb = read_csv(b_path)
    if ha != hb:
        raise GridMismatchError(f"headers differ: {ha} vs {hb}")
    if "v" not in ha:
        raise GridMismatchError("surfaces need a 'v' column")
    keys = [i for i, h in enumerate(ha) if h not in ("v", "a")]
    if len(ra) != len(rb):
        raise GridMismatchError(f"row counts differ: {len(ra)} vs {len(rb)}")
    ka = np.array([[float(r[i]) for i in keys] for r in ra])
    kb = np.array([[float(r[i]) for i in keys] for r in rb])
    if ka.shape != kb.shape or not np.allclose(ka, kb, rtol=0, atol=1e-9):
        raise GridMismatchError("surfaces are defined on different grids")
    iv = ha.index("v")
    d = np.array([float(x[iv]) - float(y[iv]) for x, y in zip(ra, rb)])
    rep = {"rows": len(d), "max_abs": float(np.abs(d).max()) if d.size else 0.0,
           "mean_abs": float(np.abs(d).mean()) if d.size else 0.0,
           "key_columns": [ha[i] for i in keys], "keys": ka, "diff": d}
    if "a" in ha:
        ia = ha.index("a")
        rep["action_mismatches"] = int(sum(x[ia] != y[ia] for x, y in zip(ra, rb)))
    return rep


def cmd_diff_surfaces(cfg, say):
    a, b = cfg["inputs"]
    rep = diff_surfaces(a, b)
    out = _out(cfg)
    path = write_csv(out / "diff.csv", rep["key_columns"] + ["dv"],
                     ([*k, dv] for k, dv in zip(rep["keys"], rep["diff"])), _meta(cfg))
    js = write_json(out / "diff.json", {k: v for k, v in rep.items() if k not in ("keys", "diff")},
                    _meta(cfg))
    say.line(f"diff-surfaces  rows={rep['rows']} max|dv|={rep['max_abs']:.6g} mean|dv|={rep['mean_abs']:.6g}")
    say.line(f"  wrote {path} and {js}")


HANDLERS = {
    "solve-base": cmd_solve_base,
    "solve-markov": cmd_solve_markov,
    "solve-partial": cmd_solve_partial,
    "continuous": cmd_continuous,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "reproduce-table1": cmd_reproduce_table1,
    "reproduce-figures": cmd_reproduce_figures,
    "diff-surfaces": cmd_diff_surfaces,
}


def _fail(code, kind, exc):
    print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        say = Summary(args.quiet)
        if cfg["command"] == "simulate":
            cmd_simulate(cfg, say, dump_filter=args.dump_filter)
        else:
            HANDLERS[cfg["command"]](cfg, say)
        say.done()
    except CommandError as exc:
        return _fail(EXIT_COMMAND, "unknown_command", exc)
    except (NumericalGuardError, DegenerateFlowError, ZeroLikelihoodError) as exc:
        return _fail(EXIT_NUMERIC, "numerical_guard", exc)
    except (ConfigurationError, ModelError, DomainError, GridMismatchError) as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, exc)
    except (OSError, UnicodeDecodeError) as exc:
        return _fail(EXIT_IO, "io", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
