"""Regenerate the three-regime study table and the figure fields as data."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .base_solver import genie_cost, constant_cost, solve_base
from .markov_solver import solve_markov
from .model import DepthFunction, RegimeModel, model_from_dict
from .partial_solver import solve_partial
from .simulator import count_distribution

LABELS = ("High", "Med", "Low")


def bundled_config() -> dict:
    """The packaged three-regime configuration, including reference values."""
    text = resources.files("liquidation").joinpath("data/table1.json").read_text()
    return json.loads(text)


@dataclass
class Cell:
    group: str
    label: str
    value: float
    reference: float | None
    se: float | None = None

    @property
    def rel_err(self) -> float | None:
        if self.reference is None:
            return None
        return (self.value - self.reference) / self.reference


def mc_bounds(model: RegimeModel, F: DepthFunction, k: int, T: float, start, n_paths: int, seed: int):
    """Genie lower and best-constant upper bounds from simulated arrival counts.

    Returns ``((lower, se), (upper, se, c))``.
    """
    cd = count_distribution(model, T, start, n_paths, seed)
    n = np.arange(cd.pmf.size)
    lo = cd.functional(genie_cost(F, k, n))
    best = None
    for c in range(1, k + 1):
        val, se = cd.functional(constant_cost(F, k, c, n))
        if best is None or val < best[0]:
            best = (val, se, c)
    return lo, best


def table1(doc: dict | None = None, dt: float | None = None, h: float | None = None,
           n_paths: int | None = None, seed: int | None = None, half_step: str = "averaged",
           parts=("full", "partial", "bounds")) -> tuple[list[Cell], dict]:
    """All cells of the three-regime study; returns ``(cells, timings)``."""
    doc = doc or bundled_config()
    model, F = model_from_dict(doc)
    ref = doc.get("reference", {})
    K = int(doc.get("K", 20))
    T = float(doc.get("T_max", 1.0))
    dt = float(dt if dt is not None else doc.get("dt", 0.01))
    h = float(h if h is not None else doc.get("mesh_h", 0.05))
    n_paths = int(n_paths if n_paths is not None else doc.get("n_paths", 10 ** 6))
    seed = int(seed if seed is not None else doc.get("seed", 0))
    labels = LABELS if model.m == 3 else tuple(f"regime {i}" for i in range(model.m))

    def refs(key, i=None):
        r = ref.get(key)
        if r is None:
            return None
        return float(r if i is None else r[i])

    cells, timings = [], {}
    if "full" in parts:
        for con, key in ((False, "full_unconstrained"), (True, "full_constrained")):
            t0 = time.perf_counter()
            s = solve_markov(model, F, K, T, dt, constrained=con)
            timings[key] = time.perf_counter() - t0
            cells += [Cell(key, labels[i], float(s.v[i, K, -1]), refs(key, i)) for i in range(model.m)]
    if "partial" in parts:
        for con, key in ((False, "partial_unconstrained"), (True, "partial_constrained")):
            t0 = time.perf_counter()
            s = solve_partial(model, F, K, T, dt, h, constrained=con, half_step=half_step)
            timings[key] = time.perf_counter() - t0
            for i, node in enumerate(s.mesh.corners()):
                cells.append(Cell(key, labels[i], float(s.v[K, -1, node]), refs(key, i)))
            uni = float(s.mesh.interpolate(s.v[K, -1], np.full(model.m, 1 / model.m)))
            cells.append(Cell(key, "uniform", uni, refs(key + "_uniform")))
    if "bounds" in parts:
        t0 = time.perf_counter()
        for i in range(model.m):
            (lo, lo_se), (up, up_se, _) = mc_bounds(model, F, K, T, i, n_paths, seed + i)
            cells.append(Cell("lower_bound", labels[i], lo, refs("lower_bound", i), lo_se))
            cells.append(Cell("upper_bound", labels[i], up, refs("upper_bound", i), up_se))
        timings["bounds"] = time.perf_counter() - t0
    return cells, timings


# --- figure fields ------------------------------------------------------------

def action_surface(lam: float = 1.0, F: DepthFunction | None = None, K: int = 20, T_max: float = 2.0,
                   dt: float = 0.01):
    """Optimal sale amounts ``a(k, T)`` for plain Poisson flow."""
    return solve_base(lam, F or DepthFunction(0.5, 2.0), K, T_max, dt)


def constraint_gap(model: RegimeModel, F: DepthFunction, k: int = 20, T_max: float = 3.0,
                   dt: float = 0.01) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(times, dv[i, j], da[i, j])``: constrained minus unconstrained value and action at ``k``."""
    con = solve_markov(model, F, k, T_max, dt, constrained=True)
    unc = solve_markov(model, F, k, T_max, dt, constrained=False)
    return con.times, con.v[:, k] - unc.v[:, k], con.a[:, k].astype(int) - unc.a[:, k]


def belief_field(model: RegimeModel, F: DepthFunction, k: int = 20, T: float = 1.0, dt: float = 0.01,
                 h: float = 0.05, constrained: bool = False):
    """Belief surface whose ``(k, T)`` slice shows value and action over the simplex."""
    return solve_partial(model, F, k, T, dt, h, constrained=constrained)


FIELD_HORIZONS = (0.25, 0.45, 1.0)


def belief_field_rows(surface, k: int = 20, horizons=FIELD_HORIZONS):
    """Rows ``(T, pi..., v, a)`` of the belief field at each horizon."""
    for T in horizons:
        j = int(round(T / surface.dt))
        for n, pi in enumerate(surface.mesh.nodes):
            yield (float(T), *pi, float(surface.v[k, j, n]), int(surface.a[k, j, n]))
