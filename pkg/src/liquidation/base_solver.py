"""Optimal liquidation against a plain Poisson order flow.

The value ``v(k, T)`` (k units left, T epochs to the deadline) solves the
coupled system ``dv(k,T)/dT = -lam * G(k,T)`` with ``v(k, 0) = F(k)``, where
``G`` is the gain from an immediately available counterparty. The system is
integrated with explicit Euler on a uniform time-to-maturity grid.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from ._io import write_csv
from .errors import DomainError
from .model import DepthFunction

log = logging.getLogger(__name__)

COARSE_DT = 0.1


class CoarseGridWarning(UserWarning):
    pass


def make_grid(T_max: float, dt: float) -> int:
    """Number of Euler steps covering ``[0, T_max]`` with step ``dt``."""
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError(f"time step must be positive, got {dt}")
    if not T_max >= dt * (1 - 1e-12):
        raise DomainError(f"T_max={T_max} must be at least one step dt={dt}")
    if dt > COARSE_DT:
        warnings.warn(f"time step {dt} is coarse (> {COARSE_DT}); expect large errors",
                      CoarseGridWarning, stacklevel=3)
    return int(math.ceil(T_max / dt - 1e-9))


def grid_index(T, dt: float, n_steps: int):
    """Floor index of time-to-maturity ``T`` on a grid of spacing ``dt``."""
    j = np.floor(np.asarray(T, dtype=float) / dt + 1e-9).astype(int)
    return np.clip(j, 0, n_steps)


@dataclass(frozen=True, eq=False)
class PolicySurface:
    """Value and action tables ``v[k, j]``, ``a[k, j]`` at ``T_j = j * dt``."""

    v: np.ndarray
    a: np.ndarray
    dt: float
    lam: float
    depth: DepthFunction

    @property
    def K(self) -> int:
        return self.v.shape[0] - 1

    @property
    def n_steps(self) -> int:
        return self.v.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def T_max(self) -> float:
        return self.n_steps * self.dt

    def value(self, k, T):
        return self.v[k, grid_index(T, self.dt, self.n_steps)]

    def action(self, k, T):
        return self.a[k, grid_index(T, self.dt, self.n_steps)]

    def to_csv(self, path, meta=None):
        times = self.times
        rows = ((k, times[j], self.v[k, j], int(self.a[k, j]))
                for k in range(self.K + 1) for j in range(self.n_steps + 1))
        return write_csv(path, ["k", "T", "v", "a"], rows, meta)


def full_argmin(v_col: np.ndarray, F_tab: np.ndarray) -> np.ndarray:
    """Smallest minimizer of ``v[k-a] + F(a)`` over ``a in {1..k}`` for every k.

    Entry 0 (no inventory) is 0.
    """
    K = v_col.size - 1
    k = np.arange(K + 1)[:, None]
    a = np.arange(K + 1)[None, :]
    obj = np.where((a >= 1) & (a <= k), v_col[np.clip(k - a, 0, K)] + F_tab[a], np.inf)
    out = np.argmin(obj, axis=1)
    out[0] = 0
    return out


def gain(v_row, k: int, F: DepthFunction) -> tuple[float, int]:
    """Gain from one counterparty with ``k`` units left.

    Returns ``(G, a)`` where ``G = v[k] - min_{a in 0..k} (v[k-a] + F(a))`` and
    ``a`` is the smallest minimizer over the executable sizes ``{1..k}``
    (0 when ``k == 0``). Since selling nothing costs ``v[k]``, ``G >= 0``.
    """
    v_row = np.asarray(v_row, dtype=float)
    if k == 0:
        return 0.0, 0
    a = np.arange(1, k + 1)
    obj = v_row[k - a] + F(a)
    i = int(np.argmin(obj))
    return float(v_row[k] - min(v_row[k], obj[i])), i + 1


def _euler_step(col, act, lam, dt, F_tab):
    ks = np.arange(col.size)
    best = col[ks - act] + F_tab[act]
    G = np.maximum(col - best, 0.0)
    return col - lam * dt * G


def _restricted_argmin(col, act, F_tab):
    ks = np.arange(col.size)
    lo = np.maximum(act - 1, np.minimum(act, 1))
    c_hi = col[ks - act] + F_tab[act]
    c_lo = col[ks - lo] + F_tab[lo]
    return np.where(c_lo <= c_hi, lo, act)


def solve_base(lam: float, F: DepthFunction, K: int, T_max: float, dt: float = 0.01,
               check_every: int = 10, full_search: bool = False) -> PolicySurface:
    """Integrate the value system for all inventories ``0..K`` jointly.

    Between steps the action search is restricted to ``{a, a-1}`` (the
    optimal action can only step down by one as the horizon grows). Every
    ``check_every`` steps the full argmin is recomputed; on disagreement the
    block since the last verified step is re-integrated with full searches.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise DomainError(f"intensity must be positive, got {lam}")
    if K < 1:
        raise DomainError("K must be at least 1")
    n = make_grid(T_max, dt)
    F_tab = F.table(K)
    v = np.empty((K + 1, n + 1))
    a = np.zeros((K + 1, n + 1), dtype=int)
    v[:, 0] = F_tab
    a[:, 0] = full_argmin(F_tab, F_tab)

    last_ok = 0
    j = 0
    redo = False
    while j < n:
        v[:, j + 1] = _euler_step(v[:, j], a[:, j], lam, dt, F_tab)
        if full_search or redo:
            a[:, j + 1] = full_argmin(v[:, j + 1], F_tab)
        else:
            a[:, j + 1] = _restricted_argmin(v[:, j + 1], a[:, j], F_tab)
        j += 1
        if redo and j - last_ok >= check_every:
            redo = False
            last_ok = j
        elif not full_search and not redo and (j % check_every == 0 or j == n):
            full = full_argmin(v[:, j], F_tab)
            if np.array_equal(full, a[:, j]):
                last_ok = j
            else:
                log.debug("restricted action search drifted at step %d; re-sweeping from %d", j, last_ok)
                j = last_ok
                redo = True
    return PolicySurface(v, a, float(dt), float(lam), F)


def thresholds(surface: PolicySurface, k: int) -> list[float]:
    """Grid times-to-maturity at which ``a(k, .)`` steps down, in increasing order."""
    row = surface.a[k]
    drops = np.flatnonzero(row[1:] < row[:-1]) + 1
    return [float(surface.times[j]) for j in drops]


def closed_form_small_k(lam: float, F: DepthFunction, k: int, T):
    """Exact ``v(k, T)`` for ``k <= 3`` under Poisson(lam) arrivals."""
    T = np.asarray(T, dtype=float)
    e = np.exp(-lam * T)
    F1, F2, F3 = F(1.0), F(2.0), F(3.0)
    if k == 0:
        out = np.zeros_like(T)
    elif k == 1:
        out = np.full_like(T, F1)
    elif k == 2:
        out = 2 * F1 * (1 - e) + F2 * e
    elif k == 3:
        out = e * F3 + lam * T * e * F2 + (3 - 3 * e - 2 * lam * T * e) * F1
    else:
        raise DomainError(f"closed forms exist only for k <= 3, got k={k}")
    return float(out) if out.ndim == 0 else out


def refine_threshold(surface: PolicySurface, k: int, i: int) -> float:
    """Sub-grid location of ``t^(k,i)``, where the optimal sale drops from ``i`` to ``i-1``.

    The indifference ``v(k-i, t) + F(i) = v(k-i+1, t) + F(i-1)`` is solved by
    bisection on the closed forms when ``k - i + 1 <= 3``; otherwise the grid
    indifference function is interpolated linearly.
    """
    if not 2 <= i <= k // 2:
        raise DomainError(f"no threshold t^({k},{i}); need 2 <= i <= k // 2")
    F, lam = surface.depth, surface.lam
    times = surface.times
    grid = surface.v[k - i] + F(i) - surface.v[k - i + 1] - F(i - 1)
    sign = np.flatnonzero((grid[:-1] <= 0) & (grid[1:] > 0))
    if sign.size == 0:
        raise DomainError(f"threshold t^({k},{i}) not reached within T_max={surface.T_max}")
    j = int(sign[0])
    if k - i + 1 <= 3:
        def D(t):
            return (closed_form_small_k(lam, F, k - i, t) + F(i)
                    - closed_form_small_k(lam, F, k - i + 1, t) - F(i - 1))
        lo, hi = max(times[j] - 5 * surface.dt, 0.0), times[j + 1] + 5 * surface.dt
        if D(lo) <= 0 < D(hi):
            return float(optimize.brentq(D, lo, hi, xtol=1e-12))
    g0, g1 = grid[j], grid[j + 1]
    return float(times[j] + (times[j + 1] - times[j]) * (-g0) / (g1 - g0))


# --- bounds -----------------------------------------------------------------

def poisson_counts(mean: float, n_max: int) -> np.ndarray:
    """``P(N = n)`` for ``n < n_max`` and the tail ``P(N >= n_max)`` in the last slot."""
    n = np.arange(n_max)
    p = np.empty(n_max + 1)
    p[:-1] = stats.poisson.pmf(n, mean)
    p[-1] = stats.poisson.sf(n_max - 1, mean)
    return p


def _check_counts(count_dist):
    p = np.asarray(count_dist, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise DomainError("count distribution must be nonnegative and sum to 1")
    return p


def genie_cost(F: DepthFunction, k: int, n):
    """Clairvoyant cost when exactly ``n`` orders arrive before the deadline.

    With ``n < k - 1`` arrivals the best fractional plan is ``n + 1`` equal
    trades of ``k / (n + 1)``; with ``n >= k - 1`` every unit goes alone.
    """
    n = np.asarray(n)
    out = np.where(n < k - 1, (n + 1) * F(k / (n + 1.0)), k * F(1.0))
    return float(out) if out.ndim == 0 else out


def constant_cost(F: DepthFunction, k: int, c: int, n):
    """Cost of selling ``min(c, remaining)`` at each of ``n`` arrivals, rest at the deadline."""
    n = np.asarray(n)
    q = -(-k // c)  # arrivals needed to finish
    done = np.minimum(n, q - 1)
    out = done * F(float(c)) + F(k - done * c * 1.0)
    return float(out) if out.ndim == 0 else out


def lower_bound(count_dist, F: DepthFunction, k: int) -> float:
    """Clairvoyant lower bound on ``v(k, T)`` given the law of ``N(T)``.

    The last slot of ``count_dist`` may hold an aggregated tail; it must sit
    at index ``k - 1`` or later for the bound to be exact.
    """
    p = _check_counts(count_dist)
    if k == 0:
        return 0.0
    return math.fsum(genie_cost(F, k, np.arange(p.size)) * p)


def constant_strategy_cost(count_dist, F: DepthFunction, k: int, c: int) -> float:
    """Expected cost of selling ``min(c, remaining)`` at every arrival."""
    p = _check_counts(count_dist)
    return math.fsum(constant_cost(F, k, c, np.arange(p.size)) * p)


def upper_bound(count_dist, F: DepthFunction, k: int) -> tuple[float, int]:
    """Best constant-size strategy: ``(expected cost, c)`` minimized over ``c in 1..k``."""
    if k == 0:
        return 0.0, 0
    costs = [constant_strategy_cost(count_dist, F, k, c) for c in range(1, k + 1)]
    c = int(np.argmin(costs))
    return float(costs[c]), c + 1
