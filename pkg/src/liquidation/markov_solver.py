"""Liquidation under a fully observed regime-switching order flow.

For each regime ``i`` the value ``v(k, T; i)`` solves

    dv(k,T;i)/dT = -lam_i g_i(k,T) + sum_{j != i} q_ij (v(k,T;j) - v(k,T;i))

where ``g_i`` is the unconstrained gain, or with ``constrained=True`` the
expected gain when an order of size ``a`` is filled only up to the size ``Y``
of the matching counterparty order. With a single regime this is the base
model (and, constrained, the compound Poisson model).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from .base_solver import PolicySurface, grid_index, make_grid
from .model import DepthFunction, RegimeModel, SizeDistribution


@dataclass(frozen=True, eq=False)
class RegimePolicySurface:
    """Per-regime tables ``v[i, k, j]`` and ``a[i, k, j]``; regimes are 0-based."""

    v: np.ndarray
    a: np.ndarray
    dt: float
    model: RegimeModel
    depth: DepthFunction
    constrained: bool

    @property
    def m(self) -> int:
        return self.v.shape[0]

    @property
    def K(self) -> int:
        return self.v.shape[1] - 1

    @property
    def n_steps(self) -> int:
        return self.v.shape[2] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def T_max(self) -> float:
        return self.n_steps * self.dt

    def value(self, k, T, i):
        return self.v[i, k, grid_index(T, self.dt, self.n_steps)]

    def action(self, k, T, i):
        return self.a[i, k, grid_index(T, self.dt, self.n_steps)]

    def regime(self, i: int) -> PolicySurface:
        return PolicySurface(self.v[i], self.a[i], self.dt, float(self.model.intensities[i]), self.depth)

    def to_csv(self, path, meta=None):
        times = self.times
        rows = ((k, times[j], i, self.v[i, k, j], int(self.a[i, k, j]))
                for k in range(self.K + 1) for j in range(self.n_steps + 1) for i in range(self.m))
        return write_csv(path, ["k", "T", "regime", "v", "a"], rows, meta)


def constrained_gain(v_row, k: int, F: DepthFunction, nu: SizeDistribution) -> tuple[float, int]:
    """Expected improvement from one arrival when fills are capped by the order size.

    The agent posts ``a~``, the smallest minimizer of ``v[k-a] + F(a)`` over
    ``1..k``, and sells ``min(a~, Y)``.
    """
    v_row = np.asarray(v_row, dtype=float)
    if k == 0:
        return 0.0, 0
    a = np.arange(1, k + 1)
    obj = v_row[k - a] + F(a)
    at = int(np.argmin(obj)) + 1
    y = np.arange(1, at)
    part = float(np.sum(nu.prob(y) * (v_row[k] - v_row[k - y] - F(y)))) if at > 1 else 0.0
    return part + nu.tail(at) * float(v_row[k] - obj[at - 1]), at


def _actions(col, F_tab):
    """Smallest minimizer of ``v[i, k-a] + F(a)`` over ``1..k``; shape ``(m, K+1)``."""
    K = col.shape[1] - 1
    k = np.arange(K + 1)[:, None]
    a = np.arange(K + 1)[None, :]
    valid = (a >= 1) & (a <= k)
    obj = np.where(valid, col[:, np.clip(k - a, 0, K)] + F_tab[a], np.inf)
    act = np.argmin(obj, axis=2)
    act[:, 0] = 0
    best = np.take_along_axis(obj, act[..., None], axis=2)[..., 0]
    best[:, 0] = 0.0
    return act, best


def solve_markov(model: RegimeModel, F: DepthFunction, K: int, T_max: float, dt: float = 0.01,
                 constrained: bool = False) -> RegimePolicySurface:
    """Explicit-Euler solve of the coupled per-regime value system."""
    model.check()
    if K < 1:
        raise ValueError("K must be at least 1")
    n = make_grid(T_max, dt)
    m = model.m
    Q, lam = model.generator, model.intensities
    F_tab = F.table(K)
    v = np.empty((m, K + 1, n + 1))
    a = np.zeros((m, K + 1, n + 1), dtype=int)
    v[:, :, 0] = F_tab

    ks = np.arange(K + 1)
    ys = np.arange(1, K + 1)
    if constrained:
        nu = model.size_matrix(max(K, model.y_max))[:, :K]          # nu[i, y-1]
        tail = np.concatenate([np.ones((m, 1)),
                               1.0 - np.cumsum(nu, axis=1)], axis=1)  # tail[i, a-1] = P(Y >= a)
        tail = np.clip(tail, 0.0, 1.0)
        below = ys[None, :] <= ks[:, None]                          # y <= k

    for j in range(n + 1):
        col = v[:, :, j]
        act, best = _actions(col, F_tab)
        a[:, :, j] = act
        if j == n:
            break
        if constrained:
            # D[i, k, y-1] = v(k) - v(k-y) - F(y) for y <= k
            D = np.where(below, col[:, :, None] - col[:, np.clip(ks[:, None] - ys, 0, K)] - F_tab[ys], 0.0)
            W = np.cumsum(nu[:, None, :] * D, axis=2)
            W = np.concatenate([np.zeros((m, K + 1, 1)), W], axis=2)   # W[..., a-1] = sum_{y<a}
            idx = np.maximum(act, 1)
            part = np.take_along_axis(W, (idx - 1)[..., None], axis=2)[..., 0]
            fill = np.take_along_axis(tail, idx - 1, axis=1)
            g = part + fill * (col - best)
            g[:, 0] = 0.0
        else:
            g = np.maximum(col - best, 0.0)
        v[:, :, j + 1] = col + dt * (-lam[:, None] * g + Q @ col)
    return RegimePolicySurface(v, a, float(dt), model, F, bool(constrained))


def regime_gap(surface: RegimePolicySurface, k: int, T: float) -> np.ndarray:
    """Spread ``v(k,T;i) - min_j v(k,T;j)`` across regimes."""
    vals = surface.value(k, T, slice(None))
    return vals - vals.min()
