"""Liquidation when the liquidity regime is hidden and must be filtered.

The value ``v(k, T, pi)`` depends on the current belief ``pi`` over regimes.
It is computed by backward induction in time-to-maturity on a uniform
barycentric mesh of the belief simplex. One step of length ``dt`` conditions
on whether an order arrives:

    v(k, T+dt, pi) = P(no order) v(k, T, x(dt, pi))
                     + dt * sum_i m_i(dt/2, pi) lam_i S_i v(k, T + dt/2, x(dt/2, pi))

with ``x`` the no-arrival belief flow and ``S_i`` the best-action operator
(expectation over the order size ``y ~ nu_i`` of the best sale given the
posterior belief). Off-mesh beliefs are read by piecewise-linear
interpolation over a Kuhn triangulation of the simplex.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from .base_solver import grid_index, make_grid
from .errors import DomainError, NumericalGuardError
from .filtering import expm, jump_update
from .model import DepthFunction, RegimeModel, check_belief

MAX_REGIMES = 4
MAX_BYTES = 2 * 1024 ** 3


class BeliefMesh:
    """All beliefs with coordinates in ``{0, h, 2h, ..., 1}`` on the ``m``-simplex."""

    def __init__(self, m: int, h: float):
        if m < 1:
            raise DomainError("mesh needs at least one regime")
        if m > MAX_REGIMES:
            raise NumericalGuardError(f"belief mesh limited to m <= {MAX_REGIMES} regimes, got {m}")
        if not 0 < h <= 1:
            raise DomainError(f"mesh spacing must lie in (0, 1], got {h}")
        N = round(1 / h)
        if abs(N * h - 1) > 1e-9:
            raise DomainError(f"mesh spacing {h} is not the reciprocal of an integer")
        self.m = m
        self.N = N
        self.h = 1.0 / N
        comps = [c for c in itertools.product(range(N + 1), repeat=m) if sum(c) == N]
        self.counts = np.array(comps, dtype=int)
        self.nodes = self.counts / N
        self.nodes.setflags(write=False)
        # node index keyed by cumulative coordinates c_i = N (pi_i + ... + pi_m), i >= 2
        self._lookup = np.full((N + 1,) * (m - 1), -1, dtype=np.int64) if m > 1 else None
        if m > 1:
            cum = np.cumsum(self.counts[:, ::-1], axis=1)[:, ::-1][:, 1:]
            self._lookup[tuple(cum.T)] = np.arange(len(comps))

    def __len__(self):
        return self.nodes.shape[0]

    def locate(self, P) -> tuple[np.ndarray, np.ndarray]:
        """Containing-cell vertices and barycentric weights for beliefs ``P``.

        Both outputs have shape ``(*P.shape[:-1], m)``; weights are
        nonnegative and sum to 1.
        """
        P = np.asarray(P, dtype=float)
        lead = P.shape[:-1]
        P = P.reshape(-1, self.m)
        n, m, N = P.shape[0], self.m, self.N
        if m == 1:
            return np.zeros(lead + (1,), dtype=np.int64), np.ones(lead + (1,))
        P = np.clip(P, 0.0, None)
        P = P / P.sum(axis=1, keepdims=True)
        c = np.clip(N * np.cumsum(P[:, ::-1], axis=1)[:, ::-1][:, 1:], 0.0, N)
        b = np.minimum(np.floor(c), N - 1).astype(np.int64)
        f = c - b
        order = np.argsort(-f, axis=1, kind="stable")
        fs = np.take_along_axis(f, order, axis=1)
        w = np.concatenate([1 - fs[:, :1], fs[:, :-1] - fs[:, 1:], fs[:, -1:]], axis=1)
        w = np.clip(w, 0.0, None)
        verts = np.empty((n, m), dtype=np.int64)
        cur = b.copy()
        rows = np.arange(n)
        for s in range(m):
            if s > 0:
                cur[rows, order[:, s - 1]] += 1
            verts[:, s] = self._lookup[tuple(cur.T)]
        if np.any(verts < 0):
            raise NumericalGuardError("belief fell outside the mesh")
        return verts.reshape(lead + (m,)), (w / w.sum(axis=1, keepdims=True)).reshape(lead + (m,))

    def interpolate(self, values, P):
        """Linear interpolation of nodal ``values[..., node]`` at beliefs ``P``."""
        verts, w = self.locate(P)
        values = np.asarray(values)
        return (values[..., verts] * w).sum(axis=-1)

    def nearest(self, P) -> np.ndarray:
        """Index of the vertex carrying the largest barycentric weight."""
        verts, w = self.locate(P)
        return np.take_along_axis(verts, np.argmax(w, axis=-1)[..., None], axis=-1)[..., 0]

    def index_of(self, pi) -> int:
        """Index of the node at ``pi`` (which must be a mesh point)."""
        d = np.abs(self.nodes - np.asarray(pi, dtype=float)).max(axis=1)
        i = int(np.argmin(d))
        if d[i] > 1e-9:
            raise DomainError(f"{pi} is not a mesh node")
        return i

    def corners(self) -> list[int]:
        return [self.index_of(np.eye(self.m)[i]) for i in range(self.m)]


@dataclass(frozen=True, eq=False)
class BeliefPolicySurface:
    """Tables ``v[k, j, node]`` and ``a[k, j, node]`` on a belief mesh.

    ``a`` is the order size to post when an arrival leaves the belief at
    ``node``: the smallest minimizer of ``F(a) + v(k-a, T_j, node)``.
    Constrained execution fills ``min(a, Y)``.
    """

    v: np.ndarray
    a: np.ndarray
    dt: float
    mesh: BeliefMesh
    model: RegimeModel
    depth: DepthFunction
    constrained: bool

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

    def value(self, k, T, pi):
        j = grid_index(T, self.dt, self.n_steps)
        return self.mesh.interpolate(self.v[k, j], pi)

    def action(self, k, T, pi):
        j = grid_index(T, self.dt, self.n_steps)
        return self.a[k, j, self.mesh.nearest(pi)]

    def to_csv(self, path, meta=None):
        times, X = self.times, self.mesh.nodes
        cols = [f"pi{i}" for i in range(self.mesh.m)]
        rows = ((k, times[j], *X[n], self.v[k, j, n], int(self.a[k, j, n]))
                for k in range(self.K + 1) for j in range(self.n_steps + 1) for n in range(len(self.mesh)))
        return write_csv(path, ["k", "T", *cols, "v", "a"], rows, meta)

    def slice_csv(self, path, k: int, T: float, meta=None):
        """Belief field of ``v`` and ``a`` at fixed ``(k, T)``."""
        j = int(grid_index(T, self.dt, self.n_steps))
        cols = [f"pi{i}" for i in range(self.mesh.m)]
        rows = ((*self.mesh.nodes[n], self.v[k, j, n], int(self.a[k, j, n])) for n in range(len(self.mesh)))
        return write_csv(path, [*cols, "v", "a"], rows, meta)


def interpolate(surface: BeliefPolicySurface, k: int, j: int, pi) -> tuple[float, int]:
    """``(v, a)`` at belief ``pi``: linear in ``v``, nearest node for ``a``."""
    pi = check_belief(pi, surface.mesh.m)
    return (float(surface.mesh.interpolate(surface.v[k, j], pi)),
            int(surface.a[k, j, surface.mesh.nearest(pi)]))


def best_action(values, k: int, F: DepthFunction, y: int, constrained: bool) -> tuple[float, int]:
    """Cheapest sale after an arrival of size ``y`` with ``k`` units left.

    ``values[k']`` is the continuation value with ``k'`` units at the
    post-arrival belief. Sizes range over ``1..min(k, y)`` when constrained
    and ``1..k`` otherwise; ties go to the smaller size.
    """
    top = min(k, y) if constrained else k
    a = np.arange(1, top + 1)
    obj = F(a) + np.asarray(values, dtype=float)[k - a]
    i = int(np.argmin(obj))
    return float(obj[i]), i + 1


def _step_geometry(mesh: BeliefMesh, model: RegimeModel, dt: float):
    """Beliefs, survival weights and arrival weights used by every step."""
    X = mesh.nodes
    A = model.flow_matrix()
    md = X @ expm(dt * A)
    mh = X @ expm(0.5 * dt * A)
    survive = md.sum(axis=1)
    xd = md / survive[:, None]
    xh = mh / mh.sum(axis=1, keepdims=True)
    nu = model.size_matrix()                                    # (m, Y)
    lam = model.intensities
    wy = (mh * lam) @ nu                                        # (nodes, Y)
    keep = np.flatnonzero(wy.max(axis=0) > 0)
    ys = keep + 1
    wy = wy[:, keep]
    like = (lam[:, None] * nu[:, keep]).T                       # (Y, m)
    post = xh[:, None, :] * like[None, :, :]
    tot = post.sum(axis=2, keepdims=True)
    post = np.where(tot > 0, post / np.where(tot > 0, tot, 1.0), xh[:, None, :])
    return survive, xd, ys, wy, post


def first_jump_step(v_prev, v_next, k: int, node: int, mesh: BeliefMesh, model: RegimeModel,
                    F: DepthFunction, dt: float, constrained: bool,
                    half_step: str = "averaged") -> tuple[float, int]:
    """One backward-induction step at a single ``(k, node)`` cell.

    Reference version of the vectorized update in :func:`solve_partial`.
    ``v_prev`` holds every row at the previous time step (shape ``(K+1, nodes)``);
    ``v_next`` must hold rows ``0..k-1`` of the new time step.
    """
    pi = mesh.nodes[node]
    A = model.flow_matrix()
    md = pi @ expm(dt * A)
    mh = pi @ expm(0.5 * dt * A)
    xd, xh = md / md.sum(), mh / mh.sum()
    stay = md.sum() * float(mesh.interpolate(v_prev[k], xd))
    lam, nu = model.intensities, model.size_matrix()
    jump = 0.0
    for y in range(1, nu.shape[1] + 1):
        w = float(np.sum(mh * lam * nu[:, y - 1]))
        if w <= 0:
            continue
        post = jump_update(model, xh, y)
        prev = mesh.interpolate(v_prev[: k + 1], post)
        c_prev, _ = best_action(prev, k, F, y, constrained)
        if half_step == "averaged":
            nxt = mesh.interpolate(v_next[: k + 1], post)
            c_next, _ = best_action(nxt, k, F, y, constrained)
            jump += w * 0.5 * (c_prev + c_next)
        else:
            jump += w * c_prev
    value = stay + dt * jump
    row = np.array([*v_next[:k, node], 0.0])
    _, act = best_action(row, k, F, k, False)
    return value, act


def _node_actions(col, F_tab):
    K = col.shape[0] - 1
    k = np.arange(K + 1)[:, None]
    a = np.arange(K + 1)[None, :]
    valid = ((a >= 1) & (a <= k))[..., None]
    obj = np.where(valid, col[np.clip(k - a, 0, K)] + F_tab[a][..., None], np.inf)
    act = np.argmin(obj, axis=1)
    act[0] = 0
    return act


def solve_partial(model: RegimeModel, F: DepthFunction, K: int, T_max: float, dt: float = 0.01,
                  h: float = 1 / 20, constrained: bool = False,
                  half_step: str = "averaged") -> BeliefPolicySurface:
    """Backward induction for the hidden-regime problem on a belief mesh.

    ``half_step`` chooses how the continuation value at ``T + dt/2`` inside
    the arrival term is read: ``"averaged"`` takes the mean of the old and
    new time levels (second order in ``dt``), ``"lagged"`` uses the old level
    only (first order). The new level is available without iteration because
    a sale always lowers inventory, so row ``k`` only needs rows below it.
    """
    model.check()
    if half_step not in ("averaged", "lagged"):
        raise DomainError(f"unknown half_step rule {half_step!r}")
    if K < 1:
        raise DomainError("K must be at least 1")
    n = make_grid(T_max, dt)
    mesh = BeliefMesh(model.m, h)
    nn = len(mesh)
    survive, xd, ys, wy, post = _step_geometry(mesh, model, dt)
    Y = ys.size
    need = (K + 1) * (n + 1) * nn * 12 + 3 * (K + 1) * nn * Y * model.m * 8
    if need > MAX_BYTES:
        raise NumericalGuardError(f"belief surface needs ~{need / 1e9:.1f} GB; coarsen h or dt")

    pv, pw = mesh.locate(post.reshape(-1, model.m))
    dv, dw = mesh.locate(xd)
    F_tab = F.table(K)
    allowed = [None] + [(ys >= a) for a in range(1, K + 1)]

    def interp_jump(rows):
        return (rows[..., pv] * pw).sum(axis=-1).reshape(rows.shape[:-1] + (nn, Y))

    def jump_values(Vint):
        best = np.full(Vint.shape, np.inf)
        best[0] = 0.0
        for a in range(1, K + 1):
            cand = F_tab[a] + Vint[: K + 1 - a]
            if constrained:
                cand = np.where(allowed[a], cand, np.inf)
            np.minimum(best[a:], cand, out=best[a:])
        return (best * wy).sum(axis=-1)

    def jump_row(Vn, k):
        best = np.full((nn, Y), np.inf)
        for a in range(1, k + 1):
            cand = F_tab[a] + Vn[k - a]
            if constrained:
                cand = np.where(allowed[a], cand, np.inf)
            np.minimum(best, cand, out=best)
        return (best * wy).sum(axis=-1)

    v = np.empty((K + 1, n + 1, nn))
    a = np.zeros((K + 1, n + 1, nn), dtype=np.int32)
    v[:, 0, :] = F_tab[:, None]
    a[:, 0, :] = _node_actions(v[:, 0, :], F_tab)
    for j in range(n):
        cur = v[:, j, :]
        S_old = jump_values(interp_jump(cur))
        stay = survive * (cur[:, dv] * dw).sum(axis=-1)
        new = v[:, j + 1, :]
        new[0] = 0.0
        if half_step == "lagged":
            new[1:] = stay[1:] + dt * S_old[1:]
        else:
            Vn = np.empty((K + 1, nn, Y))
            Vn[0] = 0.0
            for k in range(1, K + 1):
                new[k] = stay[k] + dt * 0.5 * (S_old[k] + jump_row(Vn, k))
                Vn[k] = interp_jump(new[k])
        if not np.all(np.isfinite(new)):
            raise NumericalGuardError(f"non-finite values at step {j + 1}")
        a[:, j + 1, :] = _node_actions(new, F_tab)
    return BeliefPolicySurface(v, a, float(dt), mesh, model, F, bool(constrained))


def node_count(m: int, h: float) -> int:
    N = round(1 / h)
    return math.comb(N + m - 1, m - 1)
