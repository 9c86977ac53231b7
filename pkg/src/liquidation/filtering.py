"""Bayesian filtering of the hidden liquidity regime from observed order flow.

Between arrivals the unnormalized regime weights evolve as
``m(u, pi) = pi @ expm(u (Q - Lambda))``; their total is the probability of
seeing no order for ``u`` epochs. At an arrival of size ``y`` each weight is
multiplied by the likelihood ``lam_i * nu_i(y)`` and renormalized.

The module carries its own matrix exponential (scaling and squaring with a
degree-13 Padé approximant) which accepts stacks of matrices, so the
simulator can advance many paths with different elapsed times at once.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import DegenerateFlowError, ZeroLikelihoodError
from .model import RegimeModel

log = logging.getLogger(__name__)

RENORM_DRIFT = 1e-8

_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
    40840800.0, 960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def expm(A) -> np.ndarray:
    """Matrix exponential of ``A`` or of every matrix in a ``(..., n, n)`` stack."""
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError("expm needs square matrices in the last two axes")
    n = A.shape[-1]
    norm = np.abs(A).sum(axis=-2).max(axis=-1)                 # 1-norm per matrix
    with np.errstate(divide="ignore"):
        s = np.where(norm > _THETA13, np.ceil(np.log2(norm / _THETA13)), 0).astype(int)
    X = A / (2.0 ** s)[..., None, None]

    b = _PADE13
    I = np.broadcast_to(np.eye(n), X.shape)
    X2 = X @ X
    X4 = X2 @ X2
    X6 = X4 @ X2
    U = X @ (X6 @ (b[13] * X6 + b[11] * X4 + b[9] * X2)
             + b[7] * X6 + b[5] * X4 + b[3] * X2 + b[1] * I)
    V = (X6 @ (b[12] * X6 + b[10] * X4 + b[8] * X2)
         + b[6] * X6 + b[4] * X4 + b[2] * X2 + b[0] * I)
    R = np.linalg.solve(V - U, V + U)

    s_max = int(s.max()) if s.size else 0
    for r in range(s_max):
        sq = R @ R
        R = np.where((s > r)[..., None, None], sq, R)
    return R


class FlowCache:
    """No-arrival flow ``expm(u (Q - Lambda))`` cached on the grid ``u = j * dt``.

    Off-grid times fall back to a fresh exponential.
    """

    def __init__(self, model: RegimeModel, dt: float, n_steps: int = 0):
        self.model = model
        self.dt = float(dt)
        self.A = model.flow_matrix()
        self._step = expm(self.dt * self.A)
        self._grid = [np.eye(model.m)]
        self._extend(n_steps)

    def _extend(self, n):
        while len(self._grid) <= n:
            self._grid.append(self._grid[-1] @ self._step)

    def __call__(self, u: float) -> np.ndarray:
        j = u / self.dt
        jr = round(j)
        if abs(j - jr) < 1e-9 and jr >= 0:
            self._extend(jr)
            return self._grid[jr]
        return expm(u * self.A)


def renormalize(w: np.ndarray) -> np.ndarray:
    total = w.sum(axis=-1, keepdims=True)
    if np.any(~(total > 0)) or np.any(~np.isfinite(total)):
        raise DegenerateFlowError("belief normalizer vanished")
    return w / total


def unnormalized_flow(cache: FlowCache, pi, u: float) -> np.ndarray:
    """``m(u, pi)``; entries sum to the probability of no arrival during ``u``."""
    if u < 0:
        raise ValueError("elapsed time must be nonnegative")
    return np.asarray(pi, dtype=float) @ cache(u)


def conditional_flow(cache: FlowCache, pi, u: float) -> np.ndarray:
    """Belief after ``u`` epochs without an arrival."""
    pi = np.asarray(pi, dtype=float)
    drift = np.abs(pi.sum(axis=-1) - 1).max()
    if drift > RENORM_DRIFT:
        log.warning("input belief off the simplex by %.3g; renormalizing", drift)
    return renormalize(unnormalized_flow(cache, pi, u))


def jump_update(model: RegimeModel, pi, y) -> np.ndarray:
    """Posterior after observing an order of size ``y`` (batched over leading axes)."""
    pi = np.asarray(pi, dtype=float)
    y = np.asarray(y)
    if np.any(y < 1):
        raise ValueError("order sizes are at least 1")
    nu = model.size_matrix()                                   # (m, y_max)
    yi = np.clip(y.astype(int), 1, nu.shape[1])
    like = nu[:, yi - 1]                                        # (m, ...)
    like = np.where(y <= nu.shape[1], like, 0.0)
    like = np.moveaxis(like, 0, -1) * model.intensities
    w = like * pi
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ZeroLikelihoodError(f"order size {y} has zero likelihood under the current belief")
    return w / total


def arrival_density(cache: FlowCache, pi, u: float, i: int | None = None):
    """Density of the first arrival at ``u`` with the chain in regime ``i``."""
    dens = unnormalized_flow(cache, pi, u) * cache.model.intensities
    return dens if i is None else dens[..., i]


def propagate(model: RegimeModel, pi, u) -> tuple[np.ndarray, np.ndarray]:
    """Advance many beliefs by path-specific quiet periods ``u``.

    Returns ``(beliefs, survival)`` where ``survival`` is the probability of
    no arrival over each period under the respective prior.
    """
    pi = np.asarray(pi, dtype=float)
    u = np.asarray(u, dtype=float)
    E = expm(u[..., None, None] * model.flow_matrix())
    w = np.einsum("...i,...ij->...j", pi, E)
    total = w.sum(axis=-1)
    return renormalize(w), total
