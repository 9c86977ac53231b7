"""Continuous-quantity limit for power depth functions ``F(x) = c x**gamma``.

When inventory is infinitely divisible the value scales as ``F(x) u(T)``,
where ``u`` solves the scalar ODE

    u' = lam u ((1 + u**p)**(-(gamma-1)) - 1),   p = 1/(gamma-1),   u(0) = 1,

and the optimal sale is the fraction ``a = u**p / (1 + u**p)`` of holdings.
The fraction also satisfies its own ODE, integrated independently as a
cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from .errors import DomainError, NumericalGuardError
from .model import DepthFunction

ROUTE_TOL = 1e-8


def _rk4(f, y0: float, dt: float, n: int) -> np.ndarray:
    y = np.empty(n + 1)
    y[0] = y0
    for j in range(n):
        x = y[j]
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        y[j + 1] = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def u_rhs(u: float, lam: float, gamma: float) -> float:
    p = 1.0 / (gamma - 1)
    return lam * u * ((1 + u ** p) ** (-(gamma - 1)) - 1)


def a_rhs(a: float, lam: float, gamma: float) -> float:
    return lam / (gamma - 1) * a * (1 - a) * ((1 - a) ** (gamma - 1) - 1)


def fraction_from_u(u, gamma: float):
    w = np.asarray(u, dtype=float) ** (1.0 / (gamma - 1))
    return w / (1 + w)


@dataclass(frozen=True, eq=False)
class ContinuousSolution:
    gamma: float
    lam: float
    times: np.ndarray
    u: np.ndarray
    a_frac: np.ndarray
    route_gap: float  # sup-norm gap between the algebraic and ODE routes for a

    @property
    def T_max(self) -> float:
        return float(self.times[-1])

    def u_at(self, T):
        return np.interp(T, self.times, self.u)

    def a_at(self, T):
        return np.interp(T, self.times, self.a_frac)

    def to_csv(self, path, meta=None):
        rows = zip(self.times, self.u, self.a_frac)
        return write_csv(path, ["T", "u", "a"], rows, meta)


def solve_continuous(lam: float, gamma: float, T_max: float, dt: float = 1e-3) -> ContinuousSolution:
    """RK4 solve of the unit-value ODE on ``[0, T_max]``."""
    if not gamma > 1:
        raise DomainError(f"continuous limit needs gamma > 1, got {gamma}")
    if not (lam > 0 and math.isfinite(lam)):
        raise DomainError(f"intensity must be positive, got {lam}")
    if not (dt > 0 and T_max >= 0):
        raise DomainError("need dt > 0 and T_max >= 0")
    n = int(math.ceil(T_max / dt - 1e-9)) if T_max > 0 else 0
    times = np.arange(n + 1) * dt
    u = _rk4(lambda x: u_rhs(x, lam, gamma), 1.0, dt, n)
    a_alg = fraction_from_u(u, gamma)
    a_ode = _rk4(lambda x: a_rhs(x, lam, gamma), 0.5, dt, n)
    gap = float(np.max(np.abs(a_alg - a_ode)))
    if gap > ROUTE_TOL:
        raise NumericalGuardError(f"sale-fraction routes disagree by {gap:.3g}; reduce dt")
    return ContinuousSolution(float(gamma), float(lam), times, u, a_alg, gap)


def _check_power(F: DepthFunction, solution: ContinuousSolution):
    if abs(F.gamma - solution.gamma) > 1e-12:
        raise DomainError(f"depth exponent {F.gamma} does not match the solution's {solution.gamma}")


def scaled_value(F: DepthFunction, solution: ContinuousSolution, x: float, T: float) -> float:
    """``F(x) u(T)``: cost of liquidating ``x`` divisible units over ``T``."""
    _check_power(F, solution)
    if x < 0:
        raise DomainError("inventory must be nonnegative")
    return float(F(float(x)) * solution.u_at(T))


def approximate_discrete(solution: ContinuousSolution, F: DepthFunction, k: int, T: float) -> tuple[float, int]:
    """Continuous-limit estimates of ``v(k, T)`` and ``a(k, T)``."""
    _check_power(F, solution)
    if k < 1:
        raise DomainError("k must be at least 1")
    a = int(np.floor(k * solution.a_at(T) + 0.5))
    a = min(max(a, 1), max(k // 2, 1))
    return float(F(float(k)) * solution.u_at(T)), a


def implicit_u_gamma2(lam: float, T: float) -> float:
    """Exact ``u(T)`` for ``gamma = 2``: the root of ``ln u - 1/u = -lam T - 1``."""
    from scipy.optimize import brentq
    rhs = -lam * T - 1
    return float(brentq(lambda u: math.log(u) - 1 / u - rhs, 1e-12, 1.0 + 1e-12, xtol=1e-14))
