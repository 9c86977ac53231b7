"""Domain types shared by every solver: depth functions, order-size laws,
regime models and beliefs.

All values are immutable once built. Arrays stored on the dataclasses are
marked read-only so they can be shared freely between solvers and threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DomainError, ModelError, TruncationError

#: Tail mass allowed above ``y_max`` when truncating a size distribution.
TAIL_THRESHOLD = 1e-10
GENERATOR_ATOL = 1e-12
BELIEF_ATOL = 1e-10


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DepthFunction:
    """Power price-impact cost ``F(a) = coefficient * a**gamma``."""

    coefficient: float = 0.5
    gamma: float = 2.0

    def __post_init__(self):
        if not (self.coefficient > 0 and math.isfinite(self.coefficient)):
            raise DomainError(f"depth coefficient must be positive, got {self.coefficient}")
        if not (self.gamma > 1 and math.isfinite(self.gamma)):
            raise DomainError(f"depth exponent must exceed 1, got {self.gamma}")

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        if np.any(a < 0):
            raise DomainError("depth function is defined on a >= 0 only")
        out = self.coefficient * np.power(a, self.gamma)
        return float(out) if out.ndim == 0 else out

    def scale(self, x):
        """Scaling factor ``H(x) = x**gamma`` with ``F(x*y) = H(x) F(y)``."""
        return np.power(np.asarray(x, dtype=float), self.gamma)

    def table(self, K: int) -> np.ndarray:
        """``F(0), F(1), ..., F(K)`` as a float array."""
        return self.coefficient * np.arange(K + 1, dtype=float) ** self.gamma

    def to_dict(self) -> dict:
        return {"coefficient": self.coefficient, "gamma": self.gamma}


def depth_eval(F: DepthFunction, a: float) -> float:
    return F(a)


@dataclass(frozen=True, eq=False)
class SizeDistribution:
    """Law of order sizes on ``{1, ..., y_max}``.

    ``pmf[y - 1]`` is the probability of an order of size ``y``. The table is
    renormalized on construction.
    """

    pmf: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=float).ravel()
        if p.size == 0:
            raise ModelError(["size distribution needs at least one entry"])
        if np.any(~np.isfinite(p)) or np.any(p < 0):
            raise ModelError(["size pmf entries must be finite and nonnegative"])
        total = p.sum()
        if total <= 0:
            raise ModelError(["size pmf has zero total mass"])
        p = p / total
        # trailing zeros carry no information and only widen sums
        nz = np.flatnonzero(p)
        p = p[: nz[-1] + 1]
        object.__setattr__(self, "pmf", _frozen(p))
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        object.__setattr__(self, "_cdf", _frozen(cdf))
        # tail[a - 1] = P(Y >= a), with an extra trailing 0 for a = y_max + 1
        tail = np.concatenate([p[::-1].cumsum()[::-1], [0.0]])
        object.__setattr__(self, "_tail", _frozen(tail))

    @property
    def y_max(self) -> int:
        return int(self.pmf.size)

    @property
    def cdf(self) -> np.ndarray:
        return self._cdf

    def prob(self, y):
        """``P(Y = y)``; zero outside ``{1, ..., y_max}``."""
        y = np.asarray(y)
        out = np.zeros(y.shape)
        ok = (y >= 1) & (y <= self.y_max)
        out[ok] = self.pmf[y[ok].astype(int) - 1]
        return float(out) if out.ndim == 0 else out

    def tail(self, a):
        """``P(Y >= a)`` for integer ``a >= 1``."""
        a = np.clip(np.asarray(a, dtype=int), 1, self.y_max + 1)
        out = self._tail[a - 1]
        return float(out) if np.ndim(out) == 0 else out

    def padded(self, y_max: int) -> np.ndarray:
        """pmf on ``{1..y_max}``, zero-padded (or cut) to the given length."""
        out = np.zeros(y_max)
        n = min(y_max, self.y_max)
        out[:n] = self.pmf[:n]
        return out

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return np.searchsorted(self._cdf, u, side="right") + 1

    def to_dict(self) -> dict:
        return {"kind": "table", "pmf": self.pmf.tolist()}

    @classmethod
    def point_mass(cls, y: int) -> "SizeDistribution":
        if y < 1:
            raise ModelError(["order sizes must be at least 1"])
        p = np.zeros(y)
        p[-1] = 1.0
        return cls(p)


def required_y_max(mu: float, threshold: float = TAIL_THRESHOLD) -> int:
    """Smallest truncation bound with zero-truncated Poisson tail below ``threshold``."""
    norm = -math.expm1(-mu)
    y = max(1, int(mu))
    while stats.poisson.sf(y, mu) / norm >= threshold:
        y += 1
    return y


def truncated_poisson(mu: float, y_max: int | None = None) -> SizeDistribution:
    """Zero-truncated Poisson order sizes, ``pmf(y) ∝ e^{-mu} mu^y / y!`` for y >= 1.

    ``mu`` is the Poisson rate of the untruncated law, not the mean of the
    truncated one. If ``y_max`` is omitted the smallest admissible bound is used.
    """
    if not (mu > 0 and math.isfinite(mu)):
        raise DomainError(f"Poisson size rate must be positive, got {mu}")
    need = required_y_max(mu)
    if y_max is None:
        y_max = need
    if y_max < 1:
        raise DomainError("y_max must be a positive integer")
    tail = stats.poisson.sf(y_max, mu) / -math.expm1(-mu)
    if tail >= TAIL_THRESHOLD:
        raise TruncationError(
            f"tail mass {tail:.3g} above y_max={y_max} exceeds {TAIL_THRESHOLD:g}; "
            f"use y_max >= {need}",
            required=need,
        )
    y = np.arange(1, y_max + 1)
    return SizeDistribution(stats.poisson.pmf(y, mu))


@dataclass(frozen=True, eq=False)
class RegimeModel:
    """Markov-modulated compound Poisson order flow.

    generator
        ``m x m`` infinitesimal generator of the liquidity chain (per epoch).
    intensities
        order arrival rate in each regime (orders per epoch).
    sizes
        order-size law in each regime.
    """

    generator: np.ndarray
    intensities: np.ndarray
    sizes: tuple = field(default=None)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.generator, dtype=float))
        lam = np.atleast_1d(np.asarray(self.intensities, dtype=float))
        sizes = self.sizes
        if sizes is None:
            sizes = tuple(SizeDistribution.point_mass(1) for _ in range(lam.size))
        elif isinstance(sizes, SizeDistribution):
            sizes = (sizes,) * lam.size
        object.__setattr__(self, "generator", _frozen(Q))
        object.__setattr__(self, "intensities", _frozen(lam))
        object.__setattr__(self, "sizes", tuple(sizes))

    @property
    def m(self) -> int:
        return int(self.intensities.size)

    @property
    def y_max(self) -> int:
        return max(s.y_max for s in self.sizes)

    def size_matrix(self, y_max: int | None = None) -> np.ndarray:
        """``nu[i, y-1]`` for every regime, padded to a common width."""
        y_max = self.y_max if y_max is None else y_max
        return np.stack([s.padded(y_max) for s in self.sizes])

    def flow_matrix(self) -> np.ndarray:
        """``Q - Lambda``, the generator of the no-arrival flow."""
        return self.generator - np.diag(self.intensities)

    def check(self, allow_zero_intensity: bool = False) -> "RegimeModel":
        problems = validate_model(self, allow_zero_intensity=allow_zero_intensity)
        if problems:
            raise ModelError(problems)
        return self

    @classmethod
    def poisson(cls, lam: float, sizes: SizeDistribution | None = None) -> "RegimeModel":
        """Single-regime model with intensity ``lam``."""
        return cls([[0.0]], [lam], None if sizes is None else (sizes,))

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.tolist(),
            "intensities": self.intensities.tolist(),
            "sizes": [s.to_dict() for s in self.sizes],
        }


def validate_model(model: RegimeModel, allow_zero_intensity: bool = False) -> list[str]:
    """Every violated invariant of ``model``; an empty list means the model is valid."""
    errs = []
    Q, lam = model.generator, model.intensities
    m = lam.size
    if Q.shape != (m, m):
        errs.append(f"generator shape {Q.shape} does not match {m} intensities")
    else:
        if not np.all(np.isfinite(Q)):
            errs.append("generator entries must be finite")
        off = Q[~np.eye(m, dtype=bool)]
        if np.any(off < 0):
            errs.append("generator off-diagonal entries must be nonnegative")
        rows = Q.sum(axis=1)
        for i, r in enumerate(rows):
            if abs(r) > GENERATOR_ATOL:
                errs.append(f"generator row sum {i} is {r:.3g}, expected 0")
    if not np.all(np.isfinite(lam)):
        errs.append("intensities must be finite")
    elif allow_zero_intensity:
        if np.any(lam < 0):
            errs.append("intensity must be nonnegative")
    elif np.any(lam <= 0):
        errs.append("intensity must be positive")
    if len(model.sizes) != m:
        errs.append(f"{len(model.sizes)} size distributions for {m} regimes")
    for i, s in enumerate(model.sizes):
        if not isinstance(s, SizeDistribution):
            errs.append(f"sizes[{i}] is not a SizeDistribution")
    return errs


def check_belief(pi, m: int | None = None) -> np.ndarray:
    """Validate a belief vector (or a stack of them along the last axis)."""
    p = np.asarray(pi, dtype=float)
    if p.ndim == 0:
        p = p.reshape(1)
    if m is not None and p.shape[-1] != m:
        raise DomainError(f"belief has {p.shape[-1]} entries, model has {m} regimes")
    if np.any(p < -BELIEF_ATOL) or np.any(np.abs(p.sum(axis=-1) - 1) > BELIEF_ATOL):
        raise DomainError("belief entries must be nonnegative and sum to 1")
    return np.clip(p, 0.0, None)


def corner(i: int, m: int) -> np.ndarray:
    e = np.zeros(m)
    e[i] = 1.0
    return e


# --- JSON configuration -----------------------------------------------------

def _sizes_from_json(entry) -> SizeDistribution:
    kind = entry.get("kind")
    if kind == "truncated_poisson":
        return truncated_poisson(float(entry["mu"]), entry.get("y_max"))
    if kind == "table":
        return SizeDistribution(np.asarray(entry["pmf"], dtype=float))
    if kind == "point_mass":
        return SizeDistribution.point_mass(int(entry["y"]))
    raise ModelError([f"unknown size distribution kind {kind!r}"])


def model_from_dict(doc: dict) -> tuple[RegimeModel, DepthFunction]:
    """Build ``(RegimeModel, DepthFunction)`` from a configuration document.

    Expected layout::

        {"depth": {"coefficient": 0.5, "gamma": 2},
         "regimes": {"generator": [[...]], "intensities": [...],
                     "sizes": [{"kind": "truncated_poisson", "mu": 8, "y_max": 60},
                               {"kind": "table", "pmf": [...]}]}}
    """
    try:
        depth = DepthFunction(**doc.get("depth", {}))
        reg = doc["regimes"]
        lam = np.asarray(reg["intensities"], dtype=float)
        Q = np.asarray(reg.get("generator", [[0.0] * lam.size] * lam.size), dtype=float)
        Q = Q.reshape(lam.size, lam.size)
        sizes = reg.get("sizes")
        if sizes is not None:
            sizes = tuple(_sizes_from_json(s) for s in sizes)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (ModelError, DomainError)):
            raise
        raise ModelError([f"malformed model document: {exc}"]) from exc
    return RegimeModel(Q, lam, sizes), depth


def load_model(path: str | Path) -> tuple[RegimeModel, DepthFunction]:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def table1_model() -> RegimeModel:
    """Three-regime High/Med/Low liquidity example (k=20, T=1 study)."""
    Q = [[-2.0, 2.0, 0.0], [1.0, -4.0, 3.0], [0.0, 2.0, -2.0]]
    return RegimeModel(Q, [3.0, 3.0, 1.0], tuple(truncated_poisson(mu) for mu in (8.0, 4.0, 4.0)))
