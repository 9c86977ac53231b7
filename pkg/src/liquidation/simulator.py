"""Order-flow simulation and pathwise execution of solved policies.

Two engines share one random-stream contract (Philox keyed by
``SeedSequence([seed, stream])``):

* :func:`simulate_path` builds a single path sojourn by sojourn and
  :func:`execute` walks it event by event. This is the readable reference.
* :func:`simulate_batch` and :func:`execute_batch` run many paths at once
  with competing exponential clocks; :func:`mc_cost` and
  :func:`count_distribution` are built on them.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import write_csv, write_json
from .base_solver import PolicySurface, grid_index
from .errors import ConfigurationError, DomainError
from .filtering import FlowCache, conditional_flow, jump_update, propagate
from .markov_solver import RegimePolicySurface
from .model import RegimeModel, check_belief
from .partial_solver import BeliefPolicySurface, best_action

BATCH = 100_000


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for ``(seed, stream)``; streams are independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def _start_regime(model: RegimeModel, start, rng, size=None):
    """Initial regime(s): an int is used as is, a belief is sampled from."""
    if np.ndim(start) == 0:
        i = int(start)
        if not 0 <= i < model.m:
            raise DomainError(f"start regime {i} outside 0..{model.m - 1}")
        return i if size is None else np.full(size, i)
    pi = check_belief(start, model.m)
    return rng.choice(model.m, size=size, p=pi / pi.sum())


@dataclass(frozen=True)
class OrderFlowPath:
    """Arrivals ``(times[e], sizes[e], regimes[e])`` on ``[0, T)`` plus the regime trajectory."""

    T: float
    times: np.ndarray
    sizes: np.ndarray
    regimes: np.ndarray
    switches: tuple  # ((0.0, r0), (t1, r1), ...)
    seed: int | None = None
    stream: int | None = None

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def regime_at(self, t: float) -> int:
        r = self.switches[0][1]
        for s, i in self.switches:
            if s > t:
                break
            r = i
        return r


def simulate_path(model: RegimeModel, T: float, seed: int, start=0, stream: int = 0) -> OrderFlowPath:
    """Exact simulation: exponential sojourns, then Poisson arrivals inside each."""
    model.check(allow_zero_intensity=True)
    if T < 0:
        raise DomainError("horizon must be nonnegative")
    rng = make_rng(seed, stream)
    Q, lam = model.generator, model.intensities
    i = _start_regime(model, start, rng)
    t = 0.0
    switches = [(0.0, i)]
    times, sizes, regimes = [], [], []
    while t < T:
        rate = -Q[i, i]
        stay = rng.exponential(1 / rate) if rate > 0 else math.inf
        end = min(t + stay, T)
        n = rng.poisson(lam[i] * (end - t))
        if n:
            ts = np.sort(t + (end - t) * rng.random(n))
            ts = ts[ts < T]
            times.extend(ts)
            sizes.extend(model.sizes[i].sample(rng, ts.size))
            regimes.extend([i] * ts.size)
        if end >= T:
            break
        p = Q[i].copy()
        p[i] = 0.0
        i = int(rng.choice(model.m, p=p / p.sum()))
        t = end
        switches.append((t, i))
    return OrderFlowPath(float(T), np.array(times, dtype=float), np.array(sizes, dtype=int),
                         np.array(regimes, dtype=int), tuple(switches), seed, stream)


@dataclass
class ExecutionReport:
    trades: list = field(default_factory=list)  # (time, amount)
    leftover: int = 0
    cost: float = 0.0
    beliefs: list | None = None  # post-arrival beliefs under filtering

    @property
    def sold(self) -> int:
        return sum(a for _, a in self.trades)


def _policy_kind(policy, use_filter):
    if isinstance(policy, BeliefPolicySurface):
        if not use_filter:
            raise ConfigurationError("a belief policy needs use_filter=True")
        return "belief"
    if use_filter:
        raise ConfigurationError("use_filter requires a belief policy")
    if isinstance(policy, RegimePolicySurface):
        return "regime"
    if isinstance(policy, PolicySurface):
        return "base"
    raise ConfigurationError(f"unsupported policy type {type(policy).__name__}")


def _check_horizon(policy, T):
    if policy.T_max < T - 1e-9:
        raise ConfigurationError(f"policy horizon {policy.T_max} shorter than path horizon {T}")


def execute(path: OrderFlowPath, policy, k: int, constrained: bool | None = None,
            use_filter: bool = False, pi0=None, model: RegimeModel | None = None) -> ExecutionReport:
    """Run ``policy`` along ``path`` starting from ``k`` units.

    At each arrival the action for the remaining horizon ``T - t`` (floor
    grid index) is looked up and ``min(action, remaining[, Y])`` is sold;
    whatever is left is sold at ``T``. Under ``use_filter`` the hidden
    regime is never read: the belief starts at ``pi0`` and is updated from
    arrival times and sizes only.
    """
    kind = _policy_kind(policy, use_filter)
    _check_horizon(policy, path.T)
    if constrained is None:
        constrained = bool(getattr(policy, "constrained", False))
    F = policy.depth
    rep = ExecutionReport(leftover=int(k))
    if kind == "belief":
        model = model or policy.model
        cache = FlowCache(model, policy.dt)
        pi = check_belief(pi0 if pi0 is not None else np.full(model.m, 1 / model.m), model.m)
        rep.beliefs = []
        last = 0.0
    x = int(k)
    for t, y, r in zip(path.times, path.sizes, path.regimes):
        if x == 0:
            break
        j = int(grid_index(path.T - t, policy.dt, policy.n_steps))
        if kind == "base":
            a = int(policy.a[x, j])
        elif kind == "regime":
            a = int(policy.a[r, x, j])
        else:
            pi = jump_update(model, conditional_flow(cache, pi, t - last), int(y))
            last = t
            rep.beliefs.append(pi)
            vals = policy.mesh.interpolate(policy.v[: x + 1, j], pi)
            _, a = best_action(vals, x, F, int(y), constrained)
        sell = min(a, x, int(y)) if constrained else min(a, x)
        rep.trades.append((float(t), sell))
        rep.cost += float(F(float(sell)))
        x -= sell
    rep.leftover = x
    rep.cost += float(F(float(x)))
    return rep


# --- batched engine ---------------------------------------------------------

@dataclass
class PathBatch:
    """Arrivals of many paths, left-justified and padded with ``inf`` times."""

    T: float
    times: np.ndarray    # (n, E)
    sizes: np.ndarray    # (n, E)
    regimes: np.ndarray  # (n, E)
    n_events: np.ndarray  # (n,)
    start: np.ndarray    # (n,) initial regime

    def __len__(self):
        return int(self.n_events.size)

    def path(self, r: int) -> OrderFlowPath:
        """Path ``r`` as an :class:`OrderFlowPath` (switch times are not retained)."""
        e = int(self.n_events[r])
        return OrderFlowPath(self.T, self.times[r, :e].copy(), self.sizes[r, :e].copy(),
                             self.regimes[r, :e].copy(), ((0.0, int(self.start[r])),))


def simulate_batch(model: RegimeModel, T: float, n_paths: int, rng: np.random.Generator,
                   start=0) -> PathBatch:
    """Many paths via competing clocks: each step draws the next switch-or-arrival."""
    model.check(allow_zero_intensity=True)
    Q, lam = model.generator, model.intensities
    m = model.m
    out_rate = -np.diag(Q)
    total = out_rate + lam
    jump_p = np.where(out_rate[:, None] > 0, np.clip(Q, 0, None) / np.where(out_rate > 0, out_rate, 1)[:, None], 0)
    jump_p[np.arange(m), np.arange(m)] = 0.0
    jump_cdf = np.cumsum(jump_p, axis=1)
    size_cdf = np.cumsum(model.size_matrix(), axis=1)

    reg = np.asarray(_start_regime(model, start, rng, size=n_paths))
    start_reg = reg.copy()
    t = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool) if T > 0 else np.zeros(n_paths, dtype=bool)
    cols_t, cols_y, cols_r = [], [], []
    while alive.any():
        idx = np.flatnonzero(alive)
        i = reg[idx]
        rate = total[i]
        with np.errstate(divide="ignore"):
            tau = np.where(rate > 0, rng.exponential(1.0, idx.size) / np.where(rate > 0, rate, 1), np.inf)
        tn = t[idx] + tau
        done = tn >= T
        u = rng.random(idx.size) * rate
        arrive = ~done & (u < lam[i])
        switch = ~done & ~arrive

        ct = np.full(n_paths, np.inf)
        cy = np.zeros(n_paths, dtype=np.int32)
        cr = np.full(n_paths, -1, dtype=np.int8)
        a_idx = idx[arrive]
        if a_idx.size:
            ya = np.empty(a_idx.size, dtype=np.int32)
            ra = i[arrive]
            ua = rng.random(a_idx.size)
            for s in range(m):
                sel = ra == s
                if sel.any():
                    ya[sel] = np.searchsorted(size_cdf[s], ua[sel] * size_cdf[s, -1], side="right") + 1
            ct[a_idx] = tn[arrive]
            cy[a_idx] = ya
            cr[a_idx] = ra
            cols_t.append(ct)
            cols_y.append(cy)
            cols_r.append(cr)
        s_idx = idx[switch]
        if s_idx.size:
            rs = i[switch]
            us = rng.random(s_idx.size)
            new = (us[:, None] * jump_cdf[rs, -1:] >= jump_cdf[rs]).sum(axis=1)
            reg[s_idx] = np.minimum(new, m - 1)
        t[idx] = np.where(done, T, tn)
        alive[idx[done]] = False

    if cols_t:
        times = np.stack(cols_t, axis=1)
        sizes = np.stack(cols_y, axis=1)
        regs = np.stack(cols_r, axis=1)
        order = np.argsort(~np.isfinite(times), axis=1, kind="stable")
        times = np.take_along_axis(times, order, axis=1)
        sizes = np.take_along_axis(sizes, order, axis=1)
        regs = np.take_along_axis(regs, order, axis=1)
        n_ev = np.isfinite(times).sum(axis=1)
        E = int(n_ev.max()) if n_ev.size else 0
        times, sizes, regs = times[:, :E], sizes[:, :E], regs[:, :E].astype(int)
    else:
        times = np.empty((n_paths, 0))
        sizes = np.empty((n_paths, 0), dtype=np.int32)
        regs = np.empty((n_paths, 0), dtype=int)
        n_ev = np.zeros(n_paths, dtype=int)
    return PathBatch(float(T), times, sizes, regs, n_ev, start_reg)


def execute_batch(batch: PathBatch, policy, k: int, constrained: bool | None = None,
                  use_filter: bool = False, pi0=None, model: RegimeModel | None = None) -> np.ndarray:
    """Vectorized :func:`execute`; returns the per-path costs."""
    kind = _policy_kind(policy, use_filter)
    _check_horizon(policy, batch.T)
    if constrained is None:
        constrained = bool(getattr(policy, "constrained", False))
    F = policy.depth
    F_tab = F.table(k)
    n = len(batch)
    x = np.full(n, int(k))
    cost = np.zeros(n)
    if kind == "belief":
        model = model or policy.model
        pi = np.broadcast_to(check_belief(pi0 if pi0 is not None else np.full(model.m, 1 / model.m),
                                          model.m), (n, model.m)).copy()
        last = np.zeros(n)
        a_grid = np.arange(1, k + 1)
    for e in range(batch.times.shape[1]):
        act = np.flatnonzero((e < batch.n_events) & (x > 0))
        if act.size == 0:
            break
        t = batch.times[act, e]
        y = batch.sizes[act, e]
        xk = x[act]
        j = grid_index(batch.T - t, policy.dt, policy.n_steps)
        if kind == "base":
            a = policy.a[xk, j]
        elif kind == "regime":
            a = policy.a[batch.regimes[act, e], xk, j]
        else:
            prior, _ = propagate(model, pi[act], t - last[act])
            post = jump_update(model, prior, y)
            pi[act] = post
            last[act] = t
            verts, w = policy.mesh.locate(post)
            # V[p, k'] = interpolated v(k', T_j, post_p)
            V = np.einsum("kpm,pm->pk", policy.v[:k + 1][:, j[:, None], verts], w)
            top = np.minimum(xk, y) if constrained else xk
            ok = a_grid[None, :] <= top[:, None]
            obj = F_tab[a_grid][None, :] + np.take_along_axis(V, np.clip(xk[:, None] - a_grid, 0, k), axis=1)
            a = np.argmin(np.where(ok, obj, np.inf), axis=1) + 1
        sell = np.minimum(a, xk)
        if constrained:
            sell = np.minimum(sell, y)
        cost[act] += F_tab[sell]
        x[act] = xk - sell
    return cost + F_tab[x]


def _workers() -> int:
    env = os.environ.get("EXEC_SOLVER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"EXEC_SOLVER_THREADS must be an integer, got {env!r}")
    return 1


def _batches(n_paths, batch):
    sizes = [batch] * (n_paths // batch)
    if n_paths % batch:
        sizes.append(n_paths % batch)
    return sizes


def _run_batches(fn, n_paths, batch):
    sizes = _batches(n_paths, batch)
    w = _workers()
    if w == 1 or len(sizes) == 1:
        return [fn(b, s) for b, s in enumerate(sizes)]
    with ThreadPoolExecutor(w) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


@dataclass
class MCResult:
    mean: float
    se: float | None
    n_paths: int
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    costs: np.ndarray | None = None
    n_events: np.ndarray | None = None

    @property
    def ci(self) -> tuple[float, float] | None:
        if self.se is None:
            return None
        return self.mean - 1.96 * self.se, self.mean + 1.96 * self.se

    def to_json(self, path, meta=None):
        doc = {"mean": self.mean, "se": self.se, "n_paths": self.n_paths,
               "histogram": {"edges": self.hist_edges.tolist(), "counts": self.hist_counts.tolist()}}
        return write_json(path, doc, meta)

    def to_csv(self, path, seed, meta=None):
        """Per-path rows ``seed, path, n_events, cost`` (needs ``keep_costs=True``)."""
        if self.costs is None:
            raise ConfigurationError("per-path costs were not kept")
        rows = ((seed, r, int(n), c) for r, (n, c) in enumerate(zip(self.n_events, self.costs)))
        return write_csv(path, ["seed", "path", "n_events", "cost"], rows, meta)


def _mean_se(sums, sqs, n):
    mean = math.fsum(sums) / n
    if n < 2:
        return mean, None
    var = max(math.fsum(sqs) / n - mean * mean, 0.0) * n / (n - 1)
    return mean, math.sqrt(var / n)


def mc_cost(model: RegimeModel, policy, k: int, T: float, n_paths: int, seed: int, start=0,
            constrained: bool | None = None, use_filter: bool = False, pi0=None,
            batch: int = BATCH, bins: int = 50, keep_costs: bool = False) -> MCResult:
    """Monte Carlo mean cost of ``policy`` over ``n_paths`` independent paths.

    Batch ``b`` draws from stream ``b`` of ``seed``, so results do not depend
    on the number of worker threads.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    if use_filter and pi0 is None and np.ndim(start) == 0:
        pi0 = np.eye(model.m)[int(start)]
    F = policy.depth
    edges = np.linspace(0.0, float(F(float(k))), bins + 1)

    def run(b, size):
        rng = make_rng(seed, b)
        paths = simulate_batch(model, T, size, rng, start)
        c = execute_batch(paths, policy, k, constrained, use_filter, pi0, model)
        kept = (c, paths.n_events) if keep_costs else None
        return math.fsum(c), math.fsum(c * c), np.histogram(c, edges)[0], kept

    parts = _run_batches(run, n_paths, batch)
    mean, se = _mean_se([p[0] for p in parts], [p[1] for p in parts], n_paths)
    hist = np.sum([p[2] for p in parts], axis=0)
    if keep_costs:
        costs = np.concatenate([p[3][0] for p in parts])
        n_ev = np.concatenate([p[3][1] for p in parts])
    else:
        costs = n_ev = None
    return MCResult(mean, se, n_paths, edges, hist, costs, n_ev)


@dataclass
class CountDistribution:
    """Empirical law of ``N(T)``; the last entry of ``pmf`` is the exact top count."""

    pmf: np.ndarray
    se: np.ndarray
    n_paths: int

    def functional(self, coeffs) -> tuple[float, float]:
        """``E[c(N)]`` and its standard error for per-count values ``coeffs[n]``."""
        c = np.asarray(coeffs, dtype=float)
        mean = math.fsum(c * self.pmf)
        var = max(math.fsum(c * c * self.pmf) - mean * mean, 0.0)
        return mean, math.sqrt(var / self.n_paths)

    def padded(self, n_max: int) -> np.ndarray:
        out = np.zeros(max(n_max, self.pmf.size))
        out[: self.pmf.size] = self.pmf
        return out


def count_distribution(model: RegimeModel, T: float, start, n_paths: int, seed: int,
                       batch: int = BATCH) -> CountDistribution:
    """Empirical pmf of the number of arrivals in ``[0, T)``."""
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")

    def run(b, size):
        return np.bincount(simulate_batch(model, T, size, make_rng(seed, b), start).n_events)

    parts = _run_batches(run, n_paths, batch)
    top = max(p.size for p in parts)
    counts = np.sum([np.pad(p, (0, top - p.size)) for p in parts], axis=0)
    pmf = counts / n_paths
    return CountDistribution(pmf, np.sqrt(pmf * (1 - pmf) / n_paths), n_paths)


# --- particle check of the filter -------------------------------------------

def particle_belief(model: RegimeModel, pi0, times, sizes, t: float, n_particles: int, seed: int,
                    stream: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Importance-sampling estimate of the regime law at ``t`` given observed arrivals.

    Regime paths are drawn from the chain alone and weighted by the
    likelihood of the observation record (arrivals ``times``/``sizes`` on
    ``[0, t]`` and no others). Returns the self-normalized estimate and its
    delta-method standard errors.
    """
    rng = make_rng(seed, stream)
    times = np.asarray(times, dtype=float)
    sizes = np.asarray(sizes, dtype=int)
    if times.size and (np.any(np.diff(times) <= 0) or times[-1] > t):
        raise DomainError("observation times must increase and lie in [0, t]")
    Q, lam = model.generator, model.intensities
    m = model.m
    nu = model.size_matrix()
    y_ok = sizes <= nu.shape[1]
    with np.errstate(divide="ignore"):
        ll = np.log(lam[:, None] * np.where(y_ok, nu[:, np.clip(sizes, 1, nu.shape[1]) - 1], 0.0))
    cum = np.concatenate([np.zeros((m, 1)), np.cumsum(ll, axis=1)], axis=1)  # (m, E+1)

    reg = np.asarray(_start_regime(model, pi0, rng, size=n_particles))
    s = np.zeros(n_particles)
    logw = np.zeros(n_particles)
    alive = np.ones(n_particles, dtype=bool)
    out_rate = -np.diag(Q)
    jump_cdf = np.cumsum(np.where(np.eye(m, dtype=bool), 0.0, Q), axis=1)
    while alive.any():
        idx = np.flatnonzero(alive)
        i = reg[idx]
        with np.errstate(divide="ignore"):
            tau = np.where(out_rate[i] > 0, rng.exponential(1.0, idx.size) / np.where(out_rate[i] > 0, out_rate[i], 1),
                           np.inf)
        end = np.minimum(s[idx] + tau, t)
        lo = np.searchsorted(times, s[idx], side="left")
        # sojourns cover [s, end); the final one is closed at t
        hi = np.where(end < t, np.searchsorted(times, end, side="left"),
                      np.searchsorted(times, end, side="right"))
        logw[idx] += cum[i, hi] - cum[i, lo] - lam[i] * (end - s[idx])
        fin = end >= t
        u = rng.random(idx.size)
        sw = ~fin
        new = (u[:, None] * jump_cdf[i, -1:] >= jump_cdf[i]).sum(axis=1)
        reg[idx[sw]] = np.minimum(new[sw], m - 1)
        s[idx] = end
        alive[idx[fin]] = False
    w = np.exp(logw - logw.max())
    W = w.sum()
    est = np.array([w[reg == i].sum() / W for i in range(m)])
    se = np.array([math.sqrt(np.sum(w * w * ((reg == i) - est[i]) ** 2)) / W for i in range(m)])
    return est, se
