"""Liquidity-price Nash equilibrium between two brokers on a kappa grid.

Each broker's initial value V^i depends on the vector of liquidity prices
charged to the informed trader. Values come straight from the coefficient
ODEs (no simulation), evaluated at the initial market state. Solves for
many kappa pairs are batched through the vectorised backward sweep and,
optionally, spread over worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .broker_ode import integrate_backward, reduced_value, unpack
from .informed import informed_value, solve_informed
from .params import MarketParams, TimeGrid, worker_count

BATCH = 256


class NonConvergence(RuntimeError):
    def __init__(self, message: str, trace):
        self.trace = trace
        super().__init__(message)


@dataclass(frozen=True)
class KappaGrid:
    """Uniform grids for kappa_1 and kappa_2 plus the iteration settings.

    Grid nodes are rounded to 12 decimals so they print cleanly.

    ``tol`` defaults to one tenth of the smaller grid spacing.
    """

    kappa1: tuple
    kappa2: tuple
    gamma_lr: float = 0.2
    tol: float | None = None
    max_iters: int = 200
    kappa2_init: float | None = None

    def __post_init__(self):
        for name in ("kappa1", "kappa2"):
            lo, hi, count = getattr(self, name)
            if not lo > 0:
                raise ValueError(f"{name} grid minimum must be > 0")
            if int(count) < 2:
                raise ValueError(f"{name} grid needs at least 2 points")
            if not hi > lo:
                raise ValueError(f"{name} grid maximum must exceed its minimum")
        if not 0.0 <= self.gamma_lr < 1.0:
            raise ValueError("gamma_lr must lie in [0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @property
    def k1(self) -> np.ndarray:
        lo, hi, count = self.kappa1
        return np.round(np.linspace(lo, hi, int(count)), 12)

    @property
    def k2(self) -> np.ndarray:
        lo, hi, count = self.kappa2
        return np.round(np.linspace(lo, hi, int(count)), 12)

    @property
    def spacing(self) -> float:
        return float(min(np.diff(self.k1)[0], np.diff(self.k2)[0]))

    @property
    def tolerance(self) -> float:
        return 0.1 * self.spacing if self.tol is None else float(self.tol)

    def axis(self, i: int) -> np.ndarray:
        return self.k1 if i == 0 else self.k2


def _solve_batch(args):
    params_list, n_steps, T, method = args
    grid = TimeGrid(T, n_steps)
    state = integrate_backward(params_list, grid, method=method)
    out = np.empty((len(params_list), 3))
    for b, p in enumerate(params_list):
        fam = unpack(state[b], p.n_brokers)
        h = reduced_value(fam, np.array([p.alpha0]), np.array([p.qI0]), p.q0[None], p.u0[None])[0]
        out[b, :2] = p.x0 + p.q0 * p.s0 + h
        out[b, 2] = informed_value(0.0, p.alpha0, p.s0, p.qI0, p.xI0, solve_informed(p, grid))
    return out


def _key(kappa) -> tuple:
    return tuple(float(np.round(k, 15)) for k in kappa)


class ValueCache:
    """Initial values (V^1, V^2, V^I) memoised by kappa pair."""

    def __init__(self, p: MarketParams, workers: int | None = None, method: str = "euler"):
        if p.n_brokers != 2:
            raise ValueError("the equilibrium search is implemented for two brokers")
        self.p = p
        self.workers = worker_count() if workers is None else workers
        self.method = method
        self._store: dict[tuple, np.ndarray] = {}
        self.n_solves = 0

    def __len__(self):
        return len(self._store)

    def values(self, kappas) -> np.ndarray:
        """(len(kappas), 3) array of values, solving only the missing pairs."""
        keys = [_key(k) for k in kappas]
        missing = list(dict.fromkeys(k for k in keys if k not in self._store))
        if missing:
            params = [self.p.replace(kappa=np.array(k)) for k in missing]
            batches = [(params[i:i + BATCH], self.p.n_steps, self.p.T, self.method) for i in range(0, len(params), BATCH)]
            if self.workers > 1 and len(batches) > 1:
                with ProcessPoolExecutor(max_workers=self.workers) as pool:
                    results = list(pool.map(_solve_batch, batches))
            else:
                results = [_solve_batch(b) for b in batches]
            for key, row in zip(missing, np.concatenate(results)):
                self._store[key] = row
            self.n_solves += len(missing)
        return np.array([self._store[k] for k in keys])


def value_at(kappa_vec, p: MarketParams, cache: ValueCache | None = None):
    """(V^1, V^2, V^I) at the initial state for the given liquidity prices."""
    kappa_vec = np.asarray(kappa_vec, dtype=float)
    if np.any(kappa_vec <= 0):
        raise ValueError("kappa entries must be > 0")
    if cache is not None:
        v = cache.values([kappa_vec])[0]
    else:
        v = _solve_batch(([p.replace(kappa=kappa_vec)], p.n_steps, p.T, "euler"))[0]
    return float(v[0]), float(v[1]), float(v[2])


def grid_argmax(values) -> int:
    """Index of the maximum; ties go to the first (smallest kappa)."""
    values = np.asarray(values, dtype=float)
    return int(np.flatnonzero(values == values.max())[0])


def best_response(i: int, kappa_other: float, grid: KappaGrid, p: MarketParams,
                  cache: ValueCache | None = None):
    """Broker i's grid best response to the other broker's kappa.

    Returns (kappa_i*, values of V^i along broker i's axis).
    """
    cache = cache or ValueCache(p)
    axis = grid.axis(i)
    pairs = [(k, kappa_other) if i == 0 else (kappa_other, k) for k in axis]
    vals = cache.values(pairs)[:, i]
    return float(axis[grid_argmax(vals)]), vals


def value_surfaces(grid: KappaGrid, p: MarketParams, cache: ValueCache | None = None):
    """V^1, V^2, V^I on the full grid, arrays indexed [kappa1 index, kappa2 index]."""
    cache = cache or ValueCache(p)
    K1, K2 = np.meshgrid(grid.k1, grid.k2, indexing="ij")
    vals = cache.values(np.column_stack([K1.ravel(), K2.ravel()]))
    shape = K1.shape
    return vals[:, 0].reshape(shape), vals[:, 1].reshape(shape), vals[:, 2].reshape(shape)


@dataclass
class EquilibriumResult:
    kappa_star: tuple
    values: tuple
    trace: list
    iterations: int
    grid: KappaGrid
    V1: np.ndarray | None = None
    V2: np.ndarray | None = None
    VI: np.ndarray | None = None
    br1: np.ndarray | None = None
    br2: np.ndarray | None = None
    pareto: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def index(self) -> tuple:
        i = int(np.argmin(np.abs(self.grid.k1 - self.kappa_star[0])))
        j = int(np.argmin(np.abs(self.grid.k2 - self.kappa_star[1])))
        return i, j


def nash_iterate(grid: KappaGrid, p: MarketParams, cache: ValueCache | None = None,
                 surfaces: bool = False) -> EquilibriumResult:
    """Damped best-response iteration on kappa_2.

    kappa_2 is updated as (1 - gamma) kappa_2 + gamma kappa_2*(kappa_1*(kappa_2))
    until both sequences move by less than the tolerance. Because the damped
    kappa_2 generally sits between grid nodes, the returned pair is the
    broker-2 grid best response to kappa_1*, followed by plain grid best
    responses until the pair is a grid fixed point.
    """
    cache = cache or ValueCache(p)
    tol = grid.tolerance
    k2 = float(grid.kappa2_init if grid.kappa2_init is not None else grid.k2[len(grid.k2) // 2])
    k1 = np.nan
    trace = []
    converged = False
    it = 0
    for it in range(1, grid.max_iters + 1):
        k1_new, _ = best_response(0, k2, grid, p, cache)
        target, _ = best_response(1, k1_new, grid, p, cache)
        k2_new = (1.0 - grid.gamma_lr) * k2 + grid.gamma_lr * target
        trace.append({"iteration": it, "kappa1": k1_new, "kappa2": k2_new, "kappa2_target": target})
        done = abs(k2_new - k2) < tol and np.isfinite(k1) and abs(k1_new - k1) < tol
        k1, k2 = k1_new, k2_new
        if done:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"no convergence after {grid.max_iters} iterations", trace)

    # snap to the grid and polish with undamped best responses
    k2s, _ = best_response(1, k1, grid, p, cache)
    k1s = k1
    polish = 0
    for polish in range(1, 2 * (len(grid.k1) + len(grid.k2)) + 1):
        k1n, _ = best_response(0, k2s, grid, p, cache)
        k2n, _ = best_response(1, k1n, grid, p, cache)
        if k1n == k1s and k2n == k2s:
            break
        k1s, k2s = k1n, k2n
    else:
        raise NonConvergence("grid best responses cycle after the damped iteration converged", trace)

    v = cache.values([(k1s, k2s)])[0]
    res = EquilibriumResult(kappa_star=(k1s, k2s), values=(float(v[0]), float(v[1]), float(v[2])),
                            trace=trace, iterations=it, grid=grid,
                            info={"polish_steps": polish - 1, "tolerance": tol, "solves": cache.n_solves})
    if surfaces:
        attach_surfaces(res, p, cache)
    return res


def attach_surfaces(res: EquilibriumResult, p: MarketParams, cache: ValueCache):
    grid = res.grid
    res.V1, res.V2, res.VI = value_surfaces(grid, p, cache)
    res.br1 = np.array([grid.k1[grid_argmax(res.V1[:, j])] for j in range(len(grid.k2))])
    res.br2 = np.array([grid.k2[grid_argmax(res.V2[i, :])] for i in range(len(grid.k1))])
    res.pareto = pareto_region(res, grid, p)
    return res


def unilateral_deviation_gain(res: EquilibriumResult, p: MarketParams, cache: ValueCache):
    """Largest gain either broker gets by moving alone along the grid.

    A grid Nash equilibrium has both entries <= 0.
    """
    k1s, k2s = res.kappa_star
    grid = res.grid
    _, v1 = best_response(0, k2s, grid, p, cache)
    _, v2 = best_response(1, k1s, grid, p, cache)
    base = cache.values([(k1s, k2s)])[0]
    return float(v1.max() - base[0]), float(v2.max() - base[1])


def pareto_region(res: EquilibriumResult, grid: KappaGrid, p: MarketParams,
                  cache: ValueCache | None = None) -> np.ndarray:
    """Cells where both brokers strictly beat their equilibrium values."""
    if res.V1 is None:
        cache = cache or ValueCache(p)
        res.V1, res.V2, res.VI = value_surfaces(grid, p, cache)
    v1s, v2s = res.values[0], res.values[1]
    return (res.V1 > v1s) & (res.V2 > v2s)
