"""Euler-Maruyama simulation of the full market under feedback controls.

All paths of a chunk are advanced together; every rate is evaluated at the
left end of each step, matching the backward sweep of the coefficient ODEs.
Noise for path ``k`` comes from generators seeded by ``(seed, k, stream)``,
so any subset of paths can be regenerated independently of the others.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .broker_ode import BrokerCoefficients, NetSpeedCoefficients, feedback_tables
from .informed import InformedSolution
from .params import MarketParams, correlation_root, worker_count

STREAM_PRICE, STREAM_ALPHA, STREAM_UNINFORMED = 0, 1, 2
DEFAULT_CHUNK = 500

PATH_COLUMNS = ("t", "S", "alpha", "u", "omega", "nu", "QI", "Q")


class PathFailure(ArithmeticError):
    def __init__(self, node: int, path: int | None = None):
        self.node = node
        self.path = path
        where = "" if path is None else f" on path {path}"
        super().__init__(f"non-finite market state at node {node}{where}")


@dataclass(frozen=True)
class SimulationConfig:
    """Ensemble settings.

    ``broker_belief_qI0`` makes every broker act on an inventory estimate
    built from this initial value instead of the true one. ``broker_control``
    replaces the equilibrium feedback entirely: it is called as
    ``broker_control(k, alpha, qI, q, u)`` with (P,) / (P, N) arrays and must
    return the (P, N) lit-market speeds.
    """

    n_paths: int = 1000
    seed: int = 0
    store_paths: bool = False
    chunk_size: int = DEFAULT_CHUNK
    broker_belief_qI0: float | None = None
    broker_control: Callable | None = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class PathRecord:
    """Trajectories of one path on the time grid.

    Per-broker arrays have shape (n_steps + 1, N). Controls are recorded at
    every node, including the terminal one where they are not used.
    """

    t: np.ndarray
    S: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    omega: np.ndarray
    nu: np.ndarray
    QI: np.ndarray
    Q: np.ndarray
    XI: np.ndarray
    X: np.ndarray
    S_ref: np.ndarray
    path_index: int = 0

    @property
    def net_speed(self) -> np.ndarray:
        return self.nu - self.omega - self.u

    def to_csv_rows(self):
        n = self.u.shape[1]
        header = ["t", "S", "alpha"]
        header += [f"u{j + 1}" for j in range(n)]
        header += [f"omega{j + 1}" for j in range(n)]
        header += [f"nu{j + 1}" for j in range(n)]
        header += ["QI"] + [f"Q{j + 1}" for j in range(n)]
        data = np.column_stack([self.t, self.S, self.alpha, self.u, self.omega, self.nu, self.QI, self.Q])
        return header, data


@dataclass
class EnsembleStats:
    """Per-path outcomes and their means.

    ``criterion`` and ``pnl`` are (n_paths, N); the path statistics refer to
    the broker whose net-speed coefficients were supplied (broker 1 by default).
    """

    criterion: np.ndarray
    pnl: np.ndarray
    informed_criterion: np.ndarray
    Z_I: np.ndarray
    Q_bar: np.ndarray
    Y_alpha: np.ndarray
    Y_I: np.ndarray
    paths: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return len(self.informed_criterion)

    @staticmethod
    def _stderr(x):
        n = x.shape[0]
        if n < 2:
            return np.zeros(x.shape[1:])
        return np.std(x, axis=0, ddof=1) / np.sqrt(n)

    @property
    def criterion_mean(self):
        return self.criterion.mean(axis=0)

    @property
    def criterion_stderr(self):
        return self._stderr(self.criterion)

    @property
    def pnl_mean(self):
        return self.pnl.mean(axis=0)

    @property
    def pnl_stderr(self):
        return self._stderr(self.pnl)

    @property
    def informed_mean(self) -> float:
        return float(self.informed_criterion.mean())

    @property
    def informed_stderr(self) -> float:
        return float(self._stderr(self.informed_criterion))

    def characteristics(self) -> dict[str, np.ndarray]:
        return {"Z_I": self.Z_I, "Q_bar": self.Q_bar, "Y_alpha": self.Y_alpha, "Y_I": self.Y_I}

    def summary_row(self):
        n = self.criterion.shape[1]
        header, values = ["n_paths"], [self.n_paths]
        for j in range(n):
            header += [f"H{j + 1}_mean", f"H{j + 1}_stderr", f"PnL{j + 1}_mean", f"PnL{j + 1}_stderr"]
            values += [self.criterion_mean[j], self.criterion_stderr[j], self.pnl_mean[j], self.pnl_stderr[j]]
        header += ["HI_mean", "HI_stderr"]
        values += [self.informed_mean, self.informed_stderr]
        for name, arr in self.characteristics().items():
            header += [f"{name}_mean", f"{name}_std"]
            values += [arr.mean(), arr.std(ddof=1) if len(arr) > 1 else 0.0]
        return header, values


def path_noise(seed: int, path_indices, n_steps: int, n_brokers: int):
    """Standard normal draws (P, n_steps) for S and alpha and (P, n_steps, N) for u."""
    P = len(path_indices)
    zS = np.empty((P, n_steps))
    za = np.empty((P, n_steps))
    zu = np.empty((P, n_steps, n_brokers))
    for row, k in enumerate(path_indices):
        gens = [np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(k), s))))
                for s in (STREAM_PRICE, STREAM_ALPHA, STREAM_UNINFORMED)]
        zS[row] = gens[0].standard_normal(n_steps)
        za[row] = gens[1].standard_normal(n_steps)
        zu[row] = gens[2].standard_normal((n_steps, n_brokers))
    return zS, za, zu


@dataclass
class _Tables:
    w0: np.ndarray
    w1: np.ndarray
    G: np.ndarray
    r1: np.ndarray | None
    r4: np.ndarray | None
    broker: int = 0


def _tables(informed: InformedSolution, coeffs: BrokerCoefficients, p: MarketParams,
            net: NetSpeedCoefficients | None):
    return _Tables(w0=informed.omega0, w1=informed.omega1, G=feedback_tables(coeffs, p),
                   r1=None if net is None else net.r1, r4=None if net is None else net.r4,
                   broker=0 if net is None else net.broker)


def _feedback(Gk, alpha, qI, q, u):
    # nu_i = G[i] . (alpha, qI, q, u); written as an explicit row sum so each
    # path's result does not depend on how many paths share the chunk
    z = np.concatenate([alpha[:, None], qI[:, None], q, u], axis=1)
    return (z[:, None, :] * Gk[None]).sum(axis=-1)


def simulate_paths(p: MarketParams, informed: InformedSolution, coeffs: BrokerCoefficients,
                   noise, cfg: SimulationConfig | None = None, net: NetSpeedCoefficients | None = None,
                   store: bool = False, path_indices=None, tables: _Tables | None = None,
                   noise_rows=None, qI0_rows=None, belief_rows=None):
    """Advance a batch of paths driven by the given standard normal draws.

    ``noise_rows`` maps each simulated row to a row of ``noise`` so several
    rows can share one set of shocks; ``qI0_rows`` and ``belief_rows`` set
    the true informed inventory and the brokers' estimate of it per row
    (NaN in ``belief_rows`` means the brokers see the truth).

    Returns a dict of per-path outcomes and, when ``store`` is set, the list
    of :class:`PathRecord`.
    """
    cfg = cfg or SimulationConfig()
    tb = tables or _tables(informed, coeffs, p, net)
    zS, za, zu = noise
    n_steps = zS.shape[1]
    rows = np.arange(zS.shape[0]) if noise_rows is None else np.asarray(noise_rows)
    P = len(rows)
    grid = coeffs.grid
    if n_steps != grid.n_steps:
        raise ValueError("noise length does not match the time grid")
    n = p.n_brokers
    dt = grid.dt
    sq = np.sqrt(dt)
    L = correlation_root(p.rho)
    path_indices = rows if path_indices is None else np.asarray(path_indices)

    S = np.full(P, p.s0)
    S_ref = S.copy()
    alpha = np.full(P, p.alpha0)
    u = np.tile(p.u0, (P, 1))
    qI = np.full(P, p.qI0) if qI0_rows is None else np.array(qI0_rows, dtype=float)
    xI = np.full(P, p.xI0)
    xI_ref = xI.copy()
    q = np.tile(p.q0, (P, 1))
    x = np.tile(p.x0, (P, 1))
    run_q2 = np.zeros((P, n))
    run_qI2 = np.zeros(P)
    Z = np.zeros(P)
    Qsum = np.zeros(P)
    Ya = np.zeros(P)
    YI = np.zeros(P)
    if belief_rows is not None:
        belief = np.asarray(belief_rows, dtype=float)
        shift = np.where(np.isnan(belief), 0.0, belief - qI)
    elif cfg.broker_belief_qI0 is not None:
        shift = cfg.broker_belief_qI0 - qI
    else:
        shift = None
    Phi = informed.constants.Phi

    if store:
        rec = {name: np.empty((n_steps + 1, P)) for name in ("S", "alpha", "QI", "XI", "S_ref")}
        rec.update({name: np.empty((n_steps + 1, P, n)) for name in ("u", "omega", "nu", "Q", "X")})

    def controls(k):
        omega = tb.w0[k][None] * alpha[:, None] + tb.w1[k][None] * qI[:, None]
        if cfg.broker_control is not None:
            nu = np.asarray(cfg.broker_control(k, alpha, qI, q, u), dtype=float)
        elif shift is None:
            nu = _feedback(tb.G[k], alpha, qI, q, u)
        else:
            nu = np.empty((P, n))
            qI_hat = qI + shift
            for i in range(n):
                if tb.w0[k][i] == 0.0:
                    # signal unrecoverable at the horizon; its coefficient vanishes there
                    alpha_hat = alpha
                else:
                    alpha_hat = alpha - tb.w1[k][i] * (qI_hat - qI) / tb.w0[k][i]
                z = np.concatenate([alpha_hat[:, None], qI_hat[:, None], q, u], axis=1)
                nu[:, i] = (z * tb.G[k][i][None]).sum(axis=-1)
        return omega, nu

    for k in range(n_steps):
        omega, nu = controls(k)
        if store:
            for name, val in (("S", S), ("alpha", alpha), ("QI", qI), ("XI", xI), ("S_ref", S_ref),
                              ("u", u), ("omega", omega), ("nu", nu), ("Q", q), ("X", x)):
                rec[name][k] = val
        if tb.r1 is not None:
            Z += dt * np.abs(omega[:, tb.broker])
            Qsum += dt * np.abs(q[:, tb.broker])
            Ya += dt * np.abs(tb.r1[k] * alpha)
            YI += dt * np.abs(tb.r4[k] * qI)
        run_q2 += dt * q ** 2
        run_qI2 += dt * qI ** 2

        dWS = sq * zS[rows, k]
        dWa = sq * za[rows, k]
        dWu = sq * (zu[rows, k, None, :] * L[None]).sum(axis=-1)
        impact = (nu * p.b[None]).sum(axis=1)
        flow = omega.sum(axis=1)
        x_new = x + dt * (u * (S[:, None] + p.c * u) + omega * (S[:, None] + p.kappa * omega)
                          - nu * (S[:, None] + p.k * nu))
        xI = xI - dt * (omega * (S[:, None] + p.kappa * omega)).sum(axis=1)
        xI_ref = xI_ref - dt * (omega * (S_ref[:, None] + p.kappa * omega)).sum(axis=1)
        q = q + dt * (nu - u - omega)
        qI = qI + dt * flow
        x = x_new
        S = S + dt * (impact + alpha) + p.sigma * dWS
        S_ref = S_ref + dt * alpha + p.sigma * dWS
        u = u - dt * p.theta_u * u + dWu * p.eta_u
        alpha = alpha - dt * p.theta * alpha + p.eta * dWa
        if not (np.isfinite(S).all() and np.isfinite(q).all() and np.isfinite(x).all()):
            bad = int(np.flatnonzero(~(np.isfinite(S) & np.isfinite(q).all(1) & np.isfinite(x).all(1)))[0])
            raise PathFailure(k + 1, int(path_indices[bad]))

    out = {
        "criterion": x + q * S[:, None] - p.a * q ** 2 - p.phi * run_q2,
        "pnl": x + q * S[:, None],
        "informed": xI_ref + qI * S_ref - p.a_I * qI ** 2 - Phi * run_qI2,
        "Z_I": Z, "Q_bar": Qsum / grid.T, "Y_alpha": Ya, "Y_I": YI,
    }
    if store:
        omega, nu = controls(n_steps)
        for name, val in (("S", S), ("alpha", alpha), ("QI", qI), ("XI", xI), ("S_ref", S_ref),
                          ("u", u), ("omega", omega), ("nu", nu), ("Q", q), ("X", x)):
            rec[name][n_steps] = val
        out["paths"] = [
            PathRecord(t=np.array(grid.t), path_index=int(path_indices[j]),
                       **{name: np.ascontiguousarray(arr[:, j]) for name, arr in rec.items()})
            for j in range(P)
        ]
    return out


def simulate_path(p: MarketParams, informed: InformedSolution, coeffs: BrokerCoefficients,
                  cfg: SimulationConfig, path_index: int) -> PathRecord:
    noise = path_noise(cfg.seed, [path_index], coeffs.grid.n_steps, p.n_brokers)
    res = simulate_paths(p, informed, coeffs, noise, cfg, store=True, path_indices=[path_index])
    return res["paths"][0]


def _run_chunk(args):
    p, informed, coeffs, cfg, net, idx, store = args
    noise = path_noise(cfg.seed, idx, coeffs.grid.n_steps, p.n_brokers)
    return simulate_paths(p, informed, coeffs, noise, cfg, net=net, store=store, path_indices=idx)


def monte_carlo(p: MarketParams, informed: InformedSolution, coeffs: BrokerCoefficients,
                cfg: SimulationConfig, net: NetSpeedCoefficients | None = None,
                n_store: int = 0, workers: int | None = None) -> EnsembleStats:
    """Run ``cfg.n_paths`` paths in chunks and collect per-path outcomes.

    The first ``n_store`` paths (all of them if ``cfg.store_paths``) keep
    full trajectories. Chunks go to ``workers`` processes (default from the
    environment); results do not depend on the worker count because every
    path draws its own noise.
    """
    workers = worker_count() if workers is None else workers
    keep = cfg.n_paths if cfg.store_paths else n_store
    tasks = []
    for start in range(0, cfg.n_paths, cfg.chunk_size):
        idx = np.arange(start, min(start + cfg.chunk_size, cfg.n_paths))
        tasks.append((p, informed, coeffs, cfg, net, idx, bool(start < keep)))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    stored = []
    for res in parts:
        if "paths" in res:
            stored += [rec for rec in res.pop("paths") if rec.path_index < keep]
    cat = {key: np.concatenate([r[key] for r in parts]) for key in parts[0]}
    return EnsembleStats(criterion=cat["criterion"], pnl=cat["pnl"], informed_criterion=cat["informed"],
                         Z_I=cat["Z_I"], Q_bar=cat["Q_bar"], Y_alpha=cat["Y_alpha"], Y_I=cat["Y_I"],
                         paths=stored)


def path_statistics(path: PathRecord, net: NetSpeedCoefficients):
    """(Z^I, Q_bar, Y^alpha, Y^I) of one path for broker ``net.broker``.

    Left-endpoint sums over the grid, consistent with the simulator.
    """
    i = net.broker
    dt = np.diff(path.t)
    T = path.t[-1] - path.t[0]
    Z = float(np.sum(dt * np.abs(path.omega[:-1, i])))
    Qbar = float(np.sum(dt * np.abs(path.Q[:-1, i])) / T)
    Ya = float(np.sum(dt * np.abs(net.r1[:-1] * path.alpha[:-1])))
    YI = float(np.sum(dt * np.abs(net.r4[:-1] * path.QI[:-1])))
    return Z, Qbar, Ya, YI
