"""Coupled backward ODE system for the brokers' equilibrium value functions.

Each broker's reduced value function is a quadratic form in the state
(alpha, qI, q_1..q_N, u_1..u_N)::

    h^i = f + g qI^2 + m alpha^2 + sum n_rs q_r q_s + sum p_rs u_r u_s
          + sum d_r qI q_r + v qI alpha + sum w_r qI u_r
          + sum x_r q_r alpha + sum y_rs q_r u_s + sum z_r alpha u_r

and the eleven coefficient families solve a joint terminal-value problem.
All brokers are integrated together because every broker's equation reads
the other brokers' own-inventory coefficients through their feedback
controls.

Internally the solver works on a batch of parameter sets at once; arrays
carry a leading batch axis and the einsum letter ``A`` denotes it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .informed import InformedSolution, h2_of_t, informed_constants, m_I_of_t
from .params import MarketParams, TimeGrid

FAMILIES = ("f", "g", "m", "v", "d", "w", "x", "z", "n", "p", "y")
# number of broker indices carried by each family besides the owner
_RANK = {"f": 0, "g": 0, "m": 0, "v": 0, "d": 1, "w": 1, "x": 1, "z": 1, "n": 2, "p": 2, "y": 2}


class BlowUpError(ArithmeticError):
    def __init__(self, t: float, member: int | None = None):
        self.t = t
        self.member = member
        where = "" if member is None else f" (parameter set {member})"
        super().__init__(f"coefficient ODE produced non-finite values at t={t:.6g}{where}")


@lru_cache(maxsize=None)
def _layout(n: int):
    slices = {}
    start = 0
    for name in FAMILIES:
        shape = (n,) * (1 + _RANK[name])
        size = n ** (1 + _RANK[name])
        slices[name] = (slice(start, start + size), shape)
        start += size
    return slices, start


def state_size(n: int) -> int:
    return _layout(n)[1]


def unpack(state: np.ndarray, n: int) -> dict[str, np.ndarray]:
    """Views of a (..., state_size) array as the named families."""
    slices, _ = _layout(n)
    lead = state.shape[:-1]
    return {name: state[..., sl].reshape(lead + shape) for name, (sl, shape) in slices.items()}


def pack(families: dict[str, np.ndarray], n: int) -> np.ndarray:
    slices, size = _layout(n)
    lead = families["f"].shape[:-1]
    out = np.empty(lead + (size,))
    for name, (sl, _) in slices.items():
        out[..., sl] = families[name].reshape(lead + (-1,))
    return out


@dataclass(frozen=True)
class BrokerInputs:
    """Model constants entering the coefficient ODEs, stacked over a batch."""

    b: np.ndarray
    k: np.ndarray
    c: np.ndarray
    kappa: np.ndarray
    phi: np.ndarray
    a: np.ndarray
    theta_u: np.ndarray
    eta_u: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    eta: np.ndarray

    @property
    def n(self) -> int:
        return self.b.shape[-1]

    @classmethod
    def stack(cls, params: Sequence[MarketParams]) -> "BrokerInputs":
        get = lambda name: np.array([getattr(p, name) for p in params], dtype=float)
        return cls(b=get("b"), k=get("k"), c=get("c"), kappa=get("kappa"), phi=get("phi"),
                   a=get("a"), theta_u=get("theta_u"), eta_u=get("eta_u"), rho=get("rho"),
                   theta=get("theta"), eta=get("eta"))


def terminal_state(inputs: BrokerInputs) -> np.ndarray:
    """All coefficients vanish at T except n^i_{ii}(T) = -a_i."""
    n = inputs.n
    batch = inputs.b.shape[0]
    fam = {name: np.zeros((batch,) + (n,) * (1 + _RANK[name])) for name in FAMILIES}
    idx = np.arange(n)
    fam["n"][:, idx, idx, idx] = -inputs.a
    return pack(fam, n)


def coefficient_rhs(state: np.ndarray, inputs: BrokerInputs, omega0: np.ndarray, omega1: np.ndarray) -> np.ndarray:
    """Time derivative of every coefficient, batched.

    Parameters
    ----------
    state : (B, state_size) array
    omega0, omega1 : (B, N) arrays of the informed speed coefficients at
        the evaluation time.
    """
    n = inputs.n
    F = unpack(state, n)
    f, g, m, v = F["f"], F["g"], F["m"], F["v"]
    d, w, x, z = F["d"], F["w"], F["x"], F["z"]
    nn, pp, y = F["n"], F["p"], F["y"]

    K = 0.5 / inputs.k
    Bk = inputs.b * K
    kap, c, phi = inputs.kappa, inputs.c, inputs.phi
    th = inputs.theta[:, None]
    th_u = inputs.theta_u
    eta2 = inputs.eta[:, None] ** 2
    w0, w1 = omega0, omega1
    S0 = w0.sum(axis=1)[:, None]
    S1 = w1.sum(axis=1)[:, None]
    eye = np.eye(n)

    Nm = nn + nn.swapaxes(2, 3)
    Pm = pp + pp.swapaxes(2, 3)
    dd = np.einsum("Aii->Ai", d)
    xd = np.einsum("Aii->Ai", x)
    yi = np.einsum("Aiis->Ais", y)      # y^i_{i,s}
    Nj = np.einsum("Ajrj->Ajr", Nm)     # N^j_{r,j}
    Kdd = K * dd
    Kxd = K * xd

    out = {}
    R = inputs.rho * inputs.eta_u[:, :, None] * inputs.eta_u[:, None, :]
    out["f"] = -(eta2 * m + 0.5 * np.einsum("Ajl,Aijl->Ai", R, Pm))

    out["g"] = -(kap * w1 ** 2 - 0.5 * K * dd ** 2 + 2.0 * S1 * g
                 + np.einsum("Aij,Aj->Ai", d, Kdd) - np.einsum("Aij,Aj->Ai", d, w1))

    out["m"] = -(kap * w0 ** 2 - 2.0 * th * m - 0.5 * K * xd ** 2 + S0 * v
                 + np.einsum("Aij,Aj->Ai", x, Kxd) - np.einsum("Aij,Aj->Ai", x, w0))

    out["v"] = -(2.0 * kap * w0 * w1 - th * v + S1 * v
                 + np.einsum("Aij,Aj->Ai", d, Kxd) + np.einsum("Aij,Aj->Ai", x, Kdd)
                 - K * dd * xd + 2.0 * S0 * g
                 - np.einsum("Aij,Aj->Ai", d, w0) - np.einsum("Aij,Aj->Ai", x, w1))

    Nri = np.einsum("Airi->Air", Nm)    # N^i_{r,i}
    sumBdd = (Bk * dd).sum(axis=1)[:, None]
    dK = d * K[:, None, :]
    out["d"] = -(eye[None] * (sumBdd - Bk * dd)[:, :, None]
                 + d * Bk[:, None, :]
                 - Nri * Kdd[:, :, None]
                 + S1[:, :, None] * d
                 + np.einsum("Airj,Aj->Air", Nm, Kdd)
                 + np.einsum("Aij,Ajr->Air", dK, Nj)
                 - np.einsum("Airj,Aj->Air", Nm, w1))

    out["w"] = -(-d
                 - Kdd[:, :, None] * yi
                 - th_u[:, None, :] * w
                 + S1[:, :, None] * w
                 + np.einsum("Aij,Ajr->Air", dK, yi)
                 + np.einsum("Aijr,Aj->Air", y, Kdd)
                 - np.einsum("Aijr,Aj->Air", y, w1))

    sumBxd = (Bk * xd).sum(axis=1)[:, None]
    xK = x * K[:, None, :]
    out["x"] = -(eye[None] * (1.0 - Bk * xd + sumBxd)[:, :, None]
                 - th[:, :, None] * x
                 + x * Bk[:, None, :]
                 - Nri * Kxd[:, :, None]
                 + S0[:, :, None] * d
                 - np.einsum("Airj,Aj->Air", Nm, w0)
                 + np.einsum("Airj,Aj->Air", Nm, Kxd)
                 + np.einsum("Aij,Ajr->Air", xK, Nj))

    sumByi = np.einsum("Aj,Ajs->As", Bk, yi)[:, None, :]
    NK = Nm * K[:, None, None, :]
    out["y"] = -(eye[None, :, :, None] * (sumByi - Bk[:, :, None] * yi)[:, :, None, :]
                 - Nm
                 - th_u[:, None, None, :] * y
                 - (Nri * K[:, :, None])[:, :, :, None] * yi[:, :, None, :]
                 + y * Bk[:, None, :, None]
                 + np.einsum("Airj,Ajs->Airs", NK, yi)
                 + np.einsum("Ajr,Aijs->Airs", Nj * K[:, :, None], y))

    out["z"] = -(-x
                 - (th[:, :, None] + th_u[:, None, :]) * z
                 - Kxd[:, :, None] * yi
                 + S0[:, :, None] * w
                 - np.einsum("Aijr,Aj->Air", y, w0)
                 + np.einsum("Aij,Ajr->Air", xK, yi)
                 + np.einsum("Aijr,Aj->Air", y, Kxd))

    own = np.zeros((1, n, n, n))
    own[0, np.arange(n), np.arange(n), np.arange(n)] = 1.0
    # source placed at s = i: b_r^2/(2k_r) - B_i N^i_{r,i} + sum_j B_j N^j_{r,j}
    Tn = (inputs.b * Bk)[:, None, :] - Bk[:, :, None] * Nri + np.einsum("Aj,Ajr->Ar", Bk, Nj)[:, None, :]
    out["n"] = -(-(phi + 0.5 * inputs.b * Bk)[:, :, None, None] * own
                 + Tn[:, :, :, None] * eye[None, :, None, :]
                 + Nm * Bk[:, None, None, :]
                 - 0.5 * (Nri * K[:, :, None])[:, :, :, None] * Nri[:, :, None, :]
                 + np.einsum("Airj,Ajs->Airs", NK, Nj))

    out["p"] = -(c[:, :, None, None] * own
                 - th_u[:, None, None, :] * Pm
                 - y.swapaxes(2, 3)
                 - 0.5 * (yi * K[:, :, None])[:, :, :, None] * yi[:, :, None, :]
                 + np.einsum("Aijr,Ajs->Airs", y * K[:, None, :, None], yi))
    return pack(out, n)


def _omega_tables(params: Sequence[MarketParams], t: np.ndarray):
    """omega0, omega1 with shape (len(t), B, N) from the closed forms."""
    w0 = np.empty((len(t), len(params), params[0].n_brokers))
    w1 = np.empty_like(w0)
    for b, p in enumerate(params):
        c = informed_constants(p)
        m = m_I_of_t(t, c, p.theta)
        h2 = h2_of_t(t, c)
        if t[-1] == p.T:
            m[-1], h2[-1] = 0.0, -p.a_I
        w0[:, b, :] = np.outer(m, 0.5 / p.kappa)
        w1[:, b, :] = np.outer(h2, 1.0 / p.kappa)
    return w0, w1


def integrate_backward(params: Sequence[MarketParams], grid: TimeGrid, method: str = "euler",
                       store: bool = False, backend: str = "compiled"):
    """Backward sweep from T to 0 for a batch of parameter sets.

    Returns the (B, state_size) coefficient state at t=0, or the full
    (n_steps + 1, B, state_size) history when ``store`` is set. The
    ``"compiled"`` backend runs a loop-level kernel; ``"numpy"`` steps the
    einsum reference :func:`coefficient_rhs` and is kept for verification.
    """
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    if backend not in ("compiled", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    inputs = BrokerInputs.stack(params)
    state = terminal_state(inputs)
    n_steps, dt = grid.n_steps, grid.dt
    w0, w1 = _omega_tables(params, grid.t)
    if method == "rk4":
        mid = 0.5 * (grid.t[:-1] + grid.t[1:])
        w0m, w1m = _omega_tables(params, mid)
    else:
        w0m = w1m = np.empty((0,) + w0.shape[1:])
    if backend == "compiled":
        from ._sweep import sweep

        history = np.empty(((n_steps + 1) if store else 0,) + state.shape)
        step, member = sweep(state, inputs.b, inputs.k, inputs.c, inputs.kappa, inputs.phi,
                             inputs.theta_u, inputs.eta_u, inputs.rho, inputs.theta, inputs.eta,
                             w0, w1, w0m, w1m, dt, method == "rk4", history)
        if step >= 0:
            raise BlowUpError(float(grid.t[step]), int(member) if len(params) > 1 else None)
        return history if store else state

    history = np.empty((n_steps + 1,) + state.shape) if store else None
    if store:
        history[-1] = state
    for k in range(n_steps - 1, -1, -1):
        if method == "euler":
            state = state - dt * coefficient_rhs(state, inputs, w0[k + 1], w1[k + 1])
        else:
            k1 = coefficient_rhs(state, inputs, w0[k + 1], w1[k + 1])
            k2 = coefficient_rhs(state - 0.5 * dt * k1, inputs, w0m[k], w1m[k])
            k3 = coefficient_rhs(state - 0.5 * dt * k2, inputs, w0m[k], w1m[k])
            k4 = coefficient_rhs(state - dt * k3, inputs, w0[k], w1[k])
            state = state - dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(state).all():
            bad = np.flatnonzero(~np.isfinite(state).all(axis=1))
            raise BlowUpError(float(grid.t[k]), int(bad[0]) if len(params) > 1 else None)
        if store:
            history[k] = state
    return history if store else state


@dataclass(frozen=True)
class BrokerCoefficients:
    """Coefficient families on the grid; each has leading time axis.

    Shapes: f, g, m, v -> (T+1, N); d, w, x, z -> (T+1, N, N) indexed
    [t, i, r]; n, p, y -> (T+1, N, N, N) indexed [t, i, r, s], where i is
    the owning broker.
    """

    grid: TimeGrid
    state: np.ndarray
    n_brokers: int

    def __getattr__(self, name):
        if name in FAMILIES:
            return unpack(self.state, self.n_brokers)[name]
        raise AttributeError(name)

    @property
    def N(self) -> np.ndarray:
        return self.n + self.n.swapaxes(-1, -2)

    @property
    def P(self) -> np.ndarray:
        return self.p + self.p.swapaxes(-1, -2)

    def at(self, k: int) -> dict[str, np.ndarray]:
        return unpack(self.state[k], self.n_brokers)

    def column_names(self) -> list[str]:
        n = self.n_brokers
        names = []
        for fam in FAMILIES:
            rank = _RANK[fam]
            for idx in np.ndindex(*(n,) * (1 + rank)):
                i = idx[0] + 1
                rest = ",".join(str(r + 1) for r in idx[1:])
                names.append(f"{fam}^{i}" if rank == 0 else f"{fam}^{i}_{{{rest}}}")
        return names

    def to_csv_rows(self):
        return ["t"] + self.column_names(), np.column_stack([self.grid.t, self.state])


def terminal_conditions(p: MarketParams) -> dict[str, np.ndarray]:
    return unpack(terminal_state(BrokerInputs.stack([p]))[0], p.n_brokers)


def ode_rhs(t: float, coeffs: dict[str, np.ndarray], p: MarketParams, informed: InformedSolution) -> dict[str, np.ndarray]:
    """Time derivative of all coefficient families for one parameter set."""
    n = p.n_brokers
    w0, w1 = informed.omega_coefficients(np.array([t]))
    idx = np.searchsorted(informed.grid.t, t)
    if idx < len(informed.grid.t) and informed.grid.t[idx] == t:
        w0, w1 = informed.omega0[idx][None], informed.omega1[idx][None]
    state = pack({name: np.asarray(coeffs[name])[None] for name in FAMILIES}, n)
    rhs = coefficient_rhs(state, BrokerInputs.stack([p]), w0, w1)
    return unpack(rhs[0], n)


def solve_backward(p: MarketParams, informed: InformedSolution | None = None,
                   grid: TimeGrid | None = None, method: str = "euler",
                   backend: str = "compiled") -> BrokerCoefficients:
    """Solve the coefficient system on the full grid (explicit Euler by default).

    ``informed`` is accepted for interface symmetry; the informed speed
    coefficients are recomputed from the closed forms so the RK4 mode can
    evaluate them between grid nodes.
    """
    grid = TimeGrid.from_params(p) if grid is None else grid
    history = integrate_backward([p], grid, method=method, store=True, backend=backend)
    return BrokerCoefficients(grid=grid, state=history[:, 0, :], n_brokers=p.n_brokers)


def feedback_matrix(coeffs: dict[str, np.ndarray], p: MarketParams) -> np.ndarray:
    """Rows give nu^i as a linear map of (alpha, qI, q_1..q_N, u_1..u_N)."""
    n = p.n_brokers
    K = 0.5 / p.k
    G = np.zeros((n, 2 + 2 * n))
    N = coeffs["n"] + np.swapaxes(coeffs["n"], -1, -2)
    for i in range(n):
        G[i, 0] = coeffs["x"][i, i]
        G[i, 1] = coeffs["d"][i, i]
        G[i, 2:2 + n] = N[i, i, :]
        G[i, 2 + i] += p.b[i]
        G[i, 2 + n:] = coeffs["y"][i, i, :]
    return G * K[:, None]


def feedback_tables(coeffs: BrokerCoefficients, p: MarketParams) -> np.ndarray:
    """Feedback matrices at every grid node, shape (T+1, N, 2 + 2N)."""
    n = p.n_brokers
    K = 0.5 / p.k
    ar = np.arange(n)
    G = np.zeros((len(coeffs.grid), n, 2 + 2 * n))
    N = coeffs.N
    G[:, :, 0] = coeffs.x[:, ar, ar]
    G[:, :, 1] = coeffs.d[:, ar, ar]
    G[:, :, 2:2 + n] = N[:, ar, ar, :]
    G[:, ar, 2 + ar] += p.b
    G[:, :, 2 + n:] = coeffs.y[:, ar, ar, :]
    return G * K[None, :, None]


def _state_vector(alpha, qI, q, u):
    return np.concatenate([[alpha, qI], np.asarray(q, float), np.asarray(u, float)])


def _grid_index(t, grid: TimeGrid) -> int:
    k = int(round(t / grid.dt))
    if not np.isclose(grid.t[k], t, rtol=0, atol=1e-12 * max(1.0, grid.T)):
        raise ValueError(f"t={t} is not a grid node")
    return k


def broker_feedback_speed(t, alpha, qI, q, u, coeffs: BrokerCoefficients, p: MarketParams) -> np.ndarray:
    """Equilibrium lit-market speed of every broker at a grid node."""
    k = _grid_index(t, coeffs.grid)
    return feedback_matrix(coeffs.at(k), p) @ _state_vector(alpha, qI, q, u)


def reduced_value(fam: dict[str, np.ndarray], alpha, qI, q, u) -> np.ndarray:
    """h^i for every broker at a batch of states.

    ``alpha``, ``qI`` have shape (P,), ``q`` and ``u`` shape (P, N); the
    result has shape (P, N).
    """
    alpha = np.asarray(alpha, float)
    qI = np.asarray(qI, float)
    q = np.atleast_2d(q)
    u = np.atleast_2d(u)
    h = (fam["f"][None] + fam["g"][None] * qI[:, None] ** 2 + fam["m"][None] * alpha[:, None] ** 2
         + np.einsum("irs,Pr,Ps->Pi", fam["n"], q, q)
         + np.einsum("irs,Pr,Ps->Pi", fam["p"], u, u)
         + np.einsum("ir,Pr->Pi", fam["d"], q) * qI[:, None]
         + fam["v"][None] * (qI * alpha)[:, None]
         + np.einsum("ir,Pr->Pi", fam["w"], u) * qI[:, None]
         + np.einsum("ir,Pr->Pi", fam["x"], q) * alpha[:, None]
         + np.einsum("irs,Pr,Ps->Pi", fam["y"], q, u)
         + np.einsum("ir,Pr->Pi", fam["z"], u) * alpha[:, None])
    return h


def broker_value(t, S, alpha, qI, q, u, x, coeffs: BrokerCoefficients) -> np.ndarray:
    """H^i = x^i + q^i S + h^i for every broker at a grid node."""
    k = _grid_index(t, coeffs.grid)
    q = np.asarray(q, float)
    h = reduced_value(coeffs.at(k), np.array([alpha]), np.array([qI]), q[None], np.asarray(u, float)[None])[0]
    return np.asarray(x, float) + q * S + h


def value_gradients(fam: dict[str, np.ndarray], alpha, qI, q, u):
    """Partial derivatives of every h^i at a batch of states.

    Returns dict with 'alpha', 'qI' of shape (P, N) and 'q', 'u' of shape
    (P, N_owner, N_var).
    """
    N = fam["n"] + np.swapaxes(fam["n"], -1, -2)
    P = fam["p"] + np.swapaxes(fam["p"], -1, -2)
    a = alpha[:, None]
    Q = qI[:, None]
    d_alpha = (2 * fam["m"][None] * a + fam["v"][None] * Q
               + np.einsum("ir,Pr->Pi", fam["x"], q) + np.einsum("ir,Pr->Pi", fam["z"], u))
    d_qI = (2 * fam["g"][None] * Q + np.einsum("ir,Pr->Pi", fam["d"], q)
            + fam["v"][None] * a + np.einsum("ir,Pr->Pi", fam["w"], u))
    d_q = (np.einsum("ijs,Ps->Pij", N, q) + fam["d"][None] * Q[:, :, None]
           + fam["x"][None] * a[:, :, None] + np.einsum("ijs,Ps->Pij", fam["y"], u))
    d_u = (np.einsum("ijs,Ps->Pij", P, u) + fam["w"][None] * Q[:, :, None]
           + np.einsum("irj,Pr->Pij", fam["y"], q) + fam["z"][None] * a[:, :, None])
    return {"alpha": d_alpha, "qI": d_qI, "q": d_q, "u": d_u, "alpha2": 2 * fam["m"], "uu": P}


def pde_residual(k: int, alpha, qI, q, u, coeffs: BrokerCoefficients, p: MarketParams,
                 informed: InformedSolution) -> np.ndarray:
    """Left side of each broker's reduced HJB equation at grid node ``k``.

    The time derivative of h^i at the fixed state uses a five-point central
    stencil over the stored solution, so ``k`` must be at least two nodes
    away from either end. Spatial derivatives come from the quadratic form.
    Shapes follow :func:`reduced_value`; the result has shape (P, N).
    """
    grid = coeffs.grid
    if k < 2 or k > grid.n_steps - 2:
        raise ValueError("residual needs two grid nodes on each side")
    alpha = np.asarray(alpha, float)
    qI = np.asarray(qI, float)
    q = np.atleast_2d(np.asarray(q, float))
    u = np.atleast_2d(np.asarray(u, float))

    hv = [reduced_value(coeffs.at(k + j), alpha, qI, q, u) for j in (-2, -1, 1, 2)]
    dh_dt = (hv[0] - 8 * hv[1] + 8 * hv[2] - hv[3]) / (12 * grid.dt)

    fam = coeffs.at(k)
    D = value_gradients(fam, alpha, qI, q, u)
    omega = alpha[:, None] * informed.omega0[k][None] + qI[:, None] * informed.omega1[k][None]
    n = p.n_brokers
    res = np.empty((len(alpha), n))
    drift_q = u + omega
    # l_j = dh^j/dq_j + b_j q_j for every j
    own_grad = np.einsum("Pjj->Pj", D["q"]) + p.b[None] * q
    eta_u = p.eta_u
    cov = p.rho * np.outer(eta_u, eta_u)
    for i in range(n):
        lam = D["q"][:, i, :] + p.b[None] * q[:, [i]]
        res[:, i] = (
            dh_dt[:, i]
            + alpha * q[:, i]
            - p.phi[i] * q[:, i] ** 2
            - np.sum(drift_q * D["q"][:, i, :], axis=1)
            + p.kappa[i] * omega[:, i] ** 2
            + p.c[i] * u[:, i] ** 2
            - p.theta * alpha * D["alpha"][:, i]
            + 0.5 * p.eta ** 2 * D["alpha2"][i]
            - np.sum(p.theta_u[None] * u * D["u"][:, i, :], axis=1)
            + 0.5 * np.sum(cov * D["uu"][i])
            + np.sum(omega, axis=1) * D["qI"][:, i]
            + np.sum(own_grad * lam / (2 * p.k[None]), axis=1)
            - lam[:, i] ** 2 / (4 * p.k[i])
        )
    return res


@dataclass(frozen=True)
class NetSpeedCoefficients:
    """Decomposition of broker i's net speed nu - omega - u into six terms."""

    broker: int
    grid: TimeGrid
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    r4: np.ndarray
    r5: np.ndarray
    r6: np.ndarray

    def to_csv_rows(self):
        n = self.r3.shape[1]
        header = ["t", "r1", "r2"] + [f"r3_{j + 1}" for j in range(n)] + ["r4", "r5"] + [f"r6_{j + 1}" for j in range(n)]
        data = np.column_stack([self.grid.t, self.r1, self.r2, self.r3, self.r4, self.r5, self.r6])
        return header, data

    def net_speed(self, k, alpha, qI, q, u):
        """Reconstructed nu^i - omega^i - u^i at node k (vectorised over paths)."""
        i = self.broker
        q = np.atleast_2d(q)
        u = np.atleast_2d(u)
        others = [j for j in range(q.shape[1]) if j != i]
        return (self.r1[k] * alpha + self.r2[k] * q[:, i] + q[:, others] @ self.r3[k, others]
                + self.r4[k] * qI + self.r5[k] * u[:, i] + u[:, others] @ self.r6[k, others])


def net_speed_coefficients(coeffs: BrokerCoefficients, informed: InformedSolution, p: MarketParams,
                           i: int = 0) -> NetSpeedCoefficients:
    """r-coefficients of broker i; r3 and r6 hold one column per broker (own column zero)."""
    k2 = 2.0 * p.k[i]
    N = coeffs.N
    others = np.arange(p.n_brokers) != i
    r3 = N[:, i, :, i] / k2
    r6 = coeffs.y[:, i, i, :] / k2
    r3[:, ~others] = 0.0
    r6[:, ~others] = 0.0
    return NetSpeedCoefficients(
        broker=i, grid=coeffs.grid,
        r1=coeffs.x[:, i, i] / k2 - informed.omega0[:, i],
        r2=(p.b[i] + 2.0 * coeffs.n[:, i, i, i]) / k2,
        r3=r3,
        r4=coeffs.d[:, i, i] / k2 - informed.omega1[:, i],
        r5=coeffs.y[:, i, i, i] / k2 - 1.0,
        r6=r6,
    )
