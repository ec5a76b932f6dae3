"""Closed-form solution of the informed trader's robust execution problem.

The informed trader splits his order flow across N brokers and faces an
entropic penalty on model misspecification. His value function is quadratic
in inventory, with coefficient functions available in closed form:

    H^I = x + S q + f0(t) + alpha^2 f2(t) + alpha m(t) q + h2(t) q^2

and the optimal speed sent to broker j is
``omega_j = omega0_j(t) alpha + omega1_j(t) q`` with
``omega0_j = m / (2 kappa_j)`` and ``omega1_j = h2 / kappa_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .params import MarketParams, TimeGrid, harmonic_kappa

EXTRACTION_EPS = 1e-12


class DegenerateInformedProblem(ValueError):
    """The aggregate penalty Phi vanishes so the closed forms are 0/0."""


class AlphaExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class InformedConstants:
    kappa: float
    Phi: float
    gamma: float
    zeta: float
    a_I: float
    T: float

    @property
    def degenerate(self) -> bool:
        return self.Phi == 0.0

    @property
    def root(self) -> float:
        """sqrt(kappa * Phi), the long-horizon magnitude of h2."""
        return float(np.sqrt(self.kappa * self.Phi))


def informed_constants(p: MarketParams) -> InformedConstants:
    """Aggregate liquidity price, effective penalty, decay rate and zeta."""
    kappa = harmonic_kappa(p.kappa)
    Phi = 0.5 * p.psi_I * p.sigma ** 2 + p.phi_I
    gamma = np.sqrt(Phi / kappa)
    root = np.sqrt(kappa * Phi)
    denom = p.a_I - root
    if denom == 0.0 or np.isclose(p.a_I, root, rtol=1e-12, atol=1e-300):
        raise ValueError("zeta singular: a_I equals sqrt(kappa * Phi)")
    zeta = (p.a_I + root) / denom
    return InformedConstants(kappa=kappa, Phi=Phi, gamma=float(gamma), zeta=float(zeta), a_I=p.a_I, T=p.T)


def _check_nondegenerate(c: InformedConstants):
    if c.degenerate:
        raise DegenerateInformedProblem(
            "psi_I = phi_I = 0 gives Phi = 0; the closed forms are undefined "
            "(integrate the Riccati equation dh2/dt = Phi - h2^2 / kappa instead)"
        )


def _ratio(tau, c: InformedConstants):
    # zeta - e^{-2 gamma tau}, the scaled denominator shared by h2 and m
    e2 = np.exp(-2.0 * c.gamma * tau)
    denom = c.zeta - e2
    if np.any(denom == 0.0):
        raise ZeroDivisionError("h2 denominator vanishes")
    return e2, denom


def h2_of_t(t, c: InformedConstants):
    """Inventory coefficient h2(t) of the informed value function."""
    _check_nondegenerate(c)
    tau = c.T - np.asarray(t, dtype=float)
    e2, denom = _ratio(tau, c)
    return -c.root * (c.zeta + e2) / denom


def _expm1_ratio(x):
    # (1 - e^{-x}) / x, equal to 1 at x = 0
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = x != 0.0
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


def m_I_of_t(t, c: InformedConstants, theta: float):
    """Alpha-inventory cross coefficient m(t).

    Written in a form scaled by e^{-gamma tau} so that neither large
    gamma * tau nor theta == gamma causes overflow or division by zero; the
    theta -> gamma limit is handled by (1 - e^{-x}) / x -> 1.
    """
    _check_nondegenerate(c)
    tau = c.T - np.asarray(t, dtype=float)
    g = c.gamma
    e2, denom = _ratio(tau, c)
    first = c.zeta * (-np.expm1(-(theta + g) * tau)) / (theta + g)
    second = e2 * tau * _expm1_ratio((theta - g) * tau)
    return (first - second) / denom


def f_integrals(c: InformedConstants, theta: float, eta: float, grid: TimeGrid):
    """Quadrature for f2 and f0 on the grid.

    f2(t) = int_t^T m(u)^2 / (4 kappa) e^{-2 theta (u - t)} du and
    f0(t) = eta^2 int_t^T f2(u) du = eta^2 (G(t) - f2(t)) / (2 theta), where
    G(t) = int_t^T m(u)^2 / (4 kappa) du. Each grid interval is integrated
    with Simpson's rule using the closed-form m at the interval midpoint.
    """
    t = grid.t
    dt = grid.dt
    mid = 0.5 * (t[:-1] + t[1:])
    g_nodes = m_I_of_t(t, c, theta) ** 2 / (4.0 * c.kappa)
    g_mid = m_I_of_t(mid, c, theta) ** 2 / (4.0 * c.kappa)

    decay_half = np.exp(-theta * dt)
    decay = decay_half ** 2
    # contribution of [t_k, t_{k+1}] with kernel measured from t_k
    local_f2 = dt / 6.0 * (g_nodes[:-1] + 4.0 * g_mid * decay_half + g_nodes[1:] * decay)
    local_G = dt / 6.0 * (g_nodes[:-1] + 4.0 * g_mid + g_nodes[1:])

    n = grid.n_steps
    # f2_k = decay * f2_{k+1} + local_k, run backwards as a first-order filter
    f2 = np.zeros(n + 1)
    f2[:-1] = lfilter([1.0], [1.0, -decay], local_f2[::-1])[::-1]
    G = np.zeros(n + 1)
    G[:-1] = np.cumsum(local_G[::-1])[::-1]
    f0 = eta ** 2 * (G - f2) / (2.0 * theta)
    f0[-1] = 0.0
    return f2, f0


@dataclass(frozen=True)
class InformedSolution:
    """Closed-form coefficient functions tabulated on a time grid.

    ``omega0`` and ``omega1`` have shape (n_steps + 1, N).
    """

    constants: InformedConstants
    grid: TimeGrid
    kappa: np.ndarray
    theta: float
    eta: float
    psi_I: float
    sigma: float
    m_I: np.ndarray
    h2: np.ndarray
    f2: np.ndarray
    f0: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray

    def omega_coefficients(self, t):
        """(omega0, omega1) at arbitrary times from the closed forms."""
        m = m_I_of_t(t, self.constants, self.theta)
        h2 = h2_of_t(t, self.constants)
        return (np.multiply.outer(m, 0.5 / self.kappa), np.multiply.outer(h2, 1.0 / self.kappa))

    def interp(self, name: str, t):
        return np.interp(t, self.grid.t, getattr(self, name))

    def to_csv_rows(self):
        n = len(self.kappa)
        header = ["t", "m_I", "h2", "f2", "f0"]
        header += [f"omega0_{j + 1}" for j in range(n)]
        header += [f"omega1_{j + 1}" for j in range(n)]
        data = np.column_stack([self.grid.t, self.m_I, self.h2, self.f2, self.f0, self.omega0, self.omega1])
        return header, data


def solve_informed(p: MarketParams, grid: TimeGrid | None = None) -> InformedSolution:
    grid = TimeGrid.from_params(p) if grid is None else grid
    c = informed_constants(p)
    _check_nondegenerate(c)
    m = m_I_of_t(grid.t, c, p.theta)
    h2 = h2_of_t(grid.t, c)
    # terminal identities hold exactly
    m[-1] = 0.0
    h2[-1] = -p.a_I
    f2, f0 = f_integrals(c, p.theta, p.eta, grid)
    kappa = np.asarray(p.kappa, dtype=float)
    omega0 = np.outer(m, 0.5 / kappa)
    omega1 = np.outer(h2, 1.0 / kappa)
    return InformedSolution(
        constants=c, grid=grid, kappa=kappa, theta=p.theta, eta=p.eta,
        psi_I=p.psi_I, sigma=p.sigma, m_I=m, h2=h2, f2=f2, f0=f0,
        omega0=omega0, omega1=omega1,
    )


def _coeffs_at(t, sol: InformedSolution):
    idx = np.searchsorted(sol.grid.t, t)
    if idx < len(sol.grid.t) and sol.grid.t[idx] == t:
        return sol.omega0[idx], sol.omega1[idx]
    w0, w1 = sol.omega_coefficients(np.array([t]))
    return w0[0], w1[0]


def informed_speed(t, alpha, qI, sol: InformedSolution) -> np.ndarray:
    """Optimal speed sent to each broker, shape (N,) for scalar state."""
    w0, w1 = _coeffs_at(t, sol)
    return w0 * alpha + w1 * qI


def informed_value(t, alpha, S, qI, xI, sol: InformedSolution) -> float:
    m = float(m_I_of_t(t, sol.constants, sol.theta))
    h2 = float(h2_of_t(t, sol.constants))
    f2 = float(sol.interp("f2", t))
    f0 = float(sol.interp("f0", t))
    return xI + S * qI + f0 + alpha ** 2 * f2 + alpha * m * qI + h2 * qI ** 2


def worst_case_drift(qI, psi_I: float, sigma: float):
    """Drift distortion chosen by the adversarial measure."""
    return psi_I * sigma * qI


def total_speed_factor(kappa, i: int) -> float:
    """Multiplier turning broker i's observed flow into total informed flow."""
    kappa = np.asarray(kappa, dtype=float)
    return float(1.0 + sum(kappa[i] / kappa[j] for j in range(len(kappa)) if j != i))


def infer_total_and_inventory(omega_i, kappa, i: int, qI0_est: float, grid: TimeGrid):
    """Broker i's reconstruction of total flow and informed inventory.

    Inventory uses the left-endpoint rule, matching the simulator's update,
    so that with the true initial inventory the simulated path is recovered
    up to rounding.
    """
    omega_i = np.asarray(omega_i, dtype=float)
    total = total_speed_factor(kappa, i) * omega_i
    Q = np.empty(len(grid))
    Q[0] = qI0_est
    Q[1:] = qI0_est + np.cumsum(total[: grid.n_steps] * grid.dt)
    return total, Q


def extract_alpha(omega_i, Q_hat, t, sol: InformedSolution, i: int):
    """Invert broker i's observed flow for the signal given an inventory estimate."""
    w0, w1 = _coeffs_at(t, sol)
    if abs(w0[i]) < EXTRACTION_EPS:
        raise AlphaExtractionError(f"alpha extraction undefined at t={t}: omega0 vanishes")
    return (omega_i - w1[i] * Q_hat) / w0[i]
