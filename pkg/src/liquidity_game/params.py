"""Market parameters, time grid and shared numerical helpers.

All per-broker quantities are stored as length-N arrays indexed 0..N-1;
error messages use 1-based broker labels (``kappa_1`` is the first broker).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

PSD_TOL = 1e-10
WORKERS_ENV = "LIQUIDITY_GAME_WORKERS"

BROKER_FIELDS = ("b", "k", "kappa", "c", "a", "phi", "theta_u", "eta_u", "u0", "q0", "x0")
SCALAR_FIELDS = (
    "T", "n_steps", "s0", "alpha0", "sigma", "theta", "eta",
    "a_I", "phi_I", "psi_I", "qI0", "xI0",
)


class ParameterError(ValueError):
    """Raised when a parameter set violates one or more model invariants.

    ``violations`` holds one human-readable message per failed check.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _frozen_array(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class MarketParams:
    """Every constant of the N-broker / informed-trader market.

    Broker arrays (``b``, ``k``, ``kappa``, ...) must all have length N, and
    ``rho`` is the N x N correlation matrix of the uninformed-flow shocks.
    Construction only normalises shapes; call :func:`validate_params` to
    check the model invariants.
    """

    T: float
    sigma: float
    theta: float
    eta: float
    b: np.ndarray
    k: np.ndarray
    kappa: np.ndarray
    c: np.ndarray
    a: np.ndarray
    phi: np.ndarray
    theta_u: np.ndarray
    eta_u: np.ndarray
    a_I: float
    phi_I: float
    psi_I: float
    n_steps: int = 5000
    s0: float = 100.0
    alpha0: float = 0.0
    u0: np.ndarray | None = None
    rho: np.ndarray | None = None
    q0: np.ndarray | None = None
    x0: np.ndarray | None = None
    qI0: float = 0.0
    xI0: float = 0.0

    def __post_init__(self):
        n = len(np.atleast_1d(self.kappa))
        for name in BROKER_FIELDS:
            value = getattr(self, name)
            if value is None:
                value = np.zeros(n)
            object.__setattr__(self, name, _frozen_array(np.atleast_1d(value)))
        rho = np.eye(n) if self.rho is None else self.rho
        object.__setattr__(self, "rho", _frozen_array(rho))
        for name in SCALAR_FIELDS:
            value = getattr(self, name)
            object.__setattr__(self, name, int(value) if name == "n_steps" else float(value))

    @property
    def n_brokers(self) -> int:
        return len(self.kappa)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def replace(self, **changes) -> "MarketParams":
        """Return a copy with some fields changed (arrays are re-frozen)."""
        return dataclasses.replace(self, **changes)

    def with_broker_value(self, name: str, broker: int, value: float) -> "MarketParams":
        """Copy with a single per-broker entry (0-based ``broker``) replaced."""
        arr = np.array(getattr(self, name), dtype=float)
        arr[broker] = value
        return self.replace(**{name: arr})

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {name: getattr(self, name) for name in SCALAR_FIELDS}
        for name in BROKER_FIELDS:
            out[name] = getattr(self, name).tolist()
        out["rho"] = self.rho.tolist()
        out["n_brokers"] = self.n_brokers
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MarketParams":
        """Build from a mapping with exactly the field names of this class.

        ``n_brokers`` may be given and must agree with the broker arrays.
        Unknown keys raise :class:`ParameterError`.
        """
        known = set(SCALAR_FIELDS) | set(BROKER_FIELDS) | {"rho", "n_brokers"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError([f"unknown parameter key '{key}'" for key in unknown])
        kwargs = {key: value for key, value in data.items() if key != "n_brokers"}
        try:
            params = cls(**kwargs)
        except TypeError as exc:
            raise ParameterError([str(exc)]) from None
        if "n_brokers" in data and int(data["n_brokers"]) != params.n_brokers:
            raise ParameterError(
                [f"n_brokers={data['n_brokers']} disagrees with broker arrays of length {params.n_brokers}"]
            )
        return params


def load_params(path: str | Path) -> MarketParams:
    with open(path) as fh:
        return MarketParams.from_dict(json.load(fh))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k T / n_steps, k = 0..n_steps."""

    T: float
    n_steps: int
    t: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        t = np.arange(self.n_steps + 1) * (self.T / self.n_steps)
        t[-1] = self.T
        t.flags.writeable = False
        object.__setattr__(self, "t", t)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def __len__(self) -> int:
        return self.n_steps + 1

    @classmethod
    def from_params(cls, p: MarketParams) -> "TimeGrid":
        return cls(p.T, p.n_steps)


@dataclass
class MarketState:
    """Snapshot of the full market state at one time."""

    t: float
    S: float
    alpha: float
    qI: float
    q: np.ndarray
    x: np.ndarray
    xI: float
    u: np.ndarray

    def is_finite(self) -> bool:
        scalars = np.array([self.t, self.S, self.alpha, self.qI, self.xI])
        return bool(np.all(np.isfinite(scalars)) and np.all(np.isfinite(self.q))
                    and np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.u)))


def harmonic_kappa(kappa) -> float:
    """Aggregate liquidity price 1 / sum_j (1 / kappa_j)."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0):
        raise ValueError("all kappa_j must be > 0")
    return float(1.0 / np.sum(1.0 / kappa))


def _leading_minors(rho: np.ndarray) -> list[float]:
    return [float(np.linalg.det(rho[:j, :j])) for j in range(1, len(rho) + 1)]


def correlation_root(rho) -> np.ndarray:
    """Lower-triangular L with L @ L.T == rho, rank-deficient rho allowed.

    Eigenvalues down to -1e-10 are clipped to zero. When rho is singular a
    plain Cholesky fails, so L is recovered by an LDL^T-style elimination
    that zeroes the columns of vanishing pivots.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("rho must be a square matrix")
    if not np.allclose(rho, rho.T, atol=1e-12):
        raise ValueError("rho must be symmetric")
    eig = np.linalg.eigvalsh(rho)
    if eig.min() < -PSD_TOL:
        minors = _leading_minors(rho)
        bad = next((j + 1 for j, m in enumerate(minors) if m < -PSD_TOL), len(rho))
        raise ValueError(
            f"rho is not positive semi-definite (leading minor of order {bad} = {minors[bad - 1]:.3e})"
        )
    n = len(rho)
    L = np.zeros_like(rho)
    for j in range(n):
        diag = rho[j, j] - L[j, :j] @ L[j, :j]
        if diag <= PSD_TOL:
            # dependent direction: column j stays zero
            continue
        L[j, j] = np.sqrt(diag)
        for i in range(j + 1, n):
            L[i, j] = (rho[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def validate_params(p: MarketParams) -> MarketParams:
    """Check every model invariant and return ``p`` unchanged.

    Raises
    ------
    ParameterError
        Listing each violated invariant by field name.
    """
    errors: list[str] = []
    n = p.n_brokers
    for name in ("T", "sigma", "theta", "eta"):
        if not getattr(p, name) > 0:
            errors.append(f"{name} must be > 0")
    if p.n_steps < 1:
        errors.append("n_steps must be a positive integer")
    for name in BROKER_FIELDS:
        if getattr(p, name).shape != (n,):
            errors.append(f"{name} must have length {n}")
    for name in ("b", "k", "kappa", "c"):
        for j, value in enumerate(getattr(p, name)):
            if not value > 0:
                errors.append(f"{name}_{j + 1} must be > 0")
    for name in ("a", "phi", "theta_u", "eta_u"):
        for j, value in enumerate(getattr(p, name)):
            if not value >= 0:
                errors.append(f"{name}_{j + 1} must be >= 0")
    for name in ("a_I", "phi_I", "psi_I"):
        if not getattr(p, name) >= 0:
            errors.append(f"{name} must be >= 0")

    rho = p.rho
    if rho.shape != (n, n):
        errors.append(f"rho must be {n}x{n}")
    else:
        if not np.allclose(rho, rho.T, atol=1e-12):
            errors.append("rho must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            errors.append("rho must have unit diagonal")
        try:
            correlation_root(rho)
        except ValueError as exc:
            errors.append(str(exc))

    if not errors:
        kappa = harmonic_kappa(p.kappa)
        Phi = 0.5 * p.psi_I * p.sigma ** 2 + p.phi_I
        root = np.sqrt(kappa * Phi)
        if np.isclose(p.a_I, root, rtol=1e-12, atol=1e-300):
            errors.append("zeta singular: a_I equals sqrt(kappa * Phi)")
    if errors:
        raise ParameterError(errors)
    return p


def worker_count() -> int:
    """Worker processes for batched solves and path chunks (env override)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return value
