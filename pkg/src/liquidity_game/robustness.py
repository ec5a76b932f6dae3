"""Broker losses from a misspecified initial inventory of the informed trader.

Brokers observe the informed flow exactly, so a wrong prior for the initial
inventory shifts their inventory estimate by a constant. Feeding the shifted
estimate into the signal extraction distorts the signal they act on; the
informed trader is unaffected and keeps trading on the true state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .broker_ode import BrokerCoefficients
from .informed import InformedSolution
from .params import MarketParams
from .simulator import SimulationConfig, _tables, path_noise, simulate_paths

DEFAULT_SWEEP = tuple(np.round(np.arange(-2.0, 2.0001, 0.5), 10))
CSV_COLUMNS = ("Q0_I", "gap_H_mean", "gap_H_stderr", "gap_PnL_mean", "gap_PnL_stderr")


@dataclass(frozen=True)
class RobustnessScenario:
    """True initial inventories to sweep and the brokers' fixed estimate."""

    sweep: tuple = DEFAULT_SWEEP
    qI0_estimate: float = 0.0
    config: SimulationConfig = field(default_factory=lambda: SimulationConfig(n_paths=4000))

    def __post_init__(self):
        if len(self.sweep) == 0:
            raise ValueError("sweep must contain at least one initial inventory")


@dataclass
class RobustnessResult:
    """Paired per-path gaps, each of shape (len(sweep), n_paths, N).

    A gap is the fully informed outcome minus the misspecified outcome, so
    positive values are losses caused by the wrong estimate.
    """

    sweep: np.ndarray
    qI0_estimate: float
    gap_H: np.ndarray
    gap_PnL: np.ndarray
    H_true: np.ndarray
    H_hat: np.ndarray

    @staticmethod
    def _se(x):
        n = x.shape[1]
        return np.std(x, axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(x.shape[::2])

    @property
    def gap_H_mean(self):
        return self.gap_H.mean(axis=1)

    @property
    def gap_H_stderr(self):
        return self._se(self.gap_H)

    @property
    def gap_PnL_mean(self):
        return self.gap_PnL.mean(axis=1)

    @property
    def gap_PnL_stderr(self):
        return self._se(self.gap_PnL)

    def to_csv_rows(self, broker: int = 0):
        """Rows for one broker in the fixed column order of ``CSV_COLUMNS``."""
        data = np.column_stack([self.sweep, self.gap_H_mean[:, broker], self.gap_H_stderr[:, broker],
                                self.gap_PnL_mean[:, broker], self.gap_PnL_stderr[:, broker]])
        return list(CSV_COLUMNS), data


def misspecified_ensemble(scn: RobustnessScenario, p: MarketParams, informed: InformedSolution,
                          coeffs: BrokerCoefficients, max_rows: int = 4000) -> RobustnessResult:
    """Paired simulations with and without the inventory misspecification.

    Both arms of every sweep point reuse the same shocks for path ``k``
    (common random numbers), so at ``Q0_I == estimate`` the two arms produce
    identical trajectories and the gap is exactly zero.
    """
    cfg = scn.config
    sweep = np.asarray(scn.sweep, dtype=float)
    n_pts = len(sweep)
    n = p.n_brokers
    tb = _tables(informed, coeffs, p, None)
    # each base path expands to 2 arms x sweep points simulated rows
    base_chunk = max(1, max_rows // (2 * n_pts))
    H = np.empty((2, n_pts, cfg.n_paths, n))
    PnL = np.empty_like(H)
    for start in range(0, cfg.n_paths, base_chunk):
        idx = np.arange(start, min(start + base_chunk, cfg.n_paths))
        m = len(idx)
        noise = path_noise(cfg.seed, idx, coeffs.grid.n_steps, n)
        # row order: arm, sweep point, path
        rows = np.tile(np.arange(m), 2 * n_pts)
        qI0 = np.tile(np.repeat(sweep, m), 2)
        belief = np.concatenate([np.full(n_pts * m, np.nan), np.full(n_pts * m, scn.qI0_estimate)])
        res = simulate_paths(p, informed, coeffs, noise, cfg, tables=tb, noise_rows=rows,
                             path_indices=idx[rows], qI0_rows=qI0, belief_rows=belief)
        H[:, :, start:start + m] = res["criterion"].reshape(2, n_pts, m, n)
        PnL[:, :, start:start + m] = res["pnl"].reshape(2, n_pts, m, n)
    return RobustnessResult(sweep=sweep, qI0_estimate=scn.qI0_estimate,
                            gap_H=H[0] - H[1], gap_PnL=PnL[0] - PnL[1], H_true=H[0], H_hat=H[1])
