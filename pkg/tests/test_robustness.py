import numpy as np
import pytest

from liquidity_game.robustness import CSV_COLUMNS, RobustnessScenario, misspecified_ensemble
from liquidity_game.simulator import SimulationConfig, monte_carlo


@pytest.fixture(scope="module")
def gaps(fig5_small):
    s = fig5_small
    scn = RobustnessScenario(sweep=(-1.0, 0.0, 1.0), config=SimulationConfig(n_paths=60, seed=3))
    return misspecified_ensemble(scn, s.p, s.informed, s.coeffs, max_rows=90)


def test_sweep_must_be_nonempty():
    with pytest.raises(ValueError):
        RobustnessScenario(sweep=())


def test_zero_gap_at_correct_estimate(gaps):
    assert gaps.gap_H.shape == (3, 60, 2)
    assert not np.any(gaps.gap_H[1])
    assert not np.any(gaps.gap_PnL[1])


def test_wrong_estimate_costs_the_brokers(gaps):
    for j in (0, 2):
        assert np.all(gaps.gap_H_mean[j] > -3 * gaps.gap_H_stderr[j])
        assert gaps.gap_H_mean[j, 0] > 0


def test_truth_arm_equals_plain_simulation(fig5_small, gaps):
    """The fully informed arm at Q0 = 0 reproduces an ordinary ensemble path by path."""
    s = fig5_small
    st = monte_carlo(s.p, s.informed, s.coeffs, SimulationConfig(n_paths=60, seed=3))
    np.testing.assert_array_equal(gaps.H_true[1], st.criterion)


def test_csv_rows(gaps):
    header, data = gaps.to_csv_rows()
    assert tuple(header) == CSV_COLUMNS
    np.testing.assert_array_equal(data[:, 0], [-1.0, 0.0, 1.0])
    assert data[1, 1] == 0.0 and data[1, 2] == 0.0
