import numpy as np
import pytest

from liquidity_game.params import (WORKERS_ENV, MarketParams, ParameterError, TimeGrid, correlation_root,
                                   harmonic_kappa, validate_params, worker_count)

from conftest import params


def test_harmonic_kappa():
    assert harmonic_kappa([0.001, 0.002]) == pytest.approx(0.002 / 3, rel=1e-15)
    assert harmonic_kappa([0.5]) == 0.5


def test_round_trip_dict(fig1):
    again = MarketParams.from_dict(fig1.to_dict())
    for name in ("kappa", "rho", "b", "eta_u"):
        np.testing.assert_array_equal(getattr(again, name), getattr(fig1, name))
    assert again.n_steps == fig1.n_steps


def test_arrays_are_frozen(fig1):
    with pytest.raises(ValueError):
        fig1.kappa[0] = 3.0


def test_unknown_key_rejected(fig1):
    data = fig1.to_dict()
    data["kapa"] = 1.0
    with pytest.raises(ParameterError, match="kapa"):
        MarketParams.from_dict(data)


def test_violations_are_listed(fig1):
    bad = fig1.replace(k=[0.0012, -1.0], sigma=0.0, phi=[-1.0, 0.01])
    with pytest.raises(ParameterError) as info:
        validate_params(bad)
    v = info.value.violations
    assert "sigma must be > 0" in v
    assert "k_2 must be > 0" in v
    assert "phi_1 must be >= 0" in v
    assert len(v) == 3


def test_broker_length_mismatch(fig1):
    with pytest.raises(ParameterError, match="length 2"):
        validate_params(fig1.replace(c=[0.1, 0.1, 0.1]))


def test_rank_deficient_correlation_accepted(fig1):
    # all-ones correlation is PSD with a zero eigenvalue
    validate_params(fig1)
    L = correlation_root(fig1.rho)
    np.testing.assert_allclose(L @ L.T, fig1.rho, atol=1e-12)


def test_indefinite_correlation_rejected(fig1):
    with pytest.raises(ParameterError):
        validate_params(fig1.replace(rho=[[1.0, 1.2], [1.2, 1.0]]))


@pytest.mark.parametrize("rho", [[[1, 0.3], [0.3, 1]], [[1, -0.9], [-0.9, 1]]])
def test_correlation_root_reproduces(rho):
    L = correlation_root(np.array(rho, float))
    np.testing.assert_allclose(L @ L.T, rho, atol=1e-14)
    assert np.allclose(L, np.tril(L))


def test_singular_zeta_rejected(fig5):
    Phi = 0.5 * fig5.psi_I * fig5.sigma ** 2 + fig5.phi_I
    a_I = np.sqrt(harmonic_kappa(fig5.kappa) * Phi)
    with pytest.raises(ParameterError, match="zeta"):
        validate_params(fig5.replace(a_I=a_I))


def test_time_grid():
    g = TimeGrid(1.0, 4)
    np.testing.assert_allclose(g.t, [0, 0.25, 0.5, 0.75, 1.0])
    assert len(g) == 5 and g.dt == 0.25
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_worker_count(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ValueError):
        worker_count()


def test_scenario_files_validate():
    for name in ("fig1_paths", "fig2_robustness", "fig3_equilibrium", "fig5_phi", "fig7_phi1",
                 "fig7_phi10", "table1_phi", "table3_phi1", "table3_phi10"):
        validate_params(params(name))
