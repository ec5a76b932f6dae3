import sys
from pathlib import Path

import numpy as np
import pytest

from liquidity_game.broker_ode import net_speed_coefficients, solve_backward
from liquidity_game.informed import solve_informed
from liquidity_game.scenario import load_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
sys.path.insert(0, str(Path(__file__).parent))


def scenario(name):
    return load_scenario(SCENARIOS / f"{name}.json")


def params(name, **changes):
    p = scenario(name).params
    return p.replace(**changes) if changes else p


class Solved:
    def __init__(self, p):
        self.p = p
        self.informed = solve_informed(p)
        self.coeffs = solve_backward(p, self.informed)
        self.net = net_speed_coefficients(self.coeffs, self.informed, p)


@pytest.fixture(scope="session")
def fig1():
    return params("fig1_paths")


@pytest.fixture(scope="session")
def fig5():
    return params("fig5_phi")


@pytest.fixture(scope="session")
def sec4():
    return params("fig3_equilibrium")


@pytest.fixture(scope="session")
def fig5_small():
    """Fig. 5 market on a coarse grid; cheap enough for simulator tests."""
    return Solved(params("fig5_phi", n_steps=400))


@pytest.fixture(scope="session")
def fig1_solved():
    return Solved(params("fig1_paths"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
