"""Multi-broker liquidity game against an informed trader.

Closed-form informed-trader control, backward coefficient ODEs for the
brokers' feedback strategies, Monte Carlo simulation of the market, grid
search for the liquidity-price equilibrium and robustness studies.
"""

__version__ = "0.1.0"

from .params import MarketParams, MarketState, ParameterError, TimeGrid, load_params, validate_params
from .informed import InformedSolution, informed_speed, informed_value, solve_informed
from .broker_ode import (BlowUpError, BrokerCoefficients, NetSpeedCoefficients, broker_value,
                         net_speed_coefficients, pde_residual, solve_backward)
from .simulator import EnsembleStats, PathFailure, PathRecord, SimulationConfig, monte_carlo, simulate_path
from .equilibrium import (EquilibriumResult, KappaGrid, NonConvergence, ValueCache, attach_surfaces, best_response,
                          nash_iterate, pareto_region, unilateral_deviation_gain, value_at, value_surfaces)
from .robustness import RobustnessResult, RobustnessScenario, misspecified_ensemble
from .statskit import ScenarioComparison, TTestResult, compare_scenarios, two_sample_t
from .scenario import Scenario, load_scenario
