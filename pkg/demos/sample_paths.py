"""Simulate the kappa_2 = 2 kappa_1 market and compare simulated with analytic values."""
import numpy as np

from liquidity_game import (SimulationConfig, load_scenario, monte_carlo, net_speed_coefficients, solve_backward,
                            solve_informed)

scn = load_scenario("scenarios/fig1_paths.json")
p = scn.params
informed = solve_informed(p)
coeffs = solve_backward(p, informed)
net = net_speed_coefficients(coeffs, informed, p)
stats = monte_carlo(p, informed, coeffs, SimulationConfig(n_paths=1000, seed=1), net=net, n_store=1)

print("broker values   analytic", np.round(coeffs.f[0], 4), " simulated", np.round(stats.criterion_mean, 4),
      "+-", np.round(stats.criterion_stderr, 4))
print("informed value  analytic", round(float(informed.f0[0]), 4), " simulated", round(stats.informed_mean, 4))
path = stats.paths[0]
print("omega2 / omega1 along the path:", np.unique(np.round(path.omega[1:-1, 1] / path.omega[1:-1, 0], 12)))
