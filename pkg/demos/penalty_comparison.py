"""Compare broker 1's trading characteristics at phi_1 = 2 and phi_1 = 20, each at equilibrium.

Uses 1000 time steps so it finishes in a few minutes; the tables command runs at full resolution.
"""
from liquidity_game import (SimulationConfig, ValueCache, compare_scenarios, load_scenario, monte_carlo, nash_iterate,
                            net_speed_coefficients, solve_backward, solve_informed)

scn = load_scenario("scenarios/table1_phi.json")
ensembles = []
for label, p, grid in scn.variants():
    p = p.replace(n_steps=1000)
    res = nash_iterate(grid, p, ValueCache(p))
    p = p.replace(kappa=list(res.kappa_star))
    informed = solve_informed(p)
    coeffs = solve_backward(p, informed)
    net = net_speed_coefficients(coeffs, informed, p)
    print(label, "kappa* =", res.kappa_star, flush=True)
    ensembles.append(monte_carlo(p, informed, coeffs, SimulationConfig(n_paths=1000, seed=3), net=net))
print(compare_scenarios(*ensembles, "phi1=2", "phi1=20").to_markdown())
