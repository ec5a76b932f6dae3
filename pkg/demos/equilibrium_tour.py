"""Find the symmetric liquidity-price equilibrium and the region both brokers prefer."""
import numpy as np

from liquidity_game import ValueCache, attach_surfaces, load_scenario, nash_iterate, unilateral_deviation_gain

scn = load_scenario("scenarios/fig3_equilibrium.json")
p, grid = scn.params, scn.grid()
cache = ValueCache(p)
res = attach_surfaces(nash_iterate(grid, p, cache), p, cache)
print("kappa* =", res.kappa_star, "after", res.iterations, "damped iterations")
print("values V1, V2, VI =", np.round(res.values, 8))
print("deviation gains (should be <= 0):", unilateral_deviation_gain(res, p, cache))
i = np.argwhere(res.pareto)
print(f"{len(i)} cells beat kappa* for both brokers, e.g. kappa =", (float(grid.k1[i[-1][0]]), float(grid.k2[i[-1][1]])))
