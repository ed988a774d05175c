import sys
sys.path.insert(0, "tests")
import time

import numpy as np

from gridcharge.bilevel import solve_equilibrium, sweep_prices
from gridcharge.errors import AllLevelsInfeasible
from miqp_oracle import make_random_instance, brute_force_equilibrium

rng = np.random.default_rng(7)
t0 = time.time()
for trial in range(6):
    scenario, grid, rho = make_random_instance(rng)
    best, per_level = brute_force_equilibrium(scenario, grid, rho)
    sweep = sweep_prices(scenario, grid, rho)
    feas_engine = [r.feasible for r in sweep]
    feas_oracle = [f for f, _ in per_level]
    print(f"trial {trial}: feas engine={feas_engine} oracle={feas_oracle}")
    assert feas_engine == feas_oracle, (feas_engine, feas_oracle)
    for rec, (feas, value) in zip(sweep, per_level):
        if feas:
            scale = 1.0 + abs(value)
            diff = abs(rec.grid_profit - value)
            print(f"  level {rec.index} gamma={rec.gamma:.3f} engine={rec.grid_profit:.8f} "
                  f"oracle={value:.8f} diff={diff:.2e} tie={rec.tie_break}")
            assert diff <= 1e-6 * scale, (rec.index, rec.grid_profit, value)
    if best is None:
        try:
            solve_equilibrium(scenario, grid, rho)
            raise AssertionError("expected AllLevelsInfeasible")
        except AllLevelsInfeasible:
            print("  all levels infeasible: agreed")
        continue
    eq = solve_equilibrium(scenario, grid, rho)
    print(f"  gamma* engine={eq.gamma_star:.3f} oracle={best[0]:.3f} "
          f"profit engine={eq.metrics.grid_profit:.8f} oracle={best[1]:.8f}")
    assert abs(eq.metrics.grid_profit - best[1]) <= 1e-6 * (1 + abs(best[1]))
print(f"OK in {time.time()-t0:.1f}s")
