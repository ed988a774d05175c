import numpy as np
from types import SimpleNamespace

from gridcharge.network import BusNetwork, Line
from gridcharge.market import (Battery, PwlUtility, Prosumer, ProsumerFleet,
                               TradeGraph, build_lower_lp, solve_market,
                               market_metrics, reprice)
from gridcharge.bilevel import (PriceGrid, assemble_kkt, strong_duality_residual,
                                big_m_bound, sweep_prices, solve_equilibrium,
                                social_optimum)

NO_BATTERY = Battery(0.0, 0.0, 0.0, 0.0, 0.9, 0.0)


def flat_utility(beta, hi=20.0):
    return PwlUtility(0.0, (0.0, hi / 2, hi), (beta, beta / 2))


def make_prosumer(pid, bus, renewable, beta, t=1, p_max=10.0):
    return Prosumer(pid, bus, (0.0,) * t, (p_max,) * t, (renewable,) * t,
                    tuple(flat_utility(beta) for _ in range(t)), NO_BATTERY)


net = BusNetwork(2, [Line(0, 1, 1.0, limit=np.inf)])
a = make_prosumer("a", 0, 8.0, 0.2)
b = make_prosumer("b", 1, 0.0, 1.0)
fleet = ProsumerFleet((a, b))
graph = TradeGraph((("a", "b", 5.0), ("b", "a", 5.0)), 1)
scen = SimpleNamespace(network=net, fleet=fleet, graph=graph)

# KKT certificate at a mid price
prog = build_lower_lp(fleet, graph, net.distances, 0.3)
resp = solve_market(prog)
kkt = assemble_kkt(prog)
x, y, zl, zu = kkt.point_from_solution(resp.solution)
res = kkt.residuals(x, y, zl, zu)
print("KKT residuals:", res)
print("worst:", res.worst)
assert res.worst <= 1e-6, res

sd = strong_duality_residual(prog, x, y, zl, zu)
print("strong duality:", sd)
assert abs(sd) <= 1e-6 * (1 + abs(resp.prosumer_profit))

# inspectable stationarity row for the trade column
row = kkt.stationarity_row(("trade", "b", "a", 0))
print("trade stationarity:", row)

# big-M example: 2 prosumers, d=1, cap=5, T=1 -> 2*5*1.01 = 10.1
M = big_m_bound(fleet, graph, net.distances)
print("big M:", M)
assert abs(M - 10.1) < 1e-12

# sweep over 6 levels
grid = PriceGrid(0.0, 1.0, 6)
sweep = sweep_prices(scen, grid, rho=0.01)
for rec in sweep:
    print(f"level {rec.index} gamma={rec.gamma:.2f} feas={rec.feasible} "
          f"tie={rec.tie_break} profit={rec.grid_profit:.6f} Z={rec.z_volume:.4f} "
          f"V={rec.lp_value:.6f}")
print("gamma_lower:", sweep.gamma_lower, "gamma_upper:", sweep.gamma_upper,
      "argmax:", sweep.argmax_index)

z = [rec.z_volume for rec in sweep]
assert all(z[i] >= z[i + 1] - 1e-9 for i in range(len(z) - 1)), z

eq = solve_equilibrium(scen, grid, rho=0.01)
print("gamma* =", eq.gamma_star, "level", eq.level_index)
assert eq.level_index == sweep.argmax_index
sel = sweep[eq.level_index]
assert abs(sel.grid_profit - eq.metrics.grid_profit) < 1e-12

soc = social_optimum(scen, rho=0.01)
print("social profit:", soc.social_profit, "Z:", soc.z_volume)
for rec in sweep:
    if rec.feasible:
        assert soc.social_profit >= rec.social_profit - 1e-6

# parallel equals serial
sweep_par = sweep_prices(scen, grid, rho=0.01, workers=3)
for r1, r2 in zip(sweep, sweep_par):
    assert r1.as_dict() == r2.as_dict(), (r1, r2)
print("parallel identical: ok")

print("ALL SMOKE OK")
