import numpy as np
import pytest

from gridcharge.errors import (
    DisconnectedNetwork,
    NonpositiveReactance,
    UnbalancedInjections,
)
from gridcharge.network import (
    BusNetwork,
    build_augmented_x,
    build_nodal_matrix,
    compute_distances,
    compute_ptdf,
    solve_dc_flow,
    transmission_loss,
)


def triangle(x=1.0, limit=np.inf, reference=2):
    lines = [(0, 1, x, limit), (1, 2, x, limit), (0, 2, x, limit)]
    return BusNetwork(3, lines, reference=reference)


def random_connected_network(rng, max_buses=12):
    n = int(rng.integers(2, max_buses + 1))
    lines = []
    for j in range(1, n):
        i = int(rng.integers(0, j))
        lines.append((i, j, float(rng.uniform(0.05, 2.0)), np.inf))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        i, j = rng.choice(n, size=2, replace=False)
        lines.append((int(i), int(j), float(rng.uniform(0.05, 2.0)), np.inf))
    ref = int(rng.integers(0, n))
    return BusNetwork(n, lines, reference=ref)


def test_nodal_matrix_triangle():
    b = build_nodal_matrix(triangle())
    assert np.allclose(b, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], atol=0.0)


def test_nodal_matrix_two_bus():
    net = BusNetwork(2, [(0, 1, 0.5)])
    assert np.allclose(build_nodal_matrix(net), [[2, -2], [-2, 2]], atol=0.0)


def test_nodal_matrix_missing_line():
    net = BusNetwork(3, [(1, 2, 1.0), (0, 2, 1.0)])
    b = build_nodal_matrix(net)
    assert b[0, 1] == 0.0
    assert b[0, 0] == 1.0


def test_nodal_matrix_row_sums_vanish():
    rng = np.random.default_rng(1)
    for _ in range(10):
        net = random_connected_network(rng)
        b = build_nodal_matrix(net)
        assert np.allclose(b, b.T, atol=0.0)
        assert float(np.max(np.abs(b.sum(axis=1)))) <= 1e-9


def test_augmented_x_triangle():
    x = build_augmented_x(triangle())
    expect = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]]) / 3.0
    assert np.allclose(x, expect, atol=1e-9)
    assert np.all(x[2] == 0.0)
    assert np.all(x[:, 2] == 0.0)


def test_augmented_x_two_bus():
    net = BusNetwork(2, [(0, 1, 1.0)], reference=1)
    assert np.allclose(build_augmented_x(net), [[1.0, 0.0], [0.0, 0.0]], atol=1e-12)


def test_ptdf_triangle_values():
    net = triangle()
    assert compute_ptdf(net, (0, 1), (0, 2)) == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert compute_ptdf(net, (0, 1), (0, 1)) == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert compute_ptdf(net, (0, 1), (1, 1)) == 0.0
    assert compute_ptdf(net, (0, 1), (1, 0)) == pytest.approx(-2.0 / 3.0, abs=1e-12)
    assert compute_ptdf(net, (1, 0), (0, 1)) == pytest.approx(-2.0 / 3.0, abs=1e-12)


def test_distances_triangle():
    d = compute_distances(triangle())
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        assert d[i, j] == pytest.approx(4.0 / 3.0, abs=1e-9)
    assert np.allclose(d, d.T, atol=0.0)
    assert np.all(np.diag(d) == 0.0)


def test_distances_two_bus():
    net = BusNetwork(2, [(0, 1, 1.0)])
    assert compute_distances(net)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_dc_flow_zero_injections():
    state = solve_dc_flow(triangle(), np.zeros(3))
    assert np.all(state.theta == 0.0)
    assert np.all(state.flows == 0.0)
    assert state.loss == 0.0


def test_dc_flow_triangle_example():
    net = triangle()
    state = solve_dc_flow(net, np.array([1.0, -1.0, 0.0]))
    assert np.allclose(state.theta, [1.0 / 3.0, -1.0 / 3.0, 0.0], atol=1e-12)
    flows = {(ln.from_bus, ln.to_bus): state.flows[k] for k, ln in enumerate(net.lines)}
    assert flows[(0, 1)] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert flows[(0, 2)] == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert flows[(1, 2)] == pytest.approx(-1.0 / 3.0, abs=1e-12)


def test_dc_flow_two_bus():
    net = BusNetwork(2, [(0, 1, 1.0)])
    state = solve_dc_flow(net, np.array([5.0, -5.0]))
    assert state.flows[0] == pytest.approx(5.0, abs=1e-9)


def test_dc_flow_unbalanced_raises():
    with pytest.raises(UnbalancedInjections):
        solve_dc_flow(triangle(), np.array([1.0, 0.0, 0.0]))


def test_dc_flow_reports_limit_violations():
    net = BusNetwork(2, [(0, 1, 1.0, 2.0)])
    state = solve_dc_flow(net, np.array([5.0, -5.0]))
    assert state.violations == [(0, 0, pytest.approx(3.0, abs=1e-9))]


def test_ptdf_matches_unit_trade_flow():
    rng = np.random.default_rng(42)
    for _ in range(50):
        net = random_connected_network(rng)
        i, j = rng.choice(net.n_buses, size=2, replace=False)
        inj = np.zeros(net.n_buses)
        inj[i] = 1.0
        inj[j] = -1.0
        state = solve_dc_flow(net, inj)
        for k in range(net.n_lines):
            assert state.flows[k] == pytest.approx(
                compute_ptdf(net, k, (int(i), int(j))), abs=1e-8)


def test_loss_formulas_agree():
    rng = np.random.default_rng(9)
    for _ in range(10):
        net = random_connected_network(rng)
        inj = rng.normal(size=(net.n_buses, 3))
        inj -= inj.mean(axis=0)
        state = solve_dc_flow(net, inj)
        angle_form = transmission_loss(net, state, 1.0)
        flow_form = state.loss
        scale = 1.0 + abs(flow_form)
        assert abs(angle_form - flow_form) <= 1e-9 * scale


def test_loss_triangle_value_and_scaling():
    net = triangle()
    state = solve_dc_flow(net, np.array([1.0, -1.0, 0.0]))
    assert transmission_loss(net, state, 0.01) == pytest.approx(
        0.01 * (4.0 / 9.0 + 1.0 / 9.0 + 1.0 / 9.0), abs=1e-12)
    doubled = solve_dc_flow(net, np.array([2.0, -2.0, 0.0]))
    assert doubled.loss == pytest.approx(4.0 * state.loss, abs=1e-12)


def test_reference_bus_does_not_change_flows():
    rng = np.random.default_rng(31)
    for _ in range(10):
        net = random_connected_network(rng)
        lines = [(ln.from_bus, ln.to_bus, ln.reactance, ln.limit) for ln in net.lines]
        other_ref = (net.reference + 1) % net.n_buses
        alt = BusNetwork(net.n_buses, lines, reference=other_ref)
        inj = rng.normal(size=net.n_buses)
        inj -= inj.mean()
        f1 = solve_dc_flow(net, inj).flows
        f2 = solve_dc_flow(alt, inj).flows
        assert float(np.max(np.abs(f1 - f2))) <= 1e-8
        d1 = compute_distances(net)
        d2 = compute_distances(alt)
        assert float(np.max(np.abs(d1 - d2))) <= 1e-8


def test_parallel_lines_merge():
    net = BusNetwork(2, [(0, 1, 1.0, 3.0), (1, 0, 1.0, 4.0)])
    assert net.n_lines == 1
    assert np.allclose(build_nodal_matrix(net), [[2, -2], [-2, 2]], atol=1e-12)
    assert net.lines[0].limit == pytest.approx(7.0)


def test_invalid_networks_raise():
    with pytest.raises(DisconnectedNetwork):
        BusNetwork(3, [(0, 1, 1.0)])
    with pytest.raises(NonpositiveReactance):
        BusNetwork(2, [(0, 1, -1.0)])
    with pytest.raises(ValueError):
        BusNetwork(2, [(0, 0, 1.0)])


def test_derived_matrices_are_read_only():
    net = triangle()
    with pytest.raises(ValueError):
        net.distances[0, 1] = 5.0
