"""Electrical network model for a lossless DC grid.

A :class:`BusNetwork` holds the topology (buses, lines, reactances, flow
limits) and eagerly derives the nodal susceptance matrix, its augmented
inverse at the reference bus, per-line power transfer distribution
factors (PTDF), and the electrical distance matrix used to price
peer-to-peer trades.  All derived arrays are frozen read-only so a
network can be shared freely across threads.

Conventions: susceptance of a line is the reciprocal of its reactance;
parallel lines between the same bus pair are merged on construction
(susceptances add, flow limits add), which is flow-equivalent for DC.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DisconnectedNetwork,
    NonpositiveReactance,
    UnbalancedInjections,
)
from .numerics import solve_linear_system


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    reactance: float
    limit: float = np.inf

    @property
    def susceptance(self) -> float:
        return 1.0 / self.reactance


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def _merge_parallel(lines: list[Line]) -> list[Line]:
    merged: dict[tuple[int, int], Line] = {}
    order: list[tuple[int, int]] = []
    for ln in lines:
        key = (min(ln.from_bus, ln.to_bus), max(ln.from_bus, ln.to_bus))
        if key not in merged:
            merged[key] = Line(ln.from_bus, ln.to_bus, ln.reactance, ln.limit)
            order.append(key)
        else:
            old = merged[key]
            b = old.susceptance + ln.susceptance
            merged[key] = Line(old.from_bus, old.to_bus, 1.0 / b,
                               old.limit + ln.limit)
    return [merged[k] for k in order]


class BusNetwork:
    """Immutable bus/line model with eagerly derived matrices."""

    def __init__(self, n_buses: int, lines, reference: int = 0):
        if n_buses < 1:
            raise ValueError("network needs at least one bus")
        if not 0 <= reference < n_buses:
            raise ValueError("reference bus out of range")
        parsed = []
        for ln in lines:
            if not isinstance(ln, Line):
                ln = Line(*ln)
            if ln.from_bus == ln.to_bus:
                raise ValueError(f"self-loop on bus {ln.from_bus}")
            if not (0 <= ln.from_bus < n_buses and 0 <= ln.to_bus < n_buses):
                raise ValueError("line endpoint out of range")
            if not ln.reactance > 0:
                raise NonpositiveReactance(
                    f"line {ln.from_bus}-{ln.to_bus} has reactance {ln.reactance}")
            if ln.limit < 0:
                raise ValueError("flow limit must be nonnegative")
            parsed.append(ln)
        self.n_buses = int(n_buses)
        self.reference = int(reference)
        self.lines: tuple[Line, ...] = tuple(_merge_parallel(parsed))

        uf = _UnionFind(self.n_buses)
        for ln in self.lines:
            uf.union(ln.from_bus, ln.to_bus)
        roots = {uf.find(i) for i in range(self.n_buses)}
        if len(roots) > 1:
            raise DisconnectedNetwork(
                f"network splits into {len(roots)} components")

        self.b_matrix = self._nodal_matrix()
        self.x_matrix = self._augmented_inverse()
        self.ptdf_rows = self._ptdf_rows()
        self.distances = self._distance_matrix()
        for arr in (self.b_matrix, self.x_matrix, self.ptdf_rows, self.distances):
            arr.setflags(write=False)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def _nodal_matrix(self) -> np.ndarray:
        b = np.zeros((self.n_buses, self.n_buses))
        for ln in self.lines:
            i, j, s = ln.from_bus, ln.to_bus, ln.susceptance
            b[i, i] += s
            b[j, j] += s
            b[i, j] -= s
            b[j, i] -= s
        return b

    def _augmented_inverse(self) -> np.ndarray:
        keep = [i for i in range(self.n_buses) if i != self.reference]
        x = np.zeros((self.n_buses, self.n_buses))
        if keep:
            reduced = self.b_matrix[np.ix_(keep, keep)]
            inv = solve_linear_system(reduced, np.eye(len(keep)))
            x[np.ix_(keep, keep)] = inv
        return x

    def _ptdf_rows(self) -> np.ndarray:
        rows = np.zeros((self.n_lines, self.n_buses))
        for k, ln in enumerate(self.lines):
            rows[k] = (self.x_matrix[ln.from_bus] - self.x_matrix[ln.to_bus]) / ln.reactance
        return rows

    def _distance_matrix(self) -> np.ndarray:
        d = np.zeros((self.n_buses, self.n_buses))
        for k in range(self.n_lines):
            v = self.ptdf_rows[k]
            d += np.abs(v[:, None] - v[None, :])
        return d

    def line_index(self, from_bus: int, to_bus: int) -> int:
        for k, ln in enumerate(self.lines):
            if {ln.from_bus, ln.to_bus} == {from_bus, to_bus}:
                return k
        raise KeyError(f"no line between buses {from_bus} and {to_bus}")


@dataclass
class FlowState:
    """DC power-flow result over one or more periods."""

    theta: np.ndarray        # bus x period phase angles [rad]
    injections: np.ndarray   # bus x period net injections [kW]
    flows: np.ndarray        # line x period flows [kW]
    loss: float              # sum of flow^2 / susceptance over lines, periods
    violations: list = field(default_factory=list)


def build_nodal_matrix(network: BusNetwork) -> np.ndarray:
    """Nodal susceptance matrix: diagonal totals, negated couplings."""
    return network.b_matrix


def build_augmented_x(network: BusNetwork) -> np.ndarray:
    """Inverse of the reduced susceptance matrix, padded with a zero row
    and column at the reference bus."""
    return network.x_matrix


def compute_ptdf(network: BusNetwork, line, pair) -> float:
    """Fraction of a unit trade between ``pair`` that flows on ``line``.

    ``line`` is a line index or an oriented ``(m, n)`` endpoint tuple;
    ``pair`` is ``(i, j)`` for injection at i and withdrawal at j.  The
    value is antisymmetric in both the line orientation and the pair.
    """
    if isinstance(line, (tuple, list)):
        m, n = line
        k = network.line_index(m, n)
        x = 1.0 / network.lines[k].susceptance
        base = (network.x_matrix[m] - network.x_matrix[n]) / x
    else:
        base = network.ptdf_rows[int(line)]
    i, j = pair
    if not (0 <= i < network.n_buses and 0 <= j < network.n_buses):
        raise IndexError("pair index out of range")
    return float(base[i] - base[j])


def compute_distances(network: BusNetwork) -> np.ndarray:
    """Electrical distance between every bus pair: the total absolute
    PTDF over all lines for a unit trade between the pair."""
    return network.distances


def solve_dc_flow(network: BusNetwork, injections) -> FlowState:
    """Solve the lossless DC flow for per-period balanced injections.

    ``injections`` is an array of shape (buses,) or (buses, periods).
    Angles are recovered through the augmented inverse, so the reference
    angle is exactly zero.  Line-limit violations are reported on the
    result, never clipped.
    """
    p = np.asarray(injections, dtype=float)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[:, None]
    if p.shape[0] != network.n_buses:
        raise ValueError("injection vector length does not match bus count")
    scale = 1.0 + float(np.max(np.abs(p), initial=0.0))
    imbalance = np.abs(p.sum(axis=0))
    if np.any(imbalance > 1e-6 * scale):
        worst = int(np.argmax(imbalance))
        raise UnbalancedInjections(
            f"injections sum to {p.sum(axis=0)[worst]:.3e} in period {worst}")

    theta = network.x_matrix @ p
    from_idx = np.array([ln.from_bus for ln in network.lines], dtype=int)
    to_idx = np.array([ln.to_bus for ln in network.lines], dtype=int)
    susc = np.array([ln.susceptance for ln in network.lines])
    flows = (theta[from_idx] - theta[to_idx]) * susc[:, None]
    loss = float(np.sum(flows**2 / susc[:, None]))

    violations = []
    limits = np.array([ln.limit for ln in network.lines])
    for k in range(network.n_lines):
        if not np.isfinite(limits[k]):
            continue
        over = np.abs(flows[k]) - limits[k]
        for t in np.nonzero(over > 1e-9 * (1.0 + limits[k]))[0]:
            violations.append((k, int(t), float(over[t])))

    return FlowState(
        theta=theta[:, 0] if squeeze else theta,
        injections=p[:, 0] if squeeze else p,
        flows=flows[:, 0] if squeeze else flows,
        loss=loss,
        violations=violations,
    )


def transmission_loss(network: BusNetwork, flow: FlowState, rho: float) -> float:
    """Quadratic transmission-loss cost: rho times the sum over lines and
    periods of susceptance times squared angle difference (identical to
    squared flow over susceptance)."""
    theta = np.atleast_2d(flow.theta.T).T
    total = 0.0
    for ln in network.lines:
        diff = theta[ln.from_bus] - theta[ln.to_bus]
        total += float(ln.susceptance * np.sum(diff**2))
    return rho * total
