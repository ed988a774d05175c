"""Slow reference implementations used to cross-check the fast solvers.

Everything here is written for clarity over speed and shares no code with
the package under test beyond numpy.
"""

from __future__ import annotations

from itertools import combinations, product

import numpy as np


def vertex_lp_optimum(c, a, senses, b, lb, ub, tol=1e-7):
    """Maximize ``c' x`` over the polyhedron by enumerating basic points.

    Every candidate vertex is the unique solution of ``n`` active
    constraints chosen among rows (held at equality) and variable bounds.
    Requires a bounded feasible region with at least one vertex; returns
    ``(best_value, best_x)`` or ``(None, None)`` if no candidate passed
    the feasibility screen.
    """
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    senses = np.asarray(senses, dtype="<U1")
    m, n = a.shape if a.size else (len(b), len(c))
    a = a.reshape(m, n)

    candidates = []
    for t in range(0, min(m, n) + 1):
        for rows in combinations(range(m), t):
            for pinned in combinations(range(n), n - t):
                free = [j for j in range(n) if j not in pinned]
                a_tt = a[np.ix_(rows, free)] if t else np.zeros((0, 0))
                pin_options = []
                for j in pinned:
                    opts = []
                    if np.isfinite(lb[j]):
                        opts.append(lb[j])
                    if np.isfinite(ub[j]) and ub[j] != lb[j]:
                        opts.append(ub[j])
                    if not opts:
                        break
                    pin_options.append(opts)
                else:
                    if t:
                        scale = max(1.0, float(np.max(np.abs(a_tt))))
                        if abs(np.linalg.det(a_tt)) <= 1e-10 * scale**t:
                            continue
                    choices = np.asarray(list(product(*pin_options)))
                    choices = choices.reshape(len(choices), len(pinned))
                    pts = np.empty((len(choices), n))
                    pts[:, list(pinned)] = choices
                    if t:
                        rhs = b[list(rows)][:, None] - a[np.ix_(rows, pinned)] @ choices.T
                        pts[:, free] = np.linalg.solve(a_tt, rhs).T
                    candidates.append(pts)

    if not candidates:
        return None, None
    pts = np.vstack(candidates)
    scale = 1.0 + max(
        float(np.max(np.abs(b), initial=0.0)),
        float(np.max(np.abs(lb[np.isfinite(lb)]), initial=0.0)),
        float(np.max(np.abs(ub[np.isfinite(ub)]), initial=0.0)),
    )
    row_vals = pts @ a.T
    ok = np.ones(len(pts), dtype=bool)
    for i in range(m):
        if senses[i] == "<":
            ok &= row_vals[:, i] <= b[i] + tol * scale
        elif senses[i] == ">":
            ok &= row_vals[:, i] >= b[i] - tol * scale
        else:
            ok &= np.abs(row_vals[:, i] - b[i]) <= tol * scale
    for j in range(n):
        if np.isfinite(lb[j]):
            ok &= pts[:, j] >= lb[j] - tol * scale
        if np.isfinite(ub[j]):
            ok &= pts[:, j] <= ub[j] + tol * scale
    if not np.any(ok):
        return None, None
    vals = pts[ok] @ c
    k = int(np.argmax(vals))
    return float(vals[k]), pts[ok][k]


def random_box_lp(rng, max_vars=8, max_rows=8):
    """A random feasible bounded LP: finite boxes plus mixed-sense rows
    anchored so that a sampled interior point stays feasible."""
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    lb = np.round(rng.uniform(-2.0, 0.0, size=n), 3)
    ub = lb + np.round(rng.uniform(0.5, 3.0, size=n), 3)
    x0 = lb + rng.uniform(0.2, 0.8, size=n) * (ub - lb)
    a = np.round(rng.uniform(-2.0, 2.0, size=(m, n)), 3)
    a[rng.uniform(size=(m, n)) < 0.35] = 0.0
    senses = rng.choice(["<", ">", "="], size=m, p=[0.55, 0.3, 0.15])
    b = a @ x0
    margin = rng.uniform(0.05, 1.0, size=m)
    b = np.where(senses == "<", b + margin, b)
    b = np.where(senses == ">", b - margin, b)
    b = np.round(b, 6)
    if np.any(senses == "="):
        b[senses == "="] = (a @ x0)[senses == "="]
    c = np.round(rng.uniform(-2.0, 2.0, size=n), 3)
    return c, a, senses, b, lb, ub
