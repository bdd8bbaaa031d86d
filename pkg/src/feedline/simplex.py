"""Self-contained dense two-phase simplex with dual recovery.

This is the reference engine behind :func:`feedline.lp.solve_lp`: small,
deterministic (Dantzig pricing with a Bland fallback once pivots stall) and
independent of any external solver, so it can cross-check the HiGHS path.
General bounds are handled by shifting/mirroring columns into standard form;
finite upper bounds become explicit rows, free variables are split.
"""

from __future__ import annotations

import math

import numpy as np

PIVOT_TOL = 1e-9


def _standardize(model):
    """Rewrite into min c.u  s.t.  A u = b >= 0, u >= 0, remembering the map."""
    n = model.ncols
    A0 = model.matrix().toarray()
    lb = np.asarray(model.lb, dtype=float)
    ub = np.asarray(model.ub, dtype=float)
    c0 = np.asarray(model.obj, dtype=float)

    cols: list[tuple[int, float, float]] = []   # (orig col, sign, offset)
    ubound: list[tuple[int, float]] = []        # (std col, residual cap)
    for j in range(n):
        if lb[j] == -math.inf and ub[j] == math.inf:
            cols.append((j, 1.0, 0.0))
            cols.append((j, -1.0, 0.0))
        elif lb[j] == -math.inf:
            cols.append((j, -1.0, ub[j]))       # x = ub - u
        else:
            cols.append((j, 1.0, lb[j]))        # x = lb + u
            if ub[j] != math.inf:
                ubound.append((len(cols) - 1, ub[j] - lb[j]))

    ns = len(cols)
    Xmap = np.zeros((n, ns))
    const = np.zeros(n)
    for k, (j, sign, off) in enumerate(cols):
        Xmap[j, k] = sign
        if off != 0.0:
            const[j] = off

    m0 = model.nrows
    senses = model.senses
    n_slack = sum(1 for s in senses if s != "E")
    m = m0 + len(ubound)
    ncol = ns + n_slack + len(ubound)
    A = np.zeros((m, ncol))
    b = np.zeros(m)
    A[:m0, :ns] = A0 @ Xmap
    b[:m0] = np.asarray(model.rhs, dtype=float) - A0 @ const
    k = ns
    for r in range(m0):
        if senses[r] == "L":
            A[r, k] = 1.0
            k += 1
        elif senses[r] == "G":
            A[r, k] = -1.0
            k += 1
    for i, (col, cap) in enumerate(ubound):
        r = m0 + i
        A[r, col] = 1.0
        A[r, k] = 1.0
        k += 1
        b[r] = cap
    c = np.zeros(ncol)
    c[:ns] = c0 @ Xmap

    row_sign = np.ones(m)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    row_sign[neg] = -1.0
    return A, b, c, cols, row_sign, m0


def _pivot(Binv, direction, leave):
    piv = direction[leave]
    brow = Binv[leave].copy()
    Binv -= np.outer(direction / piv, brow)
    Binv[leave] = brow / piv


def _iterate(A, b, c, basis, Binv, allowed, tol):
    """Simplex iterations in place; returns (state, Binv, iteration count)."""
    m = A.shape[0]
    stall = 0
    bland = False
    it = 0
    cap = 2000 + 40 * (m + A.shape[1])
    while True:
        it += 1
        if it > cap:
            return "limit", Binv, it
        if it % 128 == 0:   # periodic refactorization for numerical hygiene
            Binv = np.linalg.inv(A[:, basis])
        y = c[basis] @ Binv
        d = c - y @ A
        cand = np.where(allowed & (d < -tol))[0]
        if cand.size == 0:
            return "optimal", Binv, it
        enter = int(cand[0]) if bland else int(cand[np.argmin(d[cand])])
        direction = Binv @ A[:, enter]
        xB = Binv @ b
        pos = direction > PIVOT_TOL
        if not np.any(pos):
            return "unbounded", Binv, it
        ratios = np.full(m, np.inf)
        ratios[pos] = xB[pos] / direction[pos]
        leave = int(np.argmin(ratios))
        if ratios[leave] < tol:
            stall += 1
            if stall > m + 16:
                bland = True
        else:
            stall, bland = 0, False
        _pivot(Binv, direction, leave)
        basis[leave] = enter


def solve_dense(model, feas_tol: float = 1e-7, opt_tol: float = 1e-7):
    """Two-phase dense simplex; same result contract as the HiGHS path."""
    from .lp import LpSolution, LpStatus

    A, b, c, cols, row_sign, m_orig = _standardize(model)
    m, ncol = A.shape

    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(ncol), np.ones(m)])
    basis = list(range(ncol, ncol + m))
    Binv = np.eye(m)
    allowed = np.ones(ncol + m, dtype=bool)
    state, Binv, it1 = _iterate(A1, b, c1, basis, Binv, allowed, opt_tol)
    if state == "limit":
        return LpSolution(status=LpStatus.ITERATION_LIMIT, iterations=it1,
                          message="dense simplex: phase-1 iteration cap")
    phase1 = float(c1[basis] @ (Binv @ b))
    scale = 1.0 + (abs(b).max() if m else 0.0)
    if phase1 > feas_tol * scale:
        return LpSolution(status=LpStatus.INFEASIBLE, iterations=it1,
                          message="dense simplex: positive phase-1 violation")

    # pivot leftover artificials out where a real column allows it
    for r in range(m):
        if basis[r] >= ncol:
            row = Binv[r] @ A1[:, :ncol]
            nz = np.where(np.abs(row) > PIVOT_TOL)[0]
            if nz.size:
                enter = int(nz[0])
                _pivot(Binv, Binv @ A1[:, enter], r)
                basis[r] = enter
    allowed[ncol:] = False   # artificials may never re-enter

    c2 = np.concatenate([c, np.zeros(m)])
    state, Binv, it2 = _iterate(A1, b, c2, basis, Binv, allowed, opt_tol)
    if state == "unbounded":
        return LpSolution(status=LpStatus.UNBOUNDED, iterations=it1 + it2,
                          message="dense simplex: unbounded direction")
    if state == "limit":
        return LpSolution(status=LpStatus.ITERATION_LIMIT, iterations=it1 + it2,
                          message="dense simplex: phase-2 iteration cap")

    x_std = np.zeros(ncol + m)
    x_std[basis] = Binv @ b
    x = np.zeros(model.ncols)
    for k, (j, sign, _off) in enumerate(cols):
        x[j] += sign * x_std[k]
    done = set()
    for j, _sign, off in cols:
        if j not in done:
            x[j] += off
            done.add(j)

    y_std = c2[basis] @ Binv
    duals = row_sign[:m_orig] * y_std[:m_orig]
    reduced = np.asarray(model.obj) - duals @ model.matrix().toarray()
    objective = float(np.asarray(model.obj) @ x)
    return LpSolution(status=LpStatus.OPTIMAL, objective=objective, x=x,
                      duals=duals, reduced_costs=reduced,
                      iterations=it1 + it2, message="dense simplex")
