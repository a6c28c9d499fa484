"""Convex QP relaxations and depth-first branch and bound over binaries.

Each relaxation eliminates the equality rows through an SVD null-space basis
and hands the remaining inequality-constrained, strictly convex problem
(``Q`` plus a small ridge) to the Goldfarb-Idnani dual active-set solver in
``quadprog``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
import quadprog

from .milc import ConstraintSystem

RIDGE = 1e-9
TOL_FEAS = 1e-6
TOL_INT = 1e-6


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITER_LIMIT = "iter_limit"
    TIMED_OUT = "timed_out"


@dataclass
class QpSolution:
    x: np.ndarray | None
    objective: float
    status: Status


@dataclass
class MiqpSolution:
    x: np.ndarray | None
    objective: float
    status: Status
    nodes_explored: int
    solve_time: float


class RelaxationSolver:
    """Solves the continuous relaxation of ``sys`` under per-node bounds.

    The null-space reduction is computed once for the root bounds.  Nodes
    that only fix variables outside the equality rows (the usual case: the
    binaries) reuse it by deleting columns; anything else is reduced from
    scratch.
    """

    def __init__(self, sys: ConstraintSystem, ridge: float = RIDGE, tol_feas: float = TOL_FEAS):
        self.sys = sys
        self.ridge = ridge
        self.tol = tol_feas
        q_mat, q_vec, a_ub, b_ub, a_eq, b_eq, lo, hi = sys.dense()
        # singleton equality rows are bounds
        keep = []
        for r in range(a_eq.shape[0]):
            nz = np.flatnonzero(a_eq[r])
            if len(nz) == 1:
                v = b_eq[r] / a_eq[r, nz[0]]
                lo[nz[0]] = max(lo[nz[0]], v)
                hi[nz[0]] = min(hi[nz[0]], v)
            else:
                keep.append(r)
        self.q_mat, self.q_vec = q_mat, q_vec
        self.a_ub, self.b_ub = a_ub, b_ub
        self.a_eq, self.b_eq = a_eq[keep], b_eq[keep]
        self.lo, self.hi = lo, hi
        self.n = len(lo)
        self.eq_mask = np.any(self.a_eq != 0.0, axis=0) if len(keep) else np.zeros(self.n, bool)
        self._root = None
        self._root_key = None

    # ------------------------------------------------------------ reduction

    def _reduce(self, lo, hi):
        """Affine parametrization ``x = x0 + T w`` of the equality-feasible
        set with the fixed variables (lo == hi) substituted.  Returns None if
        the equalities are inconsistent."""
        fixed = lo == hi
        free = ~fixed
        x0 = np.where(fixed, lo, 0.0)
        e_vars = np.flatnonzero(free & self.eq_mask)
        o_vars = np.flatnonzero(free & ~self.eq_mask)
        if len(self.a_eq) and len(e_vars):
            rhs = self.b_eq - self.a_eq[:, fixed] @ lo[fixed]
            a_e = self.a_eq[:, e_vars]
            u, s, vt = np.linalg.svd(a_e, full_matrices=True)
            tol = max(a_e.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
            rank = int(np.sum(s > max(tol, 1e-12)))
            p = vt[:rank].T @ ((u[:, :rank].T @ rhs) / s[:rank])
            if np.max(np.abs(a_e @ p - rhs), initial=0.0) > self.tol * max(1.0, np.max(np.abs(rhs), initial=0.0)):
                return None
            z = vt[rank:].T
            x0[e_vars] = p
        else:
            if len(self.a_eq):
                rhs = self.b_eq - self.a_eq[:, fixed] @ lo[fixed]
                if np.max(np.abs(rhs), initial=0.0) > self.tol:
                    return None
            z = np.zeros((len(e_vars), 0))
        n_w = z.shape[1] + len(o_vars)
        t_mat = np.zeros((self.n, n_w))
        t_mat[np.ix_(e_vars, np.arange(z.shape[1]))] = z
        t_mat[o_vars, z.shape[1] + np.arange(len(o_vars))] = 1.0
        g_mat = t_mat.T @ self.q_mat @ t_mat
        g_vec = t_mat.T @ (self.q_mat @ x0 + self.q_vec)
        c_mat = self.a_ub @ t_mat
        c_rhs = self.b_ub - self.a_ub @ x0
        return {"x0": x0, "t": t_mat, "g": g_mat, "gv": g_vec, "c": c_mat, "cr": c_rhs,
                "e_vars": e_vars, "o_vars": o_vars, "nz": z.shape[1], "fixed": fixed}

    def _root_reduction(self):
        if self._root is None:
            self._root = self._reduce(self.lo.copy(), self.hi.copy())
        return self._root

    # ------------------------------------------------------------ solve

    def solve(self, lo=None, hi=None) -> QpSolution:
        lo = self.lo.copy() if lo is None else np.maximum(np.asarray(lo, float), self.lo)
        hi = self.hi.copy() if hi is None else np.minimum(np.asarray(hi, float), self.hi)
        if np.any(lo > hi + self.tol):
            return QpSolution(None, math.inf, Status.INFEASIBLE)
        hi = np.maximum(hi, lo)
        root = self._root_reduction()
        newly_fixed = (lo == hi) & ~root["fixed"] if root is not None else None
        if root is not None and not np.any(newly_fixed & self.eq_mask) and np.array_equal(
                lo[root["fixed"]], self.lo[root["fixed"]]):
            red = self._restrict(root, lo, hi, newly_fixed)
        else:
            red = self._reduce(lo, hi)
            if red is not None:
                red = self._restrict(red, lo, hi, np.zeros(self.n, bool))
        if red is None:
            return QpSolution(None, math.inf, Status.INFEASIBLE)
        return self._solve_reduced(red, lo, hi)

    def _restrict(self, red, lo, hi, newly_fixed):
        """Drop the columns of variables fixed since the reduction was built."""
        nz = red["nz"]
        o_vars = red["o_vars"]
        drop_o = newly_fixed[o_vars]
        keep_cols = np.concatenate([np.arange(nz), nz + np.flatnonzero(~drop_o)])
        drop_cols = nz + np.flatnonzero(drop_o)
        vals = lo[o_vars[drop_o]]
        x0 = red["x0"].copy()
        x0[o_vars[drop_o]] = vals
        g_full = red["g"]
        g = g_full[np.ix_(keep_cols, keep_cols)]
        gv = red["gv"][keep_cols] + g_full[np.ix_(keep_cols, drop_cols)] @ vals
        c = red["c"][:, keep_cols]
        cr = red["cr"] - red["c"][:, drop_cols] @ vals
        t_mat = red["t"][:, keep_cols]
        # constant part of the objective from the dropped columns
        const = 0.5 * vals @ g_full[np.ix_(drop_cols, drop_cols)] @ vals + red["gv"][drop_cols] @ vals
        return {"x0": x0, "t": t_mat, "g": g, "gv": gv, "c": c, "cr": cr, "const": const}

    def _solve_reduced(self, red, lo, hi) -> QpSolution:
        t_mat, x0 = red["t"], red["x0"]
        n_w = t_mat.shape[1]
        rows = [red["c"]]
        rhs = [red["cr"]]
        # variable bounds in w coordinates (skip fixed and infinite)
        free = lo < hi
        lo_idx = np.flatnonzero(free & np.isfinite(lo))
        hi_idx = np.flatnonzero(free & np.isfinite(hi))
        if len(lo_idx):
            rows.append(-t_mat[lo_idx])
            rhs.append(x0[lo_idx] - lo[lo_idx])
        if len(hi_idx):
            rows.append(t_mat[hi_idx])
            rhs.append(hi[hi_idx] - x0[hi_idx])
        c_mat = np.vstack(rows) if rows else np.zeros((0, n_w))
        c_rhs = np.concatenate(rhs) if rhs else np.zeros(0)
        active = np.any(c_mat != 0.0, axis=1)
        if np.any(c_rhs[~active] < -self.tol):
            return QpSolution(None, math.inf, Status.INFEASIBLE)
        c_mat, c_rhs = c_mat[active], c_rhs[active]
        if n_w == 0:
            if np.any(c_rhs < -self.tol):
                return QpSolution(None, math.inf, Status.INFEASIBLE)
            w = np.zeros(0)
        else:
            g = red["g"] + self.ridge * np.eye(n_w)
            g = 0.5 * (g + g.T)
            try:
                if len(c_rhs):
                    w = quadprog.solve_qp(g, -red["gv"], -c_mat.T, -c_rhs, 0)[0]
                else:
                    w = np.linalg.solve(g, -red["gv"])
            except ValueError as exc:
                if "inconsistent" in str(exc):
                    return QpSolution(None, math.inf, Status.INFEASIBLE)
                raise
        x = x0 + t_mat @ w
        x = np.minimum(np.maximum(x, lo), hi)
        obj = 0.5 * x @ self.q_mat @ x + self.q_vec @ x + self.sys.offset
        return QpSolution(x, float(obj), Status.OPTIMAL)

    def violation(self, x) -> float:
        worst = float(np.max(self.a_ub @ x - self.b_ub, initial=0.0))
        if len(self.a_eq):
            worst = max(worst, float(np.max(np.abs(self.a_eq @ x - self.b_eq))))
        worst = max(worst, float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        return worst


def solve_qp(sys: ConstraintSystem, ridge: float = RIDGE) -> QpSolution:
    """Continuous relaxation of ``sys`` (binaries relaxed to [0, 1])."""
    return RelaxationSolver(sys, ridge=ridge).solve()


# ---------------------------------------------------------------- branch and bound


def _round_with_groups(sys: ConstraintSystem, x, lo, hi, binaries) -> dict[int, float]:
    """Integer assignment near ``x``: within each at-least-one group, switch on
    the member whose guarded rows are least violated at ``x``."""
    assign: dict[int, float] = {}
    for b in binaries:
        if lo[b] == hi[b]:
            assign[b] = lo[b]
    for group in sys.groups:
        if any(assign.get(b) == 1.0 for b in group):
            for b in group:
                assign.setdefault(b, 0.0)
            continue
        best, best_score = None, -math.inf
        for b in group:
            if assign.get(b) == 0.0:
                continue
            score = _guard_slack(sys, x, b)
            if score > best_score + 1e-12:
                best, best_score = b, score
        for b in group:
            if b == best:
                assign[b] = 1.0
            else:
                assign.setdefault(b, 0.0)
    for b in binaries:
        if b not in assign:
            assign[b] = float(round(min(max(x[b], 0.0), 1.0)))
    return assign


def _guard_slack(sys: ConstraintSystem, x, b) -> float:
    rows = sys.guards.get(b)
    if not rows:
        return float(x[b])
    worst = math.inf
    for r in rows:
        c = sys.constraints[r]
        lhs = sum(v * (1.0 if i == b else x[i]) for i, v in c.coeffs.items())
        worst = min(worst, c.bound - lhs)
    return worst


NodeCallback = Callable[[int, float, float, Status], None]


def solve_miqp(sys: ConstraintSystem, budget: float | None = 0.08, max_nodes: int | None = None,
               warm_start=None, tol_int: float = TOL_INT, gap_rel: float = 1e-9, gap_abs: float = 1e-9,
               on_node: NodeCallback | None = None, ridge: float = RIDGE) -> MiqpSolution:
    """Depth-first branch and bound over ``sys.binaries``.

    Branches on the most fractional binary (lowest index on ties) and visits
    the 0-branch first.  A group-aware rounding of the root relaxation and of
    ``warm_start`` seeds the incumbent.  ``budget`` (seconds) and
    ``max_nodes`` bound the search; ``None`` disables either limit.  With a
    node limit and no time limit the result is fully deterministic.
    """
    if budget is not None and budget <= 0:
        raise ValueError("budget must be positive")
    t0 = time.perf_counter()
    solver = RelaxationSolver(sys, ridge=ridge)
    binaries = list(sys.binaries)
    bin_arr = np.array(binaries, dtype=int)
    best_x, best_obj = None, math.inf
    nodes = 0

    def gap(obj):
        return max(gap_abs, gap_rel * abs(obj))

    def try_assignment(assign, lo, hi):
        nonlocal best_x, best_obj
        lo2, hi2 = lo.copy(), hi.copy()
        for b, v in assign.items():
            if v < lo[b] or v > hi[b]:
                return
            lo2[b] = hi2[b] = v
        sol = solver.solve(lo2, hi2)
        if sol.status is Status.OPTIMAL and sol.objective < best_obj and solver.violation(sol.x) <= TOL_FEAS:
            best_x, best_obj = sol.x, sol.objective

    root_lo, root_hi = solver.lo.copy(), solver.hi.copy()
    if warm_start is not None and binaries:
        try_assignment(_round_with_groups(sys, np.asarray(warm_start, float), root_lo, root_hi, binaries),
                       root_lo, root_hi)

    stack = [(root_lo, root_hi, -math.inf, 0)]
    exhausted = True
    while stack:
        if (budget is not None and time.perf_counter() - t0 > budget) or \
                (max_nodes is not None and nodes >= max_nodes):
            exhausted = False
            break
        lo, hi, parent_obj, depth = stack.pop()
        nodes += 1
        sol = solver.solve(lo, hi)
        if on_node is not None:
            on_node(depth, parent_obj, sol.objective, sol.status)
        if sol.status is not Status.OPTIMAL:
            continue
        if sol.objective >= best_obj - gap(best_obj):
            continue
        x = sol.x
        if not binaries:
            best_x, best_obj = x, sol.objective
            continue
        xb = x[bin_arr]
        frac = np.minimum(xb - np.floor(xb), np.ceil(xb) - xb)
        free = lo[bin_arr] < hi[bin_arr]
        frac = np.where(free, frac, 0.0)
        if np.all(frac <= tol_int):
            try_assignment({b: float(round(v)) for b, v in zip(binaries, xb)}, lo, hi)
            continue
        if depth == 0:
            try_assignment(_round_with_groups(sys, x, lo, hi, binaries), lo, hi)
            if sol.objective >= best_obj - gap(best_obj):
                continue
        # most fractional: distance to 0.5, ties to the lowest index
        dist = np.where(frac > tol_int, np.abs(xb - np.floor(xb) - 0.5), np.inf)
        j = binaries[int(np.argmin(dist))]
        lo1, hi1 = lo.copy(), hi.copy()
        lo1[j] = 1.0
        lo0, hi0 = lo.copy(), hi.copy()
        hi0[j] = 0.0
        stack.append((lo1, hi1, sol.objective, depth + 1))
        stack.append((lo0, hi0, sol.objective, depth + 1))

    elapsed = time.perf_counter() - t0
    if exhausted:
        status = Status.OPTIMAL if best_x is not None else Status.INFEASIBLE
    else:
        status = Status.TIMED_OUT
    return MiqpSolution(best_x, best_obj, status, nodes, elapsed)
