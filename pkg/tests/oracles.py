"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np
import quadprog

from stldrive.stl import Affine, Always, And, Eventually, Not, Or, Pred, Until


# ---------------------------------------------------------------- STL


def naive_eval(f, trace: np.ndarray) -> np.ndarray:
    """Bottom-up satisfaction table: entry t is the verdict at step t."""
    n = len(trace)
    if isinstance(f, Pred):
        p = f.predicate
        vals = trace[:, :len(p.coeffs)] @ np.asarray(p.coeffs)
        return vals <= p.bound if p.sense == "<=" else vals >= p.bound
    if isinstance(f, Not):
        return ~naive_eval(f.child, trace)
    if isinstance(f, And):
        out = np.ones(n, bool)
        for c in f.children:
            out &= naive_eval(c, trace)
        return out
    if isinstance(f, Or):
        out = np.zeros(n, bool)
        for c in f.children:
            out |= naive_eval(c, trace)
        return out
    if isinstance(f, (Always, Eventually)):
        child = naive_eval(f.child, trace)
        out = np.empty(n, bool)
        for t in range(n):
            seg = child[t + f.a:t + f.b + 1]
            out[t] = seg.all() if isinstance(f, Always) else seg.any()
        return out
    if isinstance(f, Until):
        left, right = naive_eval(f.left, trace), naive_eval(f.right, trace)
        out = np.zeros(n, bool)
        for t in range(n):
            # prefix of left holding from t
            run = t
            while run < n and left[run]:
                run += 1
            for k in range(t + f.a, min(t + f.b, n - 1) + 1):
                if right[k] and run >= k:
                    out[t] = True
                    break
        return out
    raise TypeError(f)


def random_formula(rng, depth: int, dim: int, max_window: int = 8):
    """Random formula of at most ``depth`` operator levels over affine
    predicates with half-integer bounds.  Negation only sits on predicates,
    so the result is already in negation normal form."""
    if depth == 0 or rng.random() < 0.25:
        coeffs = tuple(float(c) for c in rng.integers(-2, 3, size=dim))
        if not any(coeffs):
            coeffs = (1.0,) + coeffs[1:]
        bound = float(rng.integers(-4, 5)) + 0.5
        p = Pred(Affine(coeffs, bound, "<=" if rng.random() < 0.5 else ">="))
        return Not(p) if rng.random() < 0.3 else p
    op = rng.integers(0, 5)
    a = int(rng.integers(0, max_window + 1))
    b = a + int(rng.integers(0, max_window + 1 - a))
    if op == 0:
        return And(tuple(random_formula(rng, depth - 1, dim, max_window) for _ in range(rng.integers(1, 4))))
    if op == 1:
        return Or(tuple(random_formula(rng, depth - 1, dim, max_window) for _ in range(rng.integers(1, 4))))
    if op == 2:
        return Always(a, b, random_formula(rng, depth - 1, dim, max_window))
    if op == 3:
        return Eventually(a, b, random_formula(rng, depth - 1, dim, max_window))
    return Until(a, b, random_formula(rng, depth - 1, dim, max_window),
                 random_formula(rng, depth - 1, dim, max_window))


# ---------------------------------------------------------------- QP / MIQP


def dense_qp(q_mat, q_vec, a_ub, b_ub, a_eq, b_eq, lo, hi):
    """min 0.5 x'Qx + q'x directly with quadprog (no reduction).
    Returns (x, objective) or (None, inf) when infeasible."""
    n = len(q_vec)
    rows, rhs = [], []
    if len(a_eq):
        rows.append(a_eq)
        rhs.append(b_eq)
    # quadprog form: C' x >= b
    if len(a_ub):
        rows.append(-a_ub)
        rhs.append(-b_ub)
    for i in range(n):
        if np.isfinite(lo[i]):
            e = np.zeros(n)
            e[i] = 1.0
            rows.append(e[None])
            rhs.append(np.array([lo[i]]))
        if np.isfinite(hi[i]):
            e = np.zeros(n)
            e[i] = -1.0
            rows.append(e[None])
            rhs.append(np.array([-hi[i]]))
    c = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    try:
        x = quadprog.solve_qp(q_mat, -q_vec, c.T, b, len(a_eq) if len(a_eq) else 0)[0]
    except ValueError:
        return None, math.inf
    return x, float(0.5 * x @ q_mat @ x + q_vec @ x)


def enumerate_miqp(sys):
    """Exhaustive search over the binaries of a ConstraintSystem, each
    assignment solved as a dense QP over the continuous variables."""
    q_mat, q_vec, a_ub, b_ub, a_eq, b_eq, lo, hi = sys.dense()
    bins = list(sys.binaries)
    cont = [i for i in range(len(lo)) if i not in set(bins)]
    best, best_x = math.inf, None
    for bits in itertools.product((0.0, 1.0), repeat=len(bins)):
        if any(not lo[b] <= v <= hi[b] for b, v in zip(bins, bits)):
            continue
        xb = np.array(bits)
        qc = q_mat[np.ix_(cont, cont)]
        lc = q_vec[cont] + q_mat[np.ix_(cont, bins)] @ xb
        const = 0.5 * xb @ q_mat[np.ix_(bins, bins)] @ xb + q_vec[bins] @ xb
        ub_rhs = b_ub - a_ub[:, bins] @ xb
        eq_rhs = b_eq - a_eq[:, bins] @ xb
        aub, aeq = a_ub[:, cont], a_eq[:, cont]
        # rows with no continuous support are pure binary checks
        keep_ub = np.any(aub != 0, axis=1)
        if np.any(ub_rhs[~keep_ub] < -1e-9):
            continue
        keep_eq = np.any(aeq != 0, axis=1)
        if np.any(np.abs(eq_rhs[~keep_eq]) > 1e-9):
            continue
        if cont:
            x, obj = dense_qp(qc, lc, aub[keep_ub], ub_rhs[keep_ub], aeq[keep_eq], eq_rhs[keep_eq],
                              lo[cont], hi[cont])
            if x is None:
                continue
        else:
            x, obj = np.zeros(0), 0.0
        total = obj + const + sys.offset
        if total < best:
            full = np.zeros(len(lo))
            full[bins] = xb
            full[cont] = x
            best, best_x = total, full
    return best, best_x


def finite_difference_jacobian(fun, x0, h=1e-6):
    x0 = np.asarray(x0, float)
    f0 = np.asarray(fun(x0))
    jac = np.zeros((len(f0), len(x0)))
    for j in range(len(x0)):
        e = np.zeros_like(x0)
        e[j] = h
        jac[:, j] = (np.asarray(fun(x0 + e)) - np.asarray(fun(x0 - e))) / (2 * h)
    return jac
