"""Mixed-integer linear encoding of STL formulas (big-M) and the
ConstraintSystem container the MIQP solver consumes.

The objective is ``0.5 x'Qx + q'x + offset``.  Constraints are stored as
sparse rows ``sum(c_i x_i) (<= | ==) bound``; ``>=`` rows are negated on
entry.  Besides the algebra the system carries two hints for the solver's
rounding heuristic: ``groups`` (sets of binaries of which at least one must
be 1) and ``guards`` (the rows a binary switches on when it is 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .stl import (Affine, Always, And, Collision1Norm, Eventually, Not, Or, Pred,
                  Until, window)

BIG_M = 1e4
MARGIN = 1e-6


@dataclass
class LinearConstraint:
    coeffs: dict[int, float]
    bound: float
    sense: str = "<="  # "<=" or "=="


@dataclass
class ConstraintSystem:
    names: list[str] = field(default_factory=list)
    lo: list[float] = field(default_factory=list)
    hi: list[float] = field(default_factory=list)
    binaries: list[int] = field(default_factory=list)
    constraints: list[LinearConstraint] = field(default_factory=list)
    quad: dict[tuple[int, int], float] = field(default_factory=dict)
    lin: dict[int, float] = field(default_factory=dict)
    offset: float = 0.0
    groups: list[list[int]] = field(default_factory=list)
    guards: dict[int, list[int]] = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str, lo: float = -math.inf, hi: float = math.inf, binary: bool = False) -> int:
        if binary:
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        if lo > hi:
            raise ValueError(f"variable {name}: empty bounds [{lo}, {hi}]")
        self.names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        idx = len(self.names) - 1
        if binary:
            self.binaries.append(idx)
        return idx

    def add_constraint(self, coeffs: dict[int, float], sense: str, bound: float) -> int:
        coeffs = {int(i): float(c) for i, c in coeffs.items() if c != 0.0}
        if not coeffs:
            raise ValueError("constraint without nonzero coefficients")
        if not all(math.isfinite(c) for c in coeffs.values()) or not math.isfinite(bound):
            raise ValueError("constraint coefficients must be finite")
        if sense == ">=":
            coeffs = {i: -c for i, c in coeffs.items()}
            bound, sense = -bound, "<="
        if sense not in ("<=", "=="):
            raise ValueError(f"bad constraint sense {sense!r}")
        self.constraints.append(LinearConstraint(coeffs, float(bound), sense))
        return len(self.constraints) - 1

    def fix(self, var: int, value: float) -> None:
        self.lo[var] = self.hi[var] = float(value)

    def add_quadratic(self, i: int, j: int, value: float) -> None:
        """Add ``value`` to Q[i, j] (and Q[j, i])."""
        key = (min(i, j), max(i, j))
        self.quad[key] = self.quad.get(key, 0.0) + float(value)

    def add_linear(self, i: int, value: float) -> None:
        self.lin[i] = self.lin.get(i, 0.0) + float(value)

    def add_square(self, coeffs: dict[int, float], target: float = 0.0, weight: float = 1.0) -> None:
        """Add ``weight * (sum(c_i x_i) - target)**2`` to the objective."""
        items = list(coeffs.items())
        # 0.5 x'Qx convention: Q += 2w cc'
        for a, (i, ci) in enumerate(items):
            for j, cj in items[a:]:
                self.add_quadratic(i, j, 2.0 * weight * ci * cj)
            self.add_linear(i, -2.0 * weight * target * ci)
        self.offset += float(weight * target * target)

    def dense(self):
        n = self.num_vars
        q_mat = np.zeros((n, n))
        for (i, j), v in self.quad.items():
            q_mat[i, j] += v
            if i != j:
                q_mat[j, i] += v
        q_vec = np.zeros(n)
        for i, v in self.lin.items():
            q_vec[i] += v
        ub = [c for c in self.constraints if c.sense == "<="]
        eq = [c for c in self.constraints if c.sense == "=="]
        a_ub, b_ub = _rows(ub, n)
        a_eq, b_eq = _rows(eq, n)
        return q_mat, q_vec, a_ub, b_ub, a_eq, b_eq, np.array(self.lo), np.array(self.hi)

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        val = self.offset
        for (i, j), v in self.quad.items():
            val += v * x[i] * x[j] if i != j else 0.5 * v * x[i] * x[i]
        for i, v in self.lin.items():
            val += v * x[i]
        return float(val)

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for c in self.constraints:
            lhs = sum(v * x[i] for i, v in c.coeffs.items())
            r = lhs - c.bound
            worst = max(worst, abs(r) if c.sense == "==" else r)
        lo, hi = np.array(self.lo), np.array(self.hi)
        worst = max(worst, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
        return worst

    # ------------------------------------------------------------ text dump

    def dump(self) -> str:
        """Line-oriented text form; :func:`parse_system` reads it back.

        ``var <idx> <name> <lo> <hi> <C|B>``, ``obj const|lin|quad ...``,
        ``con <sense> <bound> <idx>:<coef> ...``, ``group <idx> ...`` and
        ``guard <binary> <row> ...``.  Floats use repr() so the round trip is
        exact.
        """
        bset = set(self.binaries)
        lines = ["# stldrive constraint system v1",
                 f"# {self.num_vars} vars, {len(self.binaries)} binaries, {len(self.constraints)} rows"]
        for i, name in enumerate(self.names):
            lines.append(f"var {i} {name} {self.lo[i]!r} {self.hi[i]!r} {'B' if i in bset else 'C'}")
        lines.append(f"obj const {self.offset!r}")
        for i, v in sorted(self.lin.items()):
            lines.append(f"obj lin {i} {v!r}")
        for (i, j), v in sorted(self.quad.items()):
            lines.append(f"obj quad {i} {j} {v!r}")
        for c in self.constraints:
            terms = " ".join(f"{i}:{v!r}" for i, v in sorted(c.coeffs.items()))
            lines.append(f"con {c.sense} {c.bound!r} {terms}")
        for g in self.groups:
            lines.append("group " + " ".join(map(str, g)))
        for b, rows in sorted(self.guards.items()):
            lines.append(f"guard {b} " + " ".join(map(str, rows)))
        return "\n".join(lines) + "\n"


def parse_system(text: str) -> ConstraintSystem:
    sys = ConstraintSystem()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            if tok[0] == "var":
                idx = int(tok[1])
                if idx != sys.num_vars:
                    raise ValueError(f"variables out of order (expected {sys.num_vars})")
                sys.add_var(tok[2], float(tok[3]), float(tok[4]), binary=tok[5] == "B")
            elif tok[0] == "obj":
                if tok[1] == "const":
                    sys.offset = float(tok[2])
                elif tok[1] == "lin":
                    sys.lin[int(tok[2])] = float(tok[3])
                elif tok[1] == "quad":
                    sys.quad[(int(tok[2]), int(tok[3]))] = float(tok[4])
                else:
                    raise ValueError(f"unknown objective entry {tok[1]!r}")
            elif tok[0] == "con":
                coeffs = {}
                for term in tok[3:]:
                    i, v = term.split(":")
                    coeffs[int(i)] = float(v)
                sys.constraints.append(LinearConstraint(coeffs, float(tok[2]), tok[1]))
            elif tok[0] == "group":
                sys.groups.append([int(t) for t in tok[1:]])
            elif tok[0] == "guard":
                sys.guards[int(tok[1])] = [int(t) for t in tok[2:]]
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}: {raw!r}") from exc
    return sys


def _rows(rows, n):
    a = np.zeros((len(rows), n))
    b = np.zeros(len(rows))
    for r, c in enumerate(rows):
        for i, v in c.coeffs.items():
            a[r, i] += v
        b[r] = c.bound
    return a, b


# ---------------------------------------------------------------- encoder


class _Encoder:
    def __init__(self, sys: ConstraintSystem, signal: Sequence[Sequence[int]], big_m: float, margin: float):
        if len(signal) == 0:
            raise ValueError("empty signal")
        self.sys = sys
        self.signal = signal
        self.n = len(signal)
        self.big_m = big_m
        self.margin = margin
        self.memo: dict[tuple[int, int], int] = {}
        self.consts: dict[bool, int] = {}
        self.count = 0

    def const(self, value: bool) -> int:
        if value not in self.consts:
            v = self.sys.add_var(f"z_const{int(value)}", binary=True)
            self.sys.fix(v, 1.0 if value else 0.0)
            self.consts[value] = v
        return self.consts[value]

    def binary(self, tag: str) -> int:
        self.count += 1
        return self.sys.add_var(f"z{len(self.sys.names)}_{tag}", binary=True)

    def expr(self, pred: Affine, k: int) -> tuple[dict[int, float], float]:
        a, b = pred.as_leq()
        if len(a) > len(self.signal[k]):
            raise ValueError("predicate dimension exceeds the signal dimension")
        coeffs: dict[int, float] = {}
        for j, c in enumerate(a):
            if c != 0.0:
                var = self.signal[k][j]
                coeffs[var] = coeffs.get(var, 0.0) + float(c)
        return coeffs, b

    def affine(self, pred: Affine, k: int, negate: bool) -> int:
        """z = 1 => predicate (or its negation) holds with ``margin`` slack;
        z = 0 => the opposite holds."""
        coeffs, b = self.expr(pred, k)
        if not coeffs:
            holds = (0.0 <= b - self.margin) if not negate else (0.0 >= b + self.margin)
            return self.const(holds)
        z = self.binary("p")
        m, eps = self.big_m, self.margin
        if negate:
            coeffs = {i: -c for i, c in coeffs.items()}
            b = -b
        # z=1: e <= b - eps ; z=0: e >= b + eps
        on = self.sys.add_constraint({**coeffs, z: m}, "<=", b - eps + m)
        self.sys.add_constraint({**coeffs, z: m}, ">=", b + eps)
        self.sys.guards[z] = [on]
        return z

    def conj(self, zs: list[int]) -> int:
        # repeated children would merge in the sparse rows
        zs = list(dict.fromkeys(zs))
        if not zs:
            return self.const(True)
        if len(zs) == 1:
            return zs[0]
        z = self.binary("and")
        for c in zs:
            self.sys.add_constraint({z: 1.0, c: -1.0}, "<=", 0.0)
        self.sys.add_constraint({z: 1.0, **{c: -1.0 for c in zs}}, ">=", 1.0 - len(zs))
        return z

    def disj(self, zs: list[int]) -> int:
        zs = list(dict.fromkeys(zs))
        if not zs:
            return self.const(False)
        if len(zs) == 1:
            return zs[0]
        z = self.binary("or")
        for c in zs:
            self.sys.add_constraint({z: 1.0, c: -1.0}, ">=", 0.0)
        self.sys.add_constraint({z: 1.0, **{c: -1.0 for c in zs}}, "<=", 0.0)
        return z

    def collision(self, pred: Collision1Norm, k: int) -> int:
        xy = [(self.signal[k][0], self.signal[k][1])]
        return encode_collision_1norm(self.sys, xy, [pred.other[min(k, len(pred.other) - 1)]],
                                      pred.d_safe, range(1), self.big_m)

    def enc(self, f, t: int) -> int:
        key = (id(f), t)
        if key in self.memo:
            return self.memo[key]
        if isinstance(f, Pred):
            p = f.predicate
            if isinstance(p, Affine):
                z = self.affine(p, t, negate=False)
            elif isinstance(p, Collision1Norm):
                z = self.collision(p, t)
            else:
                raise TypeError(f"{type(p).__name__} has no linear encoding")
        elif isinstance(f, Not):
            p = f.child.predicate
            if not isinstance(p, Affine):
                raise TypeError("only affine predicates may be negated in the encoding")
            z = self.affine(p, t, negate=True)
        elif isinstance(f, And):
            z = self.conj([self.enc(c, t) for c in f.children])
        elif isinstance(f, Or):
            z = self.disj([self.enc(c, t) for c in f.children])
        elif isinstance(f, Always):
            z = self.conj([self.enc(f.child, k) for k in window(t, f.a, f.b, self.n)])
        elif isinstance(f, Eventually):
            z = self.disj([self.enc(f.child, k) for k in window(t, f.a, f.b, self.n)])
        elif isinstance(f, Until):
            z = self.disj([self.conj([self.enc(f.right, k)] + [self.enc(f.left, j) for j in range(t, k)])
                           for k in window(t, f.a, f.b, self.n)])
        else:
            raise TypeError(f"not an STL formula: {f!r}")
        self.memo[key] = z
        return z

    def hard(self, f, t: int) -> None:
        """Impose ``f`` at step ``t`` as true: conjunctive structure becomes
        plain constraints, disjunctions get binaries with sum >= 1."""
        if isinstance(f, Pred) and isinstance(f.predicate, Affine):
            coeffs, b = self.expr(f.predicate, t)
            if coeffs:
                self.sys.add_constraint(coeffs, "<=", b - self.margin)
            elif not 0.0 <= b - self.margin:
                self._infeasible()
        elif isinstance(f, Pred) and isinstance(f.predicate, Collision1Norm):
            p = f.predicate
            encode_collision_1norm(self.sys, [(self.signal[t][0], self.signal[t][1])],
                                   [p.other[min(t, len(p.other) - 1)]], p.d_safe, range(1),
                                   self.big_m, pinned=True)
        elif isinstance(f, Not) and isinstance(f.child.predicate, Affine):
            coeffs, b = self.expr(f.child.predicate, t)
            if coeffs:
                self.sys.add_constraint(coeffs, ">=", b + self.margin)
            elif not 0.0 >= b + self.margin:
                self._infeasible()
        elif isinstance(f, And):
            for c in f.children:
                self.hard(c, t)
        elif isinstance(f, Always):
            for k in window(t, f.a, f.b, self.n):
                self.hard(f.child, k)
        elif isinstance(f, (Or, Eventually, Until)):
            if isinstance(f, Or):
                members = [self.enc(c, t) for c in f.children]
            elif isinstance(f, Eventually):
                members = [self.enc(f.child, k) for k in window(t, f.a, f.b, self.n)]
            else:
                members = [self.conj([self.enc(f.right, k)] + [self.enc(f.left, j) for j in range(t, k)])
                           for k in window(t, f.a, f.b, self.n)]
            if not members:
                self._infeasible()
                return
            self.sys.add_constraint({z: 1.0 for z in members}, ">=", 1.0)
            self.sys.groups.append(members)
        else:
            raise TypeError(f"cannot impose {f!r}")

    def _infeasible(self) -> None:
        z = self.const(False)
        self.sys.add_constraint({z: 1.0}, ">=", 1.0)


def encode(formula, sys: ConstraintSystem, signal: Sequence[Sequence[int]], big_m: float = BIG_M,
           margin: float = MARGIN, t: int = 0) -> int:
    """Append the big-M encoding of ``formula`` evaluated at step ``t``.

    ``signal[k]`` lists the variable indices of the signal components at step
    k (the horizon is ``len(signal) - 1``).  Returns the binary whose value 1
    certifies satisfaction.  Windows are clipped to the horizon.
    """
    return _Encoder(sys, signal, big_m, margin).enc(formula, t)


def pin_true(sys: ConstraintSystem, z: int) -> int:
    """Force a satisfaction variable to 1 with an equality row."""
    return sys.add_constraint({z: 1.0}, "==", 1.0)


def impose(formula, sys: ConstraintSystem, signal: Sequence[Sequence[int]], big_m: float = BIG_M,
           margin: float = MARGIN, t: int = 0) -> int:
    """Require ``formula`` to hold; same feasible set as ``encode`` + ``pin_true``
    but conjunctions pinned to true need no binaries.  Returns the number of
    binaries added."""
    enc = _Encoder(sys, signal, big_m, margin)
    before = len(sys.binaries)
    enc.hard(formula, t)
    return len(sys.binaries) - before


def encode_collision_1norm(sys: ConstraintSystem, ego_vars: Sequence[tuple[int, int]],
                           other_traj: Sequence[Sequence[float]], d_safe: float, steps,
                           big_m: float = BIG_M, pinned: bool = False) -> int | None:
    """``|X_k - X_i,k| + |Y_k - Y_i,k| >= d_safe`` for k in ``steps``.

    Each step gets four quadrant binaries b with
    ``sx (X - X_i) + sy (Y - Y_i) >= d_safe - M (1 - b)``.  With ``pinned``
    the quadrants satisfy ``sum(b) >= 1`` directly and nothing is returned;
    otherwise ``sum(b) >= z`` per step for a returned root ``z`` (z = 1
    implies clearance at every step, which is all a negation-free formula
    needs).
    """
    steps = list(steps)
    if len(other_traj) < (max(steps) + 1 if steps else 0):
        raise ValueError("other trajectory does not cover the step range")
    root = None if pinned else sys.add_var(f"z{len(sys.names)}_col", binary=True)
    m = big_m
    for k in steps:
        xv, yv = ego_vars[k]
        ox, oy = float(other_traj[k][0]), float(other_traj[k][1])
        quad = []
        for sx in (1.0, -1.0):
            for sy in (1.0, -1.0):
                b = sys.add_var(f"z{len(sys.names)}_q", binary=True)
                row = sys.add_constraint({xv: sx, yv: sy, b: -m}, ">=", d_safe + sx * ox + sy * oy - m)
                sys.guards[b] = [row]
                quad.append(b)
        if pinned:
            sys.add_constraint({b: 1.0 for b in quad}, ">=", 1.0)
        else:
            sys.add_constraint({**{b: 1.0 for b in quad}, root: -1.0}, ">=", 0.0)
        sys.groups.append(quad)
    return root
