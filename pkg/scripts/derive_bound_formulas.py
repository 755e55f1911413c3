#!/usr/bin/env python3
"""Derive the closed-form bound expressions frozen in superregime.bounds.

A binary instrument Z, binary treatment A and binary outcome Y admit 16 joint
response types t = (a_at_z0, a_at_z1, y_if_a0, y_if_a1).  The observable cell
probabilities p(y, a | z) are linear in the type distribution q, so sharp
bounds on any linear functional c'q solve a small LP over the type simplex:

    minimize c'q   subject to  A q = b,  q >= 0,

with A the 8x16 cell-membership matrix and b the observed cell probabilities.
By LP duality the optimal value equals max_y b'y over the dual polyhedron
{y : A'y <= c}, whose vertex set does not depend on b.  This script enumerates
those vertices *exactly* (Fraction arithmetic), yielding the bound as a
pointwise maximum (lower bound) or minimum (upper bound) of finitely many
linear expressions in the eight observable probabilities.

A' has a one-dimensional null space (each arm's cells sum to one), so the dual
is normalized by pinning the first coordinate to zero before enumeration;
this changes nothing about the attained values because b annihilates the
lineality direction.

Output: Python source for the coefficient tables, written to stdout, plus a
numeric cross-check against scipy's LP solver on random feasible tables.  The
tables in superregime.bounds were pasted from a run of this script.
"""

from fractions import Fraction
from itertools import combinations, product

# Response types: (a when z=0, a when z=1, y if a=0, y if a=1)
TYPES = [t for t in product((0, 1), repeat=4)]

# Observable cells in frozen order (z, y, a)
CELLS = [(z, y, a) for z in (0, 1) for y in (0, 1) for a in (0, 1)]


def cell_of(t, z):
    """Which observable cell a unit of type t lands in under instrument arm z."""
    a = t[z]
    y = t[2 + a]
    return (z, y, a)


# A[i][j] = 1 iff type j lands in cell i of arm CELLS[i][0]
A = [[1 if cell_of(t, cell[0]) == cell else 0 for t in TYPES] for cell in CELLS]


def solve_exact(mat, rhs):
    """Solve an 8x8 rational linear system; None if singular."""
    n = len(mat)
    aug = [[Fraction(v) for v in row] + [Fraction(r)] for row, r in zip(mat, rhs)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if pivot is None:
            return None
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = aug[col][col]
        aug[col] = [v / inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [v - factor * p for v, p in zip(aug[r], aug[col])]
    return [aug[r][n] for r in range(n)]


def dual_vertices(c):
    """Vertices of {y in R^8 : A'y <= c, y_0 = 0}, exactly."""
    cols = [[A[i][j] for i in range(8)] for j in range(16)]  # A' rows
    verts = set()
    for combo in combinations(range(16), 7):
        mat = [cols[j] for j in combo] + [[1, 0, 0, 0, 0, 0, 0, 0]]
        rhs = [c[j] for j in combo] + [0]
        y = solve_exact(mat, rhs)
        if y is None:
            continue
        if all(sum(col[i] * y[i] for i in range(8)) <= c[j] for j, col in enumerate(cols)):
            verts.add(tuple(y))
    return sorted(verts)


def lower_bound_exprs(c):
    """Expressions whose pointwise max over feasible b is min c'q."""
    return dual_vertices(c)


def upper_bound_exprs(c):
    """Expressions whose pointwise min over feasible b is max c'q."""
    neg = [-v for v in c]
    return sorted(tuple(-w for w in v) for v in dual_vertices(neg))


def fmt(exprs):
    lines = []
    for v in exprs:
        lines.append("    (" + ", ".join(str(float(x)) if x.denominator != 1 else str(x.numerator) for x in v) + "),")
    return "\n".join(lines)


def main():
    objectives = {
        "ATE": [Fraction(t[3] - t[2]) for t in TYPES],  # E(Y^1 - Y^0)
        "Y1": [Fraction(t[3]) for t in TYPES],  # E(Y^1)
        "Y0": [Fraction(t[2]) for t in TYPES],  # E(Y^0)
    }
    print("# Cell order:", CELLS)
    frozen = {}
    for name, c in objectives.items():
        lo = lower_bound_exprs(c)
        hi = upper_bound_exprs(c)
        frozen[name] = (lo, hi)
        print(f"\n{name}_LOWER_EXPRS = (  # take the max")
        print(fmt(lo))
        print(")")
        print(f"{name}_UPPER_EXPRS = (  # take the min")
        print(fmt(hi))
        print(")")

    # -------- numeric cross-check against scipy's LP solver --------
    try:
        import numpy as np
        from scipy.optimize import linprog
    except ImportError:
        print("\n# scipy unavailable; skipped numeric check")
        return
    rng = np.random.default_rng(0)
    A_np = np.array(A, dtype=float)
    worst = 0.0
    for trial in range(300):
        q = rng.dirichlet(np.ones(16))
        b = A_np @ q
        for name, c in objectives.items():
            c_np = np.array([float(x) for x in c])
            lo_lp = linprog(c_np, A_eq=A_np, b_eq=b, bounds=(0, None), method="highs").fun
            hi_lp = -linprog(-c_np, A_eq=A_np, b_eq=b, bounds=(0, None), method="highs").fun
            lo_cf = max(sum(float(v[i]) * b[i] for i in range(8)) for v in frozen[name][0])
            hi_cf = min(sum(float(v[i]) * b[i] for i in range(8)) for v in frozen[name][1])
            worst = max(worst, abs(lo_cf - lo_lp), abs(hi_cf - hi_lp))
    print(f"\n# numeric check on 300 random feasible tables: worst |closed-form - LP| = {worst:.3e}")


if __name__ == "__main__":
    main()
