"""Dense two-phase tableau simplex over Fractions (exact) or floats.

Solves  min c.x  s.t.  A x (<=, >=, =) b,  x >= 0  and reports row duals.
"""

import logging
from fractions import Fraction

from gaotour.models import LPStallError, SolverError

logger = logging.getLogger(__name__)

SENSES = ("<=", ">=", "=")


class LPResult:
    def __init__(self, x, value, duals, iterations, basis):
        self.x = x
        self.value = value
        self.duals = duals
        self.iterations = iterations
        self.basis = basis

    def dict(self):
        return {"value": self.value, "iterations": self.iterations, "nonzeros": sum(1 for v in self.x if v)}


class SimplexSolver:
    """Dantzig pricing with a switch to Bland's rule after a run of degenerate pivots."""

    def __init__(self, exact=True, tol=1e-9, max_iter=50000, bland_after=50):
        self.exact = exact
        self.tol = 0 if exact else tol
        self.max_iter = max_iter
        self.bland_after = bland_after

    def _num(self, value):
        return Fraction(value) if self.exact else float(value)

    def solve(self, c, rows, senses, rhs):
        """Solve the LP; rows are dense coefficient lists of length len(c)."""
        nv, m = len(c), len(rows)
        if len(senses) != m or len(rhs) != m:
            raise ValueError(f"Got {m} rows, {len(senses)} senses and {len(rhs)} right-hand sides")
        zero = self._num(0)

        # normalize to b >= 0; flip[i] records the sign applied to row i
        flip = []
        norm_rows, norm_senses, norm_rhs = [], [], []
        for row, sense, b in zip(rows, senses, rhs):
            if sense not in SENSES:
                raise ValueError(f"Unknown constraint sense {sense!r}")
            if len(row) != nv:
                raise ValueError(f"Row has {len(row)} coefficients, expected {nv}")
            b = self._num(b)
            sign = 1
            if b < 0:
                sign = -1
                sense = {"<=": ">=", ">=": "<=", "=": "="}[sense]
            flip.append(sign)
            norm_rows.append([self._num(a) * sign for a in row])
            norm_senses.append(sense)
            norm_rhs.append(b * sign)

        slack_cols = {}
        for i, sense in enumerate(norm_senses):
            if sense != "=":
                slack_cols[i] = nv + len(slack_cols)
        art0 = nv + len(slack_cols)
        width = art0 + m

        tableau = []
        for i in range(m):
            line = norm_rows[i] + [zero] * (width - nv) + [norm_rhs[i]]
            if i in slack_cols:
                line[slack_cols[i]] = self._num(1 if norm_senses[i] == "<=" else -1)
            line[art0 + i] = self._num(1)
            tableau.append(line)
        basis = [art0 + i for i in range(m)]

        # reduced-cost rows; last entry holds -objective
        phase2 = [self._num(v) for v in c] + [zero] * (width - nv) + [zero]
        phase1 = [zero] * (width + 1)
        for j in range(art0):
            phase1[j] = -sum((tableau[i][j] for i in range(m)), zero)
        phase1[width] = -sum((tableau[i][width] for i in range(m)), zero)

        self.iterations = 0
        self._run(tableau, basis, [phase1, phase2], art0, width)
        if -phase1[width] > self.tol:
            raise SolverError(f"LP infeasible (phase-1 residual {-phase1[width]})", stage="lp")

        for r in range(m):
            if basis[r] >= art0:
                pivot_col = next((j for j in range(art0) if abs(tableau[r][j]) > self.tol), None)
                if pivot_col is None:
                    logger.debug(f"Row {r} is redundant; artificial stays basic at zero")
                    continue
                self._pivot(tableau, basis, [phase1, phase2], r, pivot_col)

        self._run(tableau, basis, [phase2], art0, width)

        x = [zero] * nv
        for r, var in enumerate(basis):
            if var < nv:
                x[var] = tableau[r][width]
        value = sum((self._num(cj) * xj for cj, xj in zip(c, x)), zero)
        duals = [-phase2[art0 + i] * flip[i] for i in range(m)]
        return LPResult(x, value, duals, self.iterations, list(basis))

    def _run(self, tableau, basis, objectives, art0, width):
        objective = objectives[0]
        degenerate = 0
        while True:
            if self.iterations >= self.max_iter:
                raise LPStallError(f"Simplex exceeded {self.max_iter} iterations", stage="lp")
            bland = degenerate >= self.bland_after
            entering = None
            if bland:
                entering = next((j for j in range(art0) if objective[j] < -self.tol), None)
            else:
                best = -self.tol
                for j in range(art0):
                    if objective[j] < best:
                        best, entering = objective[j], j
            if entering is None:
                return

            leaving, ratio = None, None
            for r, line in enumerate(tableau):
                a = line[entering]
                if a > self.tol:
                    q = line[width] / a
                    if ratio is None or q < ratio or (q == ratio and basis[r] < basis[leaving]):
                        leaving, ratio = r, q
            if leaving is None:
                raise SolverError("LP unbounded", stage="lp")

            degenerate = degenerate + 1 if ratio <= self.tol else 0
            self._pivot(tableau, basis, objectives, leaving, entering)
            self.iterations += 1

    def _pivot(self, tableau, basis, objectives, r, col):
        prow = tableau[r]
        piv = prow[col]
        prow = [v / piv for v in prow]
        tableau[r] = prow
        nz = [j for j, v in enumerate(prow) if v != 0]
        for i, line in enumerate(tableau):
            if i == r:
                continue
            f = line[col]
            if f != 0:
                for j in nz:
                    line[j] -= f * prow[j]
                if not self.exact:
                    line[col] = 0.0
        for objective in objectives:
            f = objective[col]
            if f != 0:
                for j in nz:
                    objective[j] -= f * prow[j]
                if not self.exact:
                    objective[col] = 0.0
        basis[r] = col


def solve_lp(c, rows, senses, rhs, exact=True, tol=1e-9, max_iter=50000):
    return SimplexSolver(exact=exact, tol=tol, max_iter=max_iter).solve(c, rows, senses, rhs)
