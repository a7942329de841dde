"""Dense two-phase simplex method.

Solves ``min c'x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and
per-variable bounds. Problems are rewritten in standard form
``A z = b, z >= 0`` (shifts for finite lower bounds, reflection for
upper-only bounds, splitting for free variables, extra rows for finite
upper bounds) and solved on a full tableau.

Entering columns follow Dantzig's rule until a run of degenerate pivots is
seen, after which Bland's smallest-index rule takes over so the method
cannot cycle. With ``pivot_rule="bland"`` Bland's rule is used throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibilityError, NumericalError, UnboundedError, UsageError

_TOL = 1e-9
_DEGENERATE_RUN = 30


@dataclass
class LPProblem:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None  # (lo, hi) per variable, None for infinite; default (0, None)
    maximize: bool = False

    def normalized(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size

        def block(A, b):
            if A is None:
                return np.zeros((0, n)), np.zeros(0)
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).ravel()
            if A.shape != (b.size, n):
                raise UsageError(f"constraint block has shape {A.shape}, expected ({b.size}, {n})")
            return A, b

        A_ub, b_ub = block(self.A_ub, self.b_ub)
        A_eq, b_eq = block(self.A_eq, self.b_eq)
        bounds = self.bounds if self.bounds is not None else [(0.0, None)] * n
        if len(bounds) != n:
            raise UsageError(f"{len(bounds)} bounds for {n} variables")
        for arr in (c, A_ub, b_ub, A_eq, b_eq):
            if not np.all(np.isfinite(arr)):
                raise UsageError("LP coefficients must be finite")
        return c, A_ub, b_ub, A_eq, b_eq, bounds


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    duals_ub: np.ndarray  # multipliers of the <= rows
    duals_eq: np.ndarray  # multipliers of the = rows
    iterations: int


class _Tableau:
    def __init__(self, A, b, basis, rule):
        m, n = A.shape
        self.T = np.zeros((m + 1, n + 1))
        self.T[:m, :n] = A
        self.T[:m, n] = b
        self.basis = np.array(basis, dtype=int)
        self.rule = rule
        self.iterations = 0

    def set_costs(self, cost):
        m = len(self.basis)
        self.T[m, :-1] = cost
        self.T[m, -1] = 0.0
        for i, j in enumerate(self.basis):
            if self.T[m, j] != 0.0:
                self.T[m] -= self.T[m, j] * self.T[i]

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        factor = T[:, col].copy()
        factor[row] = 0.0
        T -= np.outer(factor, T[row])
        T[:, col] = 0.0
        T[row, col] = 1.0
        self.basis[row] = col
        self.iterations += 1

    def run(self, allowed, max_iter):
        """Minimize the cost row over columns flagged in ``allowed``."""
        T = self.T
        m = len(self.basis)
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                raise NumericalError(f"simplex did not finish in {max_iter} pivots")
            red = T[m, :-1]
            scale = max(1.0, np.abs(red).max())
            candidates = np.flatnonzero(allowed & (red < -_TOL * scale))
            if candidates.size == 0:
                return
            use_bland = self.rule == "bland" or degenerate >= _DEGENERATE_RUN
            col = candidates[0] if use_bland else candidates[np.argmin(red[candidates])]
            column = T[:m, col]
            pos = column > _TOL
            if not np.any(pos):
                raise UnboundedError("objective is unbounded below")
            ratios = np.full(m, np.inf)
            ratios[pos] = T[:m, -1][pos] / column[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + _TOL * max(1.0, abs(best)))
            row = ties[np.argmin(self.basis[ties])]
            degenerate = degenerate + 1 if best <= _TOL else 0
            self.pivot(row, col)


def _standard_form(c, A_ub, b_ub, A_eq, b_eq, bounds):
    """Rewrite as ``min c_s'z, A_s z = b_s, z >= 0`` and remember how to map back."""
    n = c.size
    cols = []  # per original variable: list of (standard column, coefficient)
    offset = np.zeros(n)
    extra_rows = []  # (column index, upper bound) rows z_col <= ub
    n_std = 0
    for j, (lo, hi) in enumerate(bounds):
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise InfeasibilityError(f"variable {j} has empty bounds [{lo}, {hi}]")
        if np.isfinite(lo):
            offset[j] = lo
            cols.append([(n_std, 1.0)])
            if np.isfinite(hi):
                extra_rows.append((n_std, hi - lo))
            n_std += 1
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append([(n_std, -1.0)])
            n_std += 1
        else:
            cols.append([(n_std, 1.0), (n_std + 1, -1.0)])
            n_std += 2

    lift = np.zeros((n, n_std))
    for j, parts in enumerate(cols):
        for k, coef in parts:
            lift[j, k] = coef

    def expand(A):
        return A @ lift

    c_s = expand(c[None, :])[0]
    ub_A = expand(A_ub)
    ub_b = b_ub - A_ub @ offset
    for k, ub in extra_rows:
        row = np.zeros(n_std)
        row[k] = 1.0
        ub_A = np.vstack([ub_A, row])
        ub_b = np.append(ub_b, ub)
    eq_A = expand(A_eq)
    eq_b = b_eq - A_eq @ offset

    m_ub, m_eq = ub_A.shape[0], eq_A.shape[0]
    A = np.zeros((m_ub + m_eq, n_std + m_ub))
    A[:m_ub, :n_std] = ub_A
    A[:m_ub, n_std:] = np.eye(m_ub)
    A[m_ub:, :n_std] = eq_A
    b = np.concatenate([ub_b, eq_b])
    c_full = np.concatenate([c_s, np.zeros(m_ub)])
    return A, b, c_full, cols, offset, m_ub, n_std


def solve_lp(problem: LPProblem, pivot_rule: str = "dantzig", max_iter: int = 50000) -> LPResult:
    """Optimal basic solution of ``problem``.

    Raises :class:`InfeasibilityError` or :class:`UnboundedError`.
    """
    if pivot_rule not in ("dantzig", "bland"):
        raise UsageError(f"unknown pivot rule {pivot_rule!r}")
    c, A_ub, b_ub, A_eq, b_eq, bounds = problem.normalized()
    sign = -1.0 if problem.maximize else 1.0
    A, b, cost, cols, offset, m_ub_all, n_std = _standard_form(
        sign * c, A_ub, b_ub, A_eq, b_eq, bounds
    )
    m, n = A.shape
    flip = b < 0
    A[flip] *= -1.0
    b = np.where(flip, -b, b)

    # slack columns serve as the starting basis where the row was not flipped
    basis = []
    art_rows = []
    for i in range(m):
        if i < m_ub_all and not flip[i]:
            basis.append(n_std + i)
        else:
            art_rows.append(i)
            basis.append(-1)
    n_art = len(art_rows)
    A_ph1 = np.hstack([A, np.zeros((m, n_art))])
    for k, i in enumerate(art_rows):
        A_ph1[i, n + k] = 1.0
        basis[i] = n + k

    tab = _Tableau(A_ph1, b, basis, pivot_rule)
    allowed = np.ones(n + n_art, dtype=bool)
    if n_art:
        ph1_cost = np.zeros(n + n_art)
        ph1_cost[n:] = 1.0
        tab.set_costs(ph1_cost)
        tab.run(allowed, max_iter)
        infeas = -tab.T[m, -1]
        if infeas > _TOL * max(1.0, np.abs(b).max()):
            raise InfeasibilityError("no point satisfies the constraints")
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if tab.basis[i] >= n:
                row = tab.T[i, :n]
                nz = np.flatnonzero(np.abs(row) > _TOL)
                if nz.size:
                    tab.pivot(i, nz[0])
                else:
                    keep[i] = False
        if not keep.all():
            rows = np.r_[np.flatnonzero(keep), m]
            tab.T = tab.T[rows]
            tab.basis = tab.basis[keep]
        allowed[n:] = False
        tab.T[:, n:n + n_art] = 0.0
    else:
        keep = np.ones(m, dtype=bool)

    tab.set_costs(np.concatenate([cost, np.zeros(n_art)]))
    tab.run(allowed, max_iter)

    m_kept = len(tab.basis)
    z = np.zeros(n + n_art)
    z[tab.basis] = tab.T[:m_kept, -1]
    z = z[:n]

    x = offset.copy()
    for j, parts in enumerate(cols):
        for k, coef in parts:
            x[j] += coef * z[k]

    # multipliers y with c - A'y >= 0 on the kept rows
    B = A[keep][:, tab.basis]
    y_kept = np.linalg.solve(B.T, cost[tab.basis]) if m_kept else np.zeros(0)
    y = np.zeros(m)
    y[keep] = y_kept
    y[flip] *= -1.0
    y *= sign
    m_ub = A_ub.shape[0]
    return LPResult(
        x=x,
        objective=float(c @ x),
        duals_ub=y[:m_ub],
        duals_eq=y[m_ub_all:],
        iterations=tab.iterations,
    )
