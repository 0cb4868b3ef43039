"""Dense bounded-variable primal simplex for small linear programs.

Problems have the form::

    min  c @ x
    s.t. row_lo <= A @ x <= row_hi
         var_lo <=     x <= var_hi

Infinite bounds are written as ``-inf`` / ``inf``; an equality row has
``row_lo == row_hi``. Internally every row gets a bounded slack ``s = A @ x``,
which turns all constraints into ``A @ x - s = 0`` plus simple bounds. Phase 1
minimises the sum of artificial variables; phase 2 the true objective.
Pricing is Dantzig's rule, switching to Bland's rule once the number of
degenerate pivots exceeds ``10 * n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .core import BandroError, InvalidParameterError

FEAS_TOL = 1e-8
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11


class LpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class LpNumericalError(BandroError):
    """Raised when the simplex exceeds its pivot budget."""


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    var_lo: np.ndarray
    var_hi: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        if n < 1:
            raise InvalidParameterError("an LP needs at least one variable")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        r = self.A.shape[0]
        self.row_lo = np.broadcast_to(np.asarray(self.row_lo, dtype=float), (r,)).copy()
        self.row_hi = np.broadcast_to(np.asarray(self.row_hi, dtype=float), (r,)).copy()
        self.var_lo = np.broadcast_to(np.asarray(self.var_lo, dtype=float), (n,)).copy()
        self.var_hi = np.broadcast_to(np.asarray(self.var_hi, dtype=float), (n,)).copy()
        for lo, hi in ((self.row_lo, self.row_hi), (self.var_lo, self.var_hi)):
            if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
                raise InvalidParameterError("NaN bound")
            fin = np.isfinite(lo) & np.isfinite(hi)
            if np.any(lo[fin] > hi[fin]):
                raise InvalidParameterError("bound with lo > hi")
            if np.any(lo == np.inf) or np.any(hi == -np.inf):
                raise InvalidParameterError("lower bound +inf or upper bound -inf")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @classmethod
    def build(cls, c, rows: Sequence[tuple] = (), bounds=None) -> "LpProblem":
        """Assemble a problem from ``(row, lo, hi)`` triples and ``(lo, hi)`` pairs.

        ``bounds`` defaults to ``x >= 0``; a single pair applies to every variable.
        """
        c = np.asarray(c, dtype=float).ravel()
        n = c.size
        if rows:
            A = np.array([np.asarray(a, dtype=float) for a, _, _ in rows]).reshape(-1, n)
            lo = np.array([r[1] for r in rows], dtype=float)
            hi = np.array([r[2] for r in rows], dtype=float)
        else:
            A, lo, hi = np.zeros((0, n)), np.zeros(0), np.zeros(0)
        if bounds is None:
            vlo, vhi = np.zeros(n), np.full(n, np.inf)
        else:
            b = np.asarray(bounds, dtype=float)
            if b.shape == (2,):
                b = np.tile(b, (n, 1))
            vlo, vhi = b[:, 0], b[:, 1]
        return cls(c, A, lo, hi, vlo, vhi)

    def max_violation(self, x) -> float:
        """Largest constraint violation, scaled by ``1 + |bound|``."""
        x = np.asarray(x, dtype=float)
        ax = self.A @ x
        viol = [0.0]
        with np.errstate(invalid="ignore"):
            for val, lo, hi in ((ax, self.row_lo, self.row_hi), (x, self.var_lo, self.var_hi)):
                below = np.where(np.isfinite(lo), (lo - val) / (1 + np.abs(lo)), 0.0)
                above = np.where(np.isfinite(hi), (val - hi) / (1 + np.abs(hi)), 0.0)
                viol.append(float(np.max(below, initial=0.0)))
                viol.append(float(np.max(above, initial=0.0)))
        return max(viol)


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    value: float = float("nan")
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _nonbasic_start(lo, hi):
    return np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))


class _Simplex:
    """Bounded-variable simplex on ``A x = b``, ``lo <= x <= hi``.

    Keeps an explicit basis inverse updated by rank-one pivots and rebuilt
    every ``REFACTOR`` pivots.
    """

    REFACTOR = 25

    def __init__(self, A, b, lo, hi, x, basis, max_iter, bland_after):
        self.A, self.b = A, b
        self.x = x
        self.basis = np.array(basis, dtype=int)
        self.max_iter = max_iter
        self.bland_after = bland_after
        self.iterations = 0
        self.degenerate = 0
        self.set_bounds(lo, hi)

    def set_bounds(self, lo, hi):
        self.lo, self.hi = lo, hi
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        self.lo_room = np.full(lo.size, -np.inf)
        self.hi_room = np.full(hi.size, np.inf)
        self.lo_room[fin_lo] = lo[fin_lo] + FEAS_TOL * (1 + np.abs(lo[fin_lo]))
        self.hi_room[fin_hi] = hi[fin_hi] - FEAS_TOL * (1 + np.abs(hi[fin_hi]))
        self.fixed = lo == hi

    def refactor(self):
        self.Binv = np.linalg.inv(self.A[:, self.basis])
        nb = np.ones(self.x.size, dtype=bool)
        nb[self.basis] = False
        self.x[self.basis] = self.Binv @ (self.b - self.A[:, nb] @ self.x[nb])
        self._snap()
        self.since_refactor = 0

    def _snap(self):
        # pull round-off violations of basic variables back onto their bounds
        bas = self.basis
        xb, lo, hi = self.x[bas], self.lo[bas], self.hi[bas]
        slack = FEAS_TOL * (1 + np.abs(xb))
        xb = np.where((xb < lo) & (xb > lo - slack), lo, xb)
        xb = np.where((xb > hi) & (xb < hi + slack), hi, xb)
        self.x[bas] = xb

    def run(self, c) -> LpStatus:
        A, x = self.A, self.x
        self.refactor()
        while True:
            bas = self.basis
            y = c[bas] @ self.Binv
            d = c - y @ A
            d[bas] = 0.0
            up = (d < -OPT_TOL) & (x < self.hi_room) & ~self.fixed
            dn = (d > OPT_TOL) & (x > self.lo_room) & ~self.fixed
            up[bas] = False
            dn[bas] = False
            cand = np.flatnonzero(up | dn)
            if cand.size == 0:
                return LpStatus.OPTIMAL
            if self.iterations >= self.max_iter:
                raise LpNumericalError(
                    f"simplex exceeded {self.max_iter} pivots without converging")
            self.iterations += 1
            bland = self.degenerate > self.bland_after
            j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = 1.0 if up[j] else -1.0

            w = self.Binv @ A[:, j]
            delta = -direction * w
            xb = x[bas]
            ratios = np.full(bas.size, np.inf)
            dec = delta < -PIVOT_TOL
            inc = delta > PIVOT_TOL
            ratios[dec] = (xb[dec] - self.lo[bas][dec]) / -delta[dec]
            ratios[inc] = (self.hi[bas][inc] - xb[inc]) / delta[inc]
            np.maximum(ratios, 0.0, out=ratios)
            t_flip = self.hi[j] - self.lo[j]
            t_basis = ratios.min()
            t = min(t_flip, t_basis)
            if not np.isfinite(t):
                return LpStatus.UNBOUNDED
            if t <= PIVOT_TOL:
                self.degenerate += 1

            if t_flip <= t_basis:
                x[bas] = xb + t_flip * delta
                x[j] = self.hi[j] if direction > 0 else self.lo[j]
                self._snap()
                continue
            ties = np.flatnonzero(ratios <= t_basis + PIVOT_TOL)
            if bland:
                r = int(ties[np.argmin(bas[ties])])
            else:
                r = int(ties[np.argmax(np.abs(delta[ties]))])
            leaving = bas[r]
            x[bas] = xb + t * delta
            x[j] += direction * t
            x[leaving] = self.lo[leaving] if delta[r] < 0 else self.hi[leaving]
            self._pivot(r, j, w)

    def _pivot(self, r, j, w):
        self.basis[r] = j
        self.since_refactor += 1
        if self.since_refactor >= self.REFACTOR:
            self.refactor()
            return
        piv = self.Binv[r] / w[r]
        self.Binv -= np.outer(w, piv)
        self.Binv[r] = piv
        self._snap()

    def drive_out(self, artificial: np.ndarray) -> None:
        """Pivot zero-valued artificials out of the basis where possible."""
        self.refactor()
        for r in range(self.basis.size):
            if not artificial[self.basis[r]]:
                continue
            alpha = self.Binv[r] @ self.A
            alpha[artificial] = 0.0
            alpha[self.basis] = 0.0
            cand = np.flatnonzero(np.abs(alpha) > 1e-9)
            if cand.size:
                j = int(cand[np.argmax(np.abs(alpha[cand]))])
                self._pivot(r, j, self.Binv @ self.A[:, j])
            # otherwise the row is redundant; the artificial stays basic at zero


def _solve(prob: LpProblem) -> LpSolution:
    n, r = prob.n_vars, prob.n_rows
    if r == 0:
        # separable: each variable sits on its cheaper bound
        x = np.where(prob.c > 0, prob.var_lo,
                     np.where(prob.c < 0, prob.var_hi, _nonbasic_start(prob.var_lo, prob.var_hi)))
        if not np.all(np.isfinite(x)):
            return LpSolution(LpStatus.UNBOUNDED)
        return LpSolution(LpStatus.OPTIMAL, x, float(prob.c @ x))

    # columns: structural | slacks (s = A x) | artificials for rows whose slack
    # cannot start inside its range
    xs = _nonbasic_start(prob.var_lo, prob.var_hi)
    act = prob.A @ xs
    s0 = np.clip(act, prob.row_lo, prob.row_hi)
    needs_art = np.abs(s0 - act) > FEAS_TOL * (1 + np.abs(act))
    art_rows = np.flatnonzero(needs_art)
    k = art_rows.size
    resid = s0[art_rows] - act[art_rows]
    art_cols = np.zeros((r, k))
    art_cols[art_rows, np.arange(k)] = np.where(resid >= 0, 1.0, -1.0)

    A = np.hstack([prob.A, -np.eye(r), art_cols])
    b = np.zeros(r)
    lo = np.concatenate([prob.var_lo, prob.row_lo, np.zeros(k)])
    hi = np.concatenate([prob.var_hi, prob.row_hi, np.full(k, np.inf)])
    x = np.concatenate([xs, s0, np.abs(resid)])
    total = n + r + k
    artificial = np.zeros(total, dtype=bool)
    artificial[n + r:] = True
    basis = np.arange(n, n + r)
    basis[art_rows] = n + r + np.arange(k)

    sx = _Simplex(A, b, lo, hi, x, basis, max_iter=50 * (n + r), bland_after=10 * n)
    if k:
        if sx.run(artificial.astype(float)) is not LpStatus.OPTIMAL:  # pragma: no cover
            raise LpNumericalError("phase 1 did not terminate")
        infeas = float(sx.x[artificial].sum())
        if infeas > FEAS_TOL * (1 + float(np.abs(resid).max())):
            return LpSolution(LpStatus.INFEASIBLE, iterations=sx.iterations)
        hi = hi.copy()
        hi[artificial] = 0.0
        sx.x[artificial] = 0.0
        sx.set_bounds(lo, hi)
        sx.drive_out(artificial)
    c2 = np.concatenate([prob.c, np.zeros(r + k)])
    status = sx.run(c2)
    if status is LpStatus.UNBOUNDED:
        return LpSolution(LpStatus.UNBOUNDED, iterations=sx.iterations)
    out = sx.x[:n].copy()
    return LpSolution(LpStatus.OPTIMAL, out, float(prob.c @ out), iterations=sx.iterations)


def solve_min(prob: LpProblem) -> LpSolution:
    """Minimise ``c @ x`` over the problem's polyhedron."""
    return _solve(prob)


def solve_max(prob: LpProblem) -> LpSolution:
    """Maximise ``c @ x``; the reported value is the maximum."""
    neg = LpProblem(-prob.c, prob.A, prob.row_lo, prob.row_hi, prob.var_lo, prob.var_hi)
    sol = _solve(neg)
    if sol.optimal:
        sol.value = float(prob.c @ sol.x)
    return sol
