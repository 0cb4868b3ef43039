"""Brute-force evaluation of the worst-case expectation on a discretised band.

On a grid the worst case is a box-constrained LP with a single mass
equation, which the greedy water-filling rule solves exactly; the LP route
through :mod:`bandro.lp` is kept as a cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BandroError, DensityBand, InfeasibleBandError, InvalidParameterError, ProblemSpec
from .lp import LpProblem, solve_max

MASS_TOL = 1e-12


@dataclass(frozen=True)
class GridBand:
    """Cells of a discretised band: centres, widths and per-cell bounds."""

    centers: np.ndarray
    widths: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.widths, dtype=float)
        l = np.asarray(self.lower, dtype=float)
        u = np.asarray(self.upper, dtype=float)
        if not (w.shape == l.shape == u.shape and w.ndim == 1):
            raise InvalidParameterError("widths and bounds must be matching vectors")
        if np.any(w <= 0):
            raise InvalidParameterError("cell widths must be positive")
        if np.any(l < 0) or np.any(l > u):
            raise InvalidParameterError("need 0 <= l <= u in every cell")
        object.__setattr__(self, "widths", w)
        object.__setattr__(self, "lower", l)
        object.__setattr__(self, "upper", u)
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=float))

    @property
    def G(self) -> int:
        return self.widths.size

    def mass_range(self):
        return float(self.lower @ self.widths), float(self.upper @ self.widths)

    def check_feasible(self) -> None:
        lo, hi = self.mass_range()
        if lo > 1 + MASS_TOL or hi < 1 - MASS_TOL:
            raise InfeasibleBandError(
                f"band cannot hold a density at this resolution (mass range [{lo:.6g}, {hi:.6g}])")


def discretize(band: DensityBand, G: int, check: bool = True) -> GridBand:
    """Midpoint-sampled band on ``G`` uniform cells per axis (m = 1 or 2)."""
    if G < 1:
        raise InvalidParameterError("need at least one cell")
    if band.m > 2:
        raise InvalidParameterError("discretisation is limited to m <= 2")
    pts, vol = band.box.midpoint_grid(G)
    l, u = band.eval(pts)
    gb = GridBand(pts, np.full(pts.shape[0], vol), l, u)
    if check:
        gb.check_feasible()
    return gb


def inner_sup(gb: GridBand, fvals):
    """Worst-case ``sum f p w`` over ``l <= p <= u``, ``sum p w = 1``.

    Start from ``p = l`` and pour the remaining mass into cells in decreasing
    ``f`` order (lower index first on ties) up to ``u``. Returns
    ``(value, p)``.
    """
    gb.check_feasible()
    f = np.asarray(fvals, dtype=float)
    if f.shape != gb.widths.shape:
        raise InvalidParameterError("one f value per cell is required")
    w, l, u = gb.widths, gb.lower, gb.upper
    p = l.copy()
    remaining = 1.0 - l @ w
    order = np.lexsort((np.arange(f.size), -f))
    room = ((u - l) * w)[order]
    before = np.concatenate([[0.0], np.cumsum(room)[:-1]])
    fill = np.clip(remaining - before, 0.0, room)
    p[order] += fill / w[order]
    return float(np.sum(f * p * w)), p


def inner_sup_lp(gb: GridBand, fvals):
    """The same worst case solved as an LP (cross-check for :func:`inner_sup`)."""
    gb.check_feasible()
    f = np.asarray(fvals, dtype=float)
    w = gb.widths
    prob = LpProblem.build(f * w, rows=[(w, 1.0, 1.0)],
                           bounds=list(zip(gb.lower, gb.upper)))
    sol = solve_max(prob)
    if not sol.optimal:
        raise BandroError(f"LP cross-check ended with status {sol.status}")
    return float(sol.value), sol.x


def robust_value_oracle(problem: ProblemSpec, band: DensityBand, x, G: int = 2000) -> float:
    """Worst-case expected cost of ``x`` over the band, by discretisation on ``G`` cells per axis."""
    gb = discretize(band, G)
    return inner_sup(gb, problem.evaluate(x, gb.centers))[0]
