"""Shape-restricted (unimodal) confidence bands for univariate densities.

The construction groups the order statistics of the sample, bounds the
probability mass between consecutive group anchors by Monte Carlo constants
``c_minus <= mass <= c_plus`` and then, at each query point, optimises the
value of a unimodal step density over the resulting polyhedron.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np

from .core import (Box, DensityBand, InvalidParameterError, Rng, SampleSet, as_points,
                   check_alpha)
from .lp import LpProblem, solve_max, solve_min

log = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 100_000


def group_size(N: int, c: float) -> int:
    """Group size ``min(ceil(c * (N^2 log N)^(1/3)), N - 1)``, at least 1."""
    if N < 2:
        raise InvalidParameterError("need at least two observations to form groups")
    K = math.ceil(c * (N * N * math.log(N)) ** (1.0 / 3.0))
    return int(min(max(K, 1), N - 1))


def group_anchors(N: int, K: int) -> np.ndarray:
    """1-based order-statistic indices ``k_1 < ... < k_M`` of the group anchors."""
    if not 1 <= K < N:
        raise InvalidParameterError(f"group size must satisfy 1 <= K < N, got K={K}, N={N}")
    M_floor = N // K
    k = [(i - 1) * K + 1 for i in range(1, M_floor + 1)]
    if N % K:
        k.append(N)
    return np.array(k, dtype=int)


def sample_spacings(N: int, K: int, S: int, rng: Rng) -> np.ndarray:
    """Draw ``S`` replicates of the anchor-to-anchor uniform spacings.

    Column ``i - 2`` holds ``F(x_(k_i)) - F(x_(k_{i-1}))`` for ``i = 2..M``.
    Uniform order statistics are partial sums of ``N + 1`` unit exponentials
    over their total, so each spacing is an independent gamma block divided by
    the sum of all blocks (head ``Gamma(k_1)``, the gaps, tail
    ``Gamma(N + 1 - k_M)``).
    """
    k = group_anchors(N, K)
    gaps = np.diff(k)
    head = rng.gamma(float(k[0]), size=S)
    tail_shape = N + 1 - k[-1]
    tail = rng.gamma(float(tail_shape), size=S)
    blocks = rng.gamma(gaps.astype(float), size=(S, gaps.size))
    total = head + tail + blocks.sum(axis=1)
    return blocks / total[:, None]


def estimate_c_bounds(N: int, K: int, alpha: float, S: int = DEFAULT_MC_SAMPLES,
                      rng: Rng | None = None):
    """Monte Carlo constants with joint coverage ``P{c- <= D_i <= c+ for all i} >= 1 - alpha``.

    Starts from the ``alpha/2`` quantile of the smallest spacing and the
    ``1 - alpha/2`` quantile of the largest, then widens both one order
    statistic at a time until the empirical joint coverage reaches ``1 - alpha``.
    """
    check_alpha(alpha)
    if not 1 <= K < N:
        raise InvalidParameterError(f"group size must satisfy 1 <= K < N, got K={K}, N={N}")
    if S < 1000:
        raise InvalidParameterError("use at least 1000 Monte Carlo replicates")
    rng = rng if rng is not None else Rng(0)
    d = sample_spacings(N, K, S, rng)
    mins = np.sort(d.min(axis=1))
    maxs = np.sort(d.max(axis=1))
    lo = int(math.floor(alpha / 2 * S))
    hi = min(int(math.ceil((1 - alpha / 2) * S)) - 1, S - 1)
    lo = min(lo, S - 1)
    row_min, row_max = d.min(axis=1), d.max(axis=1)
    while True:
        c_minus, c_plus = mins[lo], maxs[hi]
        cover = np.mean((row_min >= c_minus) & (row_max <= c_plus))
        if cover >= 1 - alpha or (lo == 0 and hi == S - 1):
            break
        lo = max(lo - 1, 0)
        hi = min(hi + 1, S - 1)
    c_minus = float(np.clip(c_minus, 0.0, 1.0))
    c_plus = float(np.clip(c_plus, c_minus, 1.0))
    return c_minus, c_plus


def _break_ties(x: np.ndarray, a: float, b: float) -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=float))
    eps = 1e-12 * (b - a)
    out = x.copy()
    run = 0
    for i in range(1, x.size):
        run = run + 1 if x[i] == x[i - 1] else 0
        if run:
            bumped = x[i] + run * eps
            out[i] = bumped if bumped <= b else x[i] - run * eps
    return np.sort(out)


class SrBand(DensityBand):
    """Shape-restricted band; every evaluation solves two small LPs."""

    kind = "ShapeRestricted"

    def __init__(self, a, b, mu, U, alpha, K, sorted_sample, c_minus, c_plus, mc_samples):
        super().__init__(Box([a], [b]), cap=U)
        self.a, self.b, self.mu, self.U = float(a), float(b), float(mu), float(U)
        self.alpha = float(alpha)
        self.K = int(K)
        self.sorted_sample = np.asarray(sorted_sample, dtype=float)
        self.anchor_index = group_anchors(self.sorted_sample.size, self.K)
        self.anchors = self.sorted_sample[self.anchor_index - 1]
        self.c_minus, self.c_plus = float(c_minus), float(c_plus)
        self.mc_samples = int(mc_samples)
        self.feasible = self._check_feasible()

    def _check_feasible(self) -> bool:
        # refining the cells neither creates nor destroys feasible densities,
        # so one LP on the query-free breakpoints decides every evaluation
        z, rows = self.polyhedron(self.mu)
        sol = solve_min(LpProblem.build(np.zeros(z.size - 1), rows=rows, bounds=(0.0, self.U)))
        if not sol.optimal:
            log.warning("shape-restricted polyhedron is infeasible for this sample; "
                        "the band degenerates to (0, U)")
        return sol.optimal

    @property
    def N(self) -> int:
        return self.sorted_sample.size

    @property
    def M(self) -> int:
        return self.anchors.size

    @property
    def breakpoints(self) -> np.ndarray:
        """Query-independent breakpoints ``{a, b, mu, anchors}``."""
        return np.unique(np.concatenate([[self.a, self.b, self.mu], self.anchors]))

    def polyhedron(self, xi: float):
        """Breakpoints ``z``, and rows/bounds of the step-density polyhedron at ``xi``.

        Returns ``(z, rows)`` where ``rows`` are ``(coeffs, lo, hi)`` over the
        ``len(z) - 1`` cell heights.
        """
        z = np.unique(np.concatenate([self.breakpoints, [xi]]))
        w = np.diff(z)
        ncell = w.size
        jm = int(np.searchsorted(z, self.mu))
        rows = []
        eye = np.eye(ncell)
        # nondecreasing left of the mode, nonincreasing from the mode on
        for j in range(jm - 1):
            rows.append((eye[j] - eye[j + 1], -np.inf, 0.0))
        for j in range(jm, ncell - 1):
            rows.append((eye[j + 1] - eye[j], -np.inf, 0.0))
        left = z[:-1]
        for i in range(1, self.M):
            sel = (left >= self.anchors[i - 1]) & (left < self.anchors[i])
            rows.append((np.where(sel, w, 0.0), self.c_minus, self.c_plus))
        rows.append((w, 1.0, 1.0))
        return z, rows

    def eval_point(self, xi: float):
        """Lower and upper band value at one point of ``[a, b]``."""
        xi = float(xi)
        if not self.a <= xi <= self.b:
            return 0.0, 0.0
        if not self.feasible:
            return 0.0, self.U
        z, rows = self.polyhedron(xi)
        ncell = z.size - 1
        q = int(np.searchsorted(z, xi))
        eye = np.eye(ncell)
        if xi == self.mu:
            # lower: min over the feasible set of max(left cell, right cell);
            # upper: the point mass at the mode is capped at U
            adj = [j for j in (q - 1, q) if 0 <= j < ncell]
            ext = [(np.append(r[0], 0.0), r[1], r[2]) for r in rows]
            ext += [(np.append(eye[j], -1.0), -np.inf, 0.0) for j in adj]
            prob = LpProblem.build(np.append(np.zeros(ncell), 1.0), rows=ext,
                                   bounds=(0.0, self.U))
            lo_sol = solve_min(prob)
            if not lo_sol.optimal:
                return self._fallback(xi)
            return max(lo_sol.value, 0.0), self.U
        if xi < self.mu:
            lo_cell, hi_cell = q - 1, q
        else:
            lo_cell, hi_cell = q, q - 1
        bounds = (0.0, self.U)
        hi_sol = solve_max(LpProblem.build(eye[hi_cell], rows=rows, bounds=bounds))
        if not hi_sol.optimal:
            return self._fallback(xi)
        if 0 <= lo_cell < ncell:
            lo_sol = solve_min(LpProblem.build(eye[lo_cell], rows=rows, bounds=bounds))
            if not lo_sol.optimal:
                return self._fallback(xi)
            low = max(lo_sol.value, 0.0)
        else:
            low = 0.0  # the end of the support has no cell on the outer side
        return low, min(max(hi_sol.value, low), self.U)

    def _fallback(self, xi):
        log.warning("LP at xi=%g ended without an optimum; using (0, U)", xi)
        return 0.0, self.U

    def _eval_inside(self, pts):
        vals = np.array([self.eval_point(x) for x in pts[:, 0]]).reshape(-1, 2)
        return vals[:, 0], vals[:, 1]


def build_sr_band(data: SampleSet, a: float, b: float, mu: float, U: float, alpha: float,
                  K: int | None = None, S: int = DEFAULT_MC_SAMPLES, rng: Rng | None = None,
                  c: float = 1.0) -> SrBand:
    """Shape-restricted band from a univariate sample.

    Parameters
    ----------
    data : SampleSet
        Univariate observations, all inside ``[a, b]``.
    a, b : float
        Support interval.
    mu : float
        Known mode; ``mu = a`` (``mu = b``) encodes a nonincreasing
        (nondecreasing) density.
    U : float
        Upper bound on the density.
    alpha : float
        Significance level.
    K : int, optional
        Group size; defaults to ``group_size(N, c)``.
    S : int
        Monte Carlo replicates for the coverage constants.
    rng : Rng
        Stream for the Monte Carlo step.
    """
    x = data.univariate()
    check_alpha(alpha)
    if not a < b:
        raise InvalidParameterError("need a < b")
    if np.any(x < a) or np.any(x > b):
        raise InvalidParameterError("all observations must lie in [a, b]")
    if not a <= mu <= b:
        raise InvalidParameterError("mode must lie in [a, b]")
    if U <= 0:
        raise InvalidParameterError("density cap U must be positive")
    N = x.size
    if K is None:
        K = group_size(N, c)
    if not 1 <= K < N:
        raise InvalidParameterError(f"group size must satisfy 1 <= K < N, got K={K}, N={N}")
    srt = _break_ties(x, a, b)
    c_minus, c_plus = estimate_c_bounds(N, K, alpha, S, rng)
    return SrBand(a, b, mu, U, alpha, K, srt, c_minus, c_plus, S)


def eval_sr_band(band: SrBand, xi: float):
    """``(l, u)`` of a shape-restricted band at ``xi``."""
    return band.eval_point(xi)


def dump_band_curve(band: DensityBand, grid) -> np.ndarray:
    """Rows ``(xi, l, u)`` in grid order (``(xi1, ..., xim, l, u)`` for m > 1)."""
    pts = as_points(grid, band.m)
    l, u = band.eval(pts)
    return np.column_stack([pts, l, u])


def write_band_curve(rows: np.ndarray, path: str | Path) -> None:
    """Write band-curve rows as CSV with header ``xi,l,u`` (or ``xi1,xi2,l,u``)."""
    rows = np.asarray(rows, dtype=float)
    header = ["xi", "l", "u"] if rows.shape[1] == 3 else \
        [f"xi{i + 1}" for i in range(rows.shape[1] - 2)] + ["l", "u"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
