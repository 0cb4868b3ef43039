"""Dual reformulation of the band-constrained worst case and its SGD solver.

For a band ``l <= p <= u`` the worst-case expectation of ``f(x, .)`` equals
``min_lambda F(x, lambda)`` with

    F(x, lambda) = lambda - int l (f - lambda)_- + int u (f - lambda)_+ ,

so the robust problem becomes one convex minimisation over ``(x, lambda)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (BandroError, DensityBand, InvalidParameterError, ProblemSpec, Rng,
                   SampleSet, as_points, to_vector)

DIVERGENCE_LIMIT = 1e9


class SolverDivergedError(BandroError):
    """Raised when an SGD iterate leaves the ``1e9`` ball."""


def project_simplex(w) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` by sort and threshold."""
    w = to_vector(w)
    if np.all(w >= 0) and abs(w.sum() - 1.0) <= 1e-12:
        return w.copy()  # already feasible; keeps the map exactly idempotent
    s = np.sort(w)[::-1]
    css = np.cumsum(s) - 1.0
    idx = np.arange(1, w.size + 1)
    rho = np.nonzero(s - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(w - theta, 0.0)


@dataclass
class SgdConfig:
    """Settings for :func:`sgd_solve`.

    Parameters
    ----------
    batch : int
        Samples per stochastic subgradient.
    eta : float, optional
        Step scale for ``x``; ``eta_k = eta / sqrt(k + 1)``. ``None`` selects
        ``0.1 * (|F0| + 1) / |box|``.
    iters : int
        Number of iterations ``T``.
    x0, lam0 : optional
        Starting point; by default the problem's start and the mean of
        ``f(x0, .)`` over the training data (or over box draws).
    eta_lam : float, optional
        Separate step scale for ``lambda``; defaults to ``eta``.
    sampler : {"uniform", "mixture"}
        ``"mixture"`` integrates the band's reference density by sampling from
        it and only the bounded residuals uniformly.
    trace_every : int
        Record ``(iter, F_hat, lambda, step)`` every this many iterations
        (0 disables the trace).
    checkpoints : tuple of int
        Iteration counts ``T < iters`` at which the running average is also
        reported. Steps do not depend on ``iters``, so these are the averages
        a shorter run would return.
    """

    batch: int = 64
    eta: float | None = 0.1
    iters: int = 10_000
    x0: np.ndarray | None = None
    lam0: float | None = None
    eta_lam: float | None = None
    sampler: str = "uniform"
    trace_every: int = 0
    checkpoints: tuple = ()

    def __post_init__(self):
        if self.batch < 1:
            raise InvalidParameterError("batch size must be at least 1")
        if self.eta is not None and not self.eta > 0:
            raise InvalidParameterError("step scale must be positive")
        if self.eta_lam is not None and not self.eta_lam > 0:
            raise InvalidParameterError("lambda step scale must be positive")
        if self.iters < 1:
            raise InvalidParameterError("need at least one iteration")
        if self.sampler not in ("uniform", "mixture"):
            raise InvalidParameterError(f"unknown sampler {self.sampler!r}")
        self.checkpoints = tuple(sorted(int(t) for t in self.checkpoints))
        if any(not 1 <= t <= self.iters for t in self.checkpoints):
            raise InvalidParameterError("checkpoints must lie in [1, iters]")


@dataclass
class SaddlePoint:
    """Step-weighted average iterate of an SGD run."""

    x: np.ndarray
    lam: float
    F_hat: float
    iters: int
    x_last: np.ndarray
    lam_last: float
    trace: list = field(default_factory=list)
    averages: dict = field(default_factory=dict)

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "F_hat", "lambda", "step"])
            for row in self.trace:
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


# ---------------------------------------------------------------------------
# deterministic dual objective
# ---------------------------------------------------------------------------

def _quadrature_cells(band: DensityBand, quad_nodes: int):
    if quad_nodes < 100:
        raise InvalidParameterError("use at least 100 quadrature nodes")
    if band.m > 2:
        raise InvalidParameterError("tensor quadrature is limited to m <= 2; use mode='mc'")
    pts, vol = band.box.midpoint_grid(quad_nodes)
    l, u = band.eval(pts)
    return pts, vol, l, u


def dual_objective(x, lam, band: DensityBand, problem: ProblemSpec, quad_nodes: int = 2000,
                   mode: str = "quadrature", rng: Rng | None = None,
                   mc_samples: int = 200_000) -> float:
    """``F(x, lambda)`` by midpoint quadrature (m <= 2) or plain Monte Carlo (``mode="mc"``)."""
    if mode == "quadrature":
        pts, vol, l, u = _quadrature_cells(band, quad_nodes)
        weight = np.full(pts.shape[0], vol)
    elif mode == "mc":
        rng = rng if rng is not None else Rng(0)
        pts = band.box.sample(rng, mc_samples)
        l, u = band.eval(pts)
        weight = np.full(mc_samples, band.box.volume / mc_samples)
    else:
        raise InvalidParameterError(f"unknown mode {mode!r}")
    d = problem.evaluate(x, pts) - lam
    return float(lam + np.sum(weight * np.where(d < 0, l, u) * d))


def min_dual_objective(x, band: DensityBand, problem: ProblemSpec, quad_nodes: int = 2000):
    """Exact minimum over ``lambda`` of the quadrature ``F(x, .)``.

    The quadrature objective is convex and piecewise linear in ``lambda`` with
    kinks at the cell values of ``f``, so scanning those values suffices.
    Returns ``(value, lambda_star)``.
    """
    pts, vol, l, u = _quadrature_cells(band, quad_nodes)
    f = problem.evaluate(x, pts)
    return min_dual_from_cells(f, l * vol, u * vol)


def min_dual_from_cells(f, lw, uw):
    """``min_lambda lambda + sum_{f<lambda} lw (f - lambda) + sum_{f>=lambda} uw (f - lambda)``."""
    order = np.argsort(f, kind="stable")
    f, lw, uw = f[order], lw[order], uw[order]
    # at lambda = f[j]: cells i < j (strictly below, up to ties) use l, the rest use u
    cl = np.concatenate([[0.0], np.cumsum(lw)])
    clf = np.concatenate([[0.0], np.cumsum(lw * f)])
    cu_tail = np.concatenate([np.cumsum((uw)[::-1])[::-1], [0.0]])
    cuf_tail = np.concatenate([np.cumsum((uw * f)[::-1])[::-1], [0.0]])
    # first index of each value so tied cells sit on the u side
    j = np.searchsorted(f, f, side="left")
    lam = f
    vals = lam + (clf[j] - lam * cl[j]) + (cuf_tail[j] - lam * cu_tail[j])
    k = int(np.argmin(vals))
    return float(vals[k]), float(lam[k])


# ---------------------------------------------------------------------------
# stochastic subgradients
# ---------------------------------------------------------------------------

def _contributions(x, lam, band, problem, pts_u, pts_r=None):
    """Per-draw terms whose batch means estimate ``(g_x, mass, F - lambda)``.

    ``pts_u`` must lie in the band's box (uniform draws always do), so the
    box test is skipped for them.
    """
    vol = band.box.volume
    f = problem.evaluate(x, pts_u)
    l, u = band._eval_inside(pts_u)
    w = np.where(f >= lam, u, l)
    if pts_r is not None:
        w = w - band.reference(pts_u)
    gx = vol * w[:, None] * problem.subgrad(x, pts_u)
    mass = vol * w
    val = vol * w * (f - lam)
    if pts_r is not None:
        inside = band.box.contains(pts_r).astype(float)
        gx = gx + inside[:, None] * problem.subgrad(x, pts_r)
        mass = mass + inside
        val = val + inside * (problem.evaluate(x, pts_r) - lam)
    return gx, mass, val


def _estimate(x, lam, band, problem, pts_u, pts_r=None):
    """Unbiased estimates of ``(g_x, g_lambda, F)`` from box draws (and reference draws)."""
    gx, mass, val = _contributions(x, lam, band, problem, pts_u, pts_r)
    return gx.mean(axis=0), 1.0 - mass.mean(), lam + val.mean()


def _check_mixture(band):
    if band.reference is None or not hasattr(band, "sample_reference"):
        raise InvalidParameterError("the mixture sampler needs a band with a reference density")


def stochastic_subgradient(x, lam, band: DensityBand, problem: ProblemSpec, B: int,
                           rng: Rng, sampler: str = "uniform"):
    """One draw of ``(g_x, g_lambda)``.

    With ``sampler="uniform"``, ``B`` points are drawn uniformly on the band's
    box and

    ``g_x = |I|/B [sum_{f<lambda} l f' + sum_{f>=lambda} u f']``,
    ``g_lambda = 1 - |I|/B [sum_{f<lambda} l + sum_{f>=lambda} u]``.

    With ``sampler="mixture"`` an extra ``B`` points come from the band's
    reference density ``r`` and the uniform draws only carry ``l - r`` or
    ``u - r``; the estimate stays unbiased with far lower variance when the
    band's mass is concentrated in a small part of the box.
    """
    if B < 1:
        raise InvalidParameterError("batch size must be at least 1")
    x = to_vector(x)
    pts_u = band.box.sample(rng, B)
    pts_r = None
    if sampler == "mixture":
        _check_mixture(band)
        pts_r = band.sample_reference(rng, B)
    elif sampler != "uniform":
        raise InvalidParameterError(f"unknown sampler {sampler!r}")
    gx, gl, _ = _estimate(x, lam, band, problem, pts_u, pts_r)
    return gx, gl


def stochastic_subgradient_draws(x, lam, band: DensityBand, problem: ProblemSpec, B: int,
                                 rng: Rng, n_draws: int, sampler: str = "uniform"):
    """``n_draws`` independent draws of :func:`stochastic_subgradient`, vectorised.

    Returns arrays of shapes ``(n_draws, dim_x)`` and ``(n_draws,)``.
    """
    if B < 1 or n_draws < 1:
        raise InvalidParameterError("batch size and number of draws must be positive")
    x = to_vector(x)
    pts_u = band.box.sample(rng, n_draws * B)
    pts_r = None
    if sampler == "mixture":
        _check_mixture(band)
        pts_r = band.sample_reference(rng, n_draws * B)
    elif sampler != "uniform":
        raise InvalidParameterError(f"unknown sampler {sampler!r}")
    gx, mass, _ = _contributions(x, lam, band, problem, pts_u, pts_r)
    gx = gx.reshape(n_draws, B, -1).mean(axis=1)
    return gx, 1.0 - mass.reshape(n_draws, B).mean(axis=1)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def _initial_lambda(problem, x0, band, data, rng):
    if data is not None:
        return float(np.mean(problem.evaluate(x0, data.points)))
    return float(np.mean(problem.evaluate(x0, band.box.sample(rng, 1000))))


def sgd_solve(problem: ProblemSpec, band: DensityBand, cfg: SgdConfig, rng: Rng,
              data: SampleSet | None = None) -> SaddlePoint:
    """Projected stochastic subgradient descent on ``F(x, lambda)``.

    ``x`` is projected onto the feasible set after every step, ``lambda`` is
    unconstrained. Returns the ``eta_k``-weighted average of the iterates.

    Raises
    ------
    SolverDivergedError
        If ``||x_k||`` or ``|lambda_k|`` exceeds ``1e9``.
    """
    x = problem.project(cfg.x0 if cfg.x0 is not None else problem.default_start(data))
    lam = float(cfg.lam0) if cfg.lam0 is not None else _initial_lambda(problem, x, band, data, rng)
    mixture = cfg.sampler == "mixture"
    if mixture:
        _check_mixture(band)
    eta = cfg.eta
    if eta is None:
        pts = band.box.sample(rng, cfg.batch)
        _, _, F0 = _estimate(x, lam, band, problem, pts,
                             band.sample_reference(rng, cfg.batch) if mixture else None)
        eta = 0.1 * (abs(F0) + 1.0) / band.box.volume
    eta_lam = cfg.eta_lam if cfg.eta_lam is not None else eta
    B, m = cfg.batch, band.m
    lo, span = band.box.lower, band.box.upper - band.box.lower
    sx = np.zeros_like(x)
    sl = 0.0
    sw = 0.0
    trace = []
    averages = {}
    marks = set(cfg.checkpoints)
    Fh = math.nan
    chunk = max(1, min(cfg.iters, 65536 // B))
    for start in range(0, cfg.iters, chunk):
        stop = min(start + chunk, cfg.iters)
        U = lo + span * rng.uniform(size=(stop - start, B, m))
        for k in range(start, stop):
            step = eta / math.sqrt(k + 1)
            sx += step * x
            sl += step * lam
            sw += step
            if k + 1 in marks:
                averages[k + 1] = (sx / sw, sl / sw)
            pts_r = band.sample_reference(rng, B) if mixture else None
            gx, gl, Fh = _estimate(x, lam, band, problem, U[k - start], pts_r)
            if cfg.trace_every and k % cfg.trace_every == 0:
                trace.append((k, Fh, lam, step))
            x = problem.project(x - step * gx)
            lam = lam - (eta_lam / math.sqrt(k + 1)) * gl
            if not (np.all(np.isfinite(x)) and math.isfinite(lam)) or \
                    np.linalg.norm(x) > DIVERGENCE_LIMIT or abs(lam) > DIVERGENCE_LIMIT:
                raise SolverDivergedError(f"iterate diverged at iteration {k}")
    return SaddlePoint(x=sx / sw, lam=sl / sw, F_hat=float(Fh), iters=cfg.iters,
                       x_last=x, lam_last=lam, trace=trace, averages=averages)
