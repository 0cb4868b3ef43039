"""Case-study problems (newsvendor, mean-CVaR portfolio) and their data generators."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .core import Box, InvalidParameterError, ProblemSpec, Rng, SampleSet, as_points
from .dro import project_simplex


def newsvendor_eval(x, xi, c_s=19.0, c_h=1.0):
    """Mismatch cost ``max(c_s (xi - x), c_h (x - xi))``."""
    xi = np.asarray(xi, dtype=float)
    return np.maximum(c_s * (xi - x), c_h * (x - xi))


def newsvendor_subgrad(x, xi, c_s=19.0, c_h=1.0):
    """``-c_s`` on the shortage branch (ties included), ``+c_h`` otherwise."""
    xi = np.asarray(xi, dtype=float)
    return np.where(c_s * (xi - x) >= c_h * (x - xi), -c_s, c_h)


class Newsvendor(ProblemSpec):
    """Single-item newsvendor with order quantity restricted to ``[0, b]``."""

    dim_x = 1

    def __init__(self, c_s: float = 19.0, c_h: float = 1.0, b: float = 250.0):
        if c_s <= 0 or c_h <= 0:
            raise InvalidParameterError("newsvendor costs must be positive")
        if b <= 0:
            raise InvalidParameterError("order bound must be positive")
        self.c_s, self.c_h, self.b = float(c_s), float(c_h), float(b)

    def __repr__(self):
        return f"Newsvendor(c_s={self.c_s}, c_h={self.c_h}, b={self.b})"

    def evaluate(self, x, xi):
        xi = as_points(xi, 1)[:, 0]
        return newsvendor_eval(float(np.ravel(x)[0]), xi, self.c_s, self.c_h)

    def subgrad(self, x, xi):
        xi = as_points(xi, 1)[:, 0]
        return newsvendor_subgrad(float(np.ravel(x)[0]), xi, self.c_s, self.c_h)[:, None]

    def project(self, x):
        return np.clip(np.ravel(np.asarray(x, dtype=float)), 0.0, self.b)

    def default_start(self, data: SampleSet | None = None):
        if data is None:
            return np.array([self.b / 2])
        return self.project([np.median(data.univariate())])

    def critical_quantile(self) -> float:
        return self.c_s / (self.c_s + self.c_h)


def portfolio_eval(w, beta, xi, eps=0.2, gamma=10.0):
    """``max(-w'xi + gamma beta, -(1 + gamma/eps) w'xi + gamma (1 - 1/eps) beta)``."""
    r = np.asarray(xi, dtype=float) @ np.asarray(w, dtype=float)
    return np.maximum(-r + gamma * beta, -(1 + gamma / eps) * r + gamma * (1 - 1 / eps) * beta)


class Portfolio(ProblemSpec):
    """Mean plus ``gamma`` times CVaR at level ``eps`` of the loss ``-w'xi``.

    The decision is ``x = (w, beta)`` with ``w`` on the simplex and ``beta``
    the free value-at-risk variable.
    """

    def __init__(self, n: int = 10, eps: float = 0.2, gamma: float = 10.0):
        if n < 1:
            raise InvalidParameterError("need at least one asset")
        if not 0 < eps < 1:
            raise InvalidParameterError("CVaR level must lie in (0, 1)")
        if gamma <= 0:
            raise InvalidParameterError("risk weight must be positive")
        self.n, self.eps, self.gamma = int(n), float(eps), float(gamma)
        self.dim_x = self.n + 1

    def __repr__(self):
        return f"Portfolio(n={self.n}, eps={self.eps}, gamma={self.gamma})"

    def _branches(self, x, xi):
        x = np.ravel(np.asarray(x, dtype=float))
        w, beta = x[:-1], x[-1]
        pts = as_points(xi, self.n)
        r = pts @ w
        k = self.gamma / self.eps
        b1 = -r + self.gamma * beta
        b2 = -(1 + k) * r + self.gamma * (1 - 1 / self.eps) * beta
        return pts, b1, b2

    def evaluate(self, x, xi):
        _, b1, b2 = self._branches(x, xi)
        return np.maximum(b1, b2)

    def subgrad(self, x, xi):
        pts, b1, b2 = self._branches(x, xi)
        second = b2 >= b1  # ties go to the CVaR branch
        k = self.gamma / self.eps
        scale = np.where(second, 1 + k, 1.0)
        g = np.empty((pts.shape[0], self.n + 1))
        g[:, :-1] = -scale[:, None] * pts
        g[:, -1] = np.where(second, self.gamma * (1 - 1 / self.eps), self.gamma)
        return g

    def project(self, x):
        x = np.ravel(np.asarray(x, dtype=float))
        return np.append(project_simplex(x[:-1]), x[-1])

    def default_start(self, data: SampleSet | None = None):
        w = np.full(self.n, 1.0 / self.n)
        if data is None:
            return np.append(w, 0.0)
        # beta at the loss quantile of the equal-weight portfolio
        loss = -(data.points @ w)
        return np.append(w, np.quantile(loss, 1 - self.eps))


class TrueDensity:
    """A ground-truth law with density, sampler, support box, mode and cap."""

    def __init__(self, family, params, box: Box, pdf, sampler, mode, cap):
        self.family = family
        self.params = dict(params)
        self.box = box
        self._pdf = pdf
        self._sampler = sampler
        self.mode = mode
        self.cap = float(cap)

    def __repr__(self):
        return f"TrueDensity({self.family!r}, {self.params})"

    @property
    def m(self) -> int:
        return self.box.m

    def pdf(self, xi) -> np.ndarray:
        pts = as_points(xi, self.m)
        out = np.zeros(pts.shape[0])
        inside = self.box.contains(pts) if self.family != "factor_normal" else \
            np.ones(pts.shape[0], bool)
        out[inside] = self._pdf(pts[inside])
        return out

    def sample(self, rng: Rng, n: int) -> SampleSet:
        return SampleSet(self._sampler(rng, n), seed=rng.seed)


def _inverse_cdf(frozen):
    def draw(rng, n):
        return frozen.ppf(rng.uniform(size=n))[:, None]
    return draw


def true_density(family: str, **params) -> TrueDensity:
    """Construct one of the case-study laws.

    Families and parameters (defaults in brackets):

    * ``truncated_normal``: ``mean`` [100], ``sd`` [50], ``a`` [0], ``b`` [250]
    * ``scaled_beta``: ``a_shape`` [5], ``b_shape`` [2], ``scale`` [250]
    * ``truncated_exponential``: ``mean`` [100], ``b`` [250]
    * ``factor_normal``: ``n`` [10], ``phi_sd`` [0.02], ``mean_step`` [0.03],
      ``sd_step`` [0.025]; asset ``i`` returns ``phi + zeta_i`` with
      ``zeta_i ~ N(i * mean_step, (i * sd_step)^2)``
    """
    if family == "truncated_normal":
        p = {"mean": 100.0, "sd": 50.0, "a": 0.0, "b": 250.0, **params}
        lo, hi = (p["a"] - p["mean"]) / p["sd"], (p["b"] - p["mean"]) / p["sd"]
        law = stats.truncnorm(lo, hi, loc=p["mean"], scale=p["sd"])
        mode = min(max(p["mean"], p["a"]), p["b"])
        return TrueDensity(family, p, Box([p["a"]], [p["b"]]), lambda x: law.pdf(x[:, 0]),
                           _inverse_cdf(law), mode, law.pdf(mode))
    if family == "scaled_beta":
        p = {"a_shape": 5.0, "b_shape": 2.0, "scale": 250.0, **params}
        A, B, s = p["a_shape"], p["b_shape"], p["scale"]
        if A <= 1 or B <= 1:
            raise InvalidParameterError("beta shapes must exceed 1 for an interior mode")
        law = stats.beta(A, B, scale=s)
        mode = s * (A - 1) / (A + B - 2)

        def draw(rng, n):
            return s * rng.gen.beta(A, B, size=n)[:, None]
        return TrueDensity(family, p, Box([0.0], [s]), lambda x: law.pdf(x[:, 0]),
                           draw, mode, law.pdf(mode))
    if family == "truncated_exponential":
        p = {"mean": 100.0, "b": 250.0, **params}
        law = stats.truncexpon(p["b"] / p["mean"], scale=p["mean"])
        return TrueDensity(family, p, Box([0.0], [p["b"]]), lambda x: law.pdf(x[:, 0]),
                           _inverse_cdf(law), 0.0, law.pdf(0.0))
    if family == "factor_normal":
        p = {"n": 10, "phi_sd": 0.02, "mean_step": 0.03, "sd_step": 0.025, **params}
        n = int(p["n"])
        idx = np.arange(1, n + 1)
        mean = p["mean_step"] * idx
        sds = p["sd_step"] * idx
        cov = p["phi_sd"] ** 2 * np.ones((n, n)) + np.diag(sds ** 2)
        law = stats.multivariate_normal(mean, cov)
        spread = 6 * np.sqrt(np.diag(cov))

        def draw(rng, k):
            phi = rng.normal(0.0, p["phi_sd"], size=(k, 1))
            return phi + rng.normal(mean, sds, size=(k, n))
        return TrueDensity(family, p, Box(mean - spread, mean + spread), law.pdf,
                           draw, mean, law.pdf(mean))
    raise InvalidParameterError(f"unknown density family {family!r}")


def sample_true(density: TrueDensity, rng: Rng, n: int) -> SampleSet:
    return density.sample(rng, n)


def density_true(density: TrueDensity, xi) -> np.ndarray:
    return density.pdf(xi)


def lipschitz_constant(density: TrueDensity, nodes: int = 20001) -> float:
    """Max slope of a univariate density on its support.

    Closed form for the truncated normal (steepest at ``mean +- sd`` when both
    lie inside the support), finite differences otherwise.
    """
    if density.m != 1:
        raise InvalidParameterError("only univariate densities")
    if density.family == "truncated_normal":
        p = density.params
        mu, sd, a, b = p["mean"], p["sd"], p["a"], p["b"]
        if a <= mu - sd and mu + sd <= b:
            mass = stats.norm.cdf((b - mu) / sd) - stats.norm.cdf((a - mu) / sd)
            return float(stats.norm.pdf(1.0) / (sd * sd * mass))
    g = np.linspace(density.box.lower[0], density.box.upper[0], nodes)
    return float(np.max(np.abs(np.diff(density.pdf(g)) / np.diff(g))))


def out_of_sample_cost(problem: ProblemSpec, x, test: SampleSet) -> float:
    """Average cost of decision ``x`` over a large held-out sample."""
    return float(np.mean(problem.evaluate(x, test.points)))


def saa_solution(problem: Newsvendor, data: SampleSet) -> float:
    """Sample-average newsvendor order: the empirical critical quantile."""
    x = np.sort(data.univariate())
    k = max(math.ceil(problem.critical_quantile() * x.size) - 1, 0)
    return float(np.clip(x[k], 0.0, problem.b))
