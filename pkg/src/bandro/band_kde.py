"""Kernel density estimates and KDE-based confidence bands.

Kernels are radial, ``K(xi) = kappa(||xi||_2)``, with the profile normalised so
that ``K`` integrates to one in the working dimension.
"""
from __future__ import annotations

import math
from collections.abc import Mapping

import numpy as np
from scipy import integrate
from scipy.spatial.distance import cdist

from .core import (Box, DensityBand, InvalidParameterError, Rng, SampleSet, as_points,
                   check_alpha, unit_ball_volume)

KERNELS = ("boxcar", "gaussian", "epanechnikov")
_CHUNK = 2_000_000  # pairwise distances per block


class Kernel:
    """Radial kernel profile in dimension ``m``.

    Parameters
    ----------
    name : {"boxcar", "gaussian", "epanechnikov"}
    m : int
        Dimension of the data.
    """

    def __init__(self, name: str = "boxcar", m: int = 1):
        if name not in KERNELS:
            raise InvalidParameterError(f"unknown kernel {name!r}; choose from {KERNELS}")
        if m < 1:
            raise InvalidParameterError("dimension must be positive")
        self.name = name
        self.m = int(m)
        vm = unit_ball_volume(m)
        if name == "boxcar":
            self._q = 1.0 / vm
        elif name == "epanechnikov":
            self._q = (m + 2) / (2.0 * vm)
        else:
            self._q = (2.0 * math.pi) ** (-m / 2)

    def __repr__(self):
        return f"Kernel({self.name!r}, m={self.m})"

    @property
    def radius(self) -> float:
        """Support radius of the profile (infinite for the gaussian)."""
        return math.inf if self.name == "gaussian" else 1.0

    def profile(self, t):
        """``kappa(t)`` for ``t >= 0``."""
        t = np.asarray(t, dtype=float)
        if self.name == "boxcar":
            return np.where(t <= 1.0, self._q, 0.0)
        if self.name == "epanechnikov":
            return np.where(t <= 1.0, self._q * (1.0 - t * t), 0.0)
        return self._q * np.exp(-0.5 * t * t)

    @property
    def kappa0(self) -> float:
        return float(self._q)

    def moment(self, s: float) -> float:
        """``int_0^inf kappa(t) t^s dt``; closed form for the boxcar, quadrature otherwise."""
        if self.name == "boxcar":
            return self._q / (s + 1.0)
        # gaussian tail exp(-t^2/2) is below 1e-300 past t = 40
        upper = 1.0 if self.name == "epanechnikov" else 40.0
        val, _ = integrate.quad(lambda t: float(self.profile(t)) * t ** s, 0.0, upper,
                                epsabs=1e-10, epsrel=1e-12, limit=200)
        return val

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        """Draw ``n`` points from the kernel density ``K``."""
        m = self.m
        if self.name == "gaussian":
            return rng.normal(size=(n, m))
        d = rng.normal(size=(n, m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        if self.name == "boxcar":
            r = rng.uniform(size=n) ** (1.0 / m)
            return d * r[:, None]
        # radial density proportional to t^(m-1) (1 - t^2): accept-reject from the ball
        out = np.empty(n)
        filled = 0
        while filled < n:
            k = n - filled
            r = rng.uniform(size=2 * k + 16) ** (1.0 / m)
            keep = r[rng.uniform(size=r.size) < 1.0 - r * r][:k]
            out[filled:filled + keep.size] = keep
            filled += keep.size
        return d * out[:, None]


def _as_kernel(kernel, m):
    if isinstance(kernel, Kernel):
        if kernel.m != m:
            raise InvalidParameterError(f"kernel built for m={kernel.m}, data has m={m}")
        return kernel
    return Kernel(kernel, m)


def kde_eval(data: SampleSet, kernel, h: float, xi) -> np.ndarray:
    """Kernel density estimate ``(1/N) sum_i h^-m K((xi - xi_i)/h)`` at each query point."""
    if not h > 0:
        raise InvalidParameterError("bandwidth must be positive")
    m = data.m
    kern = _as_kernel(kernel, m)
    pts = as_points(xi, m)
    X = data.points
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK // max(X.shape[0] * m, 1))
    scale = 1.0 / (data.N * h ** m)
    for s in range(0, pts.shape[0], step):
        block = pts[s:s + step]
        out[s:s + step] = kern.profile(cdist(block, X) / h).sum(axis=1) * scale
    return out


def delta_theoretical(C: float, rho: float, U: float, kernel, m: int, N: int, alpha: float,
                      h: float) -> float:
    """Band half-width ``C1 h^rho + C2 sqrt(log(N/alpha) / (N h^m))``.

    ``C1 = V_m C int kappa t^(m+rho)`` and
    ``C2 = 8m sqrt(V_m U) (int kappa t^(m/2) + 1) + 64 m^2 kappa(0)``. Valid for
    bandwidths above ``(log(N/alpha)/N)^(1/m)``; the result is conservative.
    """
    check_alpha(alpha)
    if not 0 < rho <= 1:
        raise InvalidParameterError("Holder exponent must lie in (0, 1]")
    if C <= 0 or U <= 0:
        raise InvalidParameterError("Holder constant and density cap must be positive")
    kern = _as_kernel(kernel, m)
    C1, C2 = delta_constants(C, rho, U, kern)
    h_min = (math.log(N / alpha) / N) ** (1.0 / m)
    if not h > h_min:
        raise InvalidParameterError(f"bandwidth {h} must exceed (log(N/alpha)/N)^(1/m) = {h_min}")
    return C1 * h ** rho + C2 * math.sqrt(math.log(N / alpha) / (N * h ** m))


def delta_constants(C: float, rho: float, U: float, kernel: Kernel):
    """The pair ``(C1, C2)`` of the theoretical half-width."""
    m = kernel.m
    vm = unit_ball_volume(m)
    C1 = vm * C * kernel.moment(m + rho)
    C2 = 8 * m * math.sqrt(vm * U) * (kernel.moment(m / 2) + 1) + 64 * m * m * kernel.kappa0
    return C1, C2


class KdeBand(DensityBand):
    """``(max(0, p_hat - delta), p_hat + delta)`` on a box, zero outside.

    The estimate itself is available as the band's reference density, which
    stochastic integrators can sample from (see :meth:`sample_reference`).
    """

    kind = "KDE"

    def __init__(self, data: SampleSet, kernel: Kernel, h: float, delta: float, box: Box):
        cap = kernel.kappa0 / h ** data.m + delta
        super().__init__(box, cap=cap)
        self.data = data
        self.kernel = kernel
        self.h = float(h)
        self.delta = float(delta)

    def estimate(self, xi) -> np.ndarray:
        return kde_eval(self.data, self.kernel, self.h, xi)

    def _eval_inside(self, pts):
        p = self.estimate(pts)
        return np.maximum(0.0, p - self.delta), p + self.delta

    def reference(self, xi) -> np.ndarray:
        """Reference density ``p_hat`` (integrates to one over the whole space)."""
        return self.estimate(xi)

    def sample_reference(self, rng: Rng, n: int) -> np.ndarray:
        """Draw from ``p_hat``: a random data point plus ``h`` times a kernel draw."""
        idx = rng.integers(0, self.data.N, size=n)
        return self.data.points[idx] + self.h * self.kernel.sample(rng, n)


def build_kde_band(data: SampleSet, kernel="boxcar", h: float = 1.0, delta=0.0,
                   box: Box | None = None) -> KdeBand:
    """KDE band from a sample.

    Parameters
    ----------
    data : SampleSet
    kernel : Kernel or str
    h : float
        Bandwidth.
    delta : float or mapping
        Explicit half-width, or a mapping with keys ``C``, ``rho``, ``U`` and
        ``alpha`` for :func:`delta_theoretical`.
    box : Box, optional
        Support of the band; defaults to the data bounding box inflated by
        ``3 h`` per side.
    """
    if not h > 0:
        raise InvalidParameterError("bandwidth must be positive")
    kern = _as_kernel(kernel, data.m)
    if isinstance(delta, Mapping):
        delta = delta_theoretical(delta["C"], delta["rho"], delta["U"], kern, data.m, data.N,
                                  delta["alpha"], h)
    delta = float(delta)
    if delta < 0:
        raise InvalidParameterError("band half-width must be nonnegative")
    if box is None:
        box = Box.around(data, 3.0 * h)
    if box.m != data.m:
        raise InvalidParameterError("box dimension does not match the data")
    if not np.all(box.contains(data.points)):
        raise InvalidParameterError("every data point must lie inside the band's box")
    return KdeBand(data, kern, h, delta, box)


def grid_curve(band: DensityBand, cells_per_dim: int) -> np.ndarray:
    """Rows ``(xi..., l, u)`` on a uniform tensor grid spanning the band's box."""
    axes = [np.linspace(lo, hi, cells_per_dim) for lo, hi in zip(band.box.lower, band.box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    l, u = band.eval(pts)
    return np.column_stack([pts, l, u])
