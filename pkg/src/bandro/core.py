"""Shared types: seeded random streams, sample sets, boxes, bands and problems."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class BandroError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(BandroError, ValueError):
    pass


class InfeasibleBandError(BandroError):
    """The band cannot hold a probability density (mass bounds violated)."""


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """A seeded random stream.

    ``Rng(seed, stream)`` always reproduces the same draw sequence. Child
    streams come from :func:`derive_stream` and never depend on how much of
    the parent has been consumed.

    Parameters
    ----------
    seed : int
        Master seed (unsigned).
    stream : tuple of int or int, optional
        Stream identifier path. ``0`` by default.
    """

    def __init__(self, seed: int, stream: int | tuple[int, ...] = 0):
        if seed < 0:
            raise InvalidParameterError("seed must be unsigned")
        self.seed = int(seed)
        self.stream = (int(stream),) if isinstance(stream, (int, np.integer)) else tuple(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    # thin pass-throughs for the draws used across the package
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def gamma(self, shape, scale=1.0, size=None):
        return self.gen.gamma(shape, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)


def derive_stream(rng: Rng, label: str) -> Rng:
    """Deterministic child stream of ``rng`` identified by ``label``."""
    return Rng(rng.seed, rng.stream + (_label_key(label),))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    """N observations of an m-dimensional random vector, in insertion order."""

    points: np.ndarray
    seed: int = 0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidParameterError("a sample set needs at least one m-vector")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("sample points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.points[np.asarray(idx)], seed=self.seed)

    def univariate(self) -> np.ndarray:
        if self.m != 1:
            raise InvalidParameterError(f"expected univariate data, got m={self.m}")
        return self.points[:, 0]


def read_dataset(path: str | Path, seed: int = 0) -> SampleSet:
    """Read a dataset CSV: one observation per row, optional '#' header."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            rows.append([float(v) for v in rec])
    if not rows:
        raise InvalidParameterError(f"{path}: no observations")
    if len({len(r) for r in rows}) != 1:
        raise InvalidParameterError(f"{path}: ragged rows")
    return SampleSet(np.array(rows), seed=seed)


def write_dataset(data: SampleSet, path: str | Path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            cols = ",".join(f"xi{i + 1}" for i in range(data.m))
            fh.write(f"# {cols}\n")
        w = csv.writer(fh)
        for row in data.points:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidParameterError("box bounds must be matching vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidParameterError("box must be bounded")
        if not np.all(lo < hi):
            raise InvalidParameterError("box needs lower < upper in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, m: int) -> "Box":
        return cls(np.zeros(m), np.ones(m))

    @classmethod
    def around(cls, data: SampleSet, pad: float) -> "Box":
        """Bounding box of the data inflated by ``pad`` on every side."""
        lo = data.points.min(axis=0) - pad
        hi = data.points.max(axis=0) + pad
        return cls(lo, hi)

    @property
    def m(self) -> int:
        return self.lower.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, xi) -> np.ndarray:
        xi = as_points(xi, self.m)
        return np.all((xi >= self.lower) & (xi <= self.upper), axis=1)

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.uniform(size=(n, self.m))

    def midpoint_grid(self, cells_per_dim: int):
        """Cell centres and the common cell volume of a uniform tensor grid."""
        axes = [lo + (np.arange(cells_per_dim) + 0.5) * (hi - lo) / cells_per_dim
                for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        centres = np.stack([g.ravel() for g in mesh], axis=1)
        return centres, self.volume / cells_per_dim ** self.m


def as_points(xi, m: int) -> np.ndarray:
    """Coerce a point, a 1-D batch (m=1) or an (n, m) array to shape (n, m)."""
    arr = np.asarray(xi, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None] if m == 1 else arr[None, :]
    if arr.shape[1] != m:
        raise InvalidParameterError(f"expected points of dimension {m}, got {arr.shape[1]}")
    return arr


# ---------------------------------------------------------------------------
# bands
# ---------------------------------------------------------------------------

class DensityBand:
    """A confidence band ``(l, u)`` on a compact box; zero outside the box.

    Subclasses implement :meth:`_eval_inside`. Evaluation is vectorised over
    a batch of points and is a pure function of the band state.
    """

    kind = "Explicit"

    def __init__(self, box: Box, cap: float):
        self.box = box
        self.cap = float(cap)

    @property
    def m(self) -> int:
        return self.box.m

    def eval(self, xi):
        """Return arrays ``(l, u)`` at the query points."""
        pts = as_points(xi, self.m)
        l = np.zeros(pts.shape[0])
        u = np.zeros(pts.shape[0])
        inside = self.box.contains(pts)
        if inside.any():
            l[inside], u[inside] = self._eval_inside(pts[inside])
        return l, u

    def _eval_inside(self, pts):
        raise NotImplementedError

    # Optional reference density r with l - r and u - r bounded; bands that
    # provide it can be integrated by sampling from r (see dro.stochastic_subgradient).
    reference = None

    def tabulate(self, nodes: int = 401) -> "TabulatedBand":
        """Piecewise-linear interpolant of the band on a uniform 1-D grid."""
        if self.m != 1:
            raise InvalidParameterError("tabulation is only provided for m = 1")
        grid = np.linspace(self.box.lower[0], self.box.upper[0], nodes)
        extra = getattr(self, "breakpoints", None)
        if extra is not None:
            grid = np.union1d(grid, np.asarray(extra, dtype=float))
        l, u = self.eval(grid)
        return TabulatedBand(grid, l, u, cap=self.cap)


class ExplicitBand(DensityBand):
    """Band given by two vectorised callables on the box."""

    def __init__(self, box: Box, lower: Callable, upper: Callable, cap: float):
        super().__init__(box, cap)
        self._l = lower
        self._u = upper

    def _eval_inside(self, pts):
        return (np.broadcast_to(np.asarray(self._l(pts), dtype=float), pts.shape[:1]).copy(),
                np.broadcast_to(np.asarray(self._u(pts), dtype=float), pts.shape[:1]).copy())


class TabulatedBand(DensityBand):
    """Univariate band interpolated linearly between tabulated nodes."""

    def __init__(self, nodes, lower, upper, cap: float):
        nodes = np.asarray(nodes, dtype=float)
        super().__init__(Box([nodes[0]], [nodes[-1]]), cap)
        self.nodes = nodes
        self.lower_values = np.asarray(lower, dtype=float)
        self.upper_values = np.asarray(upper, dtype=float)

    def _eval_inside(self, pts):
        x = pts[:, 0]
        return (np.interp(x, self.nodes, self.lower_values),
                np.interp(x, self.nodes, self.upper_values))


def uniform_band(box: Box, low: float = None, high: float = None) -> ExplicitBand:
    """Constant band on ``box``; defaults to ``l = u = 1/volume`` (the uniform law)."""
    dens = 1.0 / box.volume
    low = dens if low is None else low
    high = dens if high is None else high
    return ExplicitBand(box, lambda p: low, lambda p: high, cap=max(high, dens))


def density_band(box: Box, pdf: Callable, cap: float) -> ExplicitBand:
    """Degenerate band ``l = u = pdf``."""
    return ExplicitBand(box, pdf, pdf, cap=cap)


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------

class ProblemSpec:
    """Objective ``f(x, xi)`` with a subgradient selector and a projection onto X.

    ``evaluate`` and ``subgrad`` take a single decision ``x`` and a batch of
    points ``xi`` of shape (n, m); they return shapes (n,) and (n, dim_x).
    """

    dim_x = 1

    def evaluate(self, x, xi) -> np.ndarray:
        raise NotImplementedError

    def subgrad(self, x, xi) -> np.ndarray:
        raise NotImplementedError

    def project(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def default_start(self, data: SampleSet | None = None) -> np.ndarray:
        return self.project(np.zeros(self.dim_x))


class FunctionProblem(ProblemSpec):
    """ProblemSpec assembled from plain vectorised callables."""

    def __init__(self, dim_x: int, evaluate: Callable, subgrad: Callable,
                 project: Callable | None = None):
        self.dim_x = int(dim_x)
        self._f = evaluate
        self._g = subgrad
        self._proj = project

    def evaluate(self, x, xi):
        return np.asarray(self._f(np.asarray(x, float), np.asarray(xi, float)), dtype=float)

    def subgrad(self, x, xi):
        g = np.asarray(self._g(np.asarray(x, float), np.asarray(xi, float)), dtype=float)
        return g.reshape(len(xi), self.dim_x)

    def project(self, x):
        x = np.asarray(x, dtype=float)
        return x if self._proj is None else np.asarray(self._proj(x), dtype=float)


def unit_ball_volume(m: int) -> float:
    return math.pi ** (m / 2) / math.gamma(m / 2 + 1)


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"significance level must lie in (0, 1), got {alpha}")
    return float(alpha)


def to_vector(x: float | Sequence[float]) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))
