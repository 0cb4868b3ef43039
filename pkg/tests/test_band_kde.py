import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from bandro.band_kde import (Kernel, build_kde_band, delta_constants, delta_theoretical,
                             grid_curve, kde_eval)
from bandro.band_sr import write_band_curve
from bandro.core import Box, InvalidParameterError, Rng, SampleSet


def one_point(x=0.0, m=1):
    return SampleSet(np.full((1, m), x))


def test_boxcar_at_sample_point():
    assert kde_eval(one_point(), "boxcar", 1.0, 0.0)[0] == pytest.approx(0.5)


def test_gaussian_at_sample_point():
    assert kde_eval(one_point(), "gaussian", 1.0, 0.0)[0] == pytest.approx(0.398942, abs=1e-6)


@pytest.mark.parametrize("name", ["boxcar", "gaussian", "epanechnikov"])
def test_kde_integrates_to_one(name):
    data = SampleSet(Rng(1).normal(size=(50, 1)))
    grid = np.linspace(-12, 12, 100_001)
    p = kde_eval(data, name, 0.7, grid)
    assert np.trapezoid(p, grid) == pytest.approx(1.0, abs=1e-3)


def gaussian_moment(s, m):
    # (2 pi)^(-m/2) int t^s exp(-t^2/2) dt = (2 pi)^(-m/2) 2^((s-1)/2) Gamma((s+1)/2)
    return (2 * math.pi) ** (-m / 2) * 2 ** ((s - 1) / 2) * special.gamma((s + 1) / 2)


def epan_moment(s, m):
    q = (m + 2) / (2 * math.pi ** (m / 2) / special.gamma(m / 2 + 1))
    return q * (1 / (s + 1) - 1 / (s + 3))


@pytest.mark.parametrize("m", [1, 2, 3, 10])
@pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 5.5])
def test_moments_match_closed_forms(m, s):
    assert Kernel("gaussian", m).moment(s) == pytest.approx(gaussian_moment(s, m), rel=1e-8)
    assert Kernel("epanechnikov", m).moment(s) == pytest.approx(epan_moment(s, m), rel=1e-8)
    vm = math.pi ** (m / 2) / special.gamma(m / 2 + 1)
    assert Kernel("boxcar", m).moment(s) == pytest.approx(1 / (vm * (s + 1)), rel=1e-12)


@pytest.mark.parametrize("name", ["boxcar", "gaussian", "epanechnikov"])
@pytest.mark.parametrize("m", [1, 2, 3, 10])
def test_kernels_are_normalised(name, m):
    # int K = m V_m int kappa(t) t^(m-1) dt
    k = Kernel(name, m)
    vm = math.pi ** (m / 2) / special.gamma(m / 2 + 1)
    assert m * vm * k.moment(m - 1) == pytest.approx(1.0, rel=1e-8)


def test_delta_constants_boxcar_example():
    C1, C2 = delta_constants(1.0, 1.0, 1.0, Kernel("boxcar", 1))
    assert C1 == pytest.approx(1 / 3, rel=1e-12)
    assert C2 == pytest.approx(32 / 3 * math.sqrt(2) + 32, rel=1e-12)
    assert C2 == pytest.approx(47.0847, abs=5e-4)  # rounded figure


def test_delta_vanishes_with_n():
    vals = []
    for N in (10**3, 10**5, 10**7, 10**9):
        h = (math.log(N / 0.2) / N) ** (1 / 3)
        vals.append(delta_theoretical(1, 1, 1, "boxcar", 1, N, 0.2, h))
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.05 * vals[0]


def test_delta_linear_in_c():
    h, N = 0.3, 1000
    d1 = delta_theoretical(1.0, 0.5, 2.0, "gaussian", 1, N, 0.1, h)
    d2 = delta_theoretical(2.0, 0.5, 2.0, "gaussian", 1, N, 0.1, h)
    C1, _ = delta_constants(1.0, 0.5, 2.0, Kernel("gaussian", 1))
    assert d2 - d1 == pytest.approx(C1 * h ** 0.5, rel=1e-12)


def test_delta_decreasing_in_n():
    ds = [delta_theoretical(1, 1, 1, "boxcar", 1, N, 0.2, 0.5) for N in (100, 200, 400, 800)]
    assert all(a > b for a, b in zip(ds, ds[1:]))


def test_delta_bandwidth_precondition():
    with pytest.raises(InvalidParameterError):
        delta_theoretical(1, 1, 1, "boxcar", 1, 100, 0.2, 0.01)


def test_band_algebra():
    data = SampleSet(Rng(3).normal(size=(40, 1)))
    band = build_kde_band(data, "gaussian", 0.5, 0.05)
    grid = np.linspace(band.box.lower[0], band.box.upper[0], 301)
    l, u = band.eval(grid)
    np.testing.assert_allclose(l, np.maximum(0, u - 0.1), atol=1e-15)
    p = band.estimate(grid)
    assert np.all(l <= p) and np.all(p <= u)
    flat = build_kde_band(data, "gaussian", 0.5, 0.0)
    l, u = flat.eval(grid)
    np.testing.assert_array_equal(l, u)
    np.testing.assert_allclose(u, p)
    l, u = band.eval([band.box.lower[0] - 1.0])
    assert l[0] == u[0] == 0


def test_default_box_and_errors():
    data = SampleSet(np.array([[0.0], [1.0]]))
    band = build_kde_band(data, "boxcar", 0.5, 0.1)
    assert band.box.lower[0] == -1.5 and band.box.upper[0] == 2.5
    with pytest.raises(InvalidParameterError):
        build_kde_band(data, "boxcar", 0.5, 0.1, box=Box([0.5], [2.0]))
    with pytest.raises(InvalidParameterError):
        build_kde_band(data, "boxcar", 0.0, 0.1)
    with pytest.raises(InvalidParameterError):
        Kernel("triangle", 1)


def test_theoretical_delta_through_builder():
    data = SampleSet(Rng(4).uniform(size=(500, 1)))
    theory = {"C": 1.0, "rho": 1.0, "U": 1.0, "alpha": 0.2}
    band = build_kde_band(data, "boxcar", 0.2, theory)
    assert band.delta == pytest.approx(delta_theoretical(1, 1, 1, "boxcar", 1, 500, 0.2, 0.2))


@settings(max_examples=40, deadline=None)
@given(shift=st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       name=st.sampled_from(["boxcar", "gaussian", "epanechnikov"]))
def test_translation_equivariance(shift, name):
    X = Rng(5).normal(size=(30, 2))
    q = Rng(6).normal(size=(10, 2))
    s = np.array(shift)
    a = kde_eval(SampleSet(X), name, 0.8, q)
    b = kde_eval(SampleSet(X + s), name, 0.8, q + s)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_bandwidth_monotone_single_point():
    vals = [kde_eval(one_point(m=2), "boxcar", h, [[0.0, 0.0]])[0] for h in (0.5, 1, 2, 4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[1] == pytest.approx(1 / math.pi)


@pytest.mark.parametrize("name", ["boxcar", "gaussian", "epanechnikov"])
def test_kernel_sampler_second_moment(name):
    # E||X||^2 = m V_m int kappa t^(m+1)
    m = 3
    k = Kernel(name, m)
    x = k.sample(Rng(7), 200_000)
    vm = 4 / 3 * math.pi
    expected = m * vm * k.moment(m + 1)
    got = np.mean((x ** 2).sum(axis=1))
    se = np.std((x ** 2).sum(axis=1)) / math.sqrt(len(x))
    assert abs(got - expected) < 4 * se


def test_reference_sampler_matches_estimate():
    data = SampleSet(Rng(8).normal(size=(25, 1)))
    band = build_kde_band(data, "boxcar", 0.6, 0.0)
    draws = band.sample_reference(Rng(9), 100_000)[:, 0]
    # CDF of the boxcar estimate: average of clipped linear ramps
    x = data.points[:, 0]
    cdf = lambda t: np.clip((np.subtract.outer(t, x) + 0.6) / 1.2, 0, 1).mean(axis=1)
    assert stats.kstest(draws, cdf).pvalue > 1e-3


def test_grid_curve_csv(tmp_path):
    data = SampleSet(Rng(10).normal(size=(20, 2)))
    band = build_kde_band(data, "gaussian", 0.5, 0.01)
    rows = grid_curve(band, 21)
    assert rows.shape == (441, 4)
    path = tmp_path / "grid.csv"
    write_band_curve(rows, path)
    assert path.read_text().splitlines()[0] == "xi1,xi2,l,u"


def coverage(seeds, delta, h=0.5, N=200):
    box = Box([-6, -6], [6, 6])
    ax = np.linspace(-2, 2, 21)
    grid = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    truth = stats.multivariate_normal(np.zeros(2), np.eye(2)).pdf(grid)
    hits = 0
    for s in seeds:
        X = np.clip(Rng(s).normal(size=(N, 2)), -6, 6)
        l, u = build_kde_band(SampleSet(X), "gaussian", h, delta, box).eval(grid)
        hits += np.all((l <= truth) & (truth <= u))
    return hits / len(seeds)


def test_two_dimensional_coverage_holds_out_of_sample():
    # calibrate alpha as the miss rate at delta=0.06, then check a fresh seed block
    alpha = 1 - coverage(range(100), 0.06)
    assert alpha < 0.5
    assert coverage(range(100, 300), 0.06) >= 1 - alpha - 0.05
