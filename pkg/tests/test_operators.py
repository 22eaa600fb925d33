import math

import numpy as np
import pytest

from tangentscope.circle import TWO_PI, ArcSet, GridFunction, grid
from tangentscope.kernels import FEJER, POISSON, fejer_eps
from tangentscope.operators import (OversamplingCapWarning, WeightedArcs, arc_convolve_eps, convolve,
                                    convolve_at, convolve_at_eps, convolve_eps, curve_oscillation,
                                    fejer_shift_check, hl_maximal, hl_maximal_bruteforce, lambda_maximal,
                                    level_set_measure, pointwise_domination_check, preset, weak_type_check)
from tangentscope.regions import nontangential, power_curve

from oracles import fatou_step_oracle, hl_interval_oracle, poisson_arc_mass


def _fejer_step_oracle(n, x):
    # Cesaro mean of the Fourier series of 1_[0, pi)
    k = np.arange(1, n + 1, 2)
    return 0.5 + float(np.sum((1 - k / (n + 1)) * 2 / (math.pi * k) * np.sin(k * x)))


def test_convolve_constant_and_cos():
    assert np.allclose(convolve(POISSON, 0.9, preset("const", 512)).samples, 1.0, atol=1e-12)
    c = preset("cos", 1024)
    for r in (0.5, 0.9):
        assert np.allclose(convolve(POISSON, r, c).samples, r * c.samples, atol=1e-12)


def test_convolve_fft_matches_direct():
    f = preset("step", 256)
    a = convolve(POISSON, 0.9, f).samples
    b = convolve(POISSON, 0.9, f, method="fft").samples
    assert np.allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        convolve(POISSON, 0.9, f, method="spline")


def test_convolve_step_matches_fatou_oracle():
    f = preset("step", 1 << 12)
    for r, x in ((0.9, 1.0), (0.999, math.pi / 2), (1 - 1e-4, 2.0)):
        assert convolve_at(POISSON, r, f, x) == pytest.approx(fatou_step_oracle(r, x), abs=2e-3)
    assert abs(convolve_at(POISSON, 0.999, f, math.pi / 2) - 1.0) <= 0.01


def test_convolve_at_exact_and_oversample_agree():
    f = preset("step", 1 << 10)
    ys = [0.3, 1.7, 4.0]
    for eps in (1e-3, 2.0 ** -14):
        a = convolve_at_eps(POISSON, eps, f, ys)
        b = convolve_at_eps(POISSON, eps, f, ys, method="exact")
        assert np.allclose(a, b, atol=1e-6)


def test_fejer_oversampling_is_not_aliased():
    # N close to n + 1 aliases a one-sample-per-cell tail
    f = preset("step", 1 << 12)
    x = math.pi / 2 + 1 / 4096
    got = convolve_at_eps(FEJER, fejer_eps(4096), f, x)
    assert got == pytest.approx(_fejer_step_oracle(4096, x), abs=1e-6)


def test_oversampling_cap_warns():
    with pytest.warns(OversamplingCapWarning):
        convolve_eps(POISSON, 1e-9, preset("const", 64), cap=16)


def test_arc_convolve_matches_quadrature():
    A = ArcSet.from_arcs([(0.5, 1.5), (3.0, 3.2)])
    r = 0.95
    y = 1.0
    direct = poisson_arc_mass(r, y - 1.5, y - 0.5) + poisson_arc_mass(r, y - 3.2, y - 3.0)
    assert arc_convolve_eps(POISSON, 1 - r, A, y) == pytest.approx(direct, abs=1e-10)
    W = WeightedArcs.concat([WeightedArcs.from_arcset(A, 2.0)])
    assert arc_convolve_eps(POISSON, 1 - r, W, y) == pytest.approx(2 * direct, abs=1e-10)


def test_hl_maximal_bitwise_bruteforce():
    rng = np.random.default_rng(7)
    for f in (preset("step", 256), GridFunction(rng.standard_normal(256)), preset("bump", 64)):
        assert np.array_equal(hl_maximal(f).samples, hl_maximal_bruteforce(f).samples)


def test_hl_maximal_interval_oracle():
    N = 1 << 10
    h = TWO_PI / N
    a_cells = 20
    v = np.zeros(N)
    v[: a_cells + 1] = 1.0
    v[-a_cells:] = 1.0
    M = hl_maximal(GridFunction(v)).samples
    a = (a_cells + 0.5) * h
    for k in (100, 200, 400):
        d = k * h
        assert M[k] == pytest.approx(hl_interval_oracle(a, d), rel=2e-3)


def test_hl_dominates_abs_f():
    f = GridFunction(np.sin(3 * grid(128)))
    assert np.all(hl_maximal(f).samples >= np.abs(f.samples))


def test_lambda_maximal_constant_and_monotone():
    rep = lambda_maximal(POISSON, nontangential(1.0), preset("const", 1024))
    assert np.allclose(rep.values.samples, 1.0, atol=1e-9)
    f = preset("step", 1024)
    small = lambda_maximal(POISSON, nontangential(1.0), f).values.samples
    big = lambda_maximal(POISSON, power_curve(0.5), f).values.samples
    assert np.all(big >= small)
    sub = lambda_maximal(POISSON, nontangential(1.0), f, eps_set=2.0 ** -np.arange(1, 6)).values.samples
    assert np.all(small >= sub)
    with pytest.raises(ValueError):
        lambda_maximal(POISSON, nontangential(1.0), f, N=512)


def test_level_sets_nonincreasing():
    rep = lambda_maximal(POISSON, nontangential(1.0), preset("step", 512))
    ts = sorted(rep.level_set_measures)
    ms = [rep.level_set_measures[t] for t in ts]
    assert all(a >= b for a, b in zip(ms, ms[1:]))
    assert level_set_measure(np.array([0.0, 1.0, 2.0, 3.0]), 1.5) == pytest.approx(TWO_PI / 2)


def test_weak_type_examples():
    f = preset("const", 256)
    C, t = weak_type_check(GridFunction(np.ones(256)), f, 1.0, [0.5])
    # oracle: 2pi * 0.5 / 2pi
    assert C == pytest.approx(0.5)
    with pytest.raises(ValueError):
        weak_type_check(f, GridFunction(np.zeros(8)), 2.0, [1.0])
    with pytest.raises(ValueError):
        weak_type_check(f, f, 2.0, [])


@pytest.mark.slow
def test_weak_type_stable_across_resolution():
    cs = []
    for N in (1 << 12, 1 << 13):
        g = preset("power", N, 2.0)
        rep = lambda_maximal(POISSON, nontangential(1.0), g)
        cs.append(weak_type_check(rep, g, 2.0, np.geomspace(0.5, 50, 41))[0])
        assert rep.best_constant == cs[-1]
    assert abs(cs[1] / cs[0] - 1) <= 0.2


@pytest.mark.slow
def test_pointwise_domination_step():
    ratio = pointwise_domination_check(POISSON, nontangential(1.0), preset("step", 1 << 12), 1.0)
    assert 1.0 <= ratio <= 10


def test_domination_zero_over_zero():
    f = GridFunction(np.zeros(64))
    assert pointwise_domination_check(POISSON, nontangential(1.0), f, 1.0) == 0.0


def test_curve_oscillation_examples():
    eps_w = 2.0 ** -np.arange(4, 15)
    osc = curve_oscillation(POISSON, nontangential(1.0), preset("const", 1024), [0.5, 2.0], None, eps_window=eps_w)
    assert np.all(osc <= 1e-6)
    osc = curve_oscillation(POISSON, nontangential(1.0), preset("step", 1 << 12), [1.0, 2.0], None,
                            eps_window=eps_w)
    assert np.all(osc <= 0.05)
    # exact arcs: same step as an ArcSet
    osc_arc = curve_oscillation(POISSON, nontangential(1.0), ArcSet.from_arcs([(0.0, math.pi)]), [1.0], None,
                                eps_window=eps_w)
    assert osc_arc[0] <= 0.05


def test_fatou_nontangential_interior():
    f = preset("step", 1 << 12)
    e = 1e-4
    x = math.pi / 2
    for th in np.linspace(-e, e, 9):
        assert abs(convolve_at_eps(POISSON, e, f, x + th) - 1.0) <= 0.05


def test_fejer_shift_examples():
    c = preset("cos", 1024)
    # c = 0: sigma_n(cos) = n/(n+1) cos, so the error is |cos x| / (n + 1) at grid points x
    for x in (0.0, grid(1024)[166]):
        err = fejer_shift_check(c, x, [8, 64], c=0.0)
        assert np.allclose(err, abs(math.cos(x)) / np.array([9, 65]), atol=1e-9)
    f = preset("step", 1 << 12)
    errs = fejer_shift_check(f, math.pi / 2, [16, 256, 4096])
    oracle = [abs(_fejer_step_oracle(n, math.pi / 2 + 1 / n) - 1) for n in (16, 256, 4096)]
    # the grid step differs from 1_[0, pi) on two half cells; the broad kernels see that at O(h)
    assert np.allclose(errs, oracle, atol=1e-4)
    assert errs[-1] <= 0.05


def test_presets():
    assert preset("bump", 64).samples[0] == pytest.approx(64 / TWO_PI)
    assert preset("step", 8).samples.tolist() == [1, 1, 1, 1, 0, 0, 0, 0]
    p = preset("power", 4096, 2.0)
    assert p.samples.max() == pytest.approx(2.0 ** 2)
    with pytest.raises(ValueError):
        preset("saw", 16)
