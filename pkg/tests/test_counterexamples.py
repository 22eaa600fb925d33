import math
from fractions import Fraction

import numpy as np
import pytest

from tangentscope.circle import TWO_PI, GridFunction, grid
from tangentscope.counterexamples import (BlaschkeSpec, CombLayers, CombSpec, ConstructionRefused, alternating_set,
                                          blaschke_bounds_check, blaschke_product, comb_set, finite_blaschke,
                                          l1_divergent_function, layered_value, littlewood_set, sample_points,
                                          unimodularity_drift)
from tangentscope.kernels import POISSON, scaled
from tangentscope.operators import arc_convolve_eps, convolve_at_eps
from tangentscope.regions import nontangential, power_curve

from oracles import blaschke_direct

SQRT = power_curve(0.5)


# ---------------------------------------------------------------------------
# combs


def test_comb_examples():
    U = comb_set(CombSpec(4, 0.5))
    assert len(U) == 5          # the arc centred at 0 wraps and is split
    assert U.measure() == pytest.approx(math.pi, abs=1e-15)
    assert bool(U.contains(0.0)) and bool(U.contains(math.pi / 2)) and not bool(U.contains(math.pi / 4))
    V = comb_set(CombSpec(4, 0.5, "odd_centers"))
    assert bool(V.contains(math.pi / 4)) and not bool(V.contains(0.0))
    assert (U & V).measure() == 0.0


def test_comb_validation():
    for bad in (dict(n=0, delta=0.1), dict(n=3, delta=1.0), dict(n=3, delta=0.0), dict(n=2.5, delta=0.1)):
        with pytest.raises(ValueError):
            CombSpec(**bad)
    with pytest.raises(ValueError):
        CombSpec(3, 0.1, "diagonal")


def test_layers_local_matches_global():
    L = CombLayers([CombSpec(8, 0.25), CombSpec(64, 0.1, "odd_centers"), CombSpec(512, 0.05)],
                   ["first", "symdiff", "difference"])
    E = L.arcset()
    for u in (Fraction(1, 3), Fraction(7, 16), Fraction(5, 9)):
        R = 0.3
        s, e = L.local(u, R)
        x0 = TWO_PI * float(u)
        # brute-force membership on a fine grid of offsets
        off = np.linspace(-R + 1e-6, R - 1e-6, 4001)
        inside = np.zeros(off.size, dtype=bool)
        for a, b in zip(s, e):
            inside |= (off >= a) & (off < b)
        assert np.mean(inside == E.contains(x0 + off)) >= 0.999


def test_layered_value_matches_arc_convolution():
    L = CombLayers([CombSpec(16, 0.2), CombSpec(128, 0.1)], ["first", "union"])
    u = Fraction(3, 7)
    eps = 1e-3
    vals, tail = layered_value(POISSON, eps, L, u, [0.0, 0.01])
    direct = arc_convolve_eps(POISSON, eps, L.arcset(), TWO_PI * float(u) + np.array([0.0, 0.01]))
    assert np.allclose(vals, direct, atol=1e-8)
    assert tail <= 1e-9


def test_sample_points_seeded_and_exact():
    xs, us = sample_points(8, seed=3)
    assert xs == sample_points(8, seed=3)[0]
    assert all(isinstance(u, Fraction) and u.denominator & (u.denominator - 1) == 0 for u in us)
    assert xs[0] == TWO_PI * float(us[0])


# ---------------------------------------------------------------------------
# Blaschke factors


def test_finite_blaschke_matches_direct_formula():
    for n, d in ((1, 0.01), (8, 1e-4), (32, 0.04)):
        for x in (0.0, 0.3, 2.0, 5.5):
            assert finite_blaschke(n, d, x) == pytest.approx(blaschke_direct(n, d, x), abs=1e-12)
    with pytest.raises(ValueError):
        finite_blaschke(0, 0.1, 0.0)


def test_finite_blaschke_is_unimodular():
    x = grid(4096)
    vals = [finite_blaschke(32, 1e-4, t) for t in x]
    assert unimodularity_drift(vals) <= 1e-12


@pytest.mark.parametrize("n", [8, 32])
@pytest.mark.parametrize("delta", [1e-2, 1e-4])
def test_blaschke_bounds(n, delta):
    on, off = blaschke_bounds_check(n, delta)
    assert on <= 100 * math.sqrt(delta)
    assert off <= 100 * delta ** 0.25
    # both maxima sit on the region edges: compare with the direct formula there
    assert on == pytest.approx(abs(blaschke_direct(n, delta, math.pi * delta / n) + 1), rel=1e-9)
    assert off == pytest.approx(abs(blaschke_direct(n, delta, math.pi * delta ** 0.25 / n) - 1), rel=1e-9)


def test_blaschke_bound_shrink_ratio():
    # the on-comb bound scales like sqrt(delta): a 100x smaller delta shrinks it about 10x
    a, _ = blaschke_bounds_check(8, 1e-2)
    b, _ = blaschke_bounds_check(8, 1e-4)
    assert 5 <= a / b <= 20
    with pytest.raises(ValueError):
        blaschke_bounds_check(8, 0.2)


def test_blaschke_spec_interior_is_poisson_of_boundary():
    spec = BlaschkeSpec(((3, 0.01), (11, 0.001)))
    N = 1 << 12
    bnd = spec.boundary_values(N)
    assert unimodularity_drift(bnd.samples) <= 1e-12
    eps = 0.05
    y_num, y_den = 5, 64
    lhs = spec.interior(eps, y_num, y_den)
    rhs = convolve_at_eps(POISSON, eps, GridFunction(bnd.samples), TWO_PI * y_num / y_den)
    # the grid reads B as a step function; B' is large, so the quadrature error is O(h^2 |B''|)
    assert abs(lhs - rhs) <= 1e-5
    assert spec.lipschitz() > 0


# ---------------------------------------------------------------------------
# refusals


@pytest.mark.parametrize("fn", [littlewood_set, blaschke_product, alternating_set, l1_divergent_function])
def test_nontangential_curve_is_refused(fn):
    with pytest.raises(ConstructionRefused) as exc:
        fn(POISSON, nontangential(1.0), 1)
    assert exc.value.diagnostic["constructor"]
    assert exc.value.diagnostic["reason"]


def test_depth_validation():
    with pytest.raises(ValueError):
        littlewood_set(POISSON, SQRT, 0, pi_star_value=1.0)


def test_refusal_from_supplied_estimate():
    with pytest.raises(ConstructionRefused) as exc:
        blaschke_product(POISSON, SQRT, 1, pi_star_value=0.9)
    assert exc.value.diagnostic["pi_star"] == 0.9


def test_sign_flipped_kernel_refused():
    with pytest.raises(ConstructionRefused) as exc:
        littlewood_set(scaled(POISSON, -1.0), SQRT, 1, pi_star_value=1.0)
    assert exc.value.diagnostic["reason"] in ("kernel_sign", "mass_unreachable")


# ---------------------------------------------------------------------------
# builds


def test_littlewood_depth_one():
    b = littlewood_set(POISSON, SQRT, 1, samples=32)
    st = b.stages[0]
    assert st.mass_u > st.target and st.mass_v > st.target
    assert 3 * st.lam_v <= st.lam_u
    assert b.E.measure() == pytest.approx(TWO_PI * 5 * st.delta, rel=1e-9)
    assert b.fraction_at_least(0.0) == 1.0
    assert b.continuity_surrogate[0]["holds"]


def test_blaschke_depth_one():
    b = blaschke_product(POISSON, SQRT, 1, samples=32)
    st = b.stages[0]
    assert st.plus_bound < 0.5 and st.minus_bound < 0.5
    assert st.omega_measured <= st.omega_bound
    assert unimodularity_drift(b.boundary.samples) <= 1e-12
    w = b.witnesses[0]
    assert abs(w.extra["difference"] - w.extra["full_product_difference"]) <= 1e-5


def test_l1_depth_two():
    b = l1_divergent_function(POISSON, SQRT, 2, samples=16)
    assert b.l1_norm() <= 1.0
    for part in b.parts:
        assert part.l1_norm() == pytest.approx(1.0, rel=1e-12)
    ns = [s.n for s in b.stages]
    assert ns == sorted(ns)


@pytest.fixture(scope="module")
def littlewood4():
    return littlewood_set(POISSON, SQRT, 4, samples=256)


@pytest.fixture(scope="module")
def blaschke3():
    return blaschke_product(POISSON, SQRT, 3, samples=128)


@pytest.mark.slow
def test_littlewood_depth_four(littlewood4):
    b = littlewood4
    assert b.pi_star_estimate >= 0.95
    assert b.fraction_at_least(0.5) >= 0.95
    ns = [s.n for s in b.stages]
    assert ns == sorted(ns) and len(set(ns)) == 4
    for w in b.witnesses:
        assert w.extra["tail_bound"] <= 1e-9


@pytest.mark.slow
def test_blaschke_depth_three(blaschke3):
    b = blaschke3
    assert b.fraction_at_least(0.5) >= 0.90
    for st in b.stages:
        assert st.plus_bound < 2.0 ** -st.k and st.minus_bound < 2.0 ** -st.k
    # truncation B_k vs the full product: the later factors stay within 2^-j of 1 at the witnesses
    for w in b.witnesses:
        gap = abs(w.extra["difference"] - w.extra["full_product_difference"])
        later = sum(2.0 ** -j for j in range(w.stage + 1, b.depth + 1))
        assert gap <= 2 * later + 1e-5


@pytest.mark.slow
def test_alternating_depth_two():
    b = alternating_set(POISSON, SQRT, 2)
    assert b.oscillation.shape == (128, 2)
    assert np.all(b.perturbation >= 0)
    assert np.all(b.certified() <= b.oscillation)
    assert b.certified()[:, -1].min() >= b.bounds()[-1]
