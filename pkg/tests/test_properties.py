import math
from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from tangentscope.circle import TWO_PI, ArcSet, GridFunction
from tangentscope.counterexamples import CombSpec, comb_set
from tangentscope.dyadic import (DyadicRect, RareSequence, RectBasis, lemma_L4_function, quasi_cover_check, tx2_cover,
                                 validate_quasi_certificate)
from tangentscope.kernels import POISSON
from tangentscope.operators import convolve, hl_maximal, hl_maximal_bruteforce, lambda_maximal
from tangentscope.regions import nontangential

FAST = settings(max_examples=40, deadline=None)

arc = st.tuples(st.floats(0, TWO_PI, allow_nan=False), st.floats(0, 3.0, allow_nan=False)).map(
    lambda t: (t[0], t[0] + t[1]))
arcsets = st.lists(arc, max_size=5).map(ArcSet.from_arcs)


@FAST
@given(arcsets, arcsets)
def test_arcset_inclusion_exclusion(A, B):
    assert math.isclose((A | B).measure() + (A & B).measure(), A.measure() + B.measure(), abs_tol=1e-12)
    assert math.isclose((A ^ B).measure(), (A | B).measure() - (A & B).measure(), abs_tol=1e-12)
    assert (A | B).measure() <= TWO_PI + 1e-12


@FAST
@given(arcsets)
def test_arcset_complement(A):
    assert math.isclose(A.measure() + A.complement().measure(), TWO_PI, abs_tol=1e-12)


@FAST
@given(st.integers(1, 200), st.floats(0.01, 0.99), st.sampled_from(["even_centers", "odd_centers"]))
def test_comb_measure(n, delta, phase):
    assert math.isclose(comb_set(CombSpec(n, delta, phase)).measure(), TWO_PI * delta, rel_tol=1e-12)


grid_values = st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False), min_size=2, max_size=48)


@FAST
@given(grid_values)
def test_hl_equals_bruteforce(vals):
    f = GridFunction(np.array(vals))
    assert np.array_equal(hl_maximal(f).samples, hl_maximal_bruteforce(f).samples)


@FAST
@given(grid_values)
def test_hl_dominates(vals):
    f = GridFunction(np.array(vals))
    assert np.all(hl_maximal(f).samples >= np.abs(f.samples))


@FAST
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=16, max_size=16), st.floats(0.1, 0.95))
def test_poisson_positivity(vals, r):
    # a positive kernel maps nonnegative data to nonnegative data, bounded by the max
    f = GridFunction(np.array(vals))
    g = convolve(POISSON, r, f).samples
    assert np.all(g >= -1e-12)
    assert np.all(g <= max(vals) + 1e-9)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=64, max_size=64))
def test_level_sets_nonincreasing(vals):
    rep = lambda_maximal(POISSON, nontangential(1.0), GridFunction(np.array(vals)), eps_set=[0.5, 0.1, 0.01])
    ts = sorted(rep.level_set_measures)
    ms = [rep.level_set_measures[t] for t in ts]
    assert all(a >= b for a, b in zip(ms, ms[1:]))


L4 = lemma_L4_function(2)


def _rects(max_m):
    return st.tuples(st.integers(0, max_m), st.integers(0, max_m)).flatmap(
        lambda m: st.tuples(st.integers(1, 1 << m[0]), st.integers(1, 1 << m[1])).map(
            lambda ij: DyadicRect(ij[0], ij[1], m[0], m[1])))


@FAST
@given(_rects(20), st.booleans())
def test_dyadic_additivity_over_halves(R, horizontal):
    f = L4.f
    if horizontal:
        a = DyadicRect(2 * R.i - 1, R.j, R.m1 + 1, R.m2)
        b = DyadicRect(2 * R.i, R.j, R.m1 + 1, R.m2)
    else:
        a = DyadicRect(R.i, 2 * R.j - 1, R.m1, R.m2 + 1)
        b = DyadicRect(R.i, 2 * R.j, R.m1, R.m2 + 1)
    assert f.integral(R) == f.integral(a) + f.integral(b)


@FAST
@given(_rects(12))
def test_l4_marginals_zero_on_strips(R):
    # full-height and full-width strips integrate to zero
    f = L4.f
    assert f.integral(DyadicRect(R.i, 1, R.m1, 0)) == 0
    assert f.integral(DyadicRect(1, R.j, 0, R.m2)) == 0


EVENS = RareSequence(tuple(range(2, 200, 2)))


@settings(max_examples=1000, deadline=None)
@given(_rects(150).filter(lambda R: R.m1 >= 1 and R.m2 >= 1))
def test_tx2_ratio_bound(R):
    res = tx2_cover(R, EVENS)
    assert res.ok
    assert res.ratio >= Fraction(1, 4 ** EVENS.gamma)
    assert res.R_doubleprime.m1 in EVENS and res.R_doubleprime.m2 in EVENS


@FAST
@given(_rects(8), st.integers(1, 4))
def test_quasi_certificates_validate(R, c):
    B1 = RectBasis.rare(RareSequence((1, 3, 5, 7, 9, 11)))
    M = RectBasis.all_dyadic()
    res = quasi_cover_check(R, B1, M, c)
    if res.certificate is not None:
        assert validate_quasi_certificate(res.certificate, B1, M)
    else:
        assert res.status == "not_found_within_bounds"
