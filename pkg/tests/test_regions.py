import math

import numpy as np
import pytest

from tangentscope.kernels import FEJER, FRAC_POISSON, POISSON, phi_star_eps
from tangentscope.regions import (ApproachCurve, carlsson_bound, classify_trend, curve_from_function,
                                  curve_from_spec, default_eps, log_tangential, nontangential, pi_infty, pi_p,
                                  pi_plain, pi_star, power_curve, r_string, table_curve)

from oracles import poisson_arc_mass


def test_curves():
    assert nontangential(2.0).at_eps(0.01) == pytest.approx(0.02)
    assert power_curve(0.5).at_eps(0.04) == pytest.approx(0.2)
    assert log_tangential(2.0).at_eps(math.exp(-3)) == pytest.approx(math.exp(-3) * 9)
    c = curve_from_spec("power:alpha=0.5,c=2")
    assert c.at_eps(0.25) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        curve_from_spec("spiral:c=1")
    with pytest.raises(ValueError):
        curve_from_spec("nontangential:p=2")
    with pytest.raises(ValueError):
        ApproachCurve("nontangential", c=-1.0)


def test_solve_eps_inverts_curve():
    c = power_curve(0.5)
    e = c.solve_eps(0.01, 1e-12, 0.5)
    assert c.at_eps(e) == pytest.approx(0.01, rel=1e-12)


def test_table_curve(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("r,lambda\n0.9,0.1\n0.99,0.01\n0.999,0.001\n")
    c = table_curve(p)
    assert c.at_eps(0.01) == pytest.approx(0.01)
    assert c.at_eps(0.03) == pytest.approx(0.03, rel=1e-12)   # log-log interpolation of a power law
    with pytest.raises(ValueError):
        c.at_eps(0.5)


def test_r_string_is_exact():
    assert r_string(2.0 ** -20) == "0.99999904632568359375"


def test_classify_trend():
    assert classify_trend([1, 2, 4, 8]) == "increasing"
    assert classify_trend([1.0, 1.01, 0.99, 1.0]) == "plateau"
    assert classify_trend([8, 4, 2, 1]) == "decreasing"


def test_pi_plain_nontangential_poisson():
    est = pi_plain(POISSON, nontangential(1.0))
    assert len(est.samples) == 20
    # oracle: (1+r)/(2 pi) at r = 1 - 1e-6
    assert abs(est.tail_max - (2 - 1e-6) / (2 * math.pi)) <= 1e-3
    assert abs(est.tail_max - 1 / math.pi) <= 1e-3
    assert est.trend == "plateau"


def test_pi_plain_sqrt_curve_diverges():
    est = pi_plain(POISSON, power_curve(0.5))
    assert est.trend == "increasing"
    assert est.tail_max > 10


def test_pi_plain_constructed_constant():
    curve = curve_from_function(lambda e: 1.0 / np.vectorize(POISSON.sup_norm_eps)(e))
    est = pi_plain(POISSON, curve)
    assert np.allclose(est.samples, 1.0, rtol=1e-14)


def test_pi_p_at_one_is_pi_plain():
    a = pi_p(POISSON, power_curve(0.5), 1.0)
    b = pi_plain(POISSON, power_curve(0.5))
    assert a.samples == b.samples


def test_pi_p_log_region_admitted_and_sharp():
    adm = pi_p(FRAC_POISSON, log_tangential(2.0), 2.0)
    assert adm.tail_max <= 50
    sharp = pi_p(FRAC_POISSON, log_tangential(3.0), 2.0)
    assert sharp.trend == "increasing"
    assert sharp.tail_max > adm.tail_max


def test_pi_p_oracle_direct_evaluation():
    # oracle: lambda * sup * phi_star evaluated directly at r = 1 - 10^-k
    for k in (2, 3, 4):
        e = 10.0 ** -k
        lam = e * math.log(1 / e) ** 2
        direct = lam * FRAC_POISSON.sup_norm_eps(e) * phi_star_eps(FRAC_POISSON, e)
        got = pi_p(FRAC_POISSON, log_tangential(2.0), 2.0, eps_sequence=[e]).samples[0]
        assert got == pytest.approx(direct, rel=1e-12)


def test_pi_p_rejects_small_p():
    with pytest.raises(ValueError):
        pi_p(POISSON, nontangential(), 0.5)
    with pytest.raises(ValueError):
        carlsson_bound(POISSON, nontangential(), 0.5)


def test_pi_infty_nontangential_small():
    tab = pi_infty(POISSON, nontangential(1.0))
    assert tab.estimate <= 0.05
    # oracle: the last-delta row tends to (2/pi) arctan(delta (1 + r)/(2 (1 - r)) ... ) ~ (2/pi) arctan(delta)
    assert tab.estimate == pytest.approx(2 / math.pi * math.atan(2.0 ** -10), rel=1e-3)


def test_pi_infty_star_sqrt_curve_near_one():
    assert pi_infty(POISSON, power_curve(0.5)).estimate >= 0.95
    assert pi_star(POISSON, power_curve(0.5)).estimate >= 0.95
    assert pi_star(POISSON, nontangential(1.0)).estimate <= 0.05


def test_mass_table_cells_match_quadrature():
    tab = pi_infty(POISSON, power_curve(0.5), delta_sequence=[0.5, 0.25], eps_sequence=[0.1, 0.01])
    for d, e, v in tab.rows():
        h = d * math.sqrt(e)
        assert v == pytest.approx(poisson_arc_mass(1 - e, -h, h), abs=1e-10)


def test_rows_shrink_linearly_in_delta():
    tab = pi_infty(POISSON, nontangential(1.0), delta_sequence=[0.5, 0.25, 0.125])
    for j, d in enumerate(tab.deltas):
        for k, e in enumerate(tab.eps_values):
            assert tab.matrix[j, k] <= 2 * d * e * POISSON.sup_norm_eps(e) * (1 + 1e-12)


def test_pi_star_below_pi_infty_cellwise():
    for curve in (nontangential(1.0), power_curve(0.5), power_curve(0.8)):
        a = pi_infty(POISSON, curve)
        b = pi_star(POISSON, curve)
        assert np.array_equal(a.matrix, b.matrix)
        for ea, eb in zip(a.per_delta, b.per_delta):
            assert eb.tail_min <= ea.tail_max


def test_delta_sequence_validation():
    with pytest.raises(ValueError):
        pi_infty(POISSON, nontangential(), delta_sequence=[0.1, 0.2])


def test_carlsson_examples():
    a = carlsson_bound(POISSON, power_curve(0.5), 1.0)
    assert a.samples == pi_plain(POISSON, power_curve(0.5)).samples
    rho = curve_from_function(np.vectorize(lambda e: 1.0 / POISSON.lq_norm_eps(float(e), 2) ** 2))
    c = carlsson_bound(POISSON, rho, 2.0)
    assert np.allclose(c.samples, 1.0, rtol=1e-12)
    assert carlsson_bound(POISSON, power_curve(0.5), 2.0).trend == "increasing"


def test_monotone_in_curve():
    small, big = nontangential(1.0), nontangential(3.0)
    for fn in (pi_plain, lambda k, c: pi_p(k, c, 2.0), lambda k, c: carlsson_bound(k, c, 2.0)):
        a, b = fn(POISSON, small), fn(POISSON, big)
        assert all(x <= y for x, y in zip(a.samples, b.samples))
    a, b = pi_infty(POISSON, small), pi_infty(POISSON, big)
    assert np.all(a.matrix <= b.matrix)


def test_condition_ordering_in_p():
    # samples at p2 <= samples at p1 * (sup phi_star)^(p2 - p1); phi_star <= majorant mass
    curve = nontangential(1.0)
    s1 = pi_p(POISSON, curve, 1.5).samples
    s2 = pi_p(POISSON, curve, 2.5).samples
    eps = default_eps()
    for a, b, e in zip(s1, s2, eps):
        assert b <= a * phi_star_eps(POISSON, e) ** 1.0 * (1 + 1e-12)
        assert phi_star_eps(POISSON, e) <= 1.0 + 1e-9


def test_fejer_nontangential_plateau():
    est = pi_plain(FEJER, nontangential(1.0), eps_sequence=[1 / (n + 1) for n in (2 ** k for k in range(4, 14))])
    assert est.trend == "plateau"
