import math

import numpy as np
import pytest

from tangentscope.circle import TWO_PI, grid
from tangentscope.kernels import (FEJER, FRAC_POISSON, POISSON, axioms_check, constant_family, fejer,
                                  fejer_eps, fejer_order, frac_poisson, kernel_from_spec, kernel_stats, majorant,
                                  phi_star_eps, poisson, regularity_check, scaled, sqrt_poisson_mass, table_kernel)

from oracles import fejer_fourier, poisson_arc_mass, poisson_r, sqrt_poisson_mass_elliptic


def test_poisson_values():
    assert poisson(0.5, 0.0) == pytest.approx(3.0 / TWO_PI, rel=1e-14)
    assert poisson(0.5, math.pi) == pytest.approx(1.0 / (6.0 * math.pi), rel=1e-14)
    t = np.linspace(-3, 3, 101)
    for r in (0.1, 0.9, 0.999):
        # the r-form loses digits to 1 - r; agreement is limited by that rounding
        assert np.allclose(poisson(r, t), poisson_r(r, t), rtol=1e-9, atol=0)


@pytest.mark.parametrize("r", [0.5, 0.9, 1 - 2.0 ** -12, 1 - 2.0 ** -30])
def test_poisson_unit_mass_closed_form(r):
    assert abs(POISSON.partial_integral(r, -math.pi, math.pi) - 1.0) <= 1e-9


@pytest.mark.parametrize("r,a,b", [(0.9, -0.3, 0.7), (0.99, 0.01, 2.0), (0.5, -3.0, -1.0)])
def test_poisson_partial_integral_matches_quadrature(r, a, b):
    assert POISSON.partial_integral(r, a, b) == pytest.approx(poisson_arc_mass(r, a, b), abs=1e-11)


@pytest.mark.parametrize("r", [0.5, 0.9, 0.99, 0.999, 1 - 1e-5])
def test_sqrt_poisson_mass_matches_elliptic_oracle(r):
    assert sqrt_poisson_mass(1.0 - r) == pytest.approx(sqrt_poisson_mass_elliptic(r), rel=1e-9)


@pytest.mark.parametrize("r", [0.5, 0.99, 0.9999])
def test_frac_poisson_unit_mass(r):
    assert abs(FRAC_POISSON.partial_integral(r, -math.pi, math.pi) - 1.0) <= 1e-8


def test_frac_poisson_small_r_is_flat():
    assert frac_poisson(1e-9, 1.3) == pytest.approx(1.0 / TWO_PI, rel=1e-6)


def test_frac_poisson_mass_ratio_window():
    r = 0.99
    eps = 1 - r
    ratio = sqrt_poisson_mass(eps) / (math.sqrt(eps) * math.log(1 / eps))
    assert 0.1 <= ratio <= 10


def test_fejer_values():
    assert np.allclose(fejer(0, grid(16)), 1.0 / TWO_PI)
    for n in (1, 8, 100):
        assert fejer(n, 0.0) == pytest.approx((n + 1) / TWO_PI)
        t = np.linspace(-3, 3, 77)
        assert np.allclose(fejer(n, t), fejer_fourier(n, t), atol=1e-12)


@pytest.mark.parametrize("n", [1, 8, 64, 1000])
def test_fejer_unit_mass(n):
    assert abs(FEJER.partial_integral_eps(fejer_eps(n), -math.pi, math.pi) - 1.0) <= 1e-10


def test_fejer_order_mapping():
    for n in (0, 1, 7, 4095):
        assert fejer_order(fejer_eps(n)) == n


def test_majorant_poisson_is_the_kernel():
    r, N = 0.9, 4096
    M = majorant(POISSON, r, N).samples
    v = np.abs(POISSON.evaluate(r, grid(N)))
    assert np.max(np.abs(M - v)) <= 1e-12


def test_majorant_fejer_first_zero_is_next_lobe():
    n, N = 8, 1 << 14
    M = majorant(FEJER, 1 - fejer_eps(n), N)
    # oracle: brute-force max of |K_8| over [2pi/9, pi] on a 10^5 grid
    t = np.linspace(TWO_PI / 9, math.pi, 100_000)
    lobe = float(np.max(fejer_fourier(n, t)))
    k = int(round((TWO_PI / 9) / (TWO_PI / N)))
    assert lobe > 0
    assert M.samples[k] == pytest.approx(lobe, rel=1e-3)


@pytest.mark.parametrize("kernel,r", [(POISSON, 0.9), (FEJER, 1 - fejer_eps(8)), (FRAC_POISSON, 0.99)])
def test_majorant_nonincreasing(kernel, r):
    N = 2048
    M = majorant(kernel, r, N).samples
    right = M[: N // 2 + 1]
    assert np.all(np.diff(right) <= 0)


def test_kernel_stats_poisson():
    st = kernel_stats(POISSON, 0.9, 4096)
    assert st.sup_norm == pytest.approx(1.9 / (0.2 * math.pi), rel=1e-9)
    for r in (0.9, 0.99, 0.999):
        assert 0.1 <= kernel_stats(POISSON, r, 1 << 14).phi_star <= 2


def test_frac_poisson_phi_star_log_window():
    eps = 1e-3
    assert 0.05 <= phi_star_eps(FRAC_POISSON, eps) * math.log(1 / eps) <= 20


def test_phi_star_grid_and_graded_agree_when_resolved():
    eps = 0.01
    assert phi_star_eps(POISSON, eps, 1 << 14) == pytest.approx(phi_star_eps(POISSON, eps), rel=1e-2)


def test_lemma_upper_bound_holds():
    for r in (0.9, 0.99):
        low, ps, up, _ = kernel_stats(POISSON, r, 1 << 14).lemma_bounds()
        assert ps <= up


@pytest.mark.xfail(reason="the stated 1/(5 log sup) lower bound fails for Poisson at r = 0.9; "
                          "explicit_lower_bound is the derivable replacement", strict=True)
def test_lemma_lower_bound_as_stated_at_r_09():
    low, ps, up, holds = kernel_stats(POISSON, 0.9, 1 << 14).lemma_bounds()
    assert holds


def test_explicit_lower_bound_holds():
    for r in (0.9, 0.99, 0.999):
        st = kernel_stats(POISSON, r, 1 << 14)
        assert st.explicit_lower_bound() <= st.phi_star


def test_axioms_poisson():
    rs = [1 - 2.0 ** -k for k in range(1, 13)]
    rep = axioms_check(POISSON, rs, 4096)
    assert rep.mass_method == "closed_form"
    assert rep.phi1_ok and rep.phi2_ok and rep.phi3_ok, rep.flags
    assert max(rep.mass_deviation) <= 1e-9
    assert max(rep.majorant_l1) <= 1.01


def test_axioms_fejer():
    rs = [1 - fejer_eps(2 ** k) for k in range(1, 11)]
    rep = axioms_check(FEJER, rs, 1 << 14, tol=1e-8)
    assert rep.phi1_ok and rep.phi2_ok and rep.phi3_ok, rep.flags
    assert max(rep.majorant_l1) <= 4


def test_axioms_constant_family_flags_decay():
    rep = axioms_check(constant_family(), [0.5, 0.9, 0.99], 256)
    assert rep.phi1_ok
    assert not rep.phi2_ok
    assert "phi2" in rep.flags


def test_regularity():
    assert bool(regularity_check(POISSON, 0.9, 1024))
    fe = regularity_check(FEJER, 1 - fejer_eps(8), 1024)
    assert fe.nonnegative and not fe.monotone
    assert not bool(regularity_check(scaled(POISSON, -1.0), 0.9, 1024))


def test_kernel_from_spec_and_errors(tmp_path):
    assert kernel_from_spec("poisson") is POISSON
    assert kernel_from_spec("fejer") is FEJER
    with pytest.raises(ValueError):
        kernel_from_spec("gauss")
    with pytest.raises(ValueError):
        POISSON.evaluate(1.0, 0.0)


def test_table_kernel_roundtrip(tmp_path):
    N = 256
    rows = []
    for r in (0.5, 0.9):
        p = tmp_path / f"k{r}.csv"
        with open(p, "w") as fh:
            fh.write("theta,value\n")
            for t, v in zip(grid(N), poisson_r(r, grid(N))):
                fh.write(f"{float(t)!r},{float(v)!r}\n")
        rows.append((r, p.name))
    man = tmp_path / "manifest.csv"
    man.write_text("r,path\n" + "".join(f"{r},{p}\n" for r, p in rows))
    k = table_kernel(man)
    assert k.evaluate(0.9, grid(N)) == pytest.approx(poisson_r(0.9, grid(N)), rel=1e-12)
