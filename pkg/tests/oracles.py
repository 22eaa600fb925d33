"""Independent reference computations used to check the package.

Each oracle takes a different route from the implementation it checks: closed
forms written in r instead of eps, direct Fourier sums, elliptic integrals,
brute-force grids, flat integer arrays instead of exact trees.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

TWO_PI = 2.0 * math.pi


def poisson_r(r: float, t):
    """Normalised Poisson kernel straight from (1 - r^2) / (1 - 2 r cos t + r^2) / (2 pi)."""
    t = np.asarray(t, dtype=float)
    return (1.0 - r * r) / (1.0 - 2.0 * r * np.cos(t) + r * r) / TWO_PI


def poisson_arc_mass(r: float, a: float, b: float) -> float:
    """int_a^b of the Poisson kernel by adaptive quadrature with the peak as a breakpoint."""
    pts = [p for p in (0.0,) if a < p < b]
    val, _ = integrate.quad(lambda t: float(poisson_r(r, t)), a, b, points=pts or None, limit=400,
                            epsabs=1e-13, epsrel=1e-12)
    return val


def sqrt_poisson_mass_elliptic(r: float) -> float:
    """c(r) = sqrt(1 - r^2) * 4 K(m) / (1 + r), m = 4r/(1+r)^2, via K near m = 1."""
    one_minus_m = ((1.0 - r) / (1.0 + r)) ** 2
    return math.sqrt(1.0 - r * r) * 4.0 * special.ellipkm1(one_minus_m) / (1.0 + r)


def fejer_fourier(n: int, t):
    """Fejer kernel as the Cesaro-weighted Fourier sum, unit mass."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.arange(1, n + 1)
    w = 1.0 - k / (n + 1.0)
    return (1.0 + 2.0 * np.cos(np.outer(t, k)) @ w) / TWO_PI


def hl_interval_oracle(a: float, d: float) -> float:
    """Centred maximal function of 1_[-a, a] at distance d > a: best window radius d + a."""
    return a / (d + a)


def blaschke_direct(n: int, delta: float, x) -> complex:
    """(z^n - rho^n) / (rho^n z^n - 1) evaluated with complex powers of z = e^{ix}."""
    rho = math.exp(-math.sqrt(delta) / n)
    z = complex(math.cos(x), math.sin(x))
    zn = z ** n
    return (zn - rho ** n) / (rho ** n * zn - 1.0)


def fatou_step_oracle(r: float, x: float) -> float:
    """Poisson mean of 1_[0, pi) at x, from the arctan antiderivative written in r."""
    c = (1.0 + r) / (1.0 - r)

    def F(s):
        # antiderivative on (-pi, pi): (1/pi) arctan(c tan(s/2))
        return math.atan(c * math.tan(0.5 * s)) / math.pi

    # int_0^pi P(x - t) dt = int_{x - pi}^{x} P(s) ds; for 0 < x < pi no period boundary is crossed
    if not 0.0 < x < math.pi:
        raise ValueError("oracle written for interior points 0 < x < pi")
    return F(x) - F(x - math.pi)


# ---------------------------------------------------------------------------
# dyadic: flat integer expansion of the L-4 function at reduced depth


def l4_flat(n: int, beta: int, levels: int) -> tuple[np.ndarray, int]:
    """Integer array on the 2^-s grid of the unit square, s = n * levels + 1.

    Level p (1..levels) squares carry beta * (+1, +1, -1, -1) on the four corner
    cells of their 2^-n grid; the squares below a level are the 2^-n cells of
    each level-p square outside the staircase set; the last squares carry
    beta * v.  Built by explicit index arithmetic on a dense array.
    """
    s = n * levels + 1
    A = np.zeros((1 << s, 1 << s), dtype=np.int64)
    half = 1 << (n - 1)

    def in_E(a, b):
        qa, qb = a % half, b % half
        return qa.bit_length() + qb.bit_length() <= n - 1

    squares = [(0, 0)]          # corners in units of the current square side
    for p in range(levels):
        side = 1 << (s - n * p)  # current square side in fine cells
        cell = side >> n
        nxt = []
        for X, Y in squares:
            x0, y0 = X * side, Y * side
            for (i, j), sg in (((0, 0), 1), ((half, half), 1), ((half, 0), -1), ((0, half), -1)):
                A[x0 + i * cell: x0 + (i + 1) * cell, y0 + j * cell: y0 + (j + 1) * cell] += sg * beta
            for a in range(1 << n):
                for b in range(1 << n):
                    if not in_E(a, b):
                        nxt.append((X * (1 << n) + a, Y * (1 << n) + b))
        squares = nxt
    side = 1 << (s - n * levels)
    hq = side // 2
    for X, Y in squares:
        x0, y0 = X * side, Y * side
        A[x0: x0 + hq, y0: y0 + hq] += beta
        A[x0 + hq: x0 + side, y0 + hq: y0 + side] += beta
        A[x0 + hq: x0 + side, y0: y0 + hq] -= beta
        A[x0: x0 + hq, y0 + hq: y0 + side] -= beta
    return A, s


def flat_rect_integral(A: np.ndarray, s: int, i: int, j: int, m1: int, m2: int):
    """Exact integral of the flat array over the 1-indexed dyadic rectangle."""
    from fractions import Fraction

    def axis(p, m):
        if m <= s:
            k = 1 << (s - m)
            return slice(p * k, (p + 1) * k), Fraction(1, 1 << s)
        c = p >> (m - s)
        return slice(c, c + 1), Fraction(1, 1 << m)

    sx, lx = axis(i - 1, m1)
    sy, ly = axis(j - 1, m2)
    return Fraction(int(A[sx, sy].sum())) * lx * ly
