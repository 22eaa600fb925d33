"""Kernel families r -> phi_r, their radial majorants and derived statistics.

Every family is stored normalised, so its integral over the circle is 1 (or
tends to 1).  Internally the parameter is ``eps = 1 - r``: near r = 1 the
difference 1 - r cannot be recovered from a rounded r, so evaluators take eps
directly and the ``r`` entry points only convert.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate as sp_integrate

from .circle import TWO_PI, GridFunction, grid, integrate, lp_norm, signed_angle


class IntegrationError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


def _check_eps(eps: float) -> float:
    eps = float(eps)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"kernel parameter needs 0 < r < 1 (got 1 - r = {eps!r})")
    return eps


def eps_of(r: float) -> float:
    return _check_eps(1.0 - float(r))


@dataclass(frozen=True, eq=False)
class KernelFamily:
    name: str
    value_eps: Callable[[float, np.ndarray], np.ndarray]
    partial_eps: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    width_eps: Callable[[float], float] = lambda eps: eps
    sup_eps: Optional[Callable[[float], float]] = None
    max_panel_eps: Optional[Callable[[float], float]] = None
    params: dict = field(default_factory=dict)
    # False when |phi| oscillates away from the peak, so cell weights need the full oversampling
    monotone_tail: bool = True

    # evaluation -----------------------------------------------------------
    def evaluate(self, r: float, t):
        return self.evaluate_eps(eps_of(r), t)

    def evaluate_eps(self, eps: float, t):
        eps = _check_eps(eps)
        t = np.asarray(t, dtype=float)
        return self.value_eps(eps, t)

    @property
    def has_closed_form(self) -> bool:
        return self.partial_eps is not None

    def antiderivative_eps(self, eps: float, t):
        """Continuous antiderivative on the real line (closed-form families only)."""
        if self.partial_eps is None:
            raise NotImplementedError(f"{self.name} has no closed-form partial integral")
        return self.partial_eps(_check_eps(eps), np.asarray(t, dtype=float))

    def partial_integral(self, r: float, a, b):
        return self.partial_integral_eps(eps_of(r), a, b)

    def partial_integral_eps(self, eps: float, a, b):
        """int_a^b phi (a <= b on the real line, any length)."""
        eps = _check_eps(eps)
        if self.partial_eps is not None:
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            out = self.partial_eps(eps, b) - self.partial_eps(eps, a)
            return float(out) if out.ndim == 0 else out
        if np.ndim(a) or np.ndim(b):
            a_arr, b_arr = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
            return np.array([self._quad(eps, x, y) for x, y in zip(a_arr.ravel(), b_arr.ravel())]).reshape(a_arr.shape)
        return self._quad(eps, float(a), float(b))

    def _quad(self, eps: float, a: float, b: float, tol: float = 1e-10) -> float:
        if b < a:
            return -self._quad(eps, b, a, tol)
        w = self.width_eps(eps)
        # breakpoints at every lift of the peak and at graded distances from it
        pts = []
        for k in range(math.floor((a - math.pi) / TWO_PI), math.ceil((b + math.pi) / TWO_PI) + 1):
            c = TWO_PI * k
            for s in (0.0, w, -w, 8 * w, -8 * w, 64 * w, -64 * w):
                if a < c + s < b:
                    pts.append(c + s)
        f = lambda t: float(self.value_eps(eps, np.asarray(t)))
        val, err = sp_integrate.quad(f, a, b, points=sorted(set(pts)) or None, limit=400,
                                     epsabs=1e-14, epsrel=tol)
        if not math.isfinite(val) or err > max(1e-8, 1e-8 * abs(val)):
            raise IntegrationError(f"{self.name}: quadrature error {err:.3g} on [{a}, {b}] at eps={eps}")
        return float(val)

    def width(self, r: float) -> float:
        return self.width_eps(eps_of(r))

    def sup_norm_eps(self, eps: float, N: int = 1 << 14) -> float:
        eps = _check_eps(eps)
        if self.sup_eps is not None:
            return float(self.sup_eps(eps))
        t, _ = self.nodes_eps(eps)
        return float(max(np.max(np.abs(self.value_eps(eps, t))), np.max(np.abs(self.value_eps(eps, grid(N))))))

    # graded quadrature ---------------------------------------------------------
    def nodes_eps(self, eps: float, order: int = 8, core: float = 64.0, ratio: float = 1.25):
        """Gauss-Legendre nodes/weights on [-pi, pi] graded towards the peak at 0."""
        return graded_nodes(self.width_eps(eps), order=order, core=core, ratio=ratio,
                            max_panel=self.max_panel_eps(eps) if self.max_panel_eps else None)

    def lq_norm_eps(self, eps: float, q) -> float:
        if q == math.inf:
            return self.sup_norm_eps(eps)
        t, w = self.nodes_eps(eps)
        return float(np.sum(w * np.abs(self.value_eps(eps, t)) ** q) ** (1.0 / q))

    def __repr__(self) -> str:
        return f"KernelFamily({self.name!r})"


def graded_nodes(width: float, order: int = 8, core: float = 64.0, ratio: float = 1.25,
                 max_panel: float | None = None):
    width = max(float(width), 1e-300)
    edge = min(math.pi, core * width)
    n_core = max(1, int(math.ceil(edge / (width / 4.0))))
    if max_panel is not None:
        n_core = max(n_core, int(math.ceil(edge / max_panel)))
    pos = list(np.linspace(0.0, edge, n_core + 1))
    x = edge
    while x < math.pi:
        step = x * (ratio - 1.0)
        if max_panel is not None:
            step = min(step, max_panel)
        x = min(math.pi, x + step)
        pos.append(x)
    pos = np.asarray(pos)
    edges = np.concatenate([-pos[:0:-1], pos])
    g, gw = leggauss(order)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


# ---------------------------------------------------------------------------
# Poisson


def _poisson_unnormalised(eps: float, t):
    s = np.sin(0.5 * t)
    return eps * (2.0 - eps) / (eps * eps + 4.0 * (1.0 - eps) * s * s)


def _poisson_value(eps, t):
    return _poisson_unnormalised(eps, t) / TWO_PI


def _poisson_antiderivative(eps, t):
    # F(s) = (1/pi) arctan(((1+r)/(1-r)) tan(s/2)) on [-pi, pi), lifted by whole periods
    k = np.floor((t + math.pi) / TWO_PI)
    s = t - TWO_PI * k
    with np.errstate(over="ignore"):
        F = np.arctan((2.0 - eps) / eps * np.tan(0.5 * s)) / math.pi
    return k + F


def poisson(r: float, t):
    """Normalised Poisson kernel P_r(t) / (2 pi)."""
    return POISSON.evaluate(r, t)


POISSON = KernelFamily(
    name="poisson",
    value_eps=_poisson_value,
    partial_eps=_poisson_antiderivative,
    width_eps=lambda eps: eps,
    sup_eps=lambda eps: (2.0 - eps) / (TWO_PI * eps),
)


# ---------------------------------------------------------------------------
# square-root Poisson


@lru_cache(maxsize=None)
def sqrt_poisson_mass(eps: float) -> float:
    """c(r) = int over the circle of sqrt(P_r), P_r unnormalised; adaptive quadrature."""
    eps = _check_eps(eps)
    f = lambda t: math.sqrt(_poisson_unnormalised(eps, t))
    pts = [eps * 10.0 ** j for j in range(0, 40) if eps * 10.0 ** j < math.pi]
    val, err = sp_integrate.quad(f, 0.0, math.pi, points=pts, limit=500, epsabs=0.0, epsrel=1e-10)
    if err > 1e-9 * val:
        raise IntegrationError(f"c(r) quadrature error {err:.3g} at eps={eps}")
    return 2.0 * val


def _frac_value(eps, t):
    return np.sqrt(_poisson_unnormalised(eps, t)) / sqrt_poisson_mass(eps)


def frac_poisson(r: float, t):
    """sqrt(P_r(t)) / c(r): the square-root Poisson family, unit mass by construction."""
    return FRAC_POISSON.evaluate(r, t)


FRAC_POISSON = KernelFamily(
    name="frac_poisson",
    value_eps=_frac_value,
    width_eps=lambda eps: eps,
    sup_eps=lambda eps: math.sqrt((2.0 - eps) / eps) / sqrt_poisson_mass(eps),
)


# ---------------------------------------------------------------------------
# Fejer


def fejer_order(eps: float) -> int:
    """n with r_n = 1 - 1/(n+1) closest to 1 - eps."""
    return max(0, int(round(1.0 / eps - 1.0)))


def fejer_eps(n: int) -> float:
    return 1.0 / (n + 1.0)


def fejer(n: int, t):
    """Fejer kernel, normalised to unit mass; value (n+1)/(2 pi) at t = 0."""
    n = int(n)
    if n < 0:
        raise ValueError("fejer needs n >= 0")
    t = np.asarray(t, dtype=float)
    s = np.sin(0.5 * t)
    m = n + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.sin(0.5 * m * t) / s
    q = np.where(s == 0.0, float(m), q)
    return q * q / (TWO_PI * m)


def _fejer_antiderivative(n: int, t):
    # (1/2pi) [t + 2 sum_{k<=n} (1 - k/(n+1)) sin(kt)/k], chunked over k
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    acc = np.zeros_like(flat)
    for k0 in range(1, n + 1, 2048):
        k = np.arange(k0, min(n, k0 + 2047) + 1, dtype=float)
        coef = 2.0 * (1.0 - k / (n + 1.0)) / k
        acc += np.sin(np.outer(flat, k)) @ coef
    return ((flat + acc) / TWO_PI).reshape(t.shape)


FEJER = KernelFamily(
    name="fejer",
    value_eps=lambda eps, t: fejer(fejer_order(eps), t),
    partial_eps=lambda eps, t: _fejer_antiderivative(fejer_order(eps), t),
    width_eps=lambda eps: 2.0 / (fejer_order(eps) + 1.0),
    sup_eps=lambda eps: (fejer_order(eps) + 1.0) / TWO_PI,
    max_panel_eps=lambda eps: math.pi / (2.0 * (fejer_order(eps) + 1.0)),
    monotone_tail=False,
)


# ---------------------------------------------------------------------------
# auxiliary families


def constant_family() -> KernelFamily:
    """phi_r = 1/(2 pi) for every r: unit mass but no concentration."""
    return KernelFamily(
        name="constant",
        value_eps=lambda eps, t: np.full(np.shape(t), 1.0 / TWO_PI),
        partial_eps=lambda eps, t: np.asarray(t, dtype=float) / TWO_PI,
        width_eps=lambda eps: math.pi,
        sup_eps=lambda eps: 1.0 / TWO_PI,
    )


def scaled(kernel: KernelFamily, c: float, name: str | None = None) -> KernelFamily:
    """c * phi_r (c = -1 gives the sign-flipped family)."""
    part = None
    if kernel.partial_eps is not None:
        part = lambda eps, t: c * kernel.partial_eps(eps, t)
    return KernelFamily(
        name=name or f"{c}*{kernel.name}",
        value_eps=lambda eps, t: c * kernel.value_eps(eps, t),
        partial_eps=part,
        width_eps=kernel.width_eps,
        sup_eps=(lambda eps: abs(c) * kernel.sup_eps(eps)) if kernel.sup_eps else None,
        max_panel_eps=kernel.max_panel_eps,
        monotone_tail=kernel.monotone_tail,
    )


def table_kernel(manifest) -> KernelFamily:
    """Tabulated family from a manifest CSV with columns ``r,path``.

    Each path is a GridFunction CSV; values between grid points are linearly
    interpolated (periodically).  Only the listed r values can be evaluated.
    """
    manifest = Path(manifest)
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"r", "path"}:
        raise ValueError(f"{manifest}: manifest needs header r,path")
    tables = {}
    for row in rows:
        p = Path(row["path"])
        if not p.is_absolute():
            p = manifest.parent / p
        tables[1.0 - float(row["r"])] = GridFunction.from_csv(p).samples.real

    def lookup(eps):
        for key, vals in tables.items():
            if abs(key - eps) <= 1e-12 * max(key, eps):
                return vals
        raise ValueError(f"table kernel has no entry for r = {1 - eps!r}")

    def value(eps, t):
        vals = lookup(eps)
        N = vals.size
        pos = np.mod(np.asarray(t, dtype=float), TWO_PI) / (TWO_PI / N)
        i0 = np.floor(pos).astype(int) % N
        frac = pos - np.floor(pos)
        return (1 - frac) * vals[i0] + frac * vals[(i0 + 1) % N]

    widths = {}
    for key, vals in tables.items():
        N = vals.size
        half = np.max(np.abs(vals)) / 2
        above = np.flatnonzero(np.abs(vals[: N // 2 + 1]) >= half)
        widths[key] = max(1, int(above.max()) + 1) * TWO_PI / N

    return KernelFamily(name=f"table:{manifest}", value_eps=value,
                        width_eps=lambda eps: widths.get(eps, min(widths.values())),
                        sup_eps=lambda eps: float(np.max(np.abs(lookup(eps)))), monotone_tail=False)


def kernel_from_spec(spec: str) -> KernelFamily:
    spec = spec.strip()
    if spec == "poisson":
        return POISSON
    if spec in ("frac_poisson", "sqrt_poisson"):
        return FRAC_POISSON
    if spec == "fejer":
        return FEJER
    if spec == "constant":
        return constant_family()
    if spec.startswith("table:"):
        return table_kernel(spec[len("table:"):])
    raise ValueError(f"unknown kernel {spec!r} (poisson, frac_poisson, fejer, table:<manifest>)")


# ---------------------------------------------------------------------------
# majorant and statistics


def grid_values(kernel: KernelFamily, r: float, N: int) -> np.ndarray:
    return kernel.evaluate(r, signed_angle(grid(N)))


def _majorant_from_samples(vals: np.ndarray) -> np.ndarray:
    N = vals.size
    half = N // 2
    a = np.abs(vals)
    k = np.arange(half + 1)
    radial = np.maximum(a[k], a[(N - k) % N])
    suffix = np.maximum.accumulate(radial[::-1])[::-1]
    out = np.empty(N)
    out[k] = suffix
    out[(N - k) % N] = suffix
    return out


def majorant(kernel: KernelFamily, r: float, N: int) -> GridFunction:
    """phi*_r on the grid: sup of |phi_r(t)| over grid points with |x| <= |t| <= pi."""
    if N < 4 or N % 2:
        raise ValueError("majorant needs an even N >= 4")
    return GridFunction(_majorant_from_samples(grid_values(kernel, r, N)))


@dataclass(frozen=True)
class KernelStats:
    r: float
    N: int
    sup_norm: float
    l1_norm: float
    majorant: GridFunction
    phi_star: float
    majorant_l1: float
    values: GridFunction

    def lq_norm(self, q) -> float:
        return lp_norm(self.values, q)

    def lemma_bounds(self):
        """(lower, phi_star, upper, holds) with lower = (1/5)/log sup_norm.

        lower is None (check skipped) when sup_norm < e.
        """
        upper = self.majorant_l1 * (1 + 1e-6)
        if self.sup_norm < math.e:
            return None, self.phi_star, upper, self.phi_star <= upper
        lower = 0.2 / math.log(self.sup_norm)
        return lower, self.phi_star, upper, lower <= self.phi_star <= upper

    def explicit_lower_bound(self) -> float:
        """(1/2 - pi/sup)/(2 log sup), valid for unit-mass kernels whenever sup > 1."""
        s = self.sup_norm
        mass = self.l1_norm
        return (0.5 * mass - math.pi / s) / (2.0 * math.log(s)) if s > 1 else -math.inf


def kernel_stats(kernel: KernelFamily, r: float, N: int) -> KernelStats:
    if N < 4 or N % 2:
        raise ValueError("kernel_stats needs an even N >= 4")
    vals = grid_values(kernel, r, N)
    maj = _majorant_from_samples(vals)
    x = signed_angle(grid(N))
    x[N // 2] = math.pi
    vf = GridFunction(vals)
    mf = GridFunction(maj)
    return KernelStats(
        r=float(r), N=N,
        sup_norm=float(np.max(np.abs(vals))),
        l1_norm=lp_norm(vf, 1),
        majorant=mf,
        phi_star=float(np.max(np.abs(x * maj))),
        majorant_l1=integrate(mf),
        values=vf,
    )


def phi_star_eps(kernel: KernelFamily, eps: float, N: int | None = None) -> float:
    """sup_x |x phi*_r(x)|.  With N: on the uniform grid; otherwise on graded nodes.

    The graded version resolves peaks far narrower than any affordable uniform grid.
    """
    if N is not None:
        return kernel_stats(kernel, 1.0 - eps, N).phi_star
    t, _ = kernel.nodes_eps(eps, order=4)
    t = np.unique(np.concatenate([np.abs(t), [math.pi]]))
    a = np.abs(kernel.value_eps(eps, t))
    maj = np.maximum.accumulate(a[::-1])[::-1]
    return float(np.max(t * maj))


def majorant_l1_eps(kernel: KernelFamily, eps: float) -> float:
    """||phi*_r||_1 on the graded nodes: suffix max of |phi| by |t|, Gauss weights.

    A uniform grid charges a sub-cell peak to a whole cell, which inflates this
    mass far beyond 1 once the peak is narrower than 2 pi / N.
    """
    t, w = kernel.nodes_eps(eps)
    a = np.abs(kernel.value_eps(eps, t))
    order = np.argsort(-np.abs(t), kind="stable")
    maj = np.empty_like(a)
    maj[order] = np.maximum.accumulate(a[order])
    return float(np.sum(w * maj))


# ---------------------------------------------------------------------------
# axioms and regularity

OFFSETS = (math.pi / 8, math.pi / 4, math.pi / 2)


@dataclass
class AxiomsReport:
    kernel: str
    r_values: list
    N: int
    mass_deviation: list
    mass_method: str
    tail_mass_deviation: float
    majorant_at_offsets: dict
    majorant_l1: list
    c_phi_proxy: float
    phi1_ok: bool
    phi2_ok: bool
    phi3_ok: bool
    flags: list

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _mass(kernel: KernelFamily, eps: float, N: int):
    if kernel.has_closed_form:
        return float(kernel.partial_integral_eps(eps, -math.pi, math.pi)), "closed_form"
    try:
        return float(kernel.partial_integral_eps(eps, -math.pi, math.pi)), "quadrature"
    except IntegrationError:
        return integrate(GridFunction(kernel.evaluate_eps(eps, grid(N)))), "grid"


def axioms_check(kernel: KernelFamily, r_sequence, N: int, tol: float | None = None,
                 decay_ratio: float = 0.5, c_phi_bound: float = math.inf) -> AxiomsReport:
    """Finite checks of unit mass, majorant decay and bounded majorant mass.

    Violations are flagged in the report; nothing raises.
    """
    r_values = [float(r) for r in r_sequence]
    devs, l1s = [], []
    offs = {o: [] for o in OFFSETS}
    method = None
    idx = {o: int(round(o / (TWO_PI / N))) for o in OFFSETS}
    for r in r_values:
        eps = 1.0 - r
        m, method = _mass(kernel, eps, N)
        devs.append(abs(m - 1.0))
        st = kernel_stats(kernel, r, N)
        l1s.append(majorant_l1_eps(kernel, eps))
        for o in OFFSETS:
            offs[o].append(float(st.majorant.samples[idx[o]]))
    if tol is None:
        tol = 1e-9 if method == "closed_form" else 1e-8
    tail = devs[len(devs) - max(1, len(devs) // 3):]
    tail_dev = max(tail)
    phi1 = tail_dev <= tol
    phi2 = True
    for o, vals in offs.items():
        tv = vals[len(vals) - max(2, len(vals) // 3):]
        nonincreasing = all(b <= a * (1 + 1e-12) for a, b in zip(tv, tv[1:]))
        decays = vals[-1] <= decay_ratio * max(vals)
        phi2 = phi2 and nonincreasing and decays
    c_phi = max(l1s)
    phi3 = math.isfinite(c_phi) and c_phi <= c_phi_bound
    flags = [name for name, ok in (("phi1", phi1), ("phi2", phi2), ("phi3", phi3)) if not ok]
    return AxiomsReport(
        kernel=kernel.name, r_values=r_values, N=N, mass_deviation=devs, mass_method=method,
        tail_mass_deviation=tail_dev, majorant_at_offsets={f"{o:.6f}": v for o, v in offs.items()},
        majorant_l1=l1s, c_phi_proxy=c_phi, phi1_ok=phi1, phi2_ok=phi2, phi3_ok=phi3, flags=flags,
    )


@dataclass(frozen=True)
class RegularityReport:
    nonnegative: bool
    monotone: bool

    def __bool__(self) -> bool:
        return self.nonnegative and self.monotone


def regularity_check(kernel: KernelFamily, r: float, N: int) -> RegularityReport:
    """Non-negative on the grid, nonincreasing on [0, pi] and nondecreasing on [-pi, 0]."""
    vals = grid_values(kernel, r, N)
    half = N // 2
    k = np.arange(half + 1)
    right = vals[k]
    left = vals[(N - k) % N]
    mono = bool(np.all(np.diff(right) <= 0) and np.all(np.diff(left) <= 0))
    return RegularityReport(nonnegative=bool(np.all(vals >= 0)), monotone=mono)
