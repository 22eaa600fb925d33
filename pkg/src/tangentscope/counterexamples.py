"""Finite-depth divergence constructions: combs, Littlewood sets, alternating
sets, an L1 function with unbounded curve means, and Blaschke products.

Every constructor fixes a concrete schedule for the sequences that the proofs
only assert to exist, so a build is a pure function of its inputs.  Stage
parameters are kept as ``eps = 1 - r`` because later stages sit far below the
resolution of ``r`` in double precision.

Sets produced by repeated comb operations are held as :class:`CombLayers`: the
list of combs and the operations joining them.  Evaluating a convolution near a
point only materialises the teeth close to it, in coordinates relative to that
point, so teeth a few ulps wide (relative to 2pi) keep their full precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .circle import TWO_PI, ArcSet, GridFunction, grid, signed_angle
from .kernels import KernelFamily
from .operators import WeightedArcs, _cdf, arc_convolve_eps
from .regions import ApproachCurve, pi_infty, pi_plain, pi_star, r_string

EPS_FLOOR = 2.0 ** -40
DEEP_EPS_FLOOR = 2.0 ** -120
TAIL_TOL = 1e-9
MAX_GLOBAL_TEETH = 4_000_000
DEFAULT_SEED = 20240229
SIGN_PIECES = 32


class ConstructionRefused(RuntimeError):
    """A construction's hypothesis is contradicted by the computed estimates."""

    def __init__(self, message: str, diagnostic: dict):
        super().__init__(message)
        self.diagnostic = dict(diagnostic)


# ---------------------------------------------------------------------------
# combs


@dataclass(frozen=True)
class CombSpec:
    n: int
    delta: float
    phase: str = "even_centers"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("comb needs a positive integer tooth count")
        # teeth are disjoint exactly when delta < 1
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"comb delta must lie in (0, 1), got {self.delta!r}")
        if self.phase not in ("even_centers", "odd_centers"):
            raise ValueError(f"unknown comb phase {self.phase!r}")

    @property
    def shift(self) -> int:
        return 0 if self.phase == "even_centers" else 1

    @property
    def half_width(self) -> float:
        return math.pi * self.delta / self.n

    def measure(self) -> float:
        return TWO_PI * self.delta


def comb_set(spec: CombSpec) -> ArcSet:
    """n arcs of length 2 pi delta / n centred at pi (2j + s) / n."""
    j = np.arange(spec.n, dtype=float)
    c = math.pi * (2.0 * j + spec.shift) / spec.n
    return ArcSet.from_arrays(c - spec.half_width, c + spec.half_width)


def _fraction_split(n2: int, u: Fraction):
    """n2 * u = q + rho with q an integer and 0 <= rho < 1 (rho rounded once)."""
    v = n2 * u
    q = math.floor(v)
    return q, float(v - q)


def _line_combine(a, b, rule):
    """Pointwise set operation on sorted disjoint intervals of the real line."""
    (as_, ae), (bs, be) = a, b
    pts = np.unique(np.concatenate([as_, ae, bs, be]))
    if pts.size < 2:
        return np.zeros(0), np.zeros(0)
    lo, hi = pts[:-1], pts[1:]
    mid = 0.5 * (lo + hi)

    def member(s, e):
        if s.size == 0:
            return np.zeros(mid.size, dtype=bool)
        i = np.searchsorted(s, mid, side="right") - 1
        ok = i >= 0
        return ok & (mid < e[np.clip(i, 0, None)])

    keep = rule(member(as_, ae), member(bs, be))
    lo, hi = lo[keep], hi[keep]
    if lo.size == 0:
        return lo, hi
    # merge touching pieces
    new = np.concatenate([[True], lo[1:] > hi[:-1]])
    idx = np.flatnonzero(new)
    last = np.append(idx[1:] - 1, lo.size - 1)
    return lo[idx], hi[last]


_RULES = {
    "union": np.logical_or,
    "difference": lambda p, q: p & ~q,
    "symdiff": np.logical_xor,
}


class CombLayers:
    """E = (((U_1 op_2 U_2) op_3 U_3) ...) with each U_k a comb."""

    def __init__(self, combs: Sequence[CombSpec] = (), ops: Sequence[str] = ()):
        self.combs: list[CombSpec] = []
        self.ops: list[str] = []
        self._arcset: Optional[ArcSet] = None
        for c, op in zip(combs, ops):
            self.push(c, op)

    def push(self, comb: CombSpec, op: str) -> None:
        if not self.combs:
            op = "first"
        elif op not in _RULES:
            raise ValueError(f"unknown layer operation {op!r}")
        self.combs.append(comb)
        self.ops.append(op)
        self._arcset = None

    def prefix(self, k: int) -> "CombLayers":
        return CombLayers(self.combs[:k], self.ops[:k])

    @property
    def n_teeth(self) -> int:
        return int(sum(c.n for c in self.combs))

    def arcset(self) -> ArcSet:
        """The set as a stored ArcSet (refused when it would be too large)."""
        if self._arcset is None:
            if self.n_teeth > MAX_GLOBAL_TEETH:
                raise MemoryError(f"{self.n_teeth} teeth exceed the materialisation cap {MAX_GLOBAL_TEETH}")
            E = ArcSet.empty()
            for c, op in zip(self.combs, self.ops):
                U = comb_set(c)
                E = U if op == "first" else {"union": E | U, "difference": E - U, "symdiff": E ^ U}[op]
            self._arcset = E
        return self._arcset

    def local(self, u: Fraction, R: float):
        """E intersected with [2pi u - R, 2pi u + R], as offsets from 2pi u (R < pi)."""
        if not R < math.pi:
            raise ValueError("local window must be shorter than a half turn")
        out = (np.zeros(0), np.zeros(0))
        for c, op in zip(self.combs, self.ops):
            q, rho = _fraction_split(2 * c.n, u)
            hw = c.half_width
            reach = (R + hw) * c.n / math.pi
            m_lo = math.ceil(rho - reach)
            if (m_lo - (c.shift - q)) % 2:
                m_lo += 1
            m = np.arange(m_lo, math.floor(rho + reach) + 1, 2, dtype=np.int64)
            centre = math.pi * (m.astype(float) - rho) / c.n
            s = np.clip(centre - hw, -R, R)
            e = np.clip(centre + hw, -R, R)
            keep = e > s
            layer = (s[keep], e[keep])
            out = layer if op == "first" else _line_combine(out, layer, _RULES[op])
        return out

    def measure(self) -> float:
        return self.arcset().measure()

    def describe(self) -> list[dict]:
        return [{"n": c.n, "delta": c.delta, "phase": c.phase, "op": op} for c, op in zip(self.combs, self.ops)]


def _window(kernel: KernelFamily, eps: float, tol: float = TAIL_TOL):
    """Half-width W with kernel mass outside (-W, W) at most tol; (pi, 0) if none shorter."""
    W = 1024.0 * kernel.width_eps(eps)
    while W < math.pi:
        tail = 1.0 - kernel.partial_integral_eps(eps, -W, W)
        if tail <= tol:
            return W, max(tail, 0.0)
        W *= 2.0
    return math.pi, 0.0


def layered_value(kernel: KernelFamily, eps: float, E: CombLayers, u: Fraction, eta, tol: float = TAIL_TOL):
    """Phi_r(2 pi u + eta, 1_E) and a bound on the neglected kernel tail."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    W, tail = _window(kernel, eps, tol)
    if W >= math.pi:
        y = TWO_PI * float(u) + eta
        return np.atleast_1d(arc_convolve_eps(kernel, eps, E.arcset(), y)), 0.0
    s, e = E.local(u, float(np.max(np.abs(eta))) + W)
    G = _cdf(kernel, eps)
    vals = np.array([float(np.sum(G(h - s) - G(h - e))) for h in eta])
    return vals, tail


# ---------------------------------------------------------------------------
# shared helpers


@dataclass(frozen=True)
class Witness:
    """One sampled divergence witness.  ``eps_second``/``value_second`` are unused by
    constructions that compare values across stages instead of within one."""

    stage: int
    x: float
    eps_prime: float
    value_prime: float
    eps_second: Optional[float] = None
    value_second: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"stage": self.stage, "x": self.x, "eps_prime": self.eps_prime, "r_prime": r_string(self.eps_prime),
             "value_prime": self.value_prime}
        if self.eps_second is not None:
            d.update(eps_second=self.eps_second, r_second=r_string(self.eps_second), value_second=self.value_second)
        d.update(self.extra)
        return d


def sample_points(n: int, seed: int = DEFAULT_SEED):
    """Seeded sample points x = 2 pi u, with u kept as an exact dyadic Fraction."""
    u = np.random.default_rng(seed).random(n)
    fr = [Fraction(float(v)) for v in u]
    return [TWO_PI * float(v) for v in fr], fr


def _mass(kernel, eps, half):
    return float(kernel.partial_integral_eps(eps, -half, half))


def _refuse(constructor: str, reason: str, message: str, **data):
    raise ConstructionRefused(message, {"constructor": constructor, "reason": reason, **data})


def _check_nonnegative(kernel, eps, N, who, stage):
    lo = float(np.min(kernel.value_eps(eps, grid(N))))
    if lo < 0:
        _refuse(who, "kernel_sign", f"kernel takes negative values on the grid at stage {stage}",
                stage=stage, eps=eps, min_value=lo)


def _scan_down(start: float, floor: float, accept):
    e = start
    while e >= floor:
        if accept(e):
            return e
        e *= 0.5
    return None


def _pi_star_value(kernel, curve):
    return pi_star(kernel, curve).estimate


# ---------------------------------------------------------------------------
# Littlewood set


@dataclass(frozen=True)
class LittlewoodStage:
    k: int
    delta: float
    eps_u: float
    eps_v: float
    n: int
    lam_u: float
    lam_v: float
    mass_u: float
    mass_v: float
    target: float

    @property
    def comb(self) -> CombSpec:
        return CombSpec(self.n, 5.0 * self.delta, "even_centers")

    def as_dict(self) -> dict:
        return {"k": self.k, "delta": self.delta, "eps_u": self.eps_u, "u": r_string(self.eps_u),
                "eps_v": self.eps_v, "v": r_string(self.eps_v), "n": self.n, "lambda_u": self.lam_u,
                "lambda_v": self.lam_v, "mass_u": self.mass_u, "mass_v": self.mass_v, "mass_target": self.target}


@dataclass
class LittlewoodBuild:
    depth: int
    pi_star_estimate: float
    stages: list
    layers: CombLayers
    witnesses: list
    oscillation: np.ndarray
    continuity_surrogate: list

    @property
    def E(self) -> ArcSet:
        return self.layers.arcset()

    def fraction_at_least(self, level: float = 0.5) -> float:
        return float(np.mean(self.oscillation >= level))


def littlewood_set(kernel: KernelFamily, curve: ApproachCurve, K: int, N: int = 4096, *,
                   samples: int = 256, seed: int = DEFAULT_SEED, pi_star_value: Optional[float] = None
                   ) -> LittlewoodBuild:
    """Set E_K whose curve means oscillate by about 2 Pi* - 1 at every point."""
    who = "littlewood"
    if K < 1:
        raise ValueError("depth must be at least 1")
    P = _pi_star_value(kernel, curve) if pi_star_value is None else float(pi_star_value)
    if not P > 0.5:
        _refuse(who, "pi_star_too_small", f"Pi* estimate {P:.4g} <= 1/2: no Littlewood set for this curve",
                pi_star=P, threshold=0.5)
    stages = []
    layers = CombLayers()
    prev_v = 1.0
    for k in range(1, K + 1):
        delta = 2.0 ** (-k - 6)
        target = P * (1.0 - 2.0 ** -k)

        def mass_ok(e, delta=delta, target=target):
            lam = curve.at_eps(e)
            return lam < math.pi and _mass(kernel, e, delta * lam) > target

        eu = _scan_down(min(2.0 ** -k, 0.5 * prev_v), EPS_FLOOR, mass_ok)
        if eu is None:
            _refuse(who, "mass_unreachable", f"stage {k}: mass condition unreachable before r = 1 - 2^-40",
                    stage=k, pi_star=P, target=target)
        lam_u = curve.at_eps(eu)
        ev = _scan_down(0.5 * eu, EPS_FLOOR,
                        lambda e: 3.0 * curve.at_eps(e) <= lam_u and _mass(kernel, e, delta * lam_u) > target)
        if ev is None:
            _refuse(who, "v_unreachable", f"stage {k}: no v with 3 lambda(v) <= lambda(u)", stage=k)
        _check_nonnegative(kernel, eu, N, who, k)
        _check_nonnegative(kernel, ev, N, who, k)
        n = int(math.floor(5.0 * math.pi / lam_u))
        if stages and n <= stages[-1].n:
            _refuse(who, "teeth_not_increasing", f"stage {k}: tooth count did not increase", stage=k)
        st = LittlewoodStage(k, delta, eu, ev, n, lam_u, curve.at_eps(ev), _mass(kernel, eu, delta * lam_u),
                             _mass(kernel, ev, delta * lam_u), target)
        stages.append(st)
        layers.push(st.comb, "union" if k % 2 else "difference")
        prev_v = ev

    # continuity surrogate: sup-norm on [0, v_k] times the measure of later combs
    surrogate = []
    for st in stages:
        later = sum(s.comb.measure() for s in stages if s.k > st.k)
        value = kernel.sup_norm_eps(st.eps_v) * later
        surrogate.append({"k": st.k, "value": value, "bound": 2.0 ** -st.k, "holds": value < 2.0 ** -st.k})

    xs, us = sample_points(samples, seed)
    witnesses = []
    table = np.empty((samples, K))
    for i, (x, u) in enumerate(zip(xs, us)):
        for st in stages:
            j0 = math.floor(st.n * u) + 2
            d = TWO_PI * float(j0 - st.n * u) / st.n
            e1 = curve.solve_eps(d, st.eps_v, st.eps_u)
            val, tail = layered_value(kernel, e1, layers, Fraction(j0, st.n), 0.0)
            table[i, st.k - 1] = val[0]
            witnesses.append(Witness(st.k, x, e1, float(val[0]), extra={"j0": j0, "tail_bound": tail}))
    osc = table.max(axis=1) - table.min(axis=1)
    return LittlewoodBuild(K, P, stages, layers, witnesses, osc, surrogate)


# ---------------------------------------------------------------------------
# alternating set


@dataclass(frozen=True)
class AlternatingStage:
    k: int
    delta: float
    eps: float
    n: int
    lam: float
    mass: float
    sup_norm: float
    min_adjacent: float

    @property
    def comb(self) -> CombSpec:
        return CombSpec(self.n, self.delta, "odd_centers")

    def as_dict(self) -> dict:
        return {"k": self.k, "delta": self.delta, "eps": self.eps, "r": r_string(self.eps), "n": self.n,
                "lambda": self.lam, "mass": self.mass, "sup_norm": self.sup_norm,
                "min_adjacent_interval": self.min_adjacent}


@dataclass
class AlternatingBuild:
    depth: int
    pi_infty_estimate: float
    stages: list
    layers: CombLayers
    oscillation: np.ndarray        # samples x stages, computed with E_k
    perturbation: np.ndarray       # per stage: bound on |Phi(E_K) - Phi(E_k)|
    xs: list

    @property
    def E(self) -> ArcSet:
        return self.layers.arcset()

    def certified(self) -> np.ndarray:
        """Lower bounds for the oscillation of the depth-K set."""
        return self.oscillation - 2.0 * self.perturbation[None, :]

    def bounds(self) -> np.ndarray:
        return np.array([self.pi_infty_estimate / 8.0 - 16.0 * s.delta for s in self.stages])


def _min_adjacent(A: ArcSet) -> float:
    if len(A) == 0:
        return TWO_PI
    gaps = np.append(A.starts[1:] - A.ends[:-1], A.starts[0] + TWO_PI - A.ends[-1])
    lens = A.ends - A.starts
    return float(min(lens.min(), gaps.min()))


def alternating_set(kernel: KernelFamily, curve: ApproachCurve, K: int, N: int = 4096, *,
                    samples: int = 128, seed: int = DEFAULT_SEED, theta_points: int = 257,
                    pi_infty_value: Optional[float] = None) -> AlternatingBuild:
    """E_K = U_1 symmetric-difference ... U_K with odd-centred combs."""
    who = "alternating"
    if K < 1:
        raise ValueError("depth must be at least 1")
    P = pi_infty(kernel, curve).estimate if pi_infty_value is None else float(pi_infty_value)
    if not P >= 0.05:
        _refuse(who, "pi_infty_too_small", f"Pi_infty estimate {P:.4g} < 0.05: the set would not oscillate",
                pi_infty=P, threshold=0.05)
    stages = []
    layers = CombLayers()
    prev_eps = 0.5
    max_sup = 0.0
    for k in range(1, K + 1):
        delta = 0.25 if k == 1 else min(stages[-1].delta / 2.0, P / (2.0 ** (k + 5) * max_sup))
        adj = _min_adjacent(layers.arcset()) if k > 1 else TWO_PI
        cap = P / (16.0 * math.pi)

        def ok(e, delta=delta, adj=adj):
            lam = curve.at_eps(e)
            if not lam <= math.pi / 8.0:
                return False
            if _mass(kernel, e, delta * lam) <= P / 2.0:
                return False
            return k == 1 or float(kernel.value_eps(e, np.array([adj / 4.0]))[0]) < cap

        # the delta_j discipline pushes eps_k to about eps_{k-1}^2 / 1e4, below 2^-40 by k = 3
        e = _scan_down(min(2.0 ** -1, 0.5 * prev_eps) if k > 1 else 0.5, DEEP_EPS_FLOOR, ok)
        if e is None:
            _refuse(who, "mass_unreachable", f"stage {k}: selection conditions unreachable before r = 1 - 2^-120",
                    stage=k, pi_infty=P)
        _check_nonnegative(kernel, e, N, who, k)
        lam = curve.at_eps(e)
        sup = kernel.sup_norm_eps(e)
        st = AlternatingStage(k, delta, e, int(math.floor(math.pi / lam)), lam, _mass(kernel, e, delta * lam), sup, adj)
        stages.append(st)
        layers.push(st.comb, "symdiff")
        prev_eps = e
        max_sup = max(max_sup, sup)

    later = [sum(s.comb.measure() for s in stages if s.k > st.k) for st in stages]
    perturbation = np.array([st.sup_norm * m for st, m in zip(stages, later)])
    xs, us = sample_points(samples, seed)
    osc = np.empty((samples, K))
    for k, st in enumerate(stages, start=1):
        Ek = layers.prefix(k)
        grid_eta = np.linspace(-st.lam, st.lam, theta_points + 2)[1:-1]
        for i, u in enumerate(us):
            # comb centres inside the window carry the extreme values
            q, rho = _fraction_split(2 * st.n, u)
            m0 = math.ceil(rho - 2.0 * st.n * st.lam / TWO_PI) - 1
            m = np.arange(m0, m0 + 6)
            m = m[(m - (1 - q)) % 2 == 0]
            centres = math.pi * (m - rho) / st.n
            centres = centres[np.abs(centres) < st.lam]
            vals, _ = layered_value(kernel, st.eps, Ek, u, np.concatenate([grid_eta, centres]))
            osc[i, k - 1] = float(vals.max() - vals.min())
    return AlternatingBuild(K, P, stages, layers, osc, perturbation, xs)


# ---------------------------------------------------------------------------
# L1 function with divergent curve means


@dataclass(frozen=True)
class L1Stage:
    k: int
    eps: float
    lam: float
    sup_norm: float
    x_peak: float
    delta: float
    n: int
    teeth_measure: float
    growth: float

    def as_dict(self) -> dict:
        return {"k": self.k, "eps": self.eps, "r": r_string(self.eps), "lambda": self.lam, "sup_norm": self.sup_norm,
                "x_peak": self.x_peak, "delta": self.delta, "n": self.n, "teeth_measure": self.teeth_measure,
                "growth_target": self.growth}


@dataclass
class L1Build:
    depth: int
    stages: list
    parts: list            # WeightedArcs f_{r_k}, unit L1 norm each
    f_arcs: WeightedArcs   # sum 2^-k f_{r_k}
    f: GridFunction
    witnesses: list
    values: np.ndarray     # samples x stages, Phi_{r_k}(x - theta, f)
    own_values: np.ndarray  # samples x stages, Phi_{r_k}(x - theta, f_{r_k})

    def l1_norm(self) -> float:
        return self.f_arcs.l1_norm()


def _peak(kernel, eps, N):
    t = np.concatenate([[0.0], grid(N)])
    v = np.abs(kernel.value_eps(eps, t))
    i = int(np.argmax(v))
    return float(signed_angle(t[i])), float(v[i])


def l1_divergent_function(kernel: KernelFamily, curve: ApproachCurve, K: int, N: int = 4096, *,
                          samples: int = 128, seed: int = DEFAULT_SEED, check_pi: bool = True) -> L1Build:
    """f = sum_k 2^-k f_{r_k}, each f_{r_k} a signed normalised comb of unit L1 norm."""
    who = "l1div"
    if K < 1:
        raise ValueError("depth must be at least 1")
    if check_pi:
        est = pi_plain(kernel, curve)
        if est.trend != "increasing":
            _refuse(who, "pi_finite", f"lambda * sup norm shows a {est.trend} trend (tail max {est.tail_max:.4g}); "
                    "the construction needs it to diverge", trend=est.trend, tail_max=est.tail_max)
    stages, parts = [], []
    prev = 1.0
    for k in range(1, K + 1):
        inv = max((1.0 / s.teeth_measure for s in stages), default=0.0)
        growth = 2.0 ** (k + 3) * (1 + k + inv)

        def ok(e):
            lam = curve.at_eps(e)
            return lam < math.pi and lam * kernel.sup_norm_eps(e) >= growth

        e = _scan_down(min(2.0 ** -k, 0.5 * prev), EPS_FLOOR, ok)
        if e is None:
            _refuse(who, "growth_unreachable", f"stage {k}: lambda * sup norm never reaches {growth:.4g} "
                    "before r = 1 - 2^-40", stage=k, target=growth)
        lam = curve.at_eps(e)
        sup = kernel.sup_norm_eps(e)
        xr, _ = _peak(kernel, e, N)
        # shrink the window until three quarters of it sees |phi| > sup/2
        d = lam / 4.0
        probe = (np.arange(256) + 0.5) / 256.0
        while d > 1e-300:
            t = xr - d + 2.0 * d * probe
            if np.mean(np.abs(kernel.value_eps(e, t)) > sup / 2.0) > 0.75:
                break
            d *= 0.5
        n = int(math.floor(4.0 * math.pi / lam))
        if 2.0 * d >= TWO_PI / n:
            _refuse(who, "teeth_overlap", f"stage {k}: teeth of width {2 * d:.3g} overlap", stage=k)
        centres = TWO_PI * np.arange(n) / n
        # sgn phi(x_r - (t - c_j)) is the same function of t - c_j on every tooth
        off = -d + 2.0 * d * (np.arange(SIGN_PIECES) + 0.5) / SIGN_PIECES
        sgn = np.sign(kernel.value_eps(e, xr - off))
        meas = n * 2.0 * d
        if np.all(sgn == sgn[0]):
            part = WeightedArcs(centres - d, centres + d, np.full(n, sgn[0] / meas))
        else:
            lo = (centres[:, None] + off[None, :] - d / SIGN_PIECES).ravel()
            part = WeightedArcs(lo, lo + 2.0 * d / SIGN_PIECES, np.tile(sgn / meas, n))
        st = L1Stage(k, e, lam, sup, xr, d, n, meas, growth)
        stages.append(st)
        parts.append(part)
        prev = e
    weighted = [WeightedArcs(p.starts, p.ends, p.weights * 2.0 ** -(i + 1)) for i, p in enumerate(parts)]
    f_arcs = WeightedArcs.concat(weighted)

    xs, _ = sample_points(samples, seed)
    values = np.empty((samples, K))
    own = np.empty((samples, K))
    witnesses = []
    for i, x in enumerate(xs):
        for st, part in zip(stages, parts):
            k0 = math.floor(st.n * x / TWO_PI)
            y = st.x_peak + TWO_PI * k0 / st.n          # = x - theta
            theta = x - y
            v = float(arc_convolve_eps(kernel, st.eps, f_arcs, y))
            o = float(arc_convolve_eps(kernel, st.eps, part, y))
            values[i, st.k - 1] = v
            own[i, st.k - 1] = o
            witnesses.append(Witness(st.k, x, st.eps, v, extra={
                "theta": theta, "admissible": abs(theta) < st.lam, "own_value": o,
                "derivable_bound": 3.0 * st.lam * st.sup_norm / (32.0 * math.pi),
                "stated_bound": 3.0 * st.lam * st.sup_norm / 16.0}))
    return L1Build(K, stages, parts, f_arcs, f_arcs.cell_averages(N), witnesses, values, own)


# ---------------------------------------------------------------------------
# Blaschke products


def _factor_from_phase(alpha, q):
    w = np.exp(1j * np.asarray(alpha, dtype=float))
    return (w - q) / (q * w - 1.0)


def _q(delta: float) -> float:
    return math.exp(-math.sqrt(delta))


def finite_blaschke(n: int, delta: float, x) -> complex:
    """b(n, delta, e^{ix}) = (z^n - rho^n) / (rho^n z^n - 1), rho = exp(-sqrt(delta) / n).

    The phase n x is reduced in floating point; for very large n pass exact
    phases to the Blaschke helpers instead.
    """
    if n < 1 or not 0.0 < delta < 1.0:
        raise ValueError("finite_blaschke needs n >= 1 and 0 < delta < 1")
    alpha = math.fmod(n * float(x), TWO_PI)
    return complex(_factor_from_phase(alpha, _q(delta)))


def _signed_phase(alpha):
    a = np.mod(np.asarray(alpha, dtype=float) + math.pi, TWO_PI) - math.pi
    return a


def blaschke_bounds_check(n: int, delta: float, N: int = 4096):
    """(max |b + 1| on U(n, delta), max |b - 1| off U(n, delta^(1/4))).

    Grid points theta_m = 2 pi m / N have exact phases 2 pi (n m mod N) / N.  The
    region boundaries (phases +-pi delta and +-pi delta^(1/4)) are added because
    both maxima are attained there and a coarse grid may miss the comb entirely.
    """
    if not delta ** 0.25 < 0.5:
        raise ValueError("bounds check needs delta^(1/4) < 1/2")
    m = np.arange(N, dtype=np.int64)
    alpha = _signed_phase(TWO_PI * ((n * m) % N) / N)
    q = _q(delta)
    on_edge = math.pi * delta
    off_edge = math.pi * delta ** 0.25
    a_on = np.concatenate([alpha[np.abs(alpha) < on_edge], [on_edge, -on_edge]])
    a_off = np.concatenate([alpha[np.abs(alpha) >= off_edge], [off_edge, -off_edge]])
    max_on = float(np.max(np.abs(_factor_from_phase(a_on, q) + 1.0)))
    max_off = float(np.max(np.abs(_factor_from_phase(a_off, q) - 1.0)))
    return max_on, max_off


def unimodularity_drift(values) -> float:
    return float(np.max(np.abs(np.abs(np.asarray(values)) - 1.0)))


@dataclass(frozen=True)
class BlaschkeSpec:
    factors: tuple  # ((n_k, delta_k), ...)

    def rho(self, k: int) -> float:
        n, d = self.factors[k]
        return math.exp(-math.sqrt(d) / n)

    def phases(self, num: int, den: int, upto: Optional[int] = None):
        """Exact phases n_j * 2 pi num / den (mod 2 pi), as floats."""
        fs = self.factors[:upto]
        return np.array([TWO_PI * ((n * num) % den) / den for n, _ in fs])

    def value_at_phases(self, alpha, upto: Optional[int] = None):
        """prod_j b_j given each factor's phase; alpha has shape (..., factors)."""
        alpha = np.asarray(alpha, dtype=float)
        out = np.ones(alpha.shape[:-1], dtype=complex)
        for j, (_, d) in enumerate(self.factors[:upto]):
            out = out * _factor_from_phase(alpha[..., j], _q(d))
        return out

    def boundary_values(self, N: int, upto: Optional[int] = None) -> GridFunction:
        m = np.arange(N, dtype=object)
        cols = [np.array([TWO_PI * int((n * int(v)) % N) / N for v in m]) for n, _ in self.factors[:upto]]
        alpha = np.stack(cols, axis=-1) if cols else np.zeros((N, 0))
        return GridFunction(self.value_at_phases(alpha, upto))

    def interior(self, eps: float, num: int, den: int, upto: Optional[int] = None) -> complex:
        """B((1 - eps) e^{iy}) at y = 2 pi num / den: the Poisson integral of the boundary values."""
        out = 1.0 + 0j
        for (n, d), a in zip(self.factors[:upto], self.phases(num, den, upto)):
            wn = math.exp(n * math.log1p(-eps)) * complex(math.cos(a), math.sin(a))
            qn = _q(d)
            out *= (wn - qn) / (qn * wn - 1.0)
        return out

    def lipschitz(self, upto: Optional[int] = None) -> float:
        """Upper bound for |B'| on the circle: sum n_j (1 + q_j) / (1 - q_j)."""
        s = 0.0
        for n, d in self.factors[:upto]:
            q = _q(d)
            s += n * (1.0 + q) / (-math.expm1(-math.sqrt(d)))
        return s


@dataclass(frozen=True)
class BlaschkeStage:
    k: int
    delta: float
    eps_u: float
    eps_v: float
    n: int
    lam_u: float
    lam_v: float
    mass_u: float
    plus_bound: float
    minus_bound: float
    omega_bound: float
    omega_measured: float

    def as_dict(self) -> dict:
        return {"k": self.k, "delta": self.delta, "eps_u": self.eps_u, "u": r_string(self.eps_u),
                "eps_v": self.eps_v, "v": r_string(self.eps_v), "n": self.n, "lambda_u": self.lam_u,
                "lambda_v": self.lam_v, "mass_u": self.mass_u, "max_b_plus_1_on_comb": self.plus_bound,
                "max_b_minus_1_off_comb": self.minus_bound, "omega_bound": self.omega_bound,
                "omega_measured": self.omega_measured}


@dataclass
class BlaschkeBuild:
    depth: int
    pi_star_estimate: float
    spec: BlaschkeSpec
    stages: list
    boundary: GridFunction
    witnesses: list
    differences: np.ndarray   # samples x stages

    def fraction_at_least(self, level: float = 0.5, stage: Optional[int] = None) -> float:
        k = self.depth if stage is None else stage
        return float(np.mean(self.differences[:, k - 1] >= level))


def _factor_extremes(delta: float, points: int = 1025):
    q = _q(delta)
    a_on = np.linspace(0.0, 6.0 * math.pi * delta, points)
    a_off = np.linspace(math.pi * delta ** 0.25, math.pi, points)
    return (float(np.max(np.abs(_factor_from_phase(a_on, q) + 1.0))),
            float(np.max(np.abs(_factor_from_phase(a_off, q) - 1.0))))


def _omega_measured(spec: BlaschkeSpec, k: int, n_k: int, samples: int = 256) -> float:
    """Sampled |B_{k-1}(y) - B_{k-1}(y + 2pi/n_k)| at shifts straddling zeros of the steepest factor."""
    if k == 1:
        return 0.0
    n_prev = spec.factors[k - 2][0]
    rng = np.random.default_rng(k)
    best = 0.0
    for i in range(samples):
        # y = 2 pi (i'/n_prev - 1/(2 n_k)) for a random tooth i'
        ip = int(rng.integers(n_prev))
        den = 2 * n_prev * n_k
        num = 2 * ip * n_k - n_prev
        a = np.array([spec.phases(num, den, k - 1), spec.phases(num + 2 * n_prev, den, k - 1)])
        v = spec.value_at_phases(a, k - 1)
        best = max(best, float(abs(v[0] - v[1])))
    return best


def _phi_on_product(kernel, eps, spec: BlaschkeSpec, num: int, den: int, upto: int) -> complex:
    """int phi_eps(t) B_upto(y - t) dt at y = 2 pi num / den, by graded quadrature."""
    t, w = kernel.nodes_eps(eps)
    c = spec.phases(num, den, upto)
    ns = np.array([float(n) for n, _ in spec.factors[:upto]])
    alpha = c[None, :] - t[:, None] * ns[None, :]
    vals = spec.value_at_phases(alpha, upto)
    return complex(np.sum(w * kernel.value_eps(eps, t) * vals))


def blaschke_product(kernel: KernelFamily, curve: ApproachCurve, K: int, N: int = 4096, *,
                     samples: int = 128, seed: int = DEFAULT_SEED, pi_star_value: Optional[float] = None
                     ) -> BlaschkeBuild:
    """B_K = prod_k b(n_k, delta_k, .) whose curve means differ by about 2 along r', r''."""
    who = "blaschke"
    if K < 1:
        raise ValueError("depth must be at least 1")
    P = _pi_star_value(kernel, curve) if pi_star_value is None else float(pi_star_value)
    if not P >= 0.95:
        _refuse(who, "pi_star_too_small", f"Pi* estimate {P:.4g} < 0.95: the theorem needs Pi* = 1",
                pi_star=P, threshold=0.95)
    factors: list = []
    stages = []
    prev_v, prev_delta = 1.0, 1.0
    for k in range(1, K + 1):
        bound = 2.0 ** -k
        delta = min(2.0 ** (-k - 6), 0.5 * prev_delta)
        while True:
            plus, minus = _factor_extremes(delta)
            if plus < bound and minus < bound:
                break
            delta *= 0.5
            if delta < 1e-300:
                _refuse(who, "factor_bounds", f"stage {k}: factor bounds unreachable", stage=k)
        spec_prev = BlaschkeSpec(tuple(factors))
        lip = spec_prev.lipschitz()
        target = P * (1.0 - bound)

        def u_ok(e, delta=delta, lip=lip):
            lam = curve.at_eps(e)
            if not lam < math.pi:
                return False
            n = math.floor(6.0 * math.pi / lam)
            if n < 1 or TWO_PI / n * lip >= bound:
                return False
            return _mass(kernel, e, delta * lam) > target

        eu = _scan_down(min(2.0 ** -k, 0.5 * prev_v), DEEP_EPS_FLOOR, u_ok)
        if eu is None:
            _refuse(who, "stage_unreachable", f"stage {k}: mass or modulus-of-continuity condition "
                    "unreachable before the eps floor", stage=k, lipschitz=lip)
        lam_u = curve.at_eps(eu)
        ev = _scan_down(0.5 * eu, DEEP_EPS_FLOOR,
                        lambda e: 3.0 * curve.at_eps(e) <= lam_u and _mass(kernel, e, delta * lam_u) > target)
        if ev is None:
            _refuse(who, "v_unreachable", f"stage {k}: no v with 3 lambda(v) <= lambda(u)", stage=k)
        n = int(math.floor(6.0 * math.pi / lam_u))
        if stages and n <= stages[-1].n:
            _refuse(who, "teeth_not_increasing", f"stage {k}: factor degree did not increase", stage=k)
        omega_b = TWO_PI / n * lip
        omega_m = _omega_measured(spec_prev, k, n)
        factors.append((n, delta))
        stages.append(BlaschkeStage(k, delta, eu, ev, n, lam_u, curve.at_eps(ev), _mass(kernel, eu, delta * lam_u),
                                    plus, minus, omega_b, omega_m))
        prev_v, prev_delta = ev, delta
    spec = BlaschkeSpec(tuple(factors))

    xs, us = sample_points(samples, seed)
    diffs = np.empty((samples, K))
    witnesses = []
    poisson = kernel.name == "poisson"
    for i, (x, u) in enumerate(zip(xs, us)):
        for st in stages:
            j0 = math.floor(st.n * u) + 2
            d = TWO_PI * float(j0 - st.n * u) / st.n
            e1 = curve.solve_eps(d, st.eps_v, st.eps_u)
            e2 = curve.solve_eps(d + math.pi / st.n, st.eps_v, st.eps_u)
            # stage k uses the truncated product B_k (B_K at the last stage)
            v1 = _phi_on_product(kernel, e1, spec, 2 * j0, 2 * st.n, st.k)
            v2 = _phi_on_product(kernel, e2, spec, 2 * j0 + 1, 2 * st.n, st.k)
            diffs[i, st.k - 1] = abs(v1 - v2)
            extra = {"j0": j0, "difference": abs(v1 - v2), "stated_bound": 1.0 - 16.0 * 2.0 ** -st.k,
                     "value_prime_complex": [v1.real, v1.imag], "value_second_complex": [v2.real, v2.imag]}
            if poisson:
                f1 = spec.interior(e1, 2 * j0, 2 * st.n)
                f2 = spec.interior(e2, 2 * j0 + 1, 2 * st.n)
                extra["full_product_difference"] = abs(f1 - f2)
            witnesses.append(Witness(st.k, x, e1, abs(v1), e2, abs(v2), extra=extra))
    return BlaschkeBuild(K, P, spec, stages, spec.boundary_values(N), witnesses, diffs)
