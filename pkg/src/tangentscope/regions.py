"""Approach curves lambda(r) and finite estimators of the region functionals.

All r-sequences are carried as ``eps = 1 - r``.  A limsup/liminf is replaced by
the max/min over the final third of a geometric sequence, together with a
trend flag; nothing here claims more than that evidence.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Callable, Sequence

import numpy as np

from .kernels import IntegrationError, KernelFamily, phi_star_eps

PLAIN_K = 20       # eps_k = 2^-k, k = 1..20 for lambda * sup type functionals
TABLE_K = 60       # deeper sequence for the (delta, r) mass tables
DELTA_J = 10       # delta_j = 2^-j, j = 1..10
PLATEAU_TOL = 0.25


def default_eps(k_max: int = PLAIN_K) -> np.ndarray:
    return 2.0 ** -np.arange(1, k_max + 1, dtype=float)


def default_deltas(j_max: int = DELTA_J) -> np.ndarray:
    return 2.0 ** -np.arange(1, j_max + 1, dtype=float)


def r_string(eps: float) -> str:
    """1 - eps as an exact decimal string (eps is a binary float, so this is finite)."""
    return format(Decimal(1) - Decimal(float(eps)), "f")


def _eps_sequence(r_sequence=None, eps_sequence=None, k_max=PLAIN_K) -> np.ndarray:
    if eps_sequence is not None:
        eps = np.asarray(eps_sequence, dtype=float)
    elif r_sequence is not None:
        eps = 1.0 - np.asarray(r_sequence, dtype=float)
    else:
        eps = default_eps(k_max)
    if eps.ndim != 1 or eps.size == 0 or np.any(eps <= 0) or np.any(eps >= 1):
        raise ValueError("r-sequence must lie in (0, 1)")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("r-sequence must be strictly increasing")
    return eps


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class ApproachCurve:
    kind: str
    c: float = 1.0
    p: float = 1.0
    alpha: float = 1.0
    table_eps: tuple = ()
    table_lam: tuple = ()
    fn: Callable | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("nontangential", "log_tangential", "power", "table", "callable"):
            raise ValueError(f"unknown curve kind {self.kind!r}")
        if self.c <= 0:
            raise ValueError("curve constant c must be positive")
        if self.kind == "power" and self.alpha <= 0:
            raise ValueError("power curve needs alpha > 0")
        if self.kind == "table" and len(self.table_eps) < 2:
            raise ValueError("table curve needs at least two rows")

    def at_eps(self, eps):
        e = np.asarray(eps, dtype=float)
        if self.kind == "nontangential":
            out = self.c * e
        elif self.kind == "log_tangential":
            out = self.c * e * np.log(1.0 / e) ** self.p
        elif self.kind == "power":
            out = self.c * e ** self.alpha
        elif self.kind == "table":
            le = np.log(np.asarray(self.table_eps))
            ll = np.log(np.asarray(self.table_lam))
            order = np.argsort(le)
            x = np.log(e)
            if np.any(x < le.min() - 1e-12) or np.any(x > le.max() + 1e-12):
                raise ValueError("table curve evaluated outside its tabulated range")
            out = np.exp(np.interp(x, le[order], ll[order]))
        else:
            out = np.asarray(self.fn(e), dtype=float)
        return float(out) if out.ndim == 0 else out

    def __call__(self, r):
        return self.at_eps(1.0 - np.asarray(r, dtype=float))

    def solve_eps(self, target: float, lo: float, hi: float, iters: int = 200) -> float:
        """eps in [lo, hi] with lambda(eps) = target, by bisection in log eps.

        Assumes lambda increasing in eps on [lo, hi] and lambda(lo) <= target <= lambda(hi).
        """
        f_lo, f_hi = self.at_eps(lo) - target, self.at_eps(hi) - target
        if f_lo > 0 or f_hi < 0:
            raise ValueError("target not bracketed by the curve on [lo, hi]")
        a, b = math.log(lo), math.log(hi)
        for _ in range(iters):
            m = 0.5 * (a + b)
            if m == a or m == b:
                break
            if self.at_eps(math.exp(m)) < target:
                a = m
            else:
                b = m
        ea, eb = math.exp(a), math.exp(b)
        return ea if abs(self.at_eps(ea) - target) <= abs(self.at_eps(eb) - target) else eb

    @property
    def spec(self) -> str:
        if self.label:
            return self.label
        if self.kind == "nontangential":
            return f"nontangential:c={self.c!r}"
        if self.kind == "log_tangential":
            return f"log_tangential:c={self.c!r},p={self.p!r}"
        if self.kind == "power":
            return f"power:c={self.c!r},alpha={self.alpha!r}"
        return self.kind


def nontangential(c: float = 1.0) -> ApproachCurve:
    return ApproachCurve("nontangential", c=c)


def power_curve(alpha: float, c: float = 1.0) -> ApproachCurve:
    return ApproachCurve("power", c=c, alpha=alpha)


def log_tangential(p: float, c: float = 1.0) -> ApproachCurve:
    return ApproachCurve("log_tangential", c=c, p=p)


def curve_from_function(fn, label: str = "callable") -> ApproachCurve:
    return ApproachCurve("callable", fn=fn, label=label)


def table_curve(path) -> ApproachCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"r", "lambda"}:
        raise ValueError(f"{path}: curve table needs header r,lambda")
    eps = tuple(float(Decimal(1) - Decimal(r["r"])) for r in rows)
    lam = tuple(float(r["lambda"]) for r in rows)
    if any(e <= 0 or e >= 1 for e in eps) or any(x <= 0 for x in lam):
        raise ValueError(f"{path}: need 0 < r < 1 and lambda > 0")
    return ApproachCurve("table", table_eps=eps, table_lam=lam, label=f"table:{path}")


def curve_from_spec(spec: str) -> ApproachCurve:
    spec = spec.strip()
    kind, _, rest = spec.partition(":")
    if kind == "table":
        return table_curve(rest)
    params = {}
    if rest:
        for item in rest.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise ValueError(f"bad curve parameter {item!r} in {spec!r}")
            params[key.strip()] = float(val)
    allowed = {"nontangential": {"c"}, "log_tangential": {"c", "p"}, "power": {"c", "alpha"}}
    if kind not in allowed:
        raise ValueError(f"unknown curve kind {kind!r} (nontangential, log_tangential, power, table)")
    extra = set(params) - allowed[kind]
    if extra:
        raise ValueError(f"curve {kind} does not take {sorted(extra)}")
    if kind == "power" and "alpha" not in params:
        raise ValueError("power curve needs alpha=")
    return ApproachCurve(kind, **params)


# ---------------------------------------------------------------------------
# estimates


def classify_trend(values: Sequence[float], tol: float = PLATEAU_TOL) -> str:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return "plateau"
    scale = max(abs(float(np.mean(v))), 1e-300)
    if (v.max() - v.min()) / scale <= tol:
        return "plateau"
    d = np.diff(v)
    if np.all(d >= 0):
        return "increasing"
    if np.all(d <= 0):
        return "decreasing"
    return "oscillating"


@dataclass(frozen=True)
class LimsupEstimate:
    eps_values: tuple
    samples: tuple
    tail_max: float
    tail_min: float
    trend: str
    sup: float

    @property
    def r_values(self) -> tuple:
        return tuple(1.0 - e for e in self.eps_values)

    @classmethod
    def from_samples(cls, eps, samples) -> "LimsupEstimate":
        s = np.asarray(samples, dtype=float)
        n = s.size
        tail = s[n - max(1, n // 3):]
        return cls(eps_values=tuple(float(e) for e in eps), samples=tuple(s.tolist()),
                   tail_max=float(np.max(tail)), tail_min=float(np.min(tail)),
                   trend=classify_trend(tail), sup=float(np.max(s)))


def pi_plain(kernel: KernelFamily, curve: ApproachCurve, r_sequence=None, N=None, *,
             eps_sequence=None) -> LimsupEstimate:
    """lambda(r) * ||phi_r||_inf along the sequence."""
    eps = _eps_sequence(r_sequence, eps_sequence)
    samples = [curve.at_eps(e) * kernel.sup_norm_eps(e) for e in eps]
    return LimsupEstimate.from_samples(eps, samples)


def pi_p(kernel: KernelFamily, curve: ApproachCurve, p: float, r_sequence=None, N=None,
         mode: str = "limsup", *, eps_sequence=None) -> LimsupEstimate:
    """lambda * sup_norm * phi_star^(p-1).  ``mode='sup'`` is the tilde variant.

    phi_star uses the uniform grid when N is given, graded nodes otherwise.
    """
    if not p >= 1:
        raise ValueError(f"pi_p needs p >= 1, got {p}")
    if mode not in ("sup", "limsup"):
        raise ValueError("mode must be 'sup' or 'limsup'")
    eps = _eps_sequence(r_sequence, eps_sequence)
    samples = []
    for e in eps:
        base = curve.at_eps(e) * kernel.sup_norm_eps(e)
        if p != 1:
            base *= phi_star_eps(kernel, e, N) ** (p - 1)
        samples.append(base)
    return LimsupEstimate.from_samples(eps, samples)


def carlsson_bound(kernel: KernelFamily, curve: ApproachCurve, p: float, r_sequence=None,
                   N=None, *, eps_sequence=None) -> LimsupEstimate:
    """lambda(r) * ||phi_r||_q^p with q = p/(p-1)."""
    if not p >= 1:
        raise ValueError(f"carlsson_bound needs p >= 1, got {p}")
    q = math.inf if p == 1 else p / (p - 1.0)
    eps = _eps_sequence(r_sequence, eps_sequence)
    samples = [curve.at_eps(e) * kernel.lq_norm_eps(e, q) ** p for e in eps]
    return LimsupEstimate.from_samples(eps, samples)


@dataclass(frozen=True)
class RegionTable:
    statistic: str
    deltas: tuple
    eps_values: tuple
    matrix: np.ndarray
    errors: dict
    per_delta: tuple
    estimate: float

    @property
    def r_values(self) -> tuple:
        return tuple(1.0 - e for e in self.eps_values)

    def rows(self):
        for j, d in enumerate(self.deltas):
            for k, e in enumerate(self.eps_values):
                yield d, e, float(self.matrix[j, k])


def _mass_table(kernel, curve, deltas, eps):
    M = np.full((len(deltas), len(eps)), np.nan)
    errors = {}
    for k, e in enumerate(eps):
        lam = curve.at_eps(e)
        for j, d in enumerate(deltas):
            h = min(d * lam, math.pi)
            try:
                M[j, k] = kernel.partial_integral_eps(e, -h, h)
            except IntegrationError as exc:
                errors[(j, k)] = str(exc)
    return M, errors


def _region_table(statistic, kernel, curve, delta_sequence, r_sequence, eps_sequence):
    deltas = np.asarray(default_deltas() if delta_sequence is None else delta_sequence, dtype=float)
    if np.any(np.diff(deltas) >= 0) or np.any(deltas <= 0):
        raise ValueError("delta sequence must be positive and decreasing")
    eps = _eps_sequence(r_sequence, eps_sequence, k_max=TABLE_K)
    M, errors = _mass_table(kernel, curve, deltas, eps)
    per = []
    for j in range(len(deltas)):
        row = M[j]
        if np.any(np.isnan(row)):
            per.append(None)
            continue
        per.append(LimsupEstimate.from_samples(eps, row))
    last = per[-1]
    if last is None:
        est = math.nan
    else:
        est = last.tail_max if statistic == "tail_max" else last.tail_min
    return RegionTable(statistic=statistic, deltas=tuple(deltas.tolist()), eps_values=tuple(eps.tolist()),
                       matrix=M, errors=errors, per_delta=tuple(per), estimate=float(est))


def pi_infty(kernel: KernelFamily, curve: ApproachCurve, delta_sequence=None, r_sequence=None,
             N=None, *, eps_sequence=None) -> RegionTable:
    """Mass of phi_r on (-delta lambda, delta lambda); per-delta limsup surrogate."""
    return _region_table("tail_max", kernel, curve, delta_sequence, r_sequence, eps_sequence)


def pi_star(kernel: KernelFamily, curve: ApproachCurve, delta_sequence=None, r_sequence=None,
            N=None, *, eps_sequence=None) -> RegionTable:
    """As pi_infty with the liminf surrogate (tail minimum) per delta."""
    return _region_table("tail_min", kernel, curve, delta_sequence, r_sequence, eps_sequence)
