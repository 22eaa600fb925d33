"""Convolution with kernel families, maximal operators and convergence probes.

Grid functions are read as step functions on centred cells.  When the kernel
is wide compared to the grid, convolution is the plain grid sum
``(2pi/N) sum phi_r(x - t_j) f(t_j)``.  When its peak is narrower than four
cells, each cell weight becomes the average of the kernel over M sub-offsets
(M chosen so the peak spans at least eight of them).  The kernel is always
evaluated at exact offsets; only f is discretised.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import accumulate

import numpy as np
from scipy.ndimage import maximum_filter1d

from .circle import TWO_PI, ArcSet, GridFunction, grid, lp_norm, signed_angle
from .kernels import FEJER, KernelFamily, _check_eps, fejer_eps

OVERSAMPLE_CAP = 1 << 12
DEFAULT_MAXIMAL_K = 14
# graded point evaluation: sub-offset spacing at most 1/GRADE of the distance to the peak
OVERSAMPLE_GRADE = 128.0


class OversamplingCapWarning(RuntimeWarning):
    """The kernel peak is too narrow for the oversampling cap at this grid size."""


def _oversampling(kernel: KernelFamily, eps: float, h: float, cap: int):
    w = kernel.width_eps(eps)
    if w >= 4.0 * h:
        return 1, w, False
    M = int(math.ceil(8.0 * h / w))
    capped = M > cap
    if capped:
        warnings.warn(f"{kernel.name}: oversampling {M} exceeds cap {cap}; peak is under-resolved",
                      OversamplingCapWarning, stacklevel=3)
        M = cap
    return M, w, capped


def _cell_weights(kernel: KernelFamily, eps: float, offsets: np.ndarray, h: float, M: int) -> np.ndarray:
    """h * mean of phi over M sub-offsets of the cell centred at each offset."""
    if M == 1:
        return h * kernel.value_eps(eps, offsets)
    sub = ((np.arange(M) + 0.5) / M - 0.5) * h
    out = np.empty(offsets.size)
    chunk = max(1, (1 << 22) // M)
    for s in range(0, offsets.size, chunk):
        d = offsets[s:s + chunk, None] + sub[None, :]
        out[s:s + chunk] = kernel.value_eps(eps, d).mean(axis=1)
    return h * out


def circular_convolve(weights: np.ndarray, f: np.ndarray) -> np.ndarray:
    """out_i = sum_j f_j weights[(i - j) mod N], by direct summation."""
    N = f.size
    ext = np.concatenate([f, f])
    if np.iscomplexobj(f):
        return (np.convolve(ext.real, weights)[N:2 * N] + 1j * np.convolve(ext.imag, weights)[N:2 * N])
    return np.convolve(ext, weights)[N:2 * N]


def convolve_eps(kernel: KernelFamily, eps: float, f: GridFunction, *, cap: int = OVERSAMPLE_CAP,
                 info: dict | None = None, method: str = "direct") -> GridFunction:
    eps = _check_eps(eps)
    N = f.n_samples
    h = TWO_PI / N
    M, w, capped = _oversampling(kernel, eps, h, cap)
    offsets = signed_angle(grid(N))
    K = _cell_weights(kernel, eps, offsets, h, M)
    if method == "direct":
        out = circular_convolve(K, f.samples)
    elif method == "fft":
        out = np.fft.ifft(np.fft.fft(K) * np.fft.fft(f.samples))
        if not np.iscomplexobj(f.samples):
            out = out.real
    else:
        raise ValueError("method must be 'direct' or 'fft'")
    if info is not None:
        info.update(oversampling=M, capped=capped, width=w, N=N)
    return GridFunction(out)


def convolve(kernel: KernelFamily, r: float, f: GridFunction, **kw) -> GridFunction:
    """Phi_r(., f) on the grid of f."""
    return convolve_eps(kernel, 1.0 - float(r), f, **kw)


def convolve_at_eps(kernel: KernelFamily, eps: float, f: GridFunction, y, *, cap: int = OVERSAMPLE_CAP,
                    method: str = "oversample"):
    """Phi_r(y, f) at arbitrary points y.

    ``oversample``: cell weights from sub-offset averages, with the number of
    sub-offsets per cell graded by distance to the peak (uniform for
    oscillating kernels, where coarse sampling of the tail aliases).  ``exact``: cell
    weights from the closed-form partial integral (when the family has one).
    """
    eps = _check_eps(eps)
    N = f.n_samples
    h = TWO_PI / N
    th = grid(N)
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(ys.size, dtype=complex if np.iscomplexobj(f.samples) else float)
    if method == "exact":
        if not kernel.has_closed_form:
            raise ValueError(f"{kernel.name} has no closed-form partial integral")
        for i, yy in enumerate(ys):
            d = signed_angle(yy - th)
            G = kernel.antiderivative_eps
            wts = G(eps, d + 0.5 * h) - G(eps, d - 0.5 * h)
            out[i] = np.dot(wts, f.samples)
        return out if np.ndim(y) else out[0]
    if method != "oversample":
        raise ValueError("method must be 'oversample' or 'exact'")
    M, w, _ = _oversampling(kernel, eps, h, cap)
    for i, yy in enumerate(ys):
        d = signed_angle(yy - th)
        if M == 1:
            wts = h * kernel.value_eps(eps, d)
        elif not kernel.monotone_tail:
            wts = _cell_weights(kernel, eps, d, h, M)
        else:
            near = np.maximum(np.abs(d) - 0.5 * h, w)
            Mj = np.clip(np.ceil(OVERSAMPLE_GRADE * h / near), 1, M).astype(int)
            wts = np.empty(N)
            for m in np.unique(Mj):
                sel = Mj == m
                wts[sel] = _cell_weights(kernel, eps, d[sel], h, int(m))
        out[i] = np.dot(wts, f.samples)
    return out if np.ndim(y) else out[0]


def convolve_at(kernel: KernelFamily, r: float, f: GridFunction, y, **kw):
    return convolve_at_eps(kernel, 1.0 - float(r), f, y, **kw)


# ---------------------------------------------------------------------------
# functions given exactly as weighted arcs


@dataclass(frozen=True, eq=False)
class WeightedArcs:
    """sum_i w_i 1_[a_i, b_i): a step function known exactly, arcs need not be grid aligned."""

    starts: np.ndarray
    ends: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for name in ("starts", "ends", "weights"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arcset(cls, A: ArcSet, weight: float = 1.0) -> "WeightedArcs":
        return cls(A.starts, A.ends, np.full(len(A), weight))

    @classmethod
    def concat(cls, parts) -> "WeightedArcs":
        parts = list(parts)
        return cls(np.concatenate([p.starts for p in parts]), np.concatenate([p.ends for p in parts]),
                   np.concatenate([p.weights for p in parts]))

    def l1_norm(self) -> float:
        return math.fsum((np.abs(self.weights) * (self.ends - self.starts)).tolist())

    def cell_averages(self, N: int) -> GridFunction:
        """Exact averages over the centred grid cells (preserves the integral)."""
        h = TWO_PI / N
        acc = np.zeros(N)
        for a, b, wgt in zip(self.starts, self.ends, self.weights):
            lo = math.floor(a / h + 0.5)
            hi = math.floor(b / h + 0.5)
            j = np.arange(lo, hi + 1)
            ov = np.minimum(b, (j + 0.5) * h) - np.maximum(a, (j - 0.5) * h)
            np.add.at(acc, j % N, wgt * np.clip(ov, 0.0, None))
        return GridFunction(acc / h)


def _cdf(kernel: KernelFamily, eps: float):
    if kernel.has_closed_form:
        return lambda s: kernel.antiderivative_eps(eps, s)
    t, wq = kernel.nodes_eps(eps, order=8)
    v = kernel.value_eps(eps, t) * wq
    cum = np.concatenate([[0.0], np.cumsum(v)])
    knots = np.concatenate([[-math.pi], t])
    mass = cum[-1]
    base = np.interp(0.0, knots, cum)

    def G(s):
        s = np.asarray(s, dtype=float)
        k = np.floor((s + math.pi) / TWO_PI)
        return k * mass + np.interp(s - TWO_PI * k, knots, cum) - base

    return G


def arc_convolve_eps(kernel: KernelFamily, eps: float, f, y):
    """Phi_r(y, f) for f an ArcSet or WeightedArcs, by kernel partial integrals over arcs."""
    if isinstance(f, ArcSet):
        f = WeightedArcs.from_arcset(f)
    G = _cdf(kernel, _check_eps(eps))
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty(ys.size)
    for i, yy in enumerate(ys):
        # t in [a, b)  <=>  y - t in (y - b, y - a]
        lo = signed_angle(yy - f.ends)
        span = f.ends - f.starts
        out[i] = float(np.dot(f.weights, G(lo + span) - G(lo)))
    return out if np.ndim(y) else float(out[0])


# ---------------------------------------------------------------------------
# Hardy-Littlewood maximal function


def _exact_scale(a: np.ndarray):
    """Integers n_j and exponent E with a_j = n_j * 2^E exactly."""
    m, e = np.frexp(a)
    mant = (m * float(1 << 53)).astype(np.int64)
    nz = mant != 0
    if not np.any(nz):
        return [0] * a.size, 0
    E = int(e[nz].min()) - 53
    return [int(mi) << (int(ei) - 53 - E) if mi else 0 for mi, ei in zip(mant.tolist(), e.tolist())], E


def hl_maximal(f: GridFunction) -> GridFunction:
    """Centred maximal average of |f| over windows of 2k+1 cells, k = 0..N/2.

    Window sums come from exact integer prefix sums and are rounded once, so the
    result equals a brute-force loop that rounds each exact window sum once.
    """
    a = np.abs(f.samples).astype(float)
    N = a.size
    ints, E = _exact_scale(a)
    prefix = np.array([0] + list(accumulate(ints * 3)), dtype=object)
    i = np.arange(N)
    best = np.zeros(N)
    for k in range(N // 2 + 1):
        S = prefix[i + N + k + 1] - prefix[i + N - k]
        # int / int is correctly rounded (subnormals included) and never overflows on the way
        sums = (S / (1 << -E)).astype(float) if E < 0 else np.ldexp(S.astype(float), E)
        np.maximum(best, sums / (2 * k + 1), out=best)
    return GridFunction(best)


def hl_maximal_bruteforce(f: GridFunction) -> GridFunction:
    """Reference double loop: fsum (correctly rounded) of every window."""
    a = np.abs(f.samples).astype(float).tolist()
    N = len(a)
    out = np.zeros(N)
    for i in range(N):
        best = 0.0
        for k in range(N // 2 + 1):
            s = math.fsum(a[(i + d) % N] for d in range(-k, k + 1))
            best = max(best, s / (2 * k + 1))
        out[i] = best
    return GridFunction(out)


# ---------------------------------------------------------------------------
# lambda-maximal operator


@dataclass
class MaximalReport:
    values: GridFunction
    level_set_measures: dict
    best_constant: float | None = None
    witness_t: float | None = None
    argmax_r_index: np.ndarray | None = None
    eps_values: tuple = ()
    notes: list = field(default_factory=list)


def level_set_measure(values: np.ndarray, t: float) -> float:
    return float(np.count_nonzero(values > t)) * TWO_PI / values.size


def default_t_grid(values: np.ndarray, n: int = 33) -> np.ndarray:
    top = float(np.max(values))
    if top <= 0:
        return np.array([1.0])
    return np.geomspace(top * 2.0 ** -8, top, n)


def lambda_maximal(kernel: KernelFamily, curve, f: GridFunction, r_set=None, N: int | None = None,
                   *, eps_set=None, t_grid=None) -> MaximalReport:
    """max over r in the set and grid y with |x - y| < lambda(r) of |Phi_r(y, f)|."""
    if N is not None and N != f.n_samples:
        raise ValueError(f"f has {f.n_samples} samples, N = {N} requested")
    if eps_set is None:
        eps_set = (2.0 ** -np.arange(1, DEFAULT_MAXIMAL_K + 1) if r_set is None
                   else 1.0 - np.asarray(r_set, dtype=float))
    eps_set = np.asarray(eps_set, dtype=float)
    order = np.argsort(-eps_set, kind="stable")
    n = f.n_samples
    h = TWO_PI / n
    best = np.full(n, -np.inf)
    arg = np.full(n, -1)
    notes = []
    for idx in order:
        e = float(eps_set[idx])
        info = {}
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", OversamplingCapWarning)
            conv = np.abs(convolve_eps(kernel, e, f, info=info).samples)
        if caught:
            notes.append(f"eps={e!r}: oversampling capped")
        lam = float(curve.at_eps(e))
        half = int(math.ceil(lam / h)) - 1
        if 2 * half + 1 >= n:
            win = np.full(n, conv.max())
        elif half <= 0:
            win = conv
        else:
            win = maximum_filter1d(conv, size=2 * half + 1, mode="wrap")
        upd = win > best
        best[upd] = win[upd]
        arg[upd] = idx
    values = GridFunction(best)
    tg = default_t_grid(best) if t_grid is None else np.asarray(t_grid, dtype=float)
    lsm = {float(t): level_set_measure(best, t) for t in tg}
    return MaximalReport(values=values, level_set_measures=lsm, argmax_r_index=arg,
                         eps_values=tuple(eps_set.tolist()), notes=notes)


def weak_type_check(report, f: GridFunction, p: float, t_grid):
    """Smallest C with |{values > t}| <= C t^-p ||f||_p^p on the t-grid; returns (C, t)."""
    tg = [float(t) for t in np.atleast_1d(np.asarray(t_grid, dtype=float))]
    if not tg:
        raise ValueError("weak_type_check needs a non-empty t grid")
    values = report.values.samples if isinstance(report, MaximalReport) else (
        report.samples if isinstance(report, GridFunction) else np.asarray(report))
    norm_p = lp_norm(f, p) ** p
    if not norm_p > 0:
        raise ValueError("weak_type_check needs ||f||_p > 0")
    best, arg = 0.0, tg[0]
    for t in tg:
        c = level_set_measure(np.real(values), t) * t ** p / norm_p
        if c > best:
            best, arg = c, t
    if isinstance(report, MaximalReport):
        report.best_constant, report.witness_t = best, arg
    return best, arg


def domination_ratios(kernel, curve, f: GridFunction, p: float, r_set=None, N=None, *, eps_set=None):
    values = lambda_maximal(kernel, curve, f, r_set, N, eps_set=eps_set).values.samples
    mf = hl_maximal(GridFunction(np.abs(f.samples) ** p)).samples ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mf > 0, values / mf, np.where(values > 0, np.inf, 0.0))
    return ratio


def pointwise_domination_check(kernel, curve, f: GridFunction, p: float, r_set=None, N=None,
                               *, eps_set=None) -> float:
    """max over x of Phi*_lambda f(x) / (M|f|^p(x))^(1/p); 0/0 counts as 0."""
    return float(np.max(domination_ratios(kernel, curve, f, p, r_set, N, eps_set=eps_set)))


# ---------------------------------------------------------------------------
# convergence probes


def evaluate_at_eps(kernel, eps, f, y):
    if isinstance(f, (ArcSet, WeightedArcs)):
        return arc_convolve_eps(kernel, eps, f, y)
    return convolve_at_eps(kernel, eps, f, y)


def curve_oscillation(kernel, curve, f, x_samples, r_window, N=None, *, eps_window=None) -> np.ndarray:
    """Per sample x: max - min over the window of Phi_r(x + lambda(r), f).

    The window may be one sequence shared by all x or one row per x.  f may be
    a GridFunction, an ArcSet or WeightedArcs (the last two exactly).
    """
    xs = np.atleast_1d(np.asarray(x_samples, dtype=float))
    if eps_window is None:
        eps_window = 1.0 - np.asarray(r_window, dtype=float)
    win = np.asarray(eps_window, dtype=float)
    if win.ndim == 1:
        win = np.broadcast_to(win, (xs.size, win.size))
    out = np.empty(xs.size)
    for i, x in enumerate(xs):
        vals = [float(np.real(evaluate_at_eps(kernel, e, f, x + curve.at_eps(e)))) for e in win[i]]
        out[i] = max(vals) - min(vals)
    return out


def fejer_shift_check(f: GridFunction, x: float, n_sequence, c: float = 1.0) -> np.ndarray:
    """|sigma_n(x + c/n, f) - f(x)| with sigma_n the Fejer mean."""
    fx = f.value_at(x)
    errs = []
    for n in n_sequence:
        n = int(n)
        shift = c / n if n > 0 else 0.0
        sigma = convolve_at_eps(FEJER, fejer_eps(n), f, x + shift) if n > 0 else np.mean(f.samples)
        errs.append(abs(sigma - fx))
    return np.asarray(errs, dtype=float)


# ---------------------------------------------------------------------------
# presets


def preset(name: str, N: int, p: float = 2.0) -> GridFunction:
    th = grid(N)
    h = TWO_PI / N
    if name == "const":
        return GridFunction(np.ones(N))
    if name == "step":
        return GridFunction((th < math.pi).astype(float))
    if name == "cos":
        return GridFunction(np.cos(th))
    if name == "bump":
        v = np.zeros(N)
        v[0] = 1.0 / h
        return GridFunction(v)
    if name == "power":
        # |t|^(-1/(2p)) capped at its value at |t| = 2^-8, a fixed truncation independent of N
        t = np.maximum(np.abs(signed_angle(th)), 2.0 ** -8)
        return GridFunction(t ** (-1.0 / (2.0 * p)))
    raise ValueError(f"unknown preset {name!r} (const, step, cos, bump, power)")
