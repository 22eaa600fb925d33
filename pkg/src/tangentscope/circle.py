"""Circle primitives: angles, finite arc unions, sampled functions and measures.

The circle is R / 2piZ.  Arcs are half-open ``[a, b)``; an arc crossing 2pi is
stored as two pieces so every stored arc satisfies ``0 <= a < b <= 2pi``.

A :class:`GridFunction` holds N samples at ``theta_k = 2 pi k / N``.  When a
grid function has to be read as a step function, sample k is the value on the
centred cell ``[theta_k - h/2, theta_k + h/2)`` with ``h = 2 pi / N``; this is
the reading under which ``integrate`` (the midpoint rule) is exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def reduce_angle(x):
    """Reduce to [0, 2pi).  Works on scalars and arrays."""
    y = np.mod(x, TWO_PI)
    if np.ndim(y) == 0:
        y = float(y)
        return 0.0 if y >= TWO_PI else y
    y = np.asarray(y, dtype=float)
    y[y >= TWO_PI] = 0.0
    return y


def signed_angle(x):
    """Representative in (-pi, pi]."""
    y = reduce_angle(x)
    return np.where(y > math.pi, y - TWO_PI, y) if np.ndim(y) else (y - TWO_PI if y > math.pi else y)


def distance(x, y):
    d = np.abs(reduce_angle(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    d = np.minimum(d, TWO_PI - d)
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class Angle:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", reduce_angle(float(self.value)))

    def __float__(self):
        return self.value

    def distance(self, other: "Angle | float") -> float:
        return distance(self.value, float(other))


# ---------------------------------------------------------------------------
# arc sets


def _merge(starts: np.ndarray, ends: np.ndarray):
    if starts.size == 0:
        return starts, ends
    order = np.argsort(starts, kind="stable")
    s, e = starts[order], ends[order]
    # running max of ends decides where a new block begins
    run = np.maximum.accumulate(e)
    new_block = np.empty(s.size, dtype=bool)
    new_block[0] = True
    new_block[1:] = s[1:] > run[:-1]
    idx = np.flatnonzero(new_block)
    out_s = s[idx]
    last = np.append(idx[1:] - 1, s.size - 1)
    out_e = run[last]
    keep = out_e > out_s
    return out_s[keep], out_e[keep]


@dataclass(frozen=True, eq=False)
class ArcSet:
    """Finite disjoint union of half-open arcs, sorted by left endpoint."""

    starts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ends: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        s = np.asarray(self.starts, dtype=float).copy()
        e = np.asarray(self.ends, dtype=float).copy()
        if s.shape != e.shape or s.ndim != 1:
            raise ValueError("starts and ends must be 1-d arrays of equal length")
        if np.any(s < 0) or np.any(e > TWO_PI) or np.any(e < s):
            raise ValueError("stored arcs must satisfy 0 <= a <= b <= 2pi; use ArcSet.from_arcs")
        s, e = _merge(s, e)
        s.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "starts", s)
        object.__setattr__(self, "ends", e)

    # construction -------------------------------------------------------
    @classmethod
    def empty(cls) -> "ArcSet":
        return cls(np.zeros(0), np.zeros(0))

    @classmethod
    def full(cls) -> "ArcSet":
        return cls(np.array([0.0]), np.array([TWO_PI]))

    @classmethod
    def from_arcs(cls, arcs: Iterable[Sequence[float]]) -> "ArcSet":
        """Arcs given as (a, b) with a <= b on the real line; reduced mod 2pi."""
        arr = np.asarray(list(arcs), dtype=float).reshape(-1, 2)
        return cls.from_arrays(arr[:, 0], arr[:, 1])

    @classmethod
    def from_arrays(cls, a, b) -> "ArcSet":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        length = b - a
        if np.any(length < 0):
            raise ValueError("arc with b < a")
        if np.any(length >= TWO_PI):
            return cls.full()
        a0 = reduce_angle(a) if a.size else a
        a0 = np.atleast_1d(a0)
        b0 = a0 + length
        wrap = b0 > TWO_PI
        starts = np.concatenate([a0, np.zeros(int(wrap.sum()))])
        ends = np.concatenate([np.where(wrap, TWO_PI, b0), b0[wrap] - TWO_PI])
        keep = ends > starts
        return cls(starts[keep], ends[keep])

    # queries ------------------------------------------------------------
    def __len__(self) -> int:
        return int(self.starts.size)

    @property
    def arcs(self) -> list[tuple[float, float]]:
        return list(zip(self.starts.tolist(), self.ends.tolist()))

    def measure(self) -> float:
        return math.fsum((self.ends - self.starts).tolist())

    def contains(self, x):
        x = reduce_angle(np.asarray(x, dtype=float))
        if self.starts.size == 0:
            return np.zeros(np.shape(x), dtype=bool)
        idx = np.searchsorted(self.starts, x, side="right") - 1
        ok = idx >= 0
        idx = np.clip(idx, 0, None)
        return ok & (x < self.ends[idx])

    def is_empty(self) -> bool:
        return self.starts.size == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArcSet):
            return NotImplemented
        return np.array_equal(self.starts, other.starts) and np.array_equal(self.ends, other.ends)

    def __repr__(self) -> str:
        return f"ArcSet({len(self)} arcs, measure={self.measure():.6g})"

    # algebra ------------------------------------------------------------
    def _combine(self, other: "ArcSet", rule) -> "ArcSet":
        pts = np.unique(np.concatenate([[0.0, TWO_PI], self.starts, self.ends, other.starts, other.ends]))
        lo, hi = pts[:-1], pts[1:]
        mid = 0.5 * (lo + hi)
        keep = rule(self.contains(mid), other.contains(mid)) & (hi > lo)
        return ArcSet(lo[keep], hi[keep])

    def union(self, other: "ArcSet") -> "ArcSet":
        return self._combine(other, np.logical_or)

    def intersection(self, other: "ArcSet") -> "ArcSet":
        return self._combine(other, np.logical_and)

    def difference(self, other: "ArcSet") -> "ArcSet":
        return self._combine(other, lambda p, q: p & ~q)

    def symmetric_difference(self, other: "ArcSet") -> "ArcSet":
        return self._combine(other, np.logical_xor)

    def complement(self) -> "ArcSet":
        return ArcSet.full().difference(self)

    def rotate(self, angle: float) -> "ArcSet":
        return ArcSet.from_arrays(self.starts + angle, self.ends + angle)

    __or__ = union
    __and__ = intersection
    __sub__ = difference
    __xor__ = symmetric_difference

    # io -----------------------------------------------------------------
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["start", "end"])
            for a, b in self.arcs:
                w.writerow([repr(a), repr(b)])

    @classmethod
    def from_csv(cls, path) -> "ArcSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and set(rows[0]) != {"start", "end"}:
            raise ValueError(f"{path}: expected header start,end")
        return cls.from_arcs([(float(r["start"]), float(r["end"])) for r in rows])


def arc_measure(A: ArcSet) -> float:
    return A.measure()


def arc_symmetric_difference(A: ArcSet, B: ArcSet) -> ArcSet:
    return A.symmetric_difference(B)


# ---------------------------------------------------------------------------
# sampled functions


@dataclass(frozen=True, eq=False)
class GridFunction:
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("a grid function needs N >= 2 samples")
        arr = arr.astype(complex if np.iscomplexobj(arr) else float, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    N = n_samples

    @property
    def value_kind(self) -> str:
        return "complex" if np.iscomplexobj(self.samples) else "real"

    @property
    def step(self) -> float:
        return TWO_PI / self.samples.size

    @property
    def theta(self) -> np.ndarray:
        return grid(self.samples.size)

    @classmethod
    def from_callable(cls, fn, N: int) -> "GridFunction":
        return cls(np.asarray(fn(grid(N))))

    @classmethod
    def constant(cls, c, N: int) -> "GridFunction":
        return cls(np.full(N, c))

    @classmethod
    def indicator(cls, A: ArcSet, N: int) -> "GridFunction":
        return cls(A.contains(grid(N)).astype(float))

    def cell_index(self, x):
        """Index of the centred cell containing x."""
        return np.floor(reduce_angle(x) / self.step + 0.5).astype(int) % self.samples.size

    def value_at(self, x):
        return self.samples[self.cell_index(x)]

    def __add__(self, other):
        o = other.samples if isinstance(other, GridFunction) else other
        return GridFunction(self.samples + o)

    def __mul__(self, c):
        return GridFunction(self.samples * c)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(-self.samples)

    def abs(self) -> "GridFunction":
        return GridFunction(np.abs(self.samples))

    # io
    def to_csv(self, path) -> None:
        th = self.theta
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.value_kind == "complex":
                w.writerow(["theta", "re", "im"])
                for t, v in zip(th, self.samples):
                    w.writerow([repr(float(t)), repr(float(v.real)), repr(float(v.imag))])
            else:
                w.writerow(["theta", "value"])
                for t, v in zip(th, self.samples):
                    w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "GridFunction":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        header = [h.strip() for h in header]
        if header == ["theta", "value"]:
            vals = np.array([float(r[1]) for r in rows])
        elif header == ["theta", "re", "im"]:
            vals = np.array([complex(float(r[1]), float(r[2])) for r in rows])
        else:
            raise ValueError(f"{path}: header must be theta,value or theta,re,im")
        N = len(rows)
        theta = np.array([float(r[0]) for r in rows])
        if N < 2 or not np.allclose(theta, grid(N), rtol=0, atol=1e-9):
            raise ValueError(f"{path}: theta column must be 2*pi*k/N, k = 0..N-1")
        return cls(vals)


def grid(N: int) -> np.ndarray:
    return TWO_PI * np.arange(N) / N


def integrate(f: GridFunction):
    total = (TWO_PI / f.n_samples) * np.sum(f.samples)
    return complex(total) if f.value_kind == "complex" else float(total)


def lp_norm(f: GridFunction, p) -> float:
    if p == math.inf or p == "inf":
        return float(np.max(np.abs(f.samples)))
    p = float(p)
    if not p >= 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    a = np.abs(f.samples)
    return float(((TWO_PI / f.n_samples) * np.sum(a ** p)) ** (1.0 / p))


def lebesgue_defect(f: GridFunction, x: float, h: float) -> float:
    """(1/2h) int_{x-h}^{x+h} |f(t) - f(x)| dt for the step reading of f."""
    if not 0 < h <= math.pi:
        raise ValueError("lebesgue_defect needs 0 < h <= pi")
    x = float(x)
    c = f.step
    lo, hi = x - h, x + h
    j = np.arange(math.floor(lo / c + 0.5), math.floor(hi / c + 0.5) + 1)
    overlap = np.minimum(hi, (j + 0.5) * c) - np.maximum(lo, (j - 0.5) * c)
    overlap = np.clip(overlap, 0.0, None)
    fx = f.value_at(x)
    dev = np.abs(f.samples[j % f.n_samples] - fx)
    return float(np.sum(dev * overlap) / (2.0 * h))


# ---------------------------------------------------------------------------
# measures


@dataclass(frozen=True)
class SignedMeasure:
    atoms: tuple = ()
    density: GridFunction | None = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple((reduce_angle(float(p)), float(m)) for p, m in self.atoms))

    def total_variation(self) -> float:
        tv = math.fsum(abs(m) for _, m in self.atoms)
        if self.density is not None:
            tv += lp_norm(self.density, 1)
        return tv


def convolve_measure_point(kernel, r: float, mu: SignedMeasure, x: float) -> float:
    """Phi_r(x, d mu): atoms by direct kernel evaluation, density by grid convolution."""
    x = float(x)
    total = 0.0
    if mu.atoms:
        pos = np.array([p for p, _ in mu.atoms])
        mass = np.array([m for _, m in mu.atoms])
        total += float(np.sum(mass * kernel.evaluate(r, x - pos)))
    if mu.density is not None:
        from .operators import convolve_at

        total += float(np.real_if_close(convolve_at(kernel, r, mu.density, x)))
    return total
