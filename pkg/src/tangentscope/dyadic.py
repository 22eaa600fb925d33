"""Dyadic rectangles and step functions in exact arithmetic.

Coordinates, measures and values are exact dyadic rationals (``Fraction`` with
power-of-two denominators).  A :class:`DyadicStep2D` is a flat step function on
the 2^-s grid of the unit square.  Functions too deep to flatten (the L-4 block
needs 2^-88 cells) are :class:`TreeFunction` objects: a node holds a flat
template plus scaled copies of child nodes in sub-squares, and integrals over
dyadic rectangles are computed by recursion with memoisation on
(node, relative rectangle).  Nothing in this module uses floating point.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

ZERO = Fraction(0)
ONE = Fraction(1)
DEFAULT_RESOLUTION_CAP = 400


def _pow2(e: int) -> Fraction:
    return Fraction(1, 1 << e) if e >= 0 else Fraction(1 << -e)


def bitlen(a: int) -> int:
    return int(a).bit_length()


# ---------------------------------------------------------------------------
# rectangles


@dataclass(frozen=True, order=True)
class DyadicRect:
    """[(i-1) 2^-m1, i 2^-m1) x [(j-1) 2^-m2, j 2^-m2)."""

    i: int
    j: int
    m1: int
    m2: int

    def __post_init__(self):
        if self.m1 < 0 or self.m2 < 0:
            raise ValueError("dyadic exponents must be nonnegative")

    @classmethod
    def containing(cls, point, m1: int, m2: int) -> "DyadicRect":
        x, y = point
        return cls(math.floor(Fraction(x) * (1 << m1)) + 1, math.floor(Fraction(y) * (1 << m2)) + 1, m1, m2)

    @property
    def measure(self) -> Fraction:
        return _pow2(self.m1 + self.m2)

    @property
    def width(self) -> Fraction:
        return _pow2(self.m1)

    @property
    def height(self) -> Fraction:
        return _pow2(self.m2)

    @property
    def len(self) -> Fraction:
        return max(self.width, self.height)

    @property
    def wd(self) -> Fraction:
        return min(self.width, self.height)

    @property
    def is_square(self) -> bool:
        return self.m1 == self.m2

    @property
    def diam2(self) -> Fraction:
        return self.width ** 2 + self.height ** 2

    @property
    def x_interval(self):
        return (self.i - 1, self.m1)

    @property
    def y_interval(self):
        return (self.j - 1, self.m2)

    def bounds(self):
        return ((self.i - 1) * self.width, self.i * self.width, (self.j - 1) * self.height, self.j * self.height)

    def contains_point(self, point) -> bool:
        x0, x1, y0, y1 = self.bounds()
        x, y = point
        return x0 <= x < x1 and y0 <= y < y1

    def contains(self, other: "DyadicRect") -> bool:
        return _inside(other.x_interval, self.x_interval) and _inside(other.y_interval, self.y_interval)

    def intersects(self, other: "DyadicRect") -> bool:
        return _interval_relation(self.x_interval, other.x_interval) != "disjoint" and \
            _interval_relation(self.y_interval, other.y_interval) != "disjoint"

    def __str__(self) -> str:
        return f"R(i={self.i}, j={self.j}, m1={self.m1}, m2={self.m2})"


def _inside(a, b) -> bool:
    """Dyadic interval a = (p, m) inside b = (q, t)."""
    p, m = a
    q, t = b
    return m >= t and (p >> (m - t)) == q


def _interval_relation(a, b):
    """'inside' (a in b), 'contains' (b in a, b != a) or 'disjoint'."""
    if _inside(a, b):
        return "inside"
    if _inside(b, a):
        return "contains"
    return "disjoint"


def _to_child(X, a: int, t: int):
    """Map interval X (None = whole unit interval) into the child interval (a, t).

    Returns ('full', None), ('part', X') or ('none', None)."""
    if X is None:
        return "full", None
    p, m = X
    if m <= t:
        return ("full", None) if (a >> (t - m)) == p else ("none", None)
    if (p >> (m - t)) == a:
        return "part", (p - (a << (m - t)), m - t)
    return "none", None


# ---------------------------------------------------------------------------
# flat step functions


@dataclass(eq=False)
class DyadicStep2D:
    """Step function on the 2^-s grid of [0,1)^2; cells[(i, j)] with 0-based indices."""

    s: int
    cells: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("resolution must be nonnegative")
        side = 1 << self.s
        clean = {}
        for (i, j), v in self.cells.items():
            if not (0 <= i < side and 0 <= j < side):
                raise ValueError(f"cell {(i, j)} outside the 2^-{self.s} grid")
            v = Fraction(v)
            if v != 0:
                clean[(int(i), int(j))] = v
        self.cells = clean

    # construction ------------------------------------------------------
    @classmethod
    def zero(cls, s: int = 0) -> "DyadicStep2D":
        return cls(s, {})

    @classmethod
    def constant(cls, c, s: int = 0) -> "DyadicStep2D":
        side = 1 << s
        return cls(s, {(i, j): Fraction(c) for i in range(side) for j in range(side)})

    @classmethod
    def indicator(cls, s: int, cells: Iterable) -> "DyadicStep2D":
        return cls(s, {c: ONE for c in cells})

    def refine(self, s: int) -> "DyadicStep2D":
        if s < self.s:
            raise ValueError("can only refine to a finer resolution")
        k = 1 << (s - self.s)
        return DyadicStep2D(s, {(i * k + a, j * k + b): v for (i, j), v in self.cells.items()
                                for a in range(k) for b in range(k)})

    def __add__(self, other: "DyadicStep2D") -> "DyadicStep2D":
        s = max(self.s, other.s)
        A, B = self.refine(s), other.refine(s)
        out = dict(A.cells)
        for c, v in B.cells.items():
            out[c] = out.get(c, ZERO) + v
        return DyadicStep2D(s, out)

    def __mul__(self, c) -> "DyadicStep2D":
        c = Fraction(c)
        return DyadicStep2D(self.s, {k: v * c for k, v in self.cells.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    # queries -----------------------------------------------------------
    def value(self, i: int, j: int) -> Fraction:
        return self.cells.get((i, j), ZERO)

    def value_at(self, point) -> Fraction:
        x, y = point
        side = 1 << self.s
        i, j = math.floor(Fraction(x) * side), math.floor(Fraction(y) * side)
        if not (0 <= i < side and 0 <= j < side):
            return ZERO
        return self.value(i, j)

    def _axis(self, X):
        """(first cell, last cell + 1, length per cell) for interval X in unit coordinates."""
        if X is None:
            return 0, 1 << self.s, _pow2(self.s)
        p, m = X
        if m <= self.s:
            k = 1 << (self.s - m)
            return p * k, (p + 1) * k, _pow2(self.s)
        c = p >> (m - self.s)
        return c, c + 1, _pow2(m)

    def integral_rel(self, X=None, Y=None) -> Fraction:
        """Integral over the dyadic interval product X x Y (None = full side), any depth."""
        if not self.cells:
            return ZERO
        i0, i1, lx = self._axis(X)
        j0, j1, ly = self._axis(Y)
        if (i1 - i0) * (j1 - j0) < len(self.cells):
            tot = sum((self.cells.get((i, j), ZERO) for i in range(i0, i1) for j in range(j0, j1)), ZERO)
        else:
            tot = sum((v for (i, j), v in self.cells.items() if i0 <= i < i1 and j0 <= j < j1), ZERO)
        return tot * lx * ly

    def integral(self, R: DyadicRect) -> Fraction:
        if R.i < 1 or R.j < 1 or R.i > (1 << R.m1) or R.j > (1 << R.m2):
            return ZERO
        return self.integral_rel(R.x_interval, R.y_interval)

    def total(self) -> Fraction:
        return self.integral_rel()

    def sup_norm(self) -> Fraction:
        return max((abs(v) for v in self.cells.values()), default=ZERO)

    def l1_norm(self) -> Fraction:
        return sum((abs(v) for v in self.cells.values()), ZERO) * _pow2(2 * self.s)

    def support_measure(self) -> Fraction:
        return len(self.cells) * _pow2(2 * self.s)

    def support_wd_exponent(self) -> int:
        """Least t such that the support is a union of 2^-t squares (wd = 2^-t)."""
        cells = set(self.cells)
        if not cells:
            return 0
        for t in range(self.s + 1):
            k = 1 << (self.s - t)
            blocks = {(i // k, j // k) for i, j in cells}
            if len(blocks) * k * k == len(cells):
                return t
        return self.s

    def row_sums(self) -> dict:
        out: dict = {}
        for (i, j), v in self.cells.items():
            out[j] = out.get(j, ZERO) + v
        return out

    def column_sums(self) -> dict:
        out: dict = {}
        for (i, j), v in self.cells.items():
            out[i] = out.get(i, ZERO) + v
        return out

    def marginals_vanish(self) -> bool:
        return all(v == 0 for v in self.row_sums().values()) and all(v == 0 for v in self.column_sums().values())

    # io ----------------------------------------------------------------
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"s={self.s}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "num", "den_pow2"])
            for (i, j) in sorted(self.cells):
                v = self.cells[(i, j)]
                den = v.denominator
                if den & (den - 1):
                    raise ValueError(f"value {v} is not a dyadic rational")
                w.writerow([i, j, v.numerator, den.bit_length() - 1])

    @classmethod
    def from_csv(cls, path) -> "DyadicStep2D":
        with open(path, newline="") as fh:
            head = fh.readline().strip()
            if not head.startswith("s="):
                raise ValueError("DyadicStep2D file must start with 's=<resolution>'")
            s = int(head[2:])
            rows = list(csv.DictReader(fh))
        return cls(s, {(int(r["i"]), int(r["j"])): Fraction(int(r["num"]), 1 << int(r["den_pow2"])) for r in rows})


# ---------------------------------------------------------------------------
# tree functions


@dataclass(eq=False)
class Node:
    """Template on the unit square: a flat part plus weighted children in sub-squares.

    A child entry (a, b, t, node, weight) places ``weight * node`` on the square
    [a 2^-t, (a+1) 2^-t) x [b 2^-t, (b+1) 2^-t)."""

    own: DyadicStep2D
    children: list = field(default_factory=list)
    label: str = ""


class TreeFunction:
    """weight * root, placed on the dyadic square Q (0-based corner index (qx, qy), side 2^-e)."""

    def __init__(self, root: Node, Q: "DyadicRect | None" = None, weight=ONE):
        Q = DyadicRect(1, 1, 0, 0) if Q is None else Q
        if not Q.is_square:
            raise ValueError("tree functions live on dyadic squares")
        self.root = root
        self.Q = Q
        self.weight = Fraction(weight)
        self._memo: dict = {}
        self._stats: dict = {}

    # integration -------------------------------------------------------
    def _int(self, node: Node, X, Y) -> Fraction:
        key = (id(node), X, Y)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        total = node.own.integral_rel(X, Y)
        for a, b, t, child, w in node.children:
            kx, Xc = _to_child(X, a, t)
            if kx == "none":
                continue
            ky, Yc = _to_child(Y, b, t)
            if ky == "none":
                continue
            total += w * _pow2(2 * t) * self._int(child, Xc, Yc)
        self._memo[key] = total
        return total

    def _relative(self, R: DyadicRect):
        """R in root coordinates: (X, Y) or None when R misses Q."""
        e = self.Q.m1
        kx, X = _from_global(R.x_interval, self.Q.i - 1, e)
        if kx == "none":
            return None
        ky, Y = _from_global(R.y_interval, self.Q.j - 1, e)
        if ky == "none":
            return None
        return X, Y

    def integral(self, R: DyadicRect) -> Fraction:
        rel = self._relative(R)
        if rel is None:
            return ZERO
        return self.weight * self.Q.measure * self._int(self.root, *rel)

    def average(self, R: DyadicRect) -> Fraction:
        return self.integral(R) / R.measure

    def value_at(self, point) -> Fraction:
        x, y = Fraction(point[0]), Fraction(point[1])
        e = self.Q.m1
        u = x * (1 << e) - (self.Q.i - 1)
        v = y * (1 << e) - (self.Q.j - 1)
        if not (0 <= u < 1 and 0 <= v < 1):
            return ZERO
        return self.weight * self._value(self.root, u, v)

    def _value(self, node: Node, u: Fraction, v: Fraction) -> Fraction:
        out = node.own.value_at((u, v))
        for a, b, t, child, w in node.children:
            k = 1 << t
            uu, vv = u * k - a, v * k - b
            if 0 <= uu < 1 and 0 <= vv < 1:
                out += w * self._value(child, uu, vv)
        return out

    # structure (children assumed disjoint from each other and from the flat part) ----
    def _node_stat(self, node: Node, name: str):
        key = (id(node), name)
        if key in self._stats:
            return self._stats[key]
        own = node.own
        if name == "sup":
            val = max([own.sup_norm()] + [abs(w) * self._node_stat(c, "sup") for *_, c, w in node.children])
        elif name == "l1":
            val = own.l1_norm() + sum((abs(w) * _pow2(2 * t) * self._node_stat(c, "l1")
                                       for _, _, t, c, w in node.children), ZERO)
        elif name == "supp":
            val = own.support_measure() + sum((_pow2(2 * t) * self._node_stat(c, "supp")
                                               for _, _, t, c, w in node.children if w != 0), ZERO)
        elif name == "wd":
            val = own.support_wd_exponent() if own.cells else 0
            for _, _, t, c, w in node.children:
                val = max(val, t + self._node_stat(c, "wd"))
        elif name == "marginal":
            val = own.marginals_vanish() and all(self._node_stat(c, "marginal") for *_, c, _ in node.children)
        elif name == "disjoint":
            val = _children_disjoint(node) and all(self._node_stat(c, "disjoint") for *_, c, _ in node.children)
        else:
            raise KeyError(name)
        self._stats[key] = val
        return val

    def sup_norm(self) -> Fraction:
        return abs(self.weight) * self._node_stat(self.root, "sup")

    def l1_norm(self) -> Fraction:
        return abs(self.weight) * self.Q.measure * self._node_stat(self.root, "l1")

    def support_measure(self) -> Fraction:
        return self.Q.measure * self._node_stat(self.root, "supp")

    def support_wd_exponent(self) -> int:
        """wd(supp f) = 2^-(returned value), absolute."""
        return self.Q.m1 + self._node_stat(self.root, "wd")

    def marginals_vanish(self) -> bool:
        return self._node_stat(self.root, "marginal")

    def structure_disjoint(self) -> bool:
        return self._node_stat(self.root, "disjoint")

    def expand(self, s: int) -> DyadicStep2D:
        """Flat copy on the 2^-s grid of the unit square (small trees only)."""
        side = 1 << s
        cells = {}
        for i in range(side):
            for j in range(side):
                v = self.integral(DyadicRect(i + 1, j + 1, s, s)) * (side * side)
                if v:
                    cells[(i, j)] = v
        return DyadicStep2D(s, cells)


def _from_global(X, q: int, e: int):
    """Global interval X relative to the interval (q, e): ('full'|'part'|'none', X')."""
    return _to_child(X, q, e)


def _children_disjoint(node: Node) -> bool:
    seen = []
    for a, b, t, *_ in node.children:
        seen.append((a, b, t))
    # children against each other
    for idx, (a, b, t) in enumerate(seen):
        for a2, b2, t2 in seen[idx + 1:]:
            if _interval_relation((a, t), (a2, t2)) != "disjoint" and _interval_relation((b, t), (b2, t2)) != "disjoint":
                return False
    # children against the flat part
    own = node.own
    for a, b, t in seen:
        X, Y = (a, t), (b, t)
        i0, i1, _ = own._axis(X)
        j0, j1, _ = own._axis(Y)
        if any(i0 <= i < i1 and j0 <= j < j1 for (i, j) in own.cells):
            return False
    return True


def rect_average(f, R: DyadicRect) -> Fraction:
    """(1/|R|) int_R f, exact.  Flat functions reject rectangles finer than their grid."""
    if isinstance(f, DyadicStep2D) and (R.m1 > f.s or R.m2 > f.s):
        raise ValueError(f"rectangle exponents ({R.m1}, {R.m2}) exceed the resolution s = {f.s}")
    return f.integral(R) / R.measure


def marginal_zero_check(f, Q: Optional[DyadicRect] = None) -> bool:
    """Every row and column integral of f vanishes (exactly)."""
    if isinstance(f, TreeFunction):
        return f.marginals_vanish()
    return f.marginals_vanish()


# ---------------------------------------------------------------------------
# bases


@dataclass(frozen=True)
class RareSequence:
    nus: tuple

    def __post_init__(self):
        nus = tuple(int(v) for v in self.nus)
        if not nus or nus[0] < 1 or any(b <= a for a, b in zip(nus, nus[1:])):
            raise ValueError("rare sequence must be strictly increasing positive integers")
        object.__setattr__(self, "nus", nus)

    @classmethod
    def parse(cls, text: str) -> "RareSequence":
        return cls(tuple(int(t) for t in text.split(",") if t.strip()))

    @property
    def gamma(self) -> int:
        """Largest consecutive gap over the stored prefix (1 for a single element)."""
        return max((b - a for a, b in zip(self.nus, self.nus[1:])), default=1)

    def __contains__(self, e: int) -> bool:
        return e in self.nus

    def round_up(self, e: int) -> Optional[int]:
        for v in self.nus:
            if v >= e:
                return v
        return None


@dataclass(frozen=True)
class RectBasis:
    kind: str                       # all_dyadic | rare | squares | explicit
    delta: Optional[RareSequence] = None
    rects: tuple = ()

    def __post_init__(self):
        if self.kind not in ("all_dyadic", "rare", "squares", "explicit"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "rare" and self.delta is None:
            raise ValueError("rare basis needs a sequence")

    @classmethod
    def all_dyadic(cls):
        return cls("all_dyadic")

    @classmethod
    def squares(cls):
        return cls("squares")

    @classmethod
    def rare(cls, delta: RareSequence):
        return cls("rare", delta=delta)

    @classmethod
    def explicit(cls, rects):
        return cls("explicit", rects=tuple(rects))

    def admits(self, m1: int, m2: int) -> bool:
        if self.kind == "all_dyadic":
            return True
        if self.kind == "squares":
            return m1 == m2
        if self.kind == "rare":
            return m1 in self.delta and m2 in self.delta
        return any(r.m1 == m1 and r.m2 == m2 for r in self.rects)

    def __contains__(self, R: DyadicRect) -> bool:
        if self.kind == "explicit":
            return R in self.rects
        return self.admits(R.m1, R.m2)

    def exponents(self, s: int):
        """Admissible exponent pairs with both exponents at most s."""
        if self.kind == "explicit":
            return sorted({(r.m1, r.m2) for r in self.rects if r.m1 <= s and r.m2 <= s})
        return [(a, b) for a in range(s + 1) for b in range(s + 1) if self.admits(a, b)]

    def describe(self) -> str:
        if self.kind == "rare":
            return "rare(" + ",".join(map(str, self.delta.nus)) + ")"
        return self.kind


# ---------------------------------------------------------------------------
# the sets E(n), F(n) and the functions u, v


def in_E_quadrant(a: int, b: int, n: int) -> bool:
    """Cell (a, b) of a quadrant (2^-n grid of the unit square) lies in its staircase."""
    return bitlen(a) + bitlen(b) <= n - 1


def representation_rect_rel(qi: int, qj: int, k: int, n: int) -> DyadicRect:
    """[qi/2, qi/2 + 2^-(k+1)) x [qj/2, qj/2 + 2^-(n-k)) in unit coordinates."""
    return DyadicRect(qi * (1 << k) + 1, qj * (1 << (n - k - 1)) + 1, k + 1, n - k)


@dataclass
class EFBuild:
    n: int
    E: DyadicStep2D
    F: DyadicStep2D
    representation: list


def build_E_F(n: int) -> EFBuild:
    if n < 1:
        raise ValueError("n must be at least 1")
    half = 1 << (n - 1)
    E_cells, F_cells = [], []
    for qi in (0, 1):
        for qj in (0, 1):
            F_cells.append((qi * half, qj * half))
            for a in range(half):
                for b in range(half):
                    if in_E_quadrant(a, b, n):
                        E_cells.append((qi * half + a, qj * half + b))
    reps = [representation_rect_rel(qi, qj, k, n) for qi in (0, 1) for qj in (0, 1) for k in range(n)]
    return EFBuild(n, DyadicStep2D.indicator(n, E_cells), DyadicStep2D.indicator(n, F_cells), reps)


def u_function(n: int) -> DyadicStep2D:
    half = 1 << (n - 1)
    c = Fraction((n + 1) * (1 << n), 4)
    return DyadicStep2D(n, {(0, 0): c, (half, half): c, (half, 0): -c, (0, half): -c})


def v_function() -> DyadicStep2D:
    return DyadicStep2D(1, {(0, 0): ONE, (1, 1): ONE, (0, 1): -ONE, (1, 0): -ONE})


def E_witness_rel(a: int, b: int, n: int) -> Optional[DyadicRect]:
    """Representation rectangle containing cell (a, b) of the 2^-n grid, if the cell is in E(n)."""
    half = 1 << (n - 1)
    qi, qj = a // half, b // half
    a2, b2 = a - qi * half, b - qj * half
    if not in_E_quadrant(a2, b2, n):
        return None
    return representation_rect_rel(qi, qj, bitlen(b2), n)


# ---------------------------------------------------------------------------
# Lemma L0: placing scaled copies of a simple set


def _embed(outer: DyadicRect, inner: DyadicRect) -> DyadicRect:
    """inner (unit coordinates) mapped into the square outer."""
    e = outer.m1
    return DyadicRect((outer.i - 1) * (1 << inner.m1) + inner.i, (outer.j - 1) * (1 << inner.m2) + inner.j,
                      e + inner.m1, e + inner.m2)


@dataclass
class L0Family:
    Q: DyadicRect
    m: int
    E: DyadicStep2D
    levels: list          # levels[k-1] = Omega_k, k = 1..m+1 (the last level receives no copy)

    @property
    def placed(self) -> list:
        return [w for lvl in self.levels[:-1] for w in lvl]

    @property
    def leftover(self) -> list:
        return self.levels[-1]

    @property
    def omega(self) -> list:
        return [w for lvl in self.levels for w in lvl]


def wd_exponent(E: DyadicStep2D) -> int:
    return E.support_wd_exponent()


def lemma_L0_family(E: DyadicStep2D, m: int, Q: DyadicRect, max_squares: int = 200_000) -> L0Family:
    if m < 1:
        raise ValueError("m must be at least 1")
    if not Q.is_square:
        raise ValueError("Q must be a dyadic square")
    if E.support_measure() >= 1:
        raise ValueError("E must be a proper subset of the unit square")
    t = wd_exponent(E)
    Ec = E.refine(t) if E.s < t else E
    # E as a union of 2^-t cells; its complement cells become the next level
    k = 1 << (Ec.s - t)
    blocks = {(i // k, j // k) for (i, j) in Ec.cells}
    comp = [(a, b) for a in range(1 << t) for b in range(1 << t) if (a, b) not in blocks]
    levels = [[Q]]
    for _ in range(m):
        nxt = []
        for w in levels[-1]:
            for a, b in comp:
                nxt.append(_embed(w, DyadicRect(a + 1, b + 1, t, t)))
        if len(nxt) > max_squares:
            raise MemoryError(f"Lemma L0 family exceeds {max_squares} squares; use the L-4 tree instead")
        levels.append(nxt)
    return L0Family(Q, m, E, levels)


@dataclass
class L0Report:
    disjoint: bool
    min_wd: Fraction
    expected_min_wd: Fraction
    leftover: Fraction
    expected_leftover: Fraction

    @property
    def ok(self) -> bool:
        return self.disjoint and self.min_wd == self.expected_min_wd and self.leftover == self.expected_leftover


def verify_L0(fam: L0Family) -> L0Report:
    """Re-check the three conclusions from the explicit cell sets of the copies."""
    E = fam.E
    depth = max(w.m1 for w in fam.omega) + E.s
    covered: set = set()
    disjoint = True
    for w in fam.placed:
        shift = depth - w.m1 - E.s
        k = 1 << shift
        for (i, j) in E.cells:
            gi = ((w.i - 1) * (1 << E.s) + i) * k
            gj = ((w.j - 1) * (1 << E.s) + j) * k
            for a in range(k):
                for b in range(k):
                    c = (gi + a, gj + b)
                    if c in covered:
                        disjoint = False
                    covered.add(c)
    leftover = fam.Q.measure - len(covered) * _pow2(2 * depth)
    min_wd = min(w.wd for w in fam.omega)
    wdE = _pow2(wd_exponent(E))
    return L0Report(disjoint, min_wd, fam.Q.wd * wdE ** fam.m, leftover,
                    fam.Q.measure * (1 - E.support_measure()) ** fam.m)


# ---------------------------------------------------------------------------
# Lemma L-4


def L4_constants(L: int):
    """(n, alpha, beta, m) with n = 2L."""
    if L < 2:
        raise ValueError("L must be an integer >= 2")
    n = 2 * L
    alpha = n * ((1 << n) + 1)
    beta = (n + 1) * (1 << n) // 4
    m = math.floor((1 << n) * (math.log(n + 1) + (n - 2) * math.log(2)) / (n + 1)) + 1
    return n, alpha, beta, m


def _check_m(n: int, m: int, beta: int) -> None:
    # (1 - (n+1)/2^n)^m < 1/beta, exactly
    if not (1 - Fraction(n + 1, 1 << n)) ** m < Fraction(1, beta):
        raise ArithmeticError("leftover bound fails for the computed m")


@dataclass
class TemplateWitness:
    level: int
    cell: tuple            # cell in the node's own 2^-res grid
    resolution: int
    rect: DyadicRect       # witness in node coordinates
    average: Fraction      # average of the whole function over the witness (node copy at the root level)
    wd_exponent: int       # absolute exponent of wd(witness) for the shallowest copy of this level


@dataclass
class L4Build:
    L: int
    Q: DyadicRect
    n: int
    alpha: int
    beta: int
    m: int
    f: TreeFunction
    nodes: list            # nodes[p-1] is the template for level p, nodes[m] the leaf

    def level_scale(self, p: int) -> int:
        """Exponent of the side of a level-p square relative to Q."""
        return self.n * (p - 1)

    def template_witnesses(self) -> list:
        """Witnesses for every cell class: the E(n) cells of each level and the leaf quarters."""
        out = []
        for p, node in enumerate(self.nodes, start=1):
            local = TreeFunction(node)
            scale = self.Q.m1 + self.level_scale(p)
            if p <= self.m:
                side = 1 << self.n
                for a in range(side):
                    for b in range(side):
                        R = E_witness_rel(a, b, self.n)
                        if R is None:
                            continue
                        out.append(TemplateWitness(p, (a, b), self.n, R, local.average(R), scale + max(R.m1, R.m2)))
            else:
                for a in range(2):
                    for b in range(2):
                        R = DyadicRect(a + 1, b + 1, 1, 1)
                        out.append(TemplateWitness(p, (a, b), 1, R, local.average(R), scale + 1))
        return out

    def witness(self, point):
        """Global witness rectangle R(x) for a point of Q and the average of f over it."""
        x, y = Fraction(point[0]), Fraction(point[1])
        e = self.Q.m1
        qx, qy = self.Q.i - 1, self.Q.j - 1
        u, v = x * (1 << e) - qx, y * (1 << e) - qy
        if not (0 <= u < 1 and 0 <= v < 1):
            raise ValueError("point outside Q")
        origin = DyadicRect(self.Q.i, self.Q.j, e, e)
        for p in range(1, self.m + 2):
            if p == self.m + 1:
                a, b = math.floor(u * 2), math.floor(v * 2)
                R = _embed(origin, DyadicRect(a + 1, b + 1, 1, 1))
                return R, self.f.average(R)
            side = 1 << self.n
            a, b = math.floor(u * side), math.floor(v * side)
            Rr = E_witness_rel(a, b, self.n)
            if Rr is not None:
                R = _embed(origin, Rr)
                return R, self.f.average(R)
            origin = _embed(origin, DyadicRect(a + 1, b + 1, self.n, self.n))
            u, v = u * side - a, v * side - b
        raise AssertionError("unreachable")

    def coverage(self) -> Fraction:
        """Measure of Q covered by E-cells of all levels plus leaf squares (should be |Q|)."""
        side = 1 << self.n
        e_cells = sum(1 for a in range(side) for b in range(side) if E_witness_rel(a, b, self.n) is not None)
        n_children = side * side - e_cells
        frac_E = Fraction(e_cells, side * side)
        frac_child = Fraction(n_children, side * side)
        total = ZERO
        for p in range(1, self.m + 1):
            total += frac_child ** (p - 1) * frac_E
        total += frac_child ** self.m
        return total * self.Q.measure


def lemma_L4_function(L: int, Q: Optional[DyadicRect] = None, *, levels: Optional[int] = None,
                      resolution_cap: int = DEFAULT_RESOLUTION_CAP) -> L4Build:
    """f = sum_Omega u_omega(., n) + beta sum_{leftover} v_omega on Q, as a tree.

    ``levels`` overrides m (the number of levels receiving copies of E(n)); it
    exists so tests can expand a shallow tree flat and compare.
    """
    Q = DyadicRect(1, 1, 0, 0) if Q is None else Q
    if not Q.is_square:
        raise ValueError("Q must be a dyadic square")
    n, alpha, beta, m = L4_constants(L)
    _check_m(n, m, beta)
    if levels is not None:
        m = int(levels)
    if Q.m1 + alpha > resolution_cap:
        raise ValueError(f"resolution budget {Q.m1} + alpha(L) = {Q.m1 + alpha} exceeds the cap {resolution_cap}")
    side = 1 << n
    child_cells = [(a, b) for a in range(side) for b in range(side) if E_witness_rel(a, b, n) is None]
    leaf = Node(v_function() * beta, [], label=f"leaf(level {m + 1})")
    nodes = [leaf]
    u = u_function(n)
    for p in range(m, 0, -1):
        below = nodes[0]
        nodes.insert(0, Node(u, [(a, b, n, below, ONE) for a, b in child_cells], label=f"level {p}"))
    f = TreeFunction(nodes[0], Q)
    return L4Build(L, Q, n, alpha, beta, m, f, nodes)


@dataclass
class L4Report:
    support_in_Q: bool
    sup_norm: Fraction
    support_measure: Fraction
    support_wd_exponent: int
    marginals_vanish: bool
    exterior_integrals_zero: bool
    exterior_samples: int
    min_witness_average: Fraction
    max_witness_wd_exponent: int
    coverage: Fraction
    conclusions: dict

    @property
    def ok(self) -> bool:
        return all(self.conclusions.values())


def _random_exterior_rect(rng: random.Random, Q: DyadicRect, depth: int) -> DyadicRect:
    """Random dyadic R meeting Q whose interior is not inside Q."""
    e = Q.m1
    while True:
        m1 = rng.randint(0, depth)
        m2 = rng.randint(0, depth)
        if m1 > e and m2 > e:
            continue
        # position R so that it meets Q
        px = rng.randint(0, (1 << max(m1 - e, 0)) - 1)
        py = rng.randint(0, (1 << max(m2 - e, 0)) - 1)
        i = ((Q.i - 1) >> (e - m1)) + 1 if m1 <= e else (Q.i - 1) * (1 << (m1 - e)) + px + 1
        j = ((Q.j - 1) >> (e - m2)) + 1 if m2 <= e else (Q.j - 1) * (1 << (m2 - e)) + py + 1
        return DyadicRect(i, j, m1, m2)


def verify_L4(b: L4Build, samples: int = 100, seed: int = 0) -> L4Report:
    f = b.f
    rng = random.Random(seed)
    depth = b.Q.m1 + b.alpha + 2
    ext = [_random_exterior_rect(rng, b.Q, depth) for _ in range(samples)]
    ext_ok = all(f.integral(R) == 0 for R in ext)
    # support inside Q: the integral of f over the complement-touching rectangles is handled
    # structurally: every node lives in the unit square of its parent.
    inside = f.structure_disjoint()
    tw = b.template_witnesses()
    min_avg = min(abs(w.average) for w in tw)
    max_wd = max(w.wd_exponent for w in tw)
    sup = f.sup_norm()
    supp = f.support_measure()
    wd_e = f.support_wd_exponent()
    cov = b.coverage()
    concl = {
        "c-1 support in Q": inside,
        "c-2 sup norm <= beta": sup <= b.beta,
        "x10 support measure <= 2|Q|/beta": supp <= 2 * b.Q.measure / b.beta,
        "x11 wd(supp) >= wd(Q) 2^-alpha": wd_e <= b.Q.m1 + b.alpha,
        "c-4 exterior integrals vanish": ext_ok and f.marginals_vanish(),
        "c-5 witness averages >= L": min_avg >= b.L and cov == b.Q.measure,
        "x15 witness wd >= wd(Q) 2^-alpha": max_wd <= b.Q.m1 + b.alpha,
    }
    return L4Report(inside, sup, supp, wd_e, f.marginals_vanish(), ext_ok, samples, min_avg, max_wd, cov, concl)


# ---------------------------------------------------------------------------
# Saks-type function for rare bases


@dataclass
class SaksStage:
    k: int
    L: int
    l: int
    p: int                 # index into the sequence: nu_p < l < l + alpha < nu_{p+1}
    alpha: int
    beta: int

    def as_dict(self) -> dict:
        return {"k": self.k, "L": self.L, "l": self.l, "nu_p": None, "alpha": self.alpha, "beta": self.beta}


@dataclass
class SaksBuild:
    delta: RareSequence
    K: int
    stages: list
    F: TreeFunction
    blocks: list           # L4Build per stage (a block on the unit square template)

    def stage_function(self, k: int) -> TreeFunction:
        st = self.stages[k - 1]
        blk = self.blocks[k - 1]
        side = 1 << st.l
        root = Node(DyadicStep2D.zero(), [(a, b, st.l, blk.nodes[0], ONE) for a in range(side) for b in range(side)],
                    label=f"F_{k}")
        return TreeFunction(root)


def saks_schedule(delta: RareSequence, K: int, L1: int = 2, resolution_cap: int = DEFAULT_RESOLUTION_CAP):
    """Greedy (L_k, l_k, p_k): nu_p < l < l + alpha(L) < nu_{p+1}, l_{k+1} > l_k + alpha(L_k),
    L_{k+1} > 2^k (beta(L_k) + k).  Raises ValueError naming the binding constraint."""
    stages = []
    L = L1
    prev_end = 0
    nus = delta.nus
    for k in range(1, K + 1):
        if k > 1:
            prev = stages[-1]
            L = (1 << (k - 1)) * (prev.beta + k - 1) + 1
        n, alpha, beta, _ = L4_constants(L) if L < 64 else (2 * L, None, None, None)
        if alpha is None or alpha > resolution_cap:
            raise ValueError(f"stage {k}: L_{k} = {L} needs alpha(L) = n(2^n+1) with n = {2 * L}, "
                             f"beyond the resolution cap {resolution_cap}")
        found = None
        for p in range(len(nus) - 1):
            l = max(nus[p] + 1, prev_end + 1)
            if l + alpha < nus[p + 1] and l > nus[p]:
                found = (p, l)
                break
        if found is None:
            widest = max((b - a for a, b in zip(nus, nus[1:])), default=0)
            raise ValueError(f"stage {k}: no gap of the sequence fits l + alpha(L) with L = {L} "
                             f"(alpha = {alpha}, needs a gap > {alpha + 1}; widest gap in the prefix is {widest})")
        p, l = found
        stages.append(SaksStage(k, L, l, p, alpha, beta))
        prev_end = l + alpha
    return stages


def saks_function(delta: RareSequence, K: int, resolution_cap: int = DEFAULT_RESOLUTION_CAP, L1: int = 2) -> SaksBuild:
    """F = sum_k F_k / 2^k, F_k a 2^l_k x 2^l_k tiling by L-4 blocks."""
    stages = saks_schedule(delta, K, L1=L1, resolution_cap=resolution_cap)
    blocks = []
    children = []
    for st in stages:
        blk = lemma_L4_function(st.L, DyadicRect(1, 1, 0, 0), resolution_cap=resolution_cap)
        blocks.append(blk)
        side = 1 << st.l
        w = Fraction(1, 1 << st.k)
        children.extend((a, b, st.l, blk.nodes[0], w) for a in range(side) for b in range(side))
    root = Node(DyadicStep2D.zero(), children, label="F")
    return SaksBuild(delta, K, stages, TreeFunction(root), blocks)


@dataclass
class SaksReport:
    sup_norms: list
    l1_norm: Fraction
    zero_integrals: bool
    zero_samples: int
    min_witness_ratio: Fraction     # min |avg F over R_k(x)| / (L_k / 2)
    witnesses_ok: bool
    stabilization_ok: bool
    stabilization_samples: int

    @property
    def ok(self) -> bool:
        return (self.zero_integrals and self.witnesses_ok and self.stabilization_ok and self.l1_norm <= 2
                and all(s <= b for s, b in self.sup_norms))


def _random_point(rng: random.Random, bits: int = 96):
    return (Fraction(rng.getrandbits(bits), 1 << bits), Fraction(rng.getrandbits(bits), 1 << bits))


def verify_saks(sb: SaksBuild, samples: int = 100, seed: int = 0) -> SaksReport:
    rng = random.Random(seed)
    F = sb.F
    sups = []
    zero_ok = True
    count = 0
    for st in sb.stages:
        Fk = sb.stage_function(st.k)
        sups.append((Fk.sup_norm(), Fraction(st.beta)))
        depth = st.l + st.alpha + 2
        for _ in range(samples):
            big = rng.randint(0, st.l)
            small = rng.randint(0, depth)
            m1, m2 = (big, small) if rng.random() < 0.5 else (small, big)
            R = DyadicRect(rng.randint(1, 1 << m1), rng.randint(1, 1 << m2), m1, m2)
            count += 1
            if Fk.integral(R) != 0:
                zero_ok = False
    # witnesses: every cell class of each stage block, inside the (1, 1) tile, against the whole F
    ratio = None
    for st, blk in zip(sb.stages, sb.blocks):
        tile = DyadicRect(1, 1, st.l, st.l)
        for tw in blk.template_witnesses():
            # the shallowest copy of this level inside the first tile
            origin = tile
            for _ in range(tw.level - 1):
                origin = _embed(origin, DyadicRect(_first_child(blk)[0] + 1, _first_child(blk)[1] + 1, blk.n, blk.n))
            R = _embed(origin, tw.rect)
            r = abs(F.average(R)) / Fraction(st.L, 2)
            ratio = r if ratio is None else min(ratio, r)
    # stabilisation: small rare rectangles average to the truncated sum (here all of F)
    stab_ok = True
    nus = sb.delta.nus
    deep = [v for v in nus if v > sb.stages[-1].l + sb.stages[-1].alpha]
    shallow = [v for v in nus if v <= sb.stages[0].l]
    n_stab = 0
    for _ in range(samples):
        x = _random_point(rng)
        fx = F.value_at(x)
        for a in deep:
            for b in deep:
                R = DyadicRect.containing(x, a, b)
                n_stab += 1
                if F.average(R) != fx:
                    stab_ok = False
        for a in shallow:
            for b in nus:
                R = DyadicRect.containing(x, a, b)
                n_stab += 1
                if F.integral(R) != 0:
                    stab_ok = False
    return SaksReport(sups, F.l1_norm(), zero_ok, count, ratio, ratio is not None and ratio > 1, stab_ok, n_stab)


def _first_child(blk: L4Build):
    side = 1 << blk.n
    for a in range(side):
        for b in range(side):
            if E_witness_rel(a, b, blk.n) is None:
                return a, b
    raise AssertionError("E(n) fills the square")


# ---------------------------------------------------------------------------
# covering by rare rectangles


@dataclass(frozen=True)
class CoverResult:
    R_doubleprime: DyadicRect
    ratio: Fraction
    gamma: int

    @property
    def ok(self) -> bool:
        return self.ratio >= Fraction(1, 4 ** self.gamma)


def tx2_cover(R_prime: DyadicRect, delta: RareSequence, point=None) -> CoverResult:
    """The rare rectangle containing ``point`` (default: the corner cell of R') with both
    exponents rounded up into the sequence."""
    g = delta.gamma
    ups = []
    for e in (R_prime.m1, R_prime.m2):
        v = delta.round_up(e)
        if v is None:
            raise ValueError(f"exponent {e} exceeds the stored prefix (last element {delta.nus[-1]})")
        if v - e > g:
            raise ValueError(f"exponent {e} lies {v - e} below the first element {delta.nus[0]}, more than gamma = {g}")
        ups.append(v)
    if point is None:
        x0, _, y0, _ = R_prime.bounds()
        point = (x0, y0)
    if not R_prime.contains_point(point):
        raise ValueError("point must lie in R'")
    R2 = DyadicRect.containing(point, ups[0], ups[1])
    return CoverResult(R2, R2.measure / R_prime.measure, g)


# ---------------------------------------------------------------------------
# quasi-coverability certificates


@dataclass(frozen=True)
class QuasiCertificate:
    R: DyadicRect
    R_prime: DyadicRect
    pieces: tuple
    c: Fraction


@dataclass(frozen=True)
class QuasiResult:
    certificate: Optional[QuasiCertificate]
    status: str            # "certificate" | "not_found_within_bounds"
    searched: int
    reason: str = ""


def _ancestors(R: DyadicRect, c: Fraction):
    """Dyadic R' containing R with diam(R') <= c diam(R), coarsest first."""
    out = []
    lim = c * c * R.diam2
    for a in range(R.m1 + 1):
        for b in range(R.m2 + 1):
            Rp = DyadicRect(((R.i - 1) >> (R.m1 - a)) + 1, ((R.j - 1) >> (R.m2 - b)) + 1, a, b)
            if Rp.diam2 <= lim:
                out.append(Rp)
    out.sort(key=lambda r: (-(r.m1 + r.m2), -r.m1))
    return out


def _tiling(R: DyadicRect, e1: int, e2: int):
    """Rectangles at exponents (e1, e2) meeting R (they tile a set containing R)."""
    def axis(p, m, e):
        if e >= m:
            k = 1 << (e - m)
            return range(p * k, (p + 1) * k)
        return range(p >> (m - e), (p >> (m - e)) + 1)
    return [DyadicRect(a + 1, b + 1, e1, e2) for a in axis(R.i - 1, R.m1, e1) for b in axis(R.j - 1, R.m2, e2)]


def quasi_cover_check(R: DyadicRect, B1: RectBasis, M: RectBasis, c, search_resolution: Optional[int] = None
                      ) -> QuasiResult:
    """Search for (R', {R_k}) witnessing that R is quasi-covered by B1 within M with constant c."""
    c = Fraction(c)
    if c < 1:
        raise ValueError("c must be at least 1")
    s = search_resolution if search_resolution is not None else max(R.m1, R.m2) + 2 * (c.numerator // c.denominator + 1)
    tried = 0
    for Rp in _ancestors(R, c):
        if Rp not in M:
            continue
        for e1 in range(Rp.m1, s + 1):
            for e2 in range(Rp.m2, s + 1):
                if not B1.admits(e1, e2):
                    continue
                if Rp.measure > c * _pow2(e1 + e2):
                    continue
                tried += 1
                pieces = [P for P in _tiling(R, e1, e2) if P in B1]
                cert = QuasiCertificate(R, Rp, tuple(pieces), c)
                if validate_quasi_certificate(cert, B1, M):
                    return QuasiResult(cert, "certificate", tried)
    return QuasiResult(None, "not_found_within_bounds", tried,
                       reason=f"no certificate among dyadic ancestors within diameter factor {c} "
                              f"and uniform-scale covers up to exponent {s}; this is not a proof of impossibility")


def validate_quasi_certificate(cert: QuasiCertificate, B1: RectBasis, M: RectBasis) -> bool:
    """Independent check of the five covering inequalities with exact rational geometry."""
    R, Rp, pieces, c = cert.R, cert.R_prime, cert.pieces, Fraction(cert.c)
    if not pieces or Rp not in M or any(P not in B1 for P in pieces):
        return False

    def box(r):
        x0 = Fraction(r.i - 1, 1 << r.m1)
        y0 = Fraction(r.j - 1, 1 << r.m2)
        return x0, x0 + Fraction(1, 1 << r.m1), y0, y0 + Fraction(1, 1 << r.m2)

    def overlap(a, b):
        ax0, ax1, ay0, ay1 = a
        bx0, bx1, by0, by1 = b
        w = min(ax1, bx1) - max(ax0, bx0)
        h = min(ay1, by1) - max(ay0, by0)
        return w * h if w > 0 and h > 0 else Fraction(0)

    boxes = [box(P) for P in pieces]
    bR, bRp = box(R), box(Rp)
    # pieces pairwise disjoint, so measures add up
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            if overlap(boxes[a], boxes[b]) != 0:
                return False
    areas = [(x1 - x0) * (y1 - y0) for x0, x1, y0, y1 in boxes]
    tilde = sum(areas, Fraction(0))
    # R inside the union: the pieces cover all of R's area
    if sum((overlap(bR, b) for b in boxes), Fraction(0)) != (bR[1] - bR[0]) * (bR[3] - bR[2]):
        return False
    # union inside R'
    if any(overlap(bRp, b) != ar for b, ar in zip(boxes, areas)):
        return False
    areaR = (bR[1] - bR[0]) * (bR[3] - bR[2])
    areaRp = (bRp[1] - bRp[0]) * (bRp[3] - bRp[2])
    diam2 = lambda bx: (bx[1] - bx[0]) ** 2 + (bx[3] - bx[2]) ** 2
    return (diam2(bRp) <= c * c * diam2(bR)
            and all(areaRp <= c * ar for ar in areas)
            and sum(areas, Fraction(0)) <= c * tilde
            and tilde <= c * areaR)


# ---------------------------------------------------------------------------
# differentiation deviation


def delta_estimate(f, x, basis: RectBasis, len_max, max_exponent: int) -> Fraction:
    """max |avg_R f - f(x)| over basis rectangles R containing x with len(R) <= len_max."""
    len_max = Fraction(len_max)
    m0 = 0
    while _pow2(m0) > len_max:
        m0 += 1
    fx = f.value_at(x)
    best = ZERO
    for m1 in range(m0, max_exponent + 1):
        for m2 in range(m0, max_exponent + 1):
            if not basis.admits(m1, m2):
                continue
            R = DyadicRect.containing(x, m1, m2)
            if basis.kind == "explicit" and R not in basis:
                continue
            best = max(best, abs(f.integral(R) / R.measure - fx))
    return best
