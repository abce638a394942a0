"""Rational maps of the Riemann sphere, product maps, and their critical data.

Points of P^1 are homogeneous pairs ``[z : w]`` scaled so the larger
coordinate is exactly 1, i.e. ``(x, 1)`` in the chart ``z`` (|x| <= 1) or
``(1, u)`` in the chart ``w`` (|u| < 1).  Distances are geodesic distances
on the unit round sphere, ``2 asin(chordal)``; P^1 has diameter pi.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

from .mpnum import DEFAULT_PREC, Poly, big, context, poly_roots, prec_of

CYCLE_TOL = 1e-25
DEDUP_TOL = 1e-20


class NotACycle(ValueError):
    pass


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class ProjectivePoint:
    z: mpc
    w: mpc

    def __post_init__(self):
        z, w = self.z, self.w
        if z == 0 and w == 0:
            raise ValueError("[0 : 0] is not a point of P^1")
        with context(max(prec_of(z), prec_of(w), 64)):
            if abs(z) > abs(w):
                z, w = mpc(1), w / z
            else:
                z, w = z / w, mpc(1)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_affine(cls, x, prec: int = DEFAULT_PREC) -> "ProjectivePoint":
        if x is None or (isinstance(x, complex) and not np.isfinite(x)) or x == float("inf"):
            return cls.infinity(prec)
        return cls(big(x, prec), big(1, prec))

    @classmethod
    def infinity(cls, prec: int = DEFAULT_PREC) -> "ProjectivePoint":
        return cls(big(1, prec), big(0, prec))

    @property
    def chart(self) -> str:
        """``"z"`` when the affine coordinate z/w is used, ``"w"`` for w/z."""
        return "z" if self.w == 1 else "w"

    @property
    def coordinate(self) -> mpc:
        """Chart coordinate, modulus at most 1."""
        return self.z if self.chart == "z" else self.w

    @property
    def precision(self) -> int:
        return max(prec_of(self.z), prec_of(self.w))

    def affine(self):
        """z/w, or ``None`` at infinity."""
        if self.w == 0:
            return None
        with context(self.precision):
            return self.z / self.w

    def is_infinity(self) -> bool:
        return self.w == 0

    def to_complex(self) -> complex:
        a = self.affine()
        return complex(np.inf, 0) if a is None else complex(a)

    def pair(self) -> tuple[complex, complex]:
        return complex(self.z), complex(self.w)

    def __repr__(self) -> str:
        return f"ProjectivePoint({self.to_complex()!r})"


def chordal(p: ProjectivePoint, q: ProjectivePoint) -> mpfr:
    with context(max(p.precision, q.precision)):
        num = abs(p.z * q.w - p.w * q.z)
        den = gmpy2.sqrt((abs(p.z) ** 2 + abs(p.w) ** 2) * (abs(q.z) ** 2 + abs(q.w) ** 2))
        return num / den


def sdist(p: ProjectivePoint, q: ProjectivePoint) -> mpfr:
    """Geodesic distance on the unit sphere."""
    c = chordal(p, q)
    with context(max(p.precision, q.precision)):
        return 2 * gmpy2.asin(min(c, mpfr(1)))


def normalize_np(z: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    big_z = np.abs(z) > np.abs(w)
    with np.errstate(all="ignore"):
        nz = np.where(big_z, 1.0 + 0j, z / w)
        nw = np.where(big_z, w / z, 1.0 + 0j)
    return nz, nw


def from_affine_np(x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=complex)
    inf = ~np.isfinite(x)
    z = np.where(inf, 1.0 + 0j, x)
    w = np.where(inf, 0j, 1.0 + 0j)
    return normalize_np(z, w)


def sdist_np(z1, w1, z2, w2) -> np.ndarray:
    num = np.abs(z1 * w2 - w1 * z2)
    den = np.sqrt((np.abs(z1) ** 2 + np.abs(w1) ** 2) * (np.abs(z2) ** 2 + np.abs(w2) ** 2))
    return 2 * np.arcsin(np.minimum(num / den, 1.0))


# ---------------------------------------------------------------------------
# homogeneous polynomials as coefficient lists: a[i] multiplies z^i w^(deg-i)


def h_eval(a: Sequence, z, w):
    acc = a[-1]
    wp = w
    for c in a[-2::-1]:
        acc = acc * z + c * wp
        wp = wp * w
    return acc


def h_dz(a: Sequence) -> list:
    return [a[i] * i for i in range(1, len(a))]


def h_dw(a: Sequence) -> list:
    deg = len(a) - 1
    return [a[i] * (deg - i) for i in range(deg)]


def h_mul(a: Sequence, b: Sequence) -> list:
    out = [a[0] * 0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def h_sub(a: Sequence, b: Sequence) -> list:
    return [x - y for x, y in zip(a, b)]


def h_roots(a: Sequence, prec: int) -> list[ProjectivePoint]:
    """Zeros on P^1 of a homogeneous form, with multiplicity."""
    deg = len(a) - 1
    poly = Poly(tuple(a))
    if poly.is_zero():
        raise ValueError("form vanishes identically")
    pts = [ProjectivePoint.infinity(prec)] * (deg - poly.degree)
    if poly.degree >= 1:
        rs = poly_roots(poly, prec=prec)
        with context(rs.precision):
            pts += [ProjectivePoint(r, mpc(1)) for r in rs.roots]
    return pts


# ---------------------------------------------------------------------------
# maps


def _parse_coeff(tok: str, prec: int) -> tuple[int | None, mpc]:
    idx = None
    if "=" in tok:
        k, tok = tok.split("=", 1)
        idx = int(k)
    re_s, _, im_s = tok.partition(",")
    with context(prec):
        return idx, mpc(mpfr(re_s), mpfr(im_s or "0"))


@dataclass(frozen=True, eq=False)
class RationalMap:
    """Endomorphism ``[P(z, w) : Q(z, w)]`` of P^1 of degree ``d >= 2``.

    ``P`` and ``Q`` are stored dehomogenized (``P(z, 1)``) as :class:`Poly`.
    """

    P: Poly
    Q: Poly
    degree: int = 0
    resultant_nonzero: bool = field(default=False, init=False)

    def __post_init__(self):
        d = max(self.P.degree, self.Q.degree)
        if self.degree and self.degree != d:
            raise ValueError(f"declared degree {self.degree} but coefficients give {d}")
        if d < 2:
            raise ValueError("maps must have degree d >= 2")
        object.__setattr__(self, "degree", d)
        if not self._resultant_ok():
            raise ValueError("P and Q share a zero on P^1 (resultant vanishes)")
        object.__setattr__(self, "resultant_nonzero", True)

    # constructors -----------------------------------------------------
    @classmethod
    def polynomial(cls, coeffs: Iterable, prec: int = DEFAULT_PREC) -> "RationalMap":
        return cls(Poly.from_values(list(coeffs), prec), Poly.from_values([1], prec))

    @classmethod
    def quadratic(cls, c, prec: int = DEFAULT_PREC) -> "RationalMap":
        """z^2 + c."""
        return cls.polynomial([c, 0, 1], prec)

    @classmethod
    def rational(cls, num: Iterable, den: Iterable, prec: int = DEFAULT_PREC) -> "RationalMap":
        return cls(Poly.from_values(list(num), prec), Poly.from_values(list(den), prec))

    @classmethod
    def parse(cls, text: str, prec: int = 256) -> "RationalMap":
        """Read the map text format.

        Lines ``degree <d>``, ``P <coeffs>`` and ``Q <coeffs>`` in any order;
        coefficients are ``re`` or ``re,im`` decimal strings, constant term
        first, optionally prefixed ``<index>=`` to place them explicitly.
        """
        fields: dict[str, list[str]] = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                key, *rest = line.split()
                fields[key.lower()] = rest
        d = int(fields["degree"][0]) if "degree" in fields else None
        polys = {}
        for name in ("p", "q"):
            vals: dict[int, mpc] = {}
            pos = 0
            for tok in fields.get(name, []):
                idx, v = _parse_coeff(tok, prec)
                if idx is None:
                    idx = pos
                pos = idx + 1
                if idx in vals:
                    raise ValueError(f"coefficient {idx} of {name.upper()} given twice")
                vals[idx] = v
            n = max(vals) if vals else 0
            polys[name] = Poly(tuple(vals.get(i, big(0, prec)) for i in range(n + 1)))
        return cls(polys["p"], polys["q"], d or 0)

    def to_text(self) -> str:
        """Canonical text form; identical maps give identical text."""
        def fmt(c: mpc) -> str:
            re_s = _canon(c.real)
            return re_s if c.imag == 0 else f"{re_s},{_canon(c.imag)}"
        p = " ".join(fmt(c) for c in self.hp)
        q = " ".join(fmt(c) for c in self.hq)
        return f"degree {self.degree}\nP {p}\nQ {q}\n"

    @cached_property
    def key(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    # coefficient views ----------------------------------------------
    @cached_property
    def hp(self) -> list:
        return self.P.padded(self.degree)

    @cached_property
    def hq(self) -> list:
        return self.Q.padded(self.degree)

    @cached_property
    def hp_np(self) -> np.ndarray:
        return np.array([complex(c) for c in self.hp])

    @cached_property
    def hq_np(self) -> np.ndarray:
        return np.array([complex(c) for c in self.hq])

    @property
    def precision(self) -> int:
        return max(self.P.precision, self.Q.precision)

    @cached_property
    def is_polynomial(self) -> bool:
        """True when Q is a constant multiple of w^d (infinity totally invariant)."""
        return self.Q.degree == 0 and self.hp[-1] != 0

    def _resultant_ok(self, rel: float = 1e-12) -> bool:
        """Nonvanishing resultant, relative to the Hadamard-type scale ||P||^d ||Q||^d."""
        d = self.degree
        a = self.hp_np[::-1]
        b = self.hq_np[::-1]
        if self.Q.degree == 0 and self.hp[-1] != 0:
            return True  # polynomial: Res(P, c w^d) = (lead c)^d
        syl = np.zeros((2 * d, 2 * d), dtype=complex)
        for i in range(d):
            syl[i, i:i + d + 1] = a
            syl[d + i, i:i + d + 1] = b
        sign, logdet = np.linalg.slogdet(syl)
        if sign == 0:
            return False
        return logdet > np.log(rel) + d * (np.log(np.linalg.norm(a)) + np.log(np.linalg.norm(b)))

    def swapped(self) -> "RationalMap":
        """Conjugate by the inversion z -> 1/z (the map read in the ``w`` chart)."""
        return RationalMap(Poly(tuple(self.hq[::-1])), Poly(tuple(self.hp[::-1])), self.degree)

    # homogeneous evaluation -------------------------------------------
    def lift(self, z, w):
        return h_eval(self.hp, z, w), h_eval(self.hq, z, w)

    @cached_property
    def partials(self):
        with context(self.precision):
            return h_dz(self.hp), h_dw(self.hp), h_dz(self.hq), h_dw(self.hq)

    @cached_property
    def partials_np(self):
        return tuple(np.array([complex(c) for c in a]) for a in self.partials)

    def lift_np(self, z, w):
        return h_eval(self.hp_np, z, w), h_eval(self.hq_np, z, w)

    def __repr__(self) -> str:
        return f"RationalMap(P={[complex(c) for c in self.hp]}, Q={[complex(c) for c in self.hq]})"


def _canon(x: mpfr) -> str:
    if x == 0:
        return "0"
    mant, exp, _ = x.digits(10)
    sign = ""
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    mant = mant.rstrip("0") or "0"
    return f"{sign}0.{mant}e{exp}"


@dataclass(frozen=True, eq=False)
class ProductMap:
    """``(x, y) -> (f(x), g(y))`` on P^1 x P^1."""

    first: RationalMap
    second: RationalMap

    def __post_init__(self):
        if self.first.degree != self.second.degree:
            raise ValueError("product components must share the degree d")

    @property
    def degree(self) -> int:
        return self.first.degree

    @property
    def components(self) -> tuple[RationalMap, RationalMap]:
        return (self.first, self.second)

    @cached_property
    def key(self) -> str:
        return hashlib.sha256((self.first.to_text() + "x\n" + self.second.to_text()).encode()).hexdigest()

    def to_text(self) -> str:
        return self.first.to_text() + "x\n" + self.second.to_text()


# ---------------------------------------------------------------------------
# operations


def apply(f, x):
    """Image of a point (or of a pair of points for a :class:`ProductMap`)."""
    if isinstance(f, ProductMap):
        return (apply(f.first, x[0]), apply(f.second, x[1]))
    with context(max(f.precision, x.precision)):
        a, b = f.lift(x.z, x.w)
        return ProjectivePoint(a, b)


def iterate(f, x, n: int):
    if n < 0:
        raise ValueError("n must be >= 0")
    for _ in range(n):
        x = apply(f, x)
    return x


def apply_np(f: RationalMap, z: np.ndarray, w: np.ndarray):
    a, b = f.lift_np(z, w)
    return normalize_np(a, b)


def _jacobian(f: RationalMap, z, w):
    pz, pw, qz, qw = f.partials
    return h_eval(pz, z, w) * h_eval(qw, z, w) - h_eval(pw, z, w) * h_eval(qz, z, w)


def spherical_derivative(f, x):
    """Norm of the derivative in the spherical metric.

    Uses ``|J| |x|^2 / (d |F(x)|^2)`` with ``J`` the Jacobian determinant of
    the homogeneous lift, which is independent of the chart.  Product maps
    return one value per component.
    """
    if isinstance(f, ProductMap):
        return (spherical_derivative(f.first, x[0]), spherical_derivative(f.second, x[1]))
    with context(max(f.precision, x.precision)):
        a, b = f.lift(x.z, x.w)
        jac = _jacobian(f, x.z, x.w)
        nx = abs(x.z) ** 2 + abs(x.w) ** 2
        nf = abs(a) ** 2 + abs(b) ** 2
        return abs(jac) * nx / (f.degree * nf)


def spherical_derivative_np(f: RationalMap, z, w):
    a, b = f.lift_np(z, w)
    pz, pw, qz, qw = f.partials_np
    jac = h_eval(pz, z, w) * h_eval(qw, z, w) - h_eval(pw, z, w) * h_eval(qz, z, w)
    return np.abs(jac) * (np.abs(z) ** 2 + np.abs(w) ** 2) / (f.degree * (np.abs(a) ** 2 + np.abs(b) ** 2))


def chart_derivative(f: RationalMap, x: ProjectivePoint, target_chart: str | None = None):
    """Derivative of f between the affine charts of ``x`` and of ``f(x)``."""
    pz, pw, qz, qw = f.partials
    with context(max(f.precision, x.precision)):
        a, b = f.lift(x.z, x.w)
        if x.chart == "z":
            da, db = h_eval(pz, x.z, x.w), h_eval(qz, x.z, x.w)
        else:
            da, db = h_eval(pw, x.z, x.w), h_eval(qw, x.z, x.w)
        if target_chart is None:
            target_chart = "z" if abs(b) >= abs(a) else "w"
        if target_chart == "z":
            return (da * b - a * db) / (b * b)
        return (db * a - b * da) / (a * a)


def cycle_multiplier(f, cycle: Sequence, tol: float = CYCLE_TOL):
    """Multiplier of a cycle given as its list of points.

    Returns ``(modulus, complex_multiplier)``.  The modulus is the product of
    spherical derivatives along the cycle; for product maps it is the pair of
    component moduli and the complex value is ``None``.
    """
    if isinstance(f, ProductMap):
        m1 = cycle_multiplier(f.first, [p[0] for p in cycle], tol)
        m2 = cycle_multiplier(f.second, [p[1] for p in cycle], tol)
        return (m1[0], m2[0]), None
    n = len(cycle)
    prec = max(f.precision, max(p.precision for p in cycle))
    modulus = mpfr(1, prec)
    lam = big(1, prec)
    with context(prec):
        for i, x in enumerate(cycle):
            nxt = cycle[(i + 1) % n]
            img = apply(f, x)
            if sdist(img, nxt) > tol:
                raise NotACycle(f"f(cycle[{i}]) is {float(sdist(img, nxt)):.3g} from cycle[{(i + 1) % n}]")
            modulus *= spherical_derivative(f, x)
            lam *= chart_derivative(f, x, nxt.chart)
    return modulus, lam


def critical_points(f: RationalMap) -> list[tuple[ProjectivePoint, int]]:
    """Distinct critical points with multiplicities (summing to 2d - 2).

    They are the zeros of the Wronskian form ``P_z Q_w - P_w Q_z``.
    """
    pz, pw, qz, qw = f.partials
    with context(f.precision):
        wr = h_sub(h_mul(pz, qw), h_mul(pw, qz))
    pts = h_roots(wr, f.precision)
    return group_points(pts, DEDUP_TOL)


def group_points(pts: Sequence[ProjectivePoint], tol: float) -> list[tuple[ProjectivePoint, int]]:
    out: list[list] = []
    for p in pts:
        for item in out:
            if sdist(item[0], p) <= tol:
                item[1] += 1
                break
        else:
            out.append([p, 1])
    return [(p, m) for p, m in out]


@dataclass
class PostcriticalSet:
    order: int
    points: list  # (ProjectivePoint, iterate index j, source critical point)
    source: RationalMap

    def __len__(self) -> int:
        return len(self.points)

    def locations(self) -> list[ProjectivePoint]:
        return [p for p, _, _ in self.points]

    def pairs_np(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.points:
            return np.zeros(0, complex), np.zeros(0, complex)
        z = np.array([complex(p.z) for p, _, _ in self.points])
        w = np.array([complex(p.w) for p, _, _ in self.points])
        return z, w

    def distance_np(self, z, w) -> np.ndarray:
        """Spherical distance from each query point to the set (inf if empty)."""
        z = np.atleast_1d(z)
        w = np.atleast_1d(w)
        if not self.points:
            return np.full(z.shape, np.inf)
        pz, pw = self.pairs_np()
        return sdist_np(z[:, None], w[:, None], pz[None, :], pw[None, :]).min(axis=1)

    def contains(self, other: "PostcriticalSet", tol: float = DEDUP_TOL) -> bool:
        return all(any(sdist(p, q) <= tol for q in self.locations()) for p in other.locations())


def postcritical(f: RationalMap, m: int, tol: float = DEDUP_TOL) -> PostcriticalSet:
    """PC_m = f(C) u f^2(C) u ... u f^m(C), deduplicated."""
    if m < 0:
        raise ValueError("m must be >= 0")
    pts: list = []
    for c, _ in critical_points(f):
        x = c
        for j in range(1, m + 1):
            x = apply(f, x)
            if not any(sdist(x, p) <= tol for p, _, _ in pts):
                pts.append((x, j, c))
    return PostcriticalSet(m, pts, f)


def preimages(f: RationalMap, a: ProjectivePoint) -> list[ProjectivePoint]:
    """The d preimages of ``a`` with multiplicity."""
    prec = max(f.precision, a.precision)
    with context(prec):
        form = [a.w * p - a.z * q for p, q in zip(f.hp, f.hq)]
    return h_roots(form, prec)


def preimages_np(f: RationalMap, az: np.ndarray, aw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized double-precision preimages; arrays of shape ``(len(a), d)``."""
    az = np.atleast_1d(np.asarray(az, dtype=complex))
    aw = np.atleast_1d(np.asarray(aw, dtype=complex))
    c = aw[:, None] * f.hp_np[None, :] - az[:, None] * f.hq_np[None, :]
    d = f.degree
    if d == 2:
        c0, c1, c2 = c[:, 0], c[:, 1], c[:, 2]
        s = np.sqrt(c1 * c1 - 4 * c2 * c0)
        s = np.where((np.conj(c1) * s).real < 0, -s, s)
        q = -(c1 + s) / 2
        # roots [q : c2] and [c0 : q]; q == 0 only for the zero form
        z = np.stack([q, c0], axis=1)
        w = np.stack([c2, q], axis=1)
        return normalize_np(z, w)
    zs = np.empty((len(az), d), dtype=complex)
    ws = np.empty((len(az), d), dtype=complex)
    for k in range(len(az)):
        row = c[k]
        if abs(row[-1]) >= abs(row[0]):
            r = np.roots(row[::-1])
            r = np.concatenate([r, np.full(d - len(r), np.inf)])
            zk, wk = from_affine_np(r)
        else:
            r = np.roots(row)
            r = np.concatenate([r, np.full(d - len(r), np.inf)])
            wk, zk = from_affine_np(r)
            zk, wk = normalize_np(zk, wk)
        zs[k], ws[k] = zk, wk
    return zs, ws
