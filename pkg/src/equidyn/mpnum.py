"""Adaptive-precision complex arithmetic and the univariate polynomial kernel.

Complex scalars are ``gmpy2.mpc`` values.  A value's precision is the one it
was created with; every kernel here runs under a context whose precision is
the maximum over its operands, so results carry the max precision of their
inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc, mpfr

BigComplex = mpc

DEFAULT_PREC = 128
MIN_PREC = 64
MAX_PREC = 8192
COMPOSITION_CAP = 4097


class PrecisionOverflow(ArithmeticError):
    """A computation would exceed a configured degree or precision cap."""


class ZeroPolynomialError(ValueError):
    pass


class RootFindingError(ArithmeticError):
    """Simultaneous iteration failed; ``partial`` holds the unusable roots."""

    def __init__(self, message: str, partial: "RootSet | None" = None):
        super().__init__(message)
        self.partial = partial


def context(prec: int):
    """A fresh gmpy2 context at ``prec`` bits (contexts are not re-entrant)."""
    if prec < MIN_PREC:
        raise ValueError(f"precision must be >= {MIN_PREC} bits, got {prec}")
    return gmpy2.context(precision=prec)


def prec_of(z) -> int:
    if isinstance(z, mpc):
        return max(z.precision)
    if isinstance(z, mpfr):
        return z.precision
    return 53


def big(x, prec: int = DEFAULT_PREC) -> mpc:
    """Coerce ``x`` (complex, str, mpc, mpfr) to an mpc at ``prec`` bits."""
    with context(prec):
        if isinstance(x, str):
            return mpc(x.replace(" ", ""))
        if isinstance(x, mpc):
            return mpc(x.real, x.imag)
        return mpc(complex(x)) if not isinstance(x, mpfr) else mpc(x, 0)


def with_prec(z: mpc, prec: int) -> mpc:
    with context(prec):
        return mpc(z.real, z.imag)


def _mpfr_text(x: mpfr) -> str:
    if gmpy2.is_zero(x):
        return "-0" if gmpy2.is_signed(x) else "0"
    if not gmpy2.is_finite(x):
        return str(x)
    mant, exp, _ = x.digits(10)
    sign = ""
    if mant.startswith("-"):
        sign, mant = "-", mant[1:]
    mant = mant.rstrip("0") or "0"
    return f"{sign}0.{mant}e{exp}"


def to_text(z: mpc) -> str:
    """Decimal serialization ``"<re> <im> @<prec>"``; exact round trip."""
    return f"{_mpfr_text(z.real)} {_mpfr_text(z.imag)} @{prec_of(z)}"


def from_text(text: str) -> mpc:
    body, _, p = text.strip().rpartition("@")
    prec = int(p)
    re_s, im_s = body.split()
    with context(prec):
        return mpc(mpfr(re_s), mpfr(im_s))


# ---------------------------------------------------------------------------
# polynomials


def _trim(coeffs: list) -> list:
    while len(coeffs) > 1 and coeffs[-1] == 0:
        coeffs.pop()
    return coeffs


@dataclass(frozen=True)
class Poly:
    """Dense polynomial, coefficients from constant to leading term."""

    coeffs: tuple

    def __post_init__(self):
        cs = _trim([c if isinstance(c, mpc) else big(c) for c in self.coeffs] or [big(0)])
        object.__setattr__(self, "coeffs", tuple(cs))

    @classmethod
    def from_values(cls, values: Iterable, prec: int = DEFAULT_PREC) -> "Poly":
        return cls(tuple(big(v, prec) for v in values))

    @classmethod
    def from_roots(cls, roots: Sequence, prec: int | None = None) -> "Poly":
        prec = prec or max([prec_of(r) for r in roots] + [DEFAULT_PREC])
        out = Poly((big(1, prec),))
        with context(prec):
            linear = [Poly((-big(r, prec), big(1, prec))) for r in roots]
        for lin in linear:
            out = out * lin
        return out

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def precision(self) -> int:
        return max(prec_of(c) for c in self.coeffs)

    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0

    def padded(self, n: int) -> list:
        """Coefficient list of length ``n + 1`` (zero leading terms added)."""
        if self.degree > n:
            raise ValueError(f"degree {self.degree} exceeds {n}")
        z = big(0, self.precision)
        return list(self.coeffs) + [z] * (n - self.degree)

    def __add__(self, other: "Poly") -> "Poly":
        with context(max(self.precision, other.precision)):
            a, b = list(self.coeffs), list(other.coeffs)
            if len(a) < len(b):
                a, b = b, a
            return Poly(tuple(x + (b[i] if i < len(b) else 0) for i, x in enumerate(a)))

    def __neg__(self) -> "Poly":
        with context(self.precision):
            return Poly(tuple(-c for c in self.coeffs))

    def __sub__(self, other: "Poly") -> "Poly":
        return self + (-other)

    def __mul__(self, other) -> "Poly":
        if not isinstance(other, Poly):
            s = other if isinstance(other, mpc) else big(other, self.precision)
            with context(max(self.precision, prec_of(s))):
                return Poly(tuple(c * s for c in self.coeffs))
        with context(max(self.precision, other.precision)):
            return Poly(tuple(_convolve(self.coeffs, other.coeffs)))

    __rmul__ = __mul__

    def __call__(self, z):
        return poly_eval(self, z)

    def to_numpy(self) -> np.ndarray:
        return np.array([complex(c) for c in self.coeffs], dtype=complex)

    def __repr__(self) -> str:
        return f"Poly({[complex(c) for c in self.coeffs]!r})"


def _convolve(a: Sequence, b: Sequence) -> list:
    zero = a[0] * 0
    out = [zero] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b):
            out[i + j] += x * y
    return out


def poly_eval(p: Poly, z) -> mpc:
    """Horner evaluation at the max precision of ``p`` and ``z``."""
    z = z if isinstance(z, mpc) else big(z, p.precision)
    with context(max(p.precision, prec_of(z))):
        acc = mpc(0)
        for c in reversed(p.coeffs):
            acc = acc * z + c
        return acc


def poly_eval_bound(p: Poly, z) -> tuple[mpc, mpfr]:
    """Horner value plus a running rounding-error bound on ``|computed - exact|``.

    Each complex multiply-add contributes at most ``4u`` relative error
    (``u`` the unit roundoff) measured against the absolute-value Horner
    recurrence, which is accumulated alongside.
    """
    z = z if isinstance(z, mpc) else big(z, p.precision)
    prec = max(p.precision, prec_of(z))
    with context(prec):
        u = mpfr(2) ** (1 - prec)
        az = abs(z)
        acc = mpc(0)
        mag = mpfr(0)
        err = mpfr(0)
        for c in reversed(p.coeffs):
            acc = acc * z + c
            mag = mag * az + abs(c)
            err = err * az + mag
        return acc, 4 * u * err * (1 + 8 * u * (p.degree + 1))


def poly_derivative(p: Poly) -> Poly:
    if p.degree == 0:
        return Poly((big(0, p.precision),))
    with context(p.precision):
        return Poly(tuple(c * i for i, c in enumerate(p.coeffs) if i > 0))


def poly_compose(p: Poly, q: Poly, cap: int = COMPOSITION_CAP) -> Poly:
    """``p(q(z))`` by Horner over polynomials."""
    if p.is_zero() or q.is_zero():
        raise ValueError("poly_compose requires nonzero operands")
    if p.degree * q.degree > cap:
        raise PrecisionOverflow(f"degree {p.degree * q.degree} exceeds composition cap {cap}")
    with context(max(p.precision, q.precision)):
        acc = Poly((p.coeffs[-1],))
        for c in reversed(p.coeffs[:-1]):
            acc = acc * q + Poly((c,))
        return acc


# ---------------------------------------------------------------------------
# simultaneous root finding


@dataclass
class RootSet:
    roots: list
    residuals: list
    multiplicity_clusters: list = field(default_factory=list)
    precision: int = DEFAULT_PREC
    certified: bool = True

    def __len__(self) -> int:
        return len(self.roots)


def _double_coeffs(p: Poly) -> np.ndarray:
    # rescale by a power of two so the largest coefficient is O(1)
    e = max(gmpy2.frexp(abs(c))[0] if c != 0 else -(10 ** 9) for c in p.coeffs)
    scale = gmpy2.mul_2exp(mpfr(1), -e)
    with context(p.precision):
        return np.array([complex(c * scale) for c in p.coeffs], dtype=complex)


def _newton_ratio(a: np.ndarray, z: np.ndarray) -> np.ndarray:
    """p(z)/p'(z) evaluated stably: reversed polynomial in 1/z outside the unit disk."""
    n = len(a) - 1
    out = np.empty_like(z)
    inner = np.abs(z) <= 1
    if inner.any():
        zi = z[inner]
        pv = np.full_like(zi, a[-1])
        dv = np.zeros_like(zi)
        for c in a[-2::-1]:
            dv = dv * zi + pv
            pv = pv * zi + c
        with np.errstate(all="ignore"):
            out[inner] = pv / dv
    outer = ~inner
    if outer.any():
        u = 1.0 / z[outer]
        rv = np.full_like(u, a[0])
        dv = np.zeros_like(u)
        for c in a[1:]:
            dv = dv * u + rv
            rv = rv * u + c
        # p(z) = z^n r(u), p'(z) = z^(n-1) (n r(u) - u r'(u))
        with np.errstate(all="ignore"):
            out[outer] = z[outer] / (n - u * dv / rv)
    return out


def _aberth_double(a: np.ndarray, maxiter: int = 200, block: int = 512) -> np.ndarray:
    n = len(a) - 1
    lead, const = abs(a[-1]), abs(a[0])
    radius = (const / lead) ** (1.0 / n) if const > 0 and lead > 0 else 1.0
    if not np.isfinite(radius) or radius == 0:
        radius = 1.0
    k = np.arange(n)
    z = radius * np.exp(1j * (2 * np.pi * k / n + 0.4))
    active = np.ones(n, dtype=bool)
    for _ in range(maxiter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        ratio = _newton_ratio(a, z[idx])
        corr = np.empty(idx.size, dtype=complex)
        for s in range(0, idx.size, block):
            rows = idx[s:s + block]
            diff = z[rows, None] - z[None, :]
            diff[np.arange(rows.size), rows] = np.inf
            with np.errstate(all="ignore"):
                rep = (1.0 / diff).sum(axis=1)
                w = ratio[s:s + block]
                corr[s:s + block] = w / (1 - w * rep)
        bad = ~np.isfinite(corr)
        corr[bad] = 0
        z[idx] -= corr
        done = np.abs(corr) <= 4e-16 * np.maximum(np.abs(z[idx]), 1e-300)
        active[idx[done | bad]] = False
    return z


def _horner_full(coeffs, abscoeffs, z):
    """p(z), p'(z) and the absolute-value Horner sum at ``z``."""
    p = mpc(0)
    dp = mpc(0)
    mag = mpfr(0)
    az = abs(z)
    for c, ac in zip(reversed(coeffs), reversed(abscoeffs)):
        dp = dp * z + p
        p = p * z + c
        mag = mag * az + ac
    return p, dp, mag


def _cluster(roots: list, radius: float) -> list:
    order = sorted(range(len(roots)), key=lambda i: float(roots[i].real))
    parent = list(range(len(roots)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    # sweep along the real axis; only neighbours within the radius are compared
    for a, i in enumerate(order):
        ri = roots[i]
        tol = radius * max(1, abs(ri))
        for j in order[a + 1:]:
            if roots[j].real - ri.real > tol * 2:
                break
            if abs(roots[j] - ri) <= tol:
                parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(len(roots)):
        groups.setdefault(find(i), []).append(i)
    return sorted(sorted(g) for g in groups.values() if len(g) > 1)


def _aberth_mp(coeffs, roots, prec, max_sweeps):
    """Gauss-Seidel Aberth sweeps at ``prec`` bits.

    A root is frozen once its correction is below the working precision or
    its residual is below the rounding noise of the evaluation.
    """
    n = len(roots)
    with context(prec):
        coeffs = [mpc(c.real, c.imag) for c in coeffs]
        absc = [abs(c) for c in coeffs]
        roots = [mpc(r.real, r.imag) for r in roots]
        gamma = 4 * (n + 2) * mpfr(2) ** (1 - prec)
        tol = mpfr(2) ** (-(prec - 12))
        active = list(range(n))
        sweeps = 0
        while active and sweeps < max_sweeps:
            sweeps += 1
            still = []
            for i in active:
                zi = roots[i]
                p, dp, mag = _horner_full(coeffs, absc, zi)
                if abs(p) <= gamma * mag:
                    continue
                s = mpc(0)
                for j in range(n):
                    if j != i:
                        diff = zi - roots[j]
                        if diff != 0:
                            s += 1 / diff
                if dp == 0:
                    corr = p / (-p * s) if s != 0 else mpc(tol)
                else:
                    w = p / dp
                    den = 1 - w * s
                    corr = w / den if den != 0 else w
                roots[i] = zi - corr
                if abs(corr) > tol * max(1, abs(roots[i])):
                    still.append(i)
            active = still
        return roots, not active


def _certify(coeffs, roots, prec, clusters):
    """Residuals and per-root pass flags.

    Simple roots pass when the Newton displacement plus the rounding-noise
    displacement is below ``2**(-prec/2)`` relative; clustered roots fall
    back to a residual test scaled by the coefficient magnitudes.
    """
    n = len(roots)
    in_cluster = {i for g in clusters for i in g}
    with context(prec):
        absc = [abs(c) for c in coeffs]
        gamma = 4 * (n + 2) * mpfr(2) ** (1 - prec)
        thr = mpfr(2) ** (-(prec // 2))
        residuals, ok = [], []
        for i, r in enumerate(roots):
            p, dp, mag = _horner_full(coeffs, absc, r)
            residuals.append(abs(p))
            if i in in_cluster or dp == 0:
                ok.append(abs(p) + gamma * mag <= thr * mag)
            else:
                ok.append((abs(p) + gamma * mag) / abs(dp) <= thr * max(1, abs(r)))
        return residuals, ok


def poly_roots(
    p: Poly,
    prec: int = DEFAULT_PREC,
    max_prec: int = MAX_PREC,
    max_sweeps: int = 400,
) -> RootSet:
    """All roots of ``p`` by Aberth-Ehrlich iteration with certified residuals.

    A double-precision Aberth pass from a circular start seeds multiprecision
    Aberth sweeps at ``prec`` bits.  Every root must pass the certificate of
    ``_certify``; on failure the precision doubles, up to ``max_prec``, and
    the sweeps restart from the current roots.  Zero roots are split off
    exactly.
    """
    if p.is_zero():
        raise ZeroPolynomialError("the zero polynomial has no finite root set")
    if p.degree < 1:
        raise ValueError("poly_roots requires degree >= 1")
    prec = max(prec, MIN_PREC, p.precision)
    zeros = 0
    while p.coeffs[zeros] == 0:
        zeros += 1
    core = list(p.coeffs[zeros:])
    n = len(core) - 1
    approx: list = []
    if n:
        a = _double_coeffs(Poly(tuple(core)))
        approx = list(_aberth_double(a))
        k = np.arange(n)
        lead, const = abs(complex(core[-1])), abs(complex(core[0]))
        radius = (const / lead) ** (1.0 / n) if const and lead and np.isfinite(const / lead) else 1.0
        fallback = radius * np.exp(1j * (2 * np.pi * k / n + 0.4))
        approx = [z if np.isfinite(z) and abs(z) < 1e150 else fallback[i] for i, z in enumerate(approx)]
        with context(prec):
            approx = [mpc(complex(z)) for z in approx]
    while True:
        converged = True
        if n:
            approx, converged = _aberth_mp(core, approx, prec, max_sweeps)
        radius = float(mpfr(2) ** (-(prec // 4)))
        clusters = _cluster(approx, radius)
        residuals, ok = _certify(core, approx, prec, clusters) if n else ([], [])
        if converged and all(ok):
            with context(prec):
                roots = [mpc(0)] * zeros + approx
            full_clusters = ([list(range(zeros))] if zeros > 1 else []) + [
                [zeros + i for i in g] for g in clusters
            ]
            return RootSet(roots, [mpfr(0)] * zeros + residuals, full_clusters, prec, True)
        if prec * 2 > max_prec:
            with context(prec):
                roots = [mpc(0)] * zeros + approx
            partial = RootSet(roots, [mpfr(0)] * zeros + residuals, clusters, prec, False)
            raise RootFindingError(f"roots not certified at {prec} bits", partial)
        prec *= 2
