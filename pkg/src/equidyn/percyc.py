"""Periodic points, multipliers, the gamma-filter and non-repelling counts.

Fixed points of f^n on P^1 are the zeros of the homogeneous form
``Phi(z, w) = w A_n(z, w) - z B_n(z, w)`` where ``F^n = (A_n, B_n)``; there
are d^n + 1 of them counted with multiplicity.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from itertools import product as cartesian

import gmpy2
import numpy as np
from gmpy2 import mpc

from .dynsys import (
    ProductMap,
    ProjectivePoint,
    RationalMap,
    chart_derivative,
    h_eval,
    iterate,
    normalize_np,
    sdist,
    sdist_np,
    spherical_derivative,
    apply,
)
from .greenmeas import BAND, INSIDE, OUTSIDE, GreenEvaluator, julia_membership, preimage_tree, rng_for
from .mpnum import COMPOSITION_CAP, DEFAULT_PREC, Poly, PrecisionOverflow, big, context, poly_roots
from .mpnum import from_text as mp_from_text, to_text as mp_to_text

INDIFFERENT_BAND = 1e-8
CROSS_CHECK_LIMIT = 65
AGREEMENT_TOL = 1e-15
CLASSES = ("repelling", "attracting", "indifferent", "saddle")


class PeriodicSolveError(ArithmeticError):
    pass


class BackendDisagreement(PeriodicSolveError):
    pass


@dataclass(frozen=True)
class PeriodicPoint:
    location: object  # ProjectivePoint, or a pair of them for product maps
    period: int
    minimal_period: int
    multiplier_modulus: object  # float, or a pair for product maps
    classification: str
    in_small_julia: str | None
    residual: float
    multiplicity: int = 1
    multiplier: complex | None = None

    @property
    def is_repelling(self) -> bool:
        return self.classification == "repelling"

    def inverse_derivative_norm(self) -> float:
        """||Df^n(a)^-1|| = 1 / (smallest component multiplier modulus)."""
        m = self.multiplier_modulus
        lo = min(m) if isinstance(m, tuple) else m
        return math.inf if lo == 0 else 1.0 / lo


@dataclass(frozen=True)
class CycleSet:
    points: tuple
    n: int
    degree: int
    k: int = 1
    backend: str = ""

    @property
    def total_with_multiplicity(self) -> int:
        return sum(p.multiplicity for p in self.points)

    @property
    def total_distinct(self) -> int:
        return len(self.points)

    @property
    def expected_total(self) -> int:
        d, n, k = self.degree, self.n, self.k
        return (d ** ((k + 1) * n) - 1) // (d ** n - 1) if k == 1 else (d ** n + 1) ** k

    def tallies(self) -> dict[str, int]:
        out = {c: 0 for c in CLASSES}
        for p in self.points:
            out[p.classification] += p.multiplicity
        return out

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


def expected_count(d: int, n: int, k: int = 1) -> int:
    """|P_n| with multiplicity: (d^{(k+1)n} - 1)/(d^n - 1) for k = 1."""
    if k == 1:
        return (d ** (2 * n) - 1) // (d ** n - 1)
    return (d ** n + 1) ** k


# ---------------------------------------------------------------------------
# evaluation of the fixed-point form by iteration


def _rotation(variant: int = 0) -> np.ndarray:
    """Unitary matrix [[a, -conj b], [b, conj a]] used as a generic chart."""
    th, ph = 0.3141 + 0.217 * variant, 0.7 + 0.533 * variant
    a = complex(math.cos(th), 0.0)
    b = math.sin(th) * complex(math.cos(ph), math.sin(ph))
    return np.array([[a, -b.conjugate()], [b, a.conjugate()]])


def _form_ratio_np(f: RationalMap, t: np.ndarray, n: int, M: np.ndarray) -> np.ndarray:
    """Phi/Phi' in the rotated coordinate t (double precision, overflow-safe)."""
    z = M[0, 0] * t + M[0, 1]
    w = M[1, 0] * t + M[1, 1]
    dz, dw = M[0, 0], M[1, 0]
    a, b = z, w
    da = np.full_like(t, dz)
    db = np.full_like(t, dw)
    pz, pw, qz, qw = f.partials_np
    for _ in range(n):
        na, nb = f.lift_np(a, b)
        ez, ew, fz, fw = h_eval(pz, a, b), h_eval(pw, a, b), h_eval(qz, a, b), h_eval(qw, a, b)
        da, db = ez * da + ew * db, fz * da + fw * db
        s = np.maximum(np.abs(na), np.abs(nb))
        a, b, da, db = na / s, nb / s, da / s, db / s
    phi = w * a - z * b
    dphi = dw * a + w * da - dz * b - z * db
    with np.errstate(all="ignore"):
        return phi / dphi


def _aberth_iterated(ratio, t: np.ndarray, maxiter: int = 300, tol: float = 4e-15, block: int = 256):
    t = t.copy()
    n = t.size
    active = np.ones(n, bool)
    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        r = ratio(t[idx])
        corr = np.empty(idx.size, complex)
        for s in range(0, idx.size, block):
            rows = idx[s:s + block]
            diff = t[rows, None] - t[None, :]
            diff[np.arange(rows.size), rows] = 1.0
            inv = 1.0 / diff
            inv[np.arange(rows.size), rows] = 0.0
            sigma = inv.sum(axis=1)
            rr = r[s:s + block]
            with np.errstate(all="ignore"):
                corr[s:s + block] = rr / (1.0 - rr * sigma)
        bad = ~np.isfinite(corr)
        corr[bad] = 0.0
        t[idx] -= corr
        done = np.abs(corr) <= tol * np.maximum(1.0, np.abs(t[idx]))
        active[idx[done & ~bad]] = False
    return t, ~active


def _phi_mp(f: RationalMap, x: ProjectivePoint, n: int, param):
    """Phi and dPhi/dt at x in its chart, t being the chart coordinate + param."""
    if x.chart == "z":
        z, w, dz, dw = param, mpc(1), mpc(1), mpc(0)
    else:
        z, w, dz, dw = mpc(1), param, mpc(0), mpc(1)
    a, b, da, db = z, w, dz, dw
    pz, pw, qz, qw = f.partials
    for _ in range(n):
        na, nb = f.lift(a, b)
        ez, ew, fz, fw = h_eval(pz, a, b), h_eval(pw, a, b), h_eval(qz, a, b), h_eval(qw, a, b)
        da, db = ez * da + ew * db, fz * da + fw * db
        s = max(abs(na), abs(nb))
        a, b, da, db = na / s, nb / s, da / s, db / s
    return w * a - z * b, dw * a + w * da - dz * b - z * db


def polish(f: RationalMap, x: ProjectivePoint, n: int, prec: int, multiplicity: int = 1, steps: int = 12):
    """Newton (multiplicity-scaled) on Phi in the natural chart of x."""
    with context(prec):
        x = ProjectivePoint(big(x.z, prec), big(x.w, prec))
        chart = x.chart
        t = x.coordinate
        eps = gmpy2.mpfr(2) ** (8 - prec)
        for _ in range(steps):
            probe = ProjectivePoint(t, mpc(1)) if chart == "z" else ProjectivePoint(mpc(1), t)
            if probe.chart != chart:
                chart = probe.chart
                t = probe.coordinate
                continue
            phi, dphi = _phi_mp(f, probe, n, t)
            if dphi == 0:
                break
            step = multiplicity * phi / dphi
            t = t - step
            if abs(step) <= eps * max(1, abs(t)):
                break
        return ProjectivePoint(t, mpc(1)) if chart == "z" else ProjectivePoint(mpc(1), t)


# ---------------------------------------------------------------------------
# backends


def _group(zs: np.ndarray, ws: np.ndarray, radius: float) -> list[list[int]]:
    order = np.lexsort((zs.imag, zs.real, np.abs(ws)))
    groups: list[list[int]] = []
    used = np.zeros(zs.size, bool)
    for i in order:
        if used[i]:
            continue
        d = sdist_np(zs[i], ws[i], zs, ws)
        members = np.flatnonzero((d <= radius) & ~used)
        used[members] = True
        groups.append([int(m) for m in members])
    return groups


def _newton_roots(f: RationalMap, n: int, seed_point: ProjectivePoint | None = None, retries: int = 6,
                  cluster_radius: float = 1e-7):
    """Distinct double-precision solutions with multiplicities."""
    N = f.degree ** n + 1
    a = seed_point or ProjectivePoint.from_affine(complex(0.1234, 0.5678))
    tree = preimage_tree(f, a, n)
    rng = rng_for(N * 7919 + n)
    for attempt in range(retries):
        M = _rotation(attempt)
        Mh = M.conj().T
        num = Mh[0, 0] * tree.z + Mh[0, 1] * tree.w
        den = Mh[1, 0] * tree.z + Mh[1, 1] * tree.w
        with np.errstate(all="ignore"):
            t0 = num / den
        t0 = np.where(np.isfinite(t0), t0, 1e3)
        # jitter keeps multiple tree atoms apart; one extra point from a circle grid
        t0 = t0 * (1 + 1e-6 * np.exp(2j * np.pi * rng.random(t0.size)))
        radius = 2 * max(1.0, float(np.abs(t0).max()))
        t0 = np.concatenate([t0, [radius * np.exp(0.5j)]])
        ratio = lambda t, M=M: _form_ratio_np(f, t, n, M)
        t, converged = _aberth_iterated(ratio, t0)
        for _ in range(retries):
            if converged.all() and np.all(np.isfinite(t)):
                zs, ws = normalize_np(M[0, 0] * t + M[0, 1], M[1, 0] * t + M[1, 1])
                groups = _group(zs, ws, cluster_radius)
                dup = []
                for g in groups:
                    if len(g) > 1:
                        x = ProjectivePoint(big(complex(zs[g[0]])), big(complex(ws[g[0]])))
                        lam = _double_multiplier(f, x, n)
                        if abs(lam - 1) > 1e-3:
                            dup.extend(g[1:])
                if not dup:
                    return [(complex(zs[g[0]]), complex(ws[g[0]]), len(g)) for g in groups]
                t[dup] = radius * np.exp(2j * np.pi * rng.random(len(dup)))
                converged[dup] = False
            t, converged = _aberth_iterated(ratio, t)
    raise PeriodicSolveError(f"Newton backend failed to isolate all {N} fixed points of f^{n}")


def _double_multiplier(f: RationalMap, x: ProjectivePoint, n: int) -> complex:
    lam = 1.0 + 0j
    for _ in range(n):
        nxt = apply(f, x)
        lam *= complex(chart_derivative(f, x, nxt.chart))
        x = nxt
    return lam


def iterate_form(f: RationalMap, n: int, prec: int, cap: int = COMPOSITION_CAP) -> Poly:
    """Phi(z, 1) as an expanded polynomial, built by homogeneous composition."""
    if f.degree ** n + 1 > cap:
        raise PrecisionOverflow(f"d^n + 1 = {f.degree ** n + 1} exceeds the composition cap {cap}")
    with context(prec):
        hp = [big(c, prec) for c in f.hp]
        hq = [big(c, prec) for c in f.hq]
        A, B = Poly((mpc(0), mpc(1))), Poly((mpc(1),))

        def ev(a):
            acc = Poly((a[-1],))
            wp = B
            for c in a[-2::-1]:
                acc = acc * A + wp * c
                wp = wp * B
            return acc

        for _ in range(n):
            A, B = ev(hp), ev(hq)
        return A - Poly((mpc(0), mpc(1))) * B


def _expand_roots(f: RationalMap, n: int, prec: int):
    N = f.degree ** n + 1
    comp_prec = max(prec, 64 + 2 * N)
    phi = iterate_form(f, n, comp_prec)
    if phi.is_zero():
        raise PeriodicSolveError("f^n is the identity")
    out = []
    m_inf = N - phi.degree
    if m_inf:
        out.append((ProjectivePoint.infinity(prec), m_inf))
    if phi.degree:
        rs = poly_roots(phi, prec=prec)
        clustered = {i for c in rs.multiplicity_clusters for i in c}
        groups = rs.multiplicity_clusters + [[i] for i in range(len(rs.roots)) if i not in clustered]
        for cluster in groups:
            r = rs.roots[cluster[0]]
            with context(rs.precision):
                out.append((ProjectivePoint(r, mpc(1)), len(cluster)))
    return out


# ---------------------------------------------------------------------------
# assembling cycle sets


def _classify(modulus: float) -> str:
    if modulus > 1 + INDIFFERENT_BAND:
        return "repelling"
    if modulus < 1 - INDIFFERENT_BAND:
        return "attracting"
    return "indifferent"


def _orbit_data(f: RationalMap, x: ProjectivePoint, n: int, tol: float = 1e-15):
    """(modulus, complex multiplier, residual, minimal period) at default precision."""
    with context(x.precision):
        modulus = gmpy2.mpfr(1)
        lam = mpc(1)
        y = x
        minimal = None
        for j in range(1, n + 1):
            nxt = apply(f, y)
            modulus *= spherical_derivative(f, y)
            lam *= chart_derivative(f, y, nxt.chart)
            y = nxt
            if minimal is None and n % j == 0 and sdist(y, x) <= tol:
                minimal = j
        residual = float(sdist(y, x))
    return float(modulus), complex(lam), residual, minimal or n


def _membership(f: RationalMap, x: ProjectivePoint, cls: str, ev) -> str:
    if f.is_polynomial:
        return julia_membership(f, x, evaluator=ev)
    # repelling (and parabolic) cycles lie in J; attracting ones in the Fatou set
    return INSIDE if cls == "attracting" else BAND


def _assemble(f: RationalMap, n: int, roots, prec: int, julia: bool, backend: str) -> CycleSet:
    ev = GreenEvaluator(f) if (julia and f.is_polynomial) else None
    pts = []
    for x, mult in roots:
        x = polish(f, x, n, prec, mult)
        modulus, lam, residual, minimal = _orbit_data(f, x, n)
        cls = _classify(modulus)
        flag = _membership(f, x, cls, ev) if julia else None
        pts.append(PeriodicPoint(x, n, minimal, modulus, cls, flag, residual, mult, lam))
    pts.sort(key=_sort_key)
    return CycleSet(tuple(pts), n, f.degree, 1, backend)


def _sort_key(p: PeriodicPoint):
    loc = p.location if isinstance(p.location, tuple) else (p.location,)
    key = []
    for x in loc:
        c = complex(x.coordinate)
        key += [x.chart, round(c.real, 12), round(c.imag, 12)]
    return tuple(key)


def find_periodic(f, n: int, backend: str = "auto", prec: int = DEFAULT_PREC, julia: bool = True,
                  cross_check_limit: int = CROSS_CHECK_LIMIT) -> CycleSet:
    """All solutions of f^n(x) = x on P^1 (or P^1 x P^1), with multiplier data.

    ``backend`` is ``expand``, ``newton-seeded``, ``both`` (run both and
    require agreement) or ``auto`` (``both`` while d^n + 1 is at most
    ``cross_check_limit``, otherwise ``newton-seeded``).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(f, ProductMap):
        a = find_periodic(f.first, n, backend, prec, julia, cross_check_limit)
        b = find_periodic(f.second, n, backend, prec, julia, cross_check_limit)
        return product_cycles(a, b)
    N = f.degree ** n + 1
    if backend == "auto":
        backend = "both" if N <= cross_check_limit else "newton-seeded"
    if backend not in ("expand", "newton-seeded", "both"):
        raise ValueError(f"unknown backend {backend!r}")
    results = {}
    if backend in ("expand", "both"):
        results["expand"] = _assemble(f, n, _expand_roots(f, n, prec), prec, julia, "expand")
    if backend in ("newton-seeded", "both"):
        raw = _newton_roots(f, n)
        with context(prec):
            roots = [(ProjectivePoint(big(z, prec), big(w, prec)), m) for z, w, m in raw]
        results["newton-seeded"] = _assemble(f, n, roots, prec, julia, "newton-seeded")
    for cs in results.values():
        if cs.total_with_multiplicity != N:
            raise PeriodicSolveError(f"{cs.backend}: found {cs.total_with_multiplicity} points, expected {N}")
    if len(results) == 2:
        gap = multiset_distance(results["expand"], results["newton-seeded"])
        if gap > AGREEMENT_TOL:
            raise BackendDisagreement(f"backends differ by {gap:.3g} for n = {n}")
        return replace(results["expand"], backend="both")
    return next(iter(results.values()))


def multiset_distance(a: CycleSet, b: CycleSet) -> float:
    """Largest distance in a greedy matching of the multisets (inf if sizes differ)."""
    def expand(cs):
        out = []
        for p in cs.points:
            out += [p.location] * p.multiplicity
        return out

    xa, xb = expand(a), expand(b)
    if len(xa) != len(xb):
        return math.inf
    if a.k == 2:
        za = np.array([[complex(x.z) for x in pair] for pair in xa])
        wa = np.array([[complex(x.w) for x in pair] for pair in xa])
        zb = np.array([[complex(x.z) for x in pair] for pair in xb])
        wb = np.array([[complex(x.w) for x in pair] for pair in xb])
        dist = np.maximum(sdist_np(za[:, None, 0], wa[:, None, 0], zb[None, :, 0], wb[None, :, 0]),
                          sdist_np(za[:, None, 1], wa[:, None, 1], zb[None, :, 1], wb[None, :, 1]))
    else:
        za = np.array([complex(x.z) for x in xa])
        wa = np.array([complex(x.w) for x in xa])
        zb = np.array([complex(x.z) for x in xb])
        wb = np.array([complex(x.w) for x in xb])
        dist = sdist_np(za[:, None], wa[:, None], zb[None, :], wb[None, :])
    from scipy.optimize import linear_sum_assignment

    rows, cols = linear_sum_assignment(dist)
    worst = float(dist[rows, cols].max()) if len(rows) else 0.0
    if worst > 1e-12:
        return worst
    # refine the matched pairs in full precision
    worst_mp = 0.0
    for i, j in zip(rows, cols):
        pa, pb = (xa[i], xb[j]) if a.k == 2 else ((xa[i],), (xb[j],))
        worst_mp = max(worst_mp, max(float(sdist(u, v)) for u, v in zip(pa, pb)))
    return worst_mp


def product_cycles(a: CycleSet, b: CycleSet) -> CycleSet:
    """P_n of a product map from the component sets."""
    pts = []
    for p, q in cartesian(a.points, b.points):
        mods = (p.multiplier_modulus, q.multiplier_modulus)
        classes = {p.classification, q.classification}
        if classes == {"repelling"}:
            cls = "repelling"
        elif classes == {"attracting"}:
            cls = "attracting"
        elif "indifferent" in classes:
            cls = "indifferent"
        else:
            cls = "saddle"
        if p.in_small_julia is None or q.in_small_julia is None:
            flag = None
        elif OUTSIDE in (p.in_small_julia, q.in_small_julia):
            flag = OUTSIDE
        else:
            flag = BAND if p.in_small_julia == q.in_small_julia == BAND else INSIDE
        pts.append(PeriodicPoint(
            (p.location, q.location), a.n,
            math.lcm(p.minimal_period, q.minimal_period), mods, cls, flag,
            max(p.residual, q.residual), p.multiplicity * q.multiplicity, None))
    pts.sort(key=_sort_key)
    return CycleSet(tuple(pts), a.n, a.degree, 2, a.backend)


# ---------------------------------------------------------------------------
# derived sets


def minimal_periods(cs: CycleSet, lower: dict, tol: float = 1e-15) -> CycleSet:
    """Divisor sieve: a point matched in P_p for a proper divisor p gets that period."""
    n = cs.n
    divisors = sorted(p for p in range(1, n) if n % p == 0)
    missing = [p for p in divisors if p not in lower]
    if missing:
        raise ValueError(f"cycle sets for divisors {missing} are required")
    out = []
    for pt in cs.points:
        minimal = n
        for p in divisors:
            for q in lower[p].points:
                if _close(pt.location, q.location, tol):
                    minimal = q.minimal_period
                    break
            if minimal != n:
                break
        out.append(replace(pt, minimal_period=minimal))
    return replace(cs, points=tuple(out))


def _close(x, y, tol: float) -> bool:
    if isinstance(x, tuple):
        return all(sdist(u, v) <= tol for u, v in zip(x, y))
    return sdist(x, y) <= tol


def multiplier_threshold(d: int, n: int, gamma: float) -> float:
    """d^{(1-γ)n/2}: the smallest multiplier modulus admitted into P_{n,γ}."""
    return float(d) ** ((1 - gamma) * n / 2)


def filter_repelling_gamma(cs: CycleSet, gamma: float) -> CycleSet:
    """P_{n,γ}: Julia points whose inverse derivative norm is at most d^{-(1-γ)n/2}."""
    if not 0 < gamma <= 1:
        raise ValueError("0 < gamma < 1 is required (gamma = 1 is the limiting case)")
    bound = float(cs.degree) ** (-(1 - gamma) * cs.n / 2)
    keep = []
    for p in cs.points:
        if p.in_small_julia is None:
            raise ValueError("Julia membership was not computed for this cycle set")
        if p.in_small_julia == BAND and p.is_repelling and p.inverse_derivative_norm() <= bound * (1 + 1e-12):
            keep.append(p)
    return replace(cs, points=tuple(keep))


def select_q(cs: CycleSet, choice: str, gamma: float = 0.5) -> CycleSet:
    """Q_n with P_{n,γ} ⊂ Q_n ⊂ P_n: ``P_nγ``, ``repelling`` or ``all``."""
    if choice == "P_nγ" or choice == "P_ngamma":
        return filter_repelling_gamma(cs, gamma)
    if choice == "repelling":
        return replace(cs, points=tuple(p for p in cs.points if p.is_repelling))
    if choice == "all":
        return cs
    raise ValueError(f"unknown Q_n choice {choice!r}")


def count_exceptional(cs: CycleSet) -> tuple[int, int]:
    """(A_n, B_n): non-repelling and outside-J counts, with multiplicity."""
    a = sum(p.multiplicity for p in cs.points if not p.is_repelling)
    if any(p.in_small_julia is None for p in cs.points):
        raise ValueError("Julia membership was not computed for this cycle set")
    b = sum(p.multiplicity for p in cs.points if p.in_small_julia != BAND)
    return a, b


def nonrepelling_cycles(f: RationalMap, n_max: int, backend: str = "newton-seeded") -> list[tuple[int, list]]:
    """Distinct non-repelling cycles of minimal period <= n_max as (period, orbit)."""
    cycles = []
    for p in range(1, n_max + 1):
        cs = find_periodic(f, p, backend=backend, julia=False)
        seen: list = []
        for pt in cs.points:
            if pt.minimal_period != p or pt.is_repelling:
                continue
            if any(_close(pt.location, s, 1e-12) for s in seen):
                continue
            orbit = [pt.location]
            for _ in range(p - 1):
                orbit.append(apply(f, orbit[-1]))
            seen.extend(orbit)
            cycles.append((p, orbit))
    return cycles


# ---------------------------------------------------------------------------
# report


CSV_COLUMNS = ("re", "im", "chart", "period", "minimal_period", "multiplier_modulus", "class",
               "julia_flag", "multiplicity", "residual")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def cycle_csv(cs: CycleSet, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for p in cs.points:
        locs = p.location if isinstance(p.location, tuple) else (p.location,)
        mods = p.multiplier_modulus if isinstance(p.multiplier_modulus, tuple) else (p.multiplier_modulus,)
        coords = [complex(x.coordinate) for x in locs]
        wr.writerow([
            ";".join(_fmt(c.real) for c in coords),
            ";".join(_fmt(c.imag) for c in coords),
            ";".join(x.chart for x in locs),
            p.period, p.minimal_period,
            ";".join(_fmt(m) for m in mods),
            p.classification, p.in_small_julia or "", p.multiplicity, format(p.residual, ".3e"),
        ])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# exact text form (used by the result cache)


def cycles_to_text(cs: CycleSet) -> str:
    """Tab-separated exact serialization; ``cycles_from_text`` inverts it."""
    lines = [f"# cycleset n={cs.n} degree={cs.degree} k={cs.k} backend={cs.backend or '-'}"]
    for p in cs.points:
        locs = p.location if isinstance(p.location, tuple) else (p.location,)
        mods = p.multiplier_modulus if isinstance(p.multiplier_modulus, tuple) else (p.multiplier_modulus,)
        lam = "-" if p.multiplier is None else f"{complex(p.multiplier).real!r},{complex(p.multiplier).imag!r}"
        lines.append("\t".join([
            ";".join(f"{mp_to_text(x.z)}|{mp_to_text(x.w)}" for x in locs),
            str(p.period), str(p.minimal_period),
            ";".join(repr(float(m)) for m in mods),
            p.classification, p.in_small_julia or "-", str(p.multiplicity), repr(float(p.residual)), lam,
        ]))
    return "\n".join(lines) + "\n"


def cycles_from_text(text: str) -> CycleSet:
    lines = text.splitlines()
    head = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split()[1:])
    pts = []
    for line in lines[1:]:
        if not line.strip():
            continue
        loc_s, per, mper, mods_s, cls, flag, mult, res, lam_s = line.split("\t")
        locs = []
        for part in loc_s.split(";"):
            zs, ws = part.split("|")
            locs.append(ProjectivePoint(mp_from_text(zs), mp_from_text(ws)))
        mods = tuple(float(m) for m in mods_s.split(";"))
        lam = None if lam_s == "-" else complex(*(float(v) for v in lam_s.split(",")))
        pts.append(PeriodicPoint(
            tuple(locs) if len(locs) > 1 else locs[0], int(per), int(mper),
            mods if len(mods) > 1 else mods[0], cls, None if flag == "-" else flag,
            float(res), int(mult), lam))
    backend = head["backend"]
    return CycleSet(tuple(pts), int(head["n"]), int(head["degree"]), int(head["k"]),
                    "" if backend == "-" else backend)
