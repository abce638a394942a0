"""Green function, equilibrium-measure samplers and tube masses.

Measures are point clouds stored as normalized homogeneous numpy pairs.
For product maps each atom is a pair of points and the arrays carry a
trailing axis of length 2.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import gmpy2
import numpy as np
from scipy import optimize

from .dynsys import (
    ProductMap,
    ProjectivePoint,
    RationalMap,
    from_affine_np,
    normalize_np,
    preimages_np,
    sdist_np,
)
from .mpnum import context

ATOM_CAP = 2 ** 20
PROVENANCES = ("backward-orbit", "preimage-tree", "periodic-points", "exact-circle", "exact-arcsine", "product")
Z95 = 1.959963984540054


class CapacityError(ValueError):
    """Raised when a request would exceed a configured size cap."""


# ---------------------------------------------------------------------------
# Green function


def _log_norm_bounds(f: RationalMap, grid: int = 64) -> float:
    """K = max |log ||F(u)||_inf| over the unit polydisc boundary ||u||_inf = 1."""
    r = np.sqrt(np.linspace(0.0, 1.0, grid))
    t = np.linspace(0.0, 2 * np.pi, 2 * grid, endpoint=False)
    x = (r[:, None] * np.exp(1j * t[None, :])).ravel()
    one = np.ones_like(x)

    def lognorm(z, w):
        a, b = f.lift_np(z, w)
        return np.log(np.maximum(np.abs(a), np.abs(b)))

    vals = np.concatenate([lognorm(x, one), lognorm(one, x)])
    k = float(np.abs(vals).max())

    # refine the extremes of log||F|| with a local optimizer in polar form
    def neg_abs(p, side):
        z = min(abs(p[0]), 1.0) * np.exp(1j * p[1])
        v = lognorm(np.array([z]), np.array([1.0 + 0j])) if side == 0 else lognorm(np.array([1.0 + 0j]), np.array([z]))
        return -abs(float(v[0]))

    for side, block in ((0, vals[: x.size]), (1, vals[x.size:])):
        i = int(np.argmax(np.abs(block)))
        start = np.array([abs(x[i]), np.angle(x[i])])
        res = optimize.minimize(neg_abs, start, args=(side,), method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-12})
        k = max(k, -float(res.fun))
    return k


@dataclass
class GreenEvaluator:
    """Escape-rate evaluator ``G_n`` with ``|G_n - G| <= C d^-n``."""

    map: RationalMap
    depth: int = 60
    error_constant: float = field(default=0.0)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.error_constant:
            k = _log_norm_bounds(self.map)
            # grid-plus-refine estimate of the sup, padded for safety
            self.error_constant = (1.05 * k + 1e-12) / (self.map.degree - 1)

    @property
    def error_bound(self) -> float:
        return self.error_constant * float(self.map.degree) ** (-self.depth)

    def values_np(self, z, w, depth: int | None = None) -> np.ndarray:
        """Vectorized G_n at normalized pairs (double precision)."""
        f = self.map
        depth = self.depth if depth is None else depth
        z, w = normalize_np(z, w)
        shape = z.shape
        z, w = z.ravel(), w.ravel()
        total = np.zeros(z.shape)
        if f.is_polynomial:
            with np.errstate(divide="ignore"):
                total += np.where(np.abs(w) < 1, -np.log(np.abs(w)), 0.0)
        scale = 1.0
        for _ in range(depth):
            a, b = f.lift_np(z, w)
            m = np.maximum(np.abs(a), np.abs(b))
            scale /= f.degree
            total += scale * np.log(m)
            with np.errstate(invalid="ignore"):
                z, w = a / m, b / m
        return total.reshape(shape)

    def value_mp(self, x: ProjectivePoint, depth: int | None = None):
        f = self.map
        depth = self.depth if depth is None else depth
        prec = max(x.precision, f.precision)
        with context(prec):
            z, w = x.z, x.w
            total = gmpy2.mpfr(0)
            if f.is_polynomial:
                if w == 0:
                    return gmpy2.inf()
                if abs(w) < 1:
                    total -= gmpy2.log(abs(w))
            scale = gmpy2.mpfr(1)
            for _ in range(depth):
                a, b = f.lift(z, w)
                m = max(abs(a), abs(b))
                scale /= f.degree
                total += scale * gmpy2.log(m)
                z, w = a / m, b / m
            return total


def green_value(f: RationalMap, x, depth: int = 60, evaluator: GreenEvaluator | None = None):
    """``(G_depth(x), error_bound)``.

    Polynomial maps use the log+ normalization (G = 0 exactly on the filled
    Julia set, G = inf at infinity); other maps report the potential of the
    max-norm lift.
    """
    ev = evaluator if evaluator is not None else GreenEvaluator(f, depth)
    if isinstance(x, ProjectivePoint):
        if f.is_polynomial and x.is_infinity():
            return math.inf, ev.error_constant * f.degree ** (-depth)
        val = float(ev.value_mp(x, depth)) if x.precision > 53 else float(ev.values_np(*x.pair(), depth=depth))
    else:
        z, w = from_affine_np(np.asarray(x, dtype=complex))
        val = float(ev.values_np(z, w, depth))
    return val, ev.error_constant * f.degree ** (-depth)


# ---------------------------------------------------------------------------
# Julia membership


INSIDE, OUTSIDE, BAND = "inside", "outside", "boundary-band"


def _star(z: complex, w: complex, eps: float, directions: int, radii: Sequence[float]):
    """Points at spherical distance ~eps*r around [z:w] in its own chart."""
    ang = np.exp(2j * np.pi * (np.arange(directions) + 0.5) / directions)
    steps = np.concatenate([r * eps * ang for r in radii])
    # a chart step h moves the spherical distance by about 2|h|/(1+|x|^2) <= 2|h|
    if abs(w) >= abs(z):
        x = z / w
        return normalize_np(x + steps * (1 + abs(x) ** 2) / 2, np.ones_like(steps))
    u = w / z
    return normalize_np(np.ones_like(steps), u + steps * (1 + abs(u) ** 2) / 2)


def default_tolerance(prec: int) -> float:
    """G threshold for a point known to ``prec`` bits.

    G is only Hölder near J, so a point rounded at relative size 2^-prec can
    carry G far above the rounding error; the threshold scales accordingly.
    """
    return max(1e-10, 2.0 ** (-0.3 * prec))


def julia_membership(f, x, tol: float | None = None, eps: float = 1e-2, depth: int = 60,
                     directions: int = 32, radii: Sequence[float] = (1.0, 0.1, 0.01),
                     evaluator: GreenEvaluator | None = None) -> str:
    """Classify ``x`` as inside / outside / boundary-band of the filled Julia set.

    For a :class:`ProductMap` ``x`` is a pair; the result is boundary-band
    only when both components are, outside when either is outside.
    """
    if isinstance(f, ProductMap):
        a = julia_membership(f.first, x[0], tol, eps, depth, directions, radii)
        b = julia_membership(f.second, x[1], tol, eps, depth, directions, radii)
        if OUTSIDE in (a, b):
            return OUTSIDE
        return BAND if a == b == BAND else INSIDE
    if not f.is_polynomial:
        raise NotImplementedError("Green-function membership needs a polynomial map")
    ev = evaluator if evaluator is not None else GreenEvaluator(f, depth)
    if not isinstance(x, ProjectivePoint):
        x = ProjectivePoint.from_affine(x)
    if tol is None:
        tol = default_tolerance(x.precision)
    g, _ = green_value(f, x, depth, ev)
    if g > tol:
        return OUTSIDE
    sz, sw = _star(*x.pair(), eps, directions, radii)
    vals = ev.values_np(sz, sw, depth)
    return BAND if np.any(vals > tol) else INSIDE


def julia_membership_np(f: RationalMap, z, w, tol: float = default_tolerance(53), eps: float = 1e-2,
                        depth: int = 60, directions: int = 32,
                        radii: Sequence[float] = (1.0, 0.1, 0.01),
                        evaluator: GreenEvaluator | None = None) -> np.ndarray:
    """Vectorized double-precision membership; returns an array of labels."""
    ev = evaluator if evaluator is not None else GreenEvaluator(f, depth)
    z, w = normalize_np(np.atleast_1d(z), np.atleast_1d(w))
    g = ev.values_np(z, w, depth)
    out = np.where(g > tol, OUTSIDE, INSIDE).astype(object)
    for i in np.flatnonzero(g <= tol):
        sz, sw = _star(z[i], w[i], eps, directions, radii)
        if np.any(ev.values_np(sz, sw, depth) > tol):
            out[i] = BAND
    return out


# ---------------------------------------------------------------------------
# measure samples


@dataclass(frozen=True)
class MeasureSample:
    z: np.ndarray
    w: np.ndarray
    weights: np.ndarray
    provenance: str
    rng_seed: int | None = None
    multiplicity_exact: bool = False

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        for arr in (self.z, self.w, self.weights):
            arr.setflags(write=False)

    @property
    def k(self) -> int:
        return 1 if self.z.ndim == 1 else self.z.shape[1]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def effective_size(self) -> float:
        s2 = float(np.sum(self.weights ** 2))
        return self.total_mass ** 2 / s2 if s2 else 0.0

    def component(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if self.k == 1:
            return self.z, self.w
        return self.z[:, i], self.w[:, i]

    def affine(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(self.w == 0, np.inf + 0j, self.z / np.where(self.w == 0, 1, self.w))
        return a

    def integrate(self, phi) -> float:
        return float(np.dot(self.weights, phi(self.z, self.w)))

    # text serialization -------------------------------------------------
    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# provenance={self.provenance} seed={self.rng_seed} k={self.k} atoms={len(self)}\n")
        a = self.affine()
        if a.ndim == 1:
            a = a[:, None]
        for row, wt in zip(a, self.weights):
            cols = []
            for c in row:
                cols += ["inf", "0"] if not np.isfinite(c) else [repr(float(c.real)), repr(float(c.imag))]
            buf.write(" ".join(cols) + f" {float(wt)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "MeasureSample":
        lines = text.splitlines()
        header = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
        k = int(header["k"])
        rows = [ln.split() for ln in lines[1:] if ln.strip()]
        vals = np.array([[complex(float(r[2 * i]), float(r[2 * i + 1])) for i in range(k)] for r in rows],
                        dtype=complex).reshape(len(rows), k)
        wts = np.array([float(r[-1]) for r in rows])
        z, w = from_affine_np(vals)
        if k == 1:
            z, w = z[:, 0], w[:, 0]
        seed = None if header["seed"] == "None" else int(header["seed"])
        return cls(z, w, wts, header["provenance"], seed)


def empty_sample(provenance: str, rng_seed=None, k: int = 1) -> MeasureSample:
    shape = (0,) if k == 1 else (0, k)
    return MeasureSample(np.zeros(shape, complex), np.zeros(shape, complex), np.zeros(0), provenance, rng_seed)


def rng_for(seed: int) -> np.random.Generator:
    """The portable generator used everywhere (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def default_seed(f: RationalMap) -> ProjectivePoint:
    return ProjectivePoint.from_affine(10) if f.is_polynomial else ProjectivePoint.from_affine(complex(0.7071, 0.3))


def sample_backward(f, seed: ProjectivePoint | None = None, burn_in: int = 50, count: int = 10_000,
                    rng_seed: int = 0, chains: int = 1) -> MeasureSample:
    """Random backward orbit(s); each step picks one of the d preimages uniformly.

    ``chains`` independent orbits run side by side and their post-burn-in
    atoms are interleaved; ``chains=1`` is a single orbit.
    """
    if isinstance(f, ProductMap):
        rng = rng_for(rng_seed)
        s1, s2 = (int(s) for s in rng.integers(0, 2 ** 63, size=2))
        seeds = seed if seed is not None else (None, None)
        a = sample_backward(f.first, seeds[0], burn_in, count, s1, chains)
        b = sample_backward(f.second, seeds[1], burn_in, count, s2, chains)
        return _product_sample(a, b, "product", rng_seed)
    if count < 0 or burn_in < 0 or chains < 1:
        raise ValueError("count, burn_in must be >= 0 and chains >= 1")
    if count == 0:
        return empty_sample("backward-orbit", rng_seed)
    rng = rng_for(rng_seed)
    seed = seed if seed is not None else default_seed(f)
    z = np.full(chains, complex(seed.z))
    w = np.full(chains, complex(seed.w))
    steps = burn_in + -(-count // chains)
    out_z = np.empty((steps - burn_in, chains), complex)
    out_w = np.empty_like(out_z)
    for s in range(steps):
        pz, pw = preimages_np(f, z, w)
        pick = rng.integers(0, f.degree, size=chains)
        idx = np.arange(chains)
        z, w = pz[idx, pick], pw[idx, pick]
        if s >= burn_in:
            out_z[s - burn_in], out_w[s - burn_in] = z, w
    zs, ws = out_z.ravel()[:count], out_w.ravel()[:count]
    return MeasureSample(zs, ws, np.full(count, 1.0 / count), "backward-orbit", rng_seed)


def preimage_tree(f, a: ProjectivePoint, n: int, cap: int = ATOM_CAP) -> MeasureSample:
    """All d^{kn} preimages of ``a`` under f^n with weight d^{-kn}."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if isinstance(f, ProductMap):
        if f.degree ** (2 * n) > cap:
            raise CapacityError(f"d^(2n) = {f.degree ** (2 * n)} exceeds the atom cap {cap}")
        t1 = preimage_tree(f.first, a[0], n, cap)
        t2 = preimage_tree(f.second, a[1], n, cap)
        return _product_sample(t1, t2, "preimage-tree", None, cartesian=True)
    if f.degree ** n > cap:
        raise CapacityError(f"d^n = {f.degree ** n} exceeds the atom cap {cap}")
    z = np.array([complex(a.z)])
    w = np.array([complex(a.w)])
    for _ in range(n):
        pz, pw = preimages_np(f, z, w)
        z, w = pz.ravel(), pw.ravel()
    size = z.size
    return MeasureSample(z, w, np.full(size, 1.0 / size), "preimage-tree", None, multiplicity_exact=True)


def _product_sample(a: MeasureSample, b: MeasureSample, provenance: str, seed, cartesian: bool = False) -> MeasureSample:
    if cartesian:
        ia, ib = np.meshgrid(np.arange(len(a)), np.arange(len(b)), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        wts = a.weights[ia] * b.weights[ib]
    else:
        ia = ib = np.arange(min(len(a), len(b)))
        wts = np.full(ia.size, 1.0 / max(ia.size, 1))
    z = np.stack([a.z[ia], b.z[ib]], axis=1)
    w = np.stack([a.w[ia], b.w[ib]], axis=1)
    return MeasureSample(z, w, wts, provenance, seed, multiplicity_exact=cartesian)


def exact_measure(kind: str, count: int, rng_seed: int = 0, quadrature: bool = False) -> MeasureSample:
    """Uniform measure on the unit circle or arcsine measure on [-2, 2].

    With ``quadrature=True`` the atoms are deterministic equispaced circle
    nodes or Chebyshev nodes, which integrate low-degree trigonometric data
    exactly.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    prov = {"circle": "exact-circle", "arcsine": "exact-arcsine"}.get(kind)
    if prov is None:
        raise ValueError(f"unknown exact measure {kind!r}")
    if count == 0:
        return empty_sample(prov, rng_seed)
    if quadrature:
        theta = 2 * np.pi * (np.arange(count) + 0.5) / count
    else:
        theta = 2 * np.pi * rng_for(rng_seed).random(count)
    if kind == "circle":
        x = np.exp(1j * theta)
    else:
        x = 2 * np.cos(theta) + 0j
    z, w = from_affine_np(x)
    return MeasureSample(z, w, np.full(count, 1.0 / count), prov, None if quadrature else rng_seed)


def push_forward(f, sample: MeasureSample) -> MeasureSample:
    if isinstance(f, ProductMap):
        z1, w1 = f.first.lift_np(*sample.component(0))
        z2, w2 = f.second.lift_np(*sample.component(1))
        a, b = normalize_np(z1, w1)
        c, e = normalize_np(z2, w2)
        return MeasureSample(np.stack([a, c], 1), np.stack([b, e], 1), sample.weights.copy(),
                             sample.provenance, sample.rng_seed)
    a, b = f.lift_np(sample.z, sample.w)
    z, w = normalize_np(a, b)
    return MeasureSample(z, w, sample.weights.copy(), sample.provenance, sample.rng_seed)


# ---------------------------------------------------------------------------
# tubes


@dataclass(frozen=True)
class TubeQuery:
    """ε-neighbourhood of a finite set V (for product maps, of the fibres through V)."""

    V: tuple
    eps: float
    kappa: float = 2.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if len(self.V) < 2:
            raise ValueError("V needs at least two points")

    @classmethod
    def from_degree(cls, V: Sequence, kappa: float = 2.0) -> "TubeQuery":
        """Radius δ^-κ for δ = |V|."""
        return cls(tuple(V), float(len(V)) ** (-kappa), kappa)

    @property
    def delta(self) -> int:
        return len(self.V)


def _as_pairs(V) -> tuple[np.ndarray, np.ndarray]:
    pts = [p if isinstance(p, ProjectivePoint) else ProjectivePoint.from_affine(p) for p in V]
    return np.array([complex(p.z) for p in pts]), np.array([complex(p.w) for p in pts])


def distance_to_set(z: np.ndarray, w: np.ndarray, V, chunk: int = 8192) -> np.ndarray:
    vz, vw = _as_pairs(V)
    out = np.empty(z.shape)
    for s in range(0, z.size, chunk):
        out[s:s + chunk] = sdist_np(z[s:s + chunk, None], w[s:s + chunk, None], vz[None, :], vw[None, :]).min(1)
    return out


def tube_mass(sample: MeasureSample, q: TubeQuery) -> tuple[float, float]:
    """Weighted mass of the tube with a 95% binomial (Wald) half-width."""
    if len(sample) == 0:
        raise ValueError("sample is empty")
    if sample.k == 1:
        dist = distance_to_set(sample.z, sample.w, q.V)
    else:
        # V is a pair (S1, S2) of finite sets; the tube is around S1 x P1 u P1 x S2
        S1, S2 = q.V
        dist = np.minimum(distance_to_set(*sample.component(0), S1), distance_to_set(*sample.component(1), S2))
    inside = dist < q.eps
    p = min(float(np.dot(sample.weights, inside)) / sample.total_mass, 1.0)  # rounding can overshoot
    half = Z95 * math.sqrt(max(p * (1 - p), 0.0) / max(sample.effective_size, 1.0))
    return p, half


def tube_decay_fit(sample: MeasureSample, V, radii: Sequence[float]) -> tuple[float, float]:
    """Fit μ(Tub(V; t)) ≈ A t^β by least squares in log-log; returns (A, β)."""
    dist = distance_to_set(sample.z, sample.w, V) if sample.k == 1 else None
    if dist is None:
        raise NotImplementedError("decay fit is for k = 1 samples")
    masses = np.array([np.dot(sample.weights, dist < t) / sample.total_mass for t in radii])
    keep = masses > 0
    if keep.sum() < 2:
        raise ValueError("not enough radii with positive mass")
    beta, loga = np.polyfit(np.log(np.asarray(radii)[keep]), np.log(masses[keep]), 1)
    return float(math.exp(loga)), float(beta)


def fit_green_holder(f: RationalMap, sample: MeasureSample, radii: Sequence[float] = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4),
                     directions: int = 16, depth: int = 60, max_points: int = 200) -> float:
    """Empirical Hölder exponent of G near the support of ``sample``.

    Takes the largest G over a small circle of radius t around atoms and
    fits log max G against log t.
    """
    ev = GreenEvaluator(f, depth)
    idx = np.linspace(0, len(sample) - 1, min(max_points, len(sample))).astype(int)
    peaks = []
    for t in radii:
        m = 0.0
        for i in idx:
            sz, sw = _star(sample.z[i], sample.w[i], t, directions, (1.0,))
            m = max(m, float(ev.values_np(sz, sw).max()))
        peaks.append(m)
    slope, _ = np.polyfit(np.log(radii), np.log(peaks), 1)
    return float(slope)
