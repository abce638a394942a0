"""Test functions, pairings of measures and exponential-rate fits.

Points of P^1 are handled as normalized homogeneous pairs and mapped to
the unit sphere in R^3 by ``embed``.  The geodesic distance on that sphere
is the package-wide spherical distance (diameter pi), so a function that
is L-Lipschitz for the ambient Euclidean distance is L-Lipschitz for it.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynsys import ProductMap, ProjectivePoint, RationalMap, normalize_np, postcritical, preimages_np, sdist_np
from .greenmeas import (
    ATOM_CAP,
    MeasureSample,
    exact_measure,
    preimage_tree,
    rng_for,
    sample_backward,
)
from .percyc import CycleSet, find_periodic, select_q

FAMILIES = ("smooth-chart", "trig", "bump", "holder", "constant", "height")
REFERENCE_ATOMS = 100_000
SMOOTHING = 5
MISFIT = 0.1
QUADRATURE_NODES = 1 << 16
ROUNDING_FLOOR = 1e-12


class FitRefused(ValueError):
    pass


# ---------------------------------------------------------------------------
# geometry helpers


def embed(z, w) -> np.ndarray:
    """Unit-sphere coordinates (X, Y, Z) of [z:w], shape (..., 3)."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    nz, nw = np.abs(z) ** 2, np.abs(w) ** 2
    s = nz + nw
    c = z * np.conj(w)
    return np.stack([2 * c.real / s, 2 * c.imag / s, (nz - nw) / s], axis=-1)


def unembed(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X, Y, Z = P[..., 0], P[..., 1], P[..., 2]
    south = Z < 0
    z = np.where(south, X + 1j * Y, 1 + Z + 0j)
    w = np.where(south, 1 - Z + 0j, X - 1j * Y)
    return normalize_np(z, w)


def sphere_points(count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (Fubini-Study) random points as normalized pairs."""
    P = rng.normal(size=(count, 3))
    P /= np.linalg.norm(P, axis=1)[:, None]
    return unembed(P)


def _geodesic_to(P: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(P @ c, -1.0, 1.0))


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """A real function on P^1 with certified norm bounds.

    ``norm_C1`` is sup|phi| + Lip(phi) and ``norm_Ca`` is sup|phi| plus the
    alpha-Hoelder constant; both are upper bounds fixed at construction
    and checked by :meth:`verify`.
    """

    __test__ = False  # keep pytest from collecting the class

    ident: str
    family: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    norm_C0: float
    norm_C1: float
    norm_Ca: float
    alpha: float = 1.0

    def __call__(self, z, w) -> np.ndarray:
        return self.fn(embed(z, w))

    def at(self, x: ProjectivePoint) -> float:
        z, w = x.pair()
        return float(self(np.array([complex(z)]), np.array([complex(w)]))[0])

    @property
    def holder_constant(self) -> float:
        return self.norm_Ca - self.norm_C0

    def verify(self, pairs: int = 10_000, rng_seed: int = 0) -> bool:
        """Check the Hoelder/Lipschitz bound and the sup bound on random pairs."""
        rng = rng_for(rng_seed)
        z1, w1 = sphere_points(pairs, rng)
        P1 = embed(z1, w1)
        # half of the partners are near their base point, at scales 1e-4 .. 1
        far_z, far_w = sphere_points(pairs // 2, rng)
        near = pairs - pairs // 2
        step = rng.normal(size=(near, 3)) * (10.0 ** rng.uniform(-4, 0, size=(near, 1)))
        Q = P1[pairs // 2:] + step
        Q /= np.linalg.norm(Q, axis=1)[:, None]
        z2 = np.concatenate([far_z, unembed(Q)[0]])
        w2 = np.concatenate([far_w, unembed(Q)[1]])
        v1, v2 = self(z1, w1), self(z2, w2)
        dist = sdist_np(z1, w1, z2, w2)
        bound = self.holder_constant * dist ** self.alpha
        ok_lip = np.all(np.abs(v1 - v2) <= bound * (1 + 1e-9) + 1e-12)
        ok_sup = np.all(np.abs(v1) <= self.norm_C0 * (1 + 1e-12) + 1e-15)
        return bool(ok_lip and ok_sup)


def constant(value: float = 1.0) -> TestFunction:
    v = float(value)
    return TestFunction(f"const({v:g})", "constant", lambda P: np.full(P.shape[:-1], v), abs(v), abs(v), abs(v))


def height() -> TestFunction:
    """|z|^2 / (|z|^2 + |w|^2): 0 at the origin, 1 at infinity."""
    return TestFunction("height", "trig", lambda P: (1 + P[..., 2]) / 2, 1.0, 1.5, 1.5)


# (name, function of rotated coordinates, sup bound, Lipschitz bound)
_TRIG = (
    ("X", lambda X, Y, Z: X, 1.0, 1.0),
    ("Y", lambda X, Y, Z: Y, 1.0, 1.0),
    ("Z", lambda X, Y, Z: Z, 1.0, 1.0),
    ("XY", lambda X, Y, Z: X * Y, 0.5, 1.0),
    ("XZ", lambda X, Y, Z: X * Z, 0.5, 1.0),
    ("YZ", lambda X, Y, Z: Y * Z, 0.5, 1.0),
    ("X2-Y2", lambda X, Y, Z: (X * X - Y * Y) / 2, 0.5, 1.0),
    ("3Z2-1", lambda X, Y, Z: (3 * Z * Z - 1) / 2, 1.0, 1.5),
)


def _rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


def _trig(i: int, R: np.ndarray) -> TestFunction:
    name, g, sup, lip = _TRIG[i % len(_TRIG)]

    def fn(P, R=R, g=g):
        Q = P @ R.T
        return g(Q[..., 0], Q[..., 1], Q[..., 2])

    return TestFunction(f"trig:{name}#{i}", "trig", fn, sup, sup + lip, sup + lip)


def _smooth(theta: float, v: np.ndarray, phase: float, i: int) -> TestFunction:
    def fn(P):
        return np.cos(theta * (P @ v) + phase)

    return TestFunction(f"smooth:{i}", "smooth-chart", fn, 1.0, 1.0 + theta, 1.0 + theta)


_BUMP_LIP = 8 / (3 * math.sqrt(3))


def bump(centre: np.ndarray, radius: float, ident: str = "bump") -> TestFunction:
    """(1 - (dist/radius)^2)^2 on the geodesic ball, zero outside."""
    c = np.asarray(centre, float) / np.linalg.norm(centre)

    def fn(P):
        s = _geodesic_to(P, c) / radius
        return np.where(s < 1, (1 - s * s) ** 2, 0.0)

    lip = _BUMP_LIP / radius
    return TestFunction(ident, "bump", fn, 1.0, 1.0 + lip, 1.0 + lip)


def holder_kernel(centre: np.ndarray, alpha: float, ident: str = "holder") -> TestFunction:
    """(dist(x, c) / pi)^alpha."""
    c = np.asarray(centre, float) / np.linalg.norm(centre)

    def fn(P):
        return (_geodesic_to(P, c) / math.pi) ** alpha

    return TestFunction(ident, "holder", fn, 1.0, math.inf, 1.0 + math.pi ** (-alpha), alpha)


def _parse_kind(kind: str) -> tuple[str, float | None]:
    k = kind.strip().lower().replace("ö", "o")
    m = re.fullmatch(r"holder[:(]?\s*([0-9./]+)\s*\)?", k)
    if m:
        num = m.group(1)
        if "/" in num:
            a, b = num.split("/")
            return "holder", float(a) / float(b)
        return "holder", float(num)
    if k in ("smooth", "smooth-chart"):
        return "smooth-chart", None
    if k in FAMILIES:
        return k, None
    raise ValueError(f"unknown test-function family {kind!r}")


def make_test_family(kind: str, count: int, rng_seed: int = 0, verify: bool = True) -> list[TestFunction]:
    """A reproducible family of ``count`` test functions of the given kind.

    Kinds: ``smooth-chart``, ``trig``, ``bump``, ``constant``, ``height``
    (a single member whatever ``count`` is) and ``holder(a)`` (also
    written ``holder:a``).  With ``verify`` every member
    is checked on 10^4 random pairs before it is returned.
    """
    fam, alpha = _parse_kind(kind)
    rng = rng_for(rng_seed)
    out: list[TestFunction] = []
    if fam == "trig":
        R = _rotation(rng)
        out = [_trig(i, R) for i in range(count)]
    elif fam == "smooth-chart":
        for i in range(count):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            out.append(_smooth(float(rng.uniform(0.5, 3.0)), v, float(rng.uniform(0, 2 * np.pi)), i))
    elif fam == "bump":
        for i in range(count):
            out.append(bump(rng.normal(size=3), float(rng.uniform(0.3, 1.5)), f"bump:{i}"))
    elif fam == "holder":
        for i in range(count):
            out.append(holder_kernel(rng.normal(size=3), alpha, f"holder({alpha:g}):{i}"))
    elif fam == "height":
        out = [height()]
    else:
        out = [constant(float(rng.uniform(-1, 1)) if i else 1.0) for i in range(count)]
    if verify:
        for i, tf in enumerate(out):
            if not tf.verify(rng_seed=rng_seed * 1000 + i):
                raise ArithmeticError(f"norm bound of {tf.ident} failed verification")
    return out


# ---------------------------------------------------------------------------
# pairings


def _values(sample: MeasureSample, phi: TestFunction) -> np.ndarray:
    if sample.k == 1:
        return phi(sample.z, sample.w)
    # tensor product on P^1 x P^1
    return phi(sample.z[:, 0], sample.w[:, 0]) * phi(sample.z[:, 1], sample.w[:, 1])


def pair(a: MeasureSample, b: MeasureSample, phi: TestFunction) -> float:
    """<a - b, phi> for weighted samples."""
    va = float(np.dot(a.weights, _values(a, phi))) if len(a) else 0.0
    vb = float(np.dot(b.weights, _values(b, phi))) if len(b) else 0.0
    return va - vb


def cycles_sample(cs: CycleSet) -> MeasureSample:
    """Atoms at the points of ``cs`` with weight multiplicity * d^{-kn}."""
    scale = float(cs.degree) ** (-cs.k * cs.n)
    if cs.k == 1:
        zs = np.array([complex(p.location.z) for p in cs.points], dtype=complex)
        ws = np.array([complex(p.location.w) for p in cs.points], dtype=complex)
    else:
        zs = np.array([[complex(x.z) for x in p.location] for p in cs.points], dtype=complex).reshape(-1, 2)
        ws = np.array([[complex(x.w) for x in p.location] for p in cs.points], dtype=complex).reshape(-1, 2)
    wts = np.array([p.multiplicity * scale for p in cs.points], dtype=float)
    return MeasureSample(zs, ws, wts, "periodic-points", None, multiplicity_exact=True)


BLOCKS = 1000


def _block_means(values: np.ndarray, weights: np.ndarray, blocks: int) -> np.ndarray:
    """Weighted means of ``blocks`` contiguous slices (whole chain steps)."""
    edges = np.linspace(0, len(values), blocks + 1).astype(int)
    num = np.add.reduceat(values * weights, edges[:-1])
    den = np.add.reduceat(weights, edges[:-1])
    return num / den


@dataclass(frozen=True)
class Reference:
    """A reference measure; ``exact`` means quadrature of a known measure.

    Sampled references get batch-means uncertainty: the atoms are cut
    into contiguous blocks so that correlation along backward chains does
    not shrink the interval.
    """

    sample: MeasureSample
    exact: bool
    kind: str
    blocks: int = BLOCKS

    def integral(self, phi: TestFunction) -> tuple[float, float, np.ndarray]:
        """(value, 95% half-width, block means; empty for exact references)."""
        v = _values(self.sample, phi)
        wts = self.sample.weights / self.sample.total_mass
        mean = float(np.dot(wts, v))
        if self.exact:
            return mean, 0.0, np.zeros(0)
        bm = _block_means(v, wts, min(self.blocks, len(v)))
        return mean, 1.96 * float(np.std(bm, ddof=1)) / math.sqrt(len(bm)), bm


def _monomial_kind(f: RationalMap) -> str | None:
    if not isinstance(f, RationalMap) or not f.is_polynomial:
        return None
    P = f.hp_np
    Q = f.hq_np
    d = f.degree
    lead = P[d]
    if np.allclose(P[:d], 0, atol=1e-300) and np.allclose(Q[1:], 0) and np.isclose(abs(lead / Q[0]), 1):
        return "circle"
    if d == 2 and np.allclose(P[1], 0) and np.isclose(P[2] / Q[0], 1) and np.isclose(P[0] / Q[0], -2):
        return "arcsine"
    return None


def reference_measure(f, count: int = REFERENCE_ATOMS, rng_seed: int = 0, smoothing: int = SMOOTHING) -> Reference:
    """Exact quadrature for z^d (|lead| = 1) and z^2 - 2; else a smoothed backward sample.

    Each backward atom x is replaced by its ``smoothing``-level preimage
    tree with weight d^{-smoothing} per leaf.  By invariance of mu this
    leaves the expectation unchanged and integrates out most of the
    Monte Carlo variance of smooth test functions.
    """
    kind = _monomial_kind(f)
    if kind is not None:
        return Reference(exact_measure(kind, QUADRATURE_NODES, quadrature=True), True, kind)
    if count < 100_000:
        raise ValueError("a sampled reference needs at least 10^5 atoms")
    s = sample_backward(f, None, 50, count, rng_seed, chains=256)
    if smoothing <= 0 or isinstance(f, ProductMap):
        return Reference(s, False, "backward-orbit")
    z, w = s.z, s.w
    for _ in range(smoothing):
        pz, pw = preimages_np(f, z, w)
        z, w = pz.ravel(), pw.ravel()
    smooth = MeasureSample(z, w, np.full(z.size, 1.0 / z.size), "backward-orbit", rng_seed)
    return Reference(smooth, False, f"backward-orbit+tree{smoothing}")


# ---------------------------------------------------------------------------
# rate fits


@dataclass
class RateFit:
    series: list  # (n, |pairing|)
    ci: list  # 95% half-width of each entry
    A: float
    xi: float
    xi_ci: tuple
    r2: float
    used: list
    envelope_check: dict | None = None
    label: str = ""
    xi_se_ci: tuple = (math.nan, math.nan)

    def to_json(self) -> str:
        return json.dumps({
            "label": self.label,
            "A": self.A,
            "xi": self.xi,
            "xi_ci": list(self.xi_ci),
            "xi_se_ci": list(self.xi_se_ci),
            "r2": self.r2,
            "used": self.used,
            "envelope_check": self.envelope_check,
        }, sort_keys=True)


def _wls(n: np.ndarray, y: np.ndarray, wt: np.ndarray):
    X = np.stack([np.ones_like(n), n], axis=1)
    W = wt / wt.sum()
    XtW = X.T * W
    beta = np.linalg.solve(XtW @ X, XtW @ y)
    resid = y - X @ beta
    ybar = float(np.dot(W, y))
    ss_tot = float(np.dot(W, (y - ybar) ** 2))
    ss_res = float(np.dot(W, resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    # standard error of the slope from the weighted residual scatter
    dof = max(len(n) - 2, 1)
    cov = np.linalg.inv(XtW @ X) * ss_res / dof
    return beta, r2, math.sqrt(max(cov[1, 1], 0.0))


def fit_rate(ns: Sequence[int], values: Sequence[float], ci: Sequence[float] | None = None,
             replicates: np.ndarray | None = None, min_points: int = 2, label: str = "",
             floor: float = 0.0) -> RateFit:
    """Fit |pairing| ~ A * xi^n by weighted least squares in log scale.

    Entries not exceeding three times their confidence half-width, or the
    absolute ``floor`` (rounding level of the pairing), are dropped.
    ``replicates`` (shape (B, len(ns))) are bootstrap copies of the series
    obtained by resampling the reference; the percentile interval of their
    refitted slopes is ``xi_ci``.  The interval from the regression
    standard error, which also reflects misfit of the log-linear model,
    is kept separately as ``xi_se_ci``.
    """
    ns = np.asarray(ns, float)
    vals = np.abs(np.asarray(values, float))
    ci = np.zeros_like(vals) if ci is None else np.asarray(ci, float)
    use = (vals > 3 * ci) & (vals > floor)
    if use.sum() < max(min_points, 2):
        raise FitRefused(f"only {int(use.sum())} usable entries; at least {max(min_points, 2)} are needed")
    rel = ci[use] / vals[use]
    wt = 1.0 / (rel ** 2 + MISFIT ** 2)
    beta, r2, se = _wls(ns[use], np.log(vals[use]), wt)
    xi = math.exp(beta[1])
    lo = hi = beta[1]
    if replicates is not None and len(replicates):
        slopes = []
        for rep in np.abs(np.asarray(replicates, float)):
            ok = use & (rep > 0)
            if ok.sum() >= 2:
                slopes.append(_wls(ns[ok], np.log(rep[ok]), 1.0 / ((ci[ok] / rep[ok]) ** 2 + MISFIT ** 2))[0][1])
        if slopes:
            lo, hi = float(np.percentile(slopes, 2.5)), float(np.percentile(slopes, 97.5))
    lo, hi = min(lo, beta[1]), max(hi, beta[1])
    se_ci = (math.exp(beta[1] - 1.96 * se), math.exp(beta[1] + 1.96 * se))
    return RateFit([(int(n), float(v)) for n, v in zip(ns, vals)], [float(c) for c in ci], math.exp(beta[0]),
                   xi, (math.exp(lo), math.exp(hi)), r2, [int(n) for n in ns[use]], None, label, se_ci)


def envelope(ns: Sequence[int], values: Sequence[float], ci: Sequence[float], base: float,
             calibrate: int | None = None) -> dict:
    """Is the series dominated by a single C * base^n?

    C is fitted on the first ``calibrate`` entries (default: half) and the
    whole series is checked against C * base^n + 3 * ci.
    """
    ns = np.asarray(ns, float)
    v = np.asarray(values, float)
    c = np.asarray(ci, float)
    cal = max(1, len(ns) // 2) if calibrate is None else calibrate
    C = float(np.max(np.maximum(v[:cal] - 3 * c[:cal], 0.0) / base ** ns[:cal]))
    bound = C * base ** ns + 3 * c
    bad = [int(n) for n, x, b in zip(ns, v, bound) if x > b * (1 + 1e-12)]
    return {"C": C, "base": base, "calibrated_on": [int(n) for n in ns[:cal]], "violations": bad, "ok": not bad}


def _bootstrap_reference(block_means: np.ndarray, replicates: int, rng) -> np.ndarray:
    """Block-bootstrap copies of the reference integral."""
    if replicates <= 0 or len(block_means) == 0:
        return np.zeros(0)
    idx = rng.integers(0, len(block_means), size=(replicates, len(block_means)))
    return block_means[idx].mean(axis=1)


def periodic_discrepancy(f, n_range: Sequence[int], phi: TestFunction, q_choice: str = "P_nγ", gamma: float = 0.5,
                         reference: Reference | None = None, cycles: dict | None = None, bootstrap: int = 200,
                         rng_seed: int = 0, min_points: int = 4, bound: Callable[[int], float] | None = None) -> RateFit:
    """|<d^{-kn} sum over Q_n of delta_a - mu, phi>| for n in n_range, fitted as A xi^n."""
    reference = reference or reference_measure(f, rng_seed=rng_seed)
    ref_val, ref_ci, ref_atoms = reference.integral(phi)
    ns, vals, cis, sides = [], [], [], []
    for n in n_range:
        cs = cycles[n] if cycles is not None and n in cycles else find_periodic(f, n)
        q = select_q(cs, q_choice, gamma)
        s = pair(cycles_sample(q), _empty_like(q), phi) if len(q) else 0.0
        ns.append(n)
        sides.append(s)
        vals.append(abs(s - ref_val))
        cis.append(ref_ci)
    reps = None
    if not reference.exact and bootstrap:
        boot = _bootstrap_reference(ref_atoms, bootstrap, rng_for(rng_seed + 1))
        reps = np.abs(np.asarray(sides)[None, :] - boot[:, None])
    fit = fit_rate(ns, vals, cis, reps, min_points=min_points, label=f"{phi.ident}|{q_choice}",
                   floor=ROUNDING_FLOOR * max(phi.norm_C0, 1e-300))
    if bound is not None:
        bad = [n for n, v in zip(ns, vals) if v > bound(n)]
        fit.envelope_check = {"violations": bad, "ok": not bad}
    return fit


def _empty_like(cs: CycleSet) -> MeasureSample:
    z = np.zeros((0,) if cs.k == 1 else (0, 2), complex)
    return MeasureSample(z, z.copy(), np.zeros(0), "periodic-points")


def preimage_discrepancy(f, a: ProjectivePoint, m_range: Sequence[int], phi: TestFunction,
                         reference: Reference | None = None, rng_seed: int = 0, cap: int = ATOM_CAP,
                         n0: int = 5, notice: Callable[[str], None] | None = None) -> RateFit:
    """|<d^{-km} (f^m)^* delta_a - mu, phi>| over m with the d^{-m/3} envelope check."""
    if len(list(m_range)) < 2:
        raise FitRefused("at least two orders m are needed for a rate fit")
    if isinstance(f, RationalMap) and _pc_distance(f, a, n0) <= 1e-12:
        raise ValueError("the base point lies on the postcritical proxy")
    reference = reference or reference_measure(f, rng_seed=rng_seed)
    ref_val, ref_ci, ref_atoms = reference.integral(phi)
    d = f.degree
    k = 2 if isinstance(f, ProductMap) else 1
    ms, vals, cis, sides = [], [], [], []
    for m in m_range:
        if d ** (k * m) > cap:
            if notice is not None:
                notice(f"order m = {m} exceeds the atom cap; series truncated")
            break
        s = pair(preimage_tree(f, a, m, cap), _empty_like(CycleSet((), m, d, k, "")), phi)
        ms.append(m)
        sides.append(s)
        vals.append(abs(s - ref_val))
        cis.append(ref_ci)
    reps = None
    if not reference.exact:
        boot = _bootstrap_reference(ref_atoms, 200, rng_for(rng_seed + 2))
        reps = np.abs(np.asarray(sides)[None, :] - boot[:, None])
    fit = fit_rate(ms, vals, cis, reps, min_points=2, label=f"{phi.ident}|preimage",
                   floor=ROUNDING_FLOOR * max(phi.norm_C0, 1e-300))
    fit.envelope_check = envelope(ms, vals, cis, float(d) ** (-1 / 3))
    return fit


def _pc_distance(f: RationalMap, a: ProjectivePoint, n0: int) -> float:
    pc = postcritical(f, n0)
    if not len(pc):
        return math.inf
    z, w = (np.array([complex(v)]) for v in a.pair())
    return float(pc.distance_np(z, w)[0])


def prefactor_trend(f: RationalMap, points: Sequence[ProjectivePoint], m_range: Sequence[int], phi: TestFunction,
                    reference: Reference | None = None, n0: int = 5) -> list[tuple[float, float]]:
    """(log+ 1/dist(a, PC_{n0}), max_m |pairing| d^{m/3}) for each base point."""
    reference = reference or reference_measure(f)
    out = []
    for a in points:
        dist = _pc_distance(f, a, n0)
        ref_val = reference.integral(phi)[0]
        worst = 0.0
        for m in m_range:
            s = pair(preimage_tree(f, a, m), _empty_like(CycleSet((), m, f.degree, 1, "")), phi)
            worst = max(worst, abs(s - ref_val) * f.degree ** (m / 3))
        out.append((max(0.0, math.log(1 / dist)) if dist > 0 else math.inf, worst))
    return out


def rate_csv(map_key: str, fit: RateFit, q_choice: str, header: str | None = None) -> str:
    lines = [] if header is None else [header]
    lines.append("map_hash,phi_id,Q_choice,n,pairing,ci")
    for (n, v), c in zip(fit.series, fit.ci):
        lines.append(f"{map_key[:16]},{fit.label.split('|')[0]},{q_choice},{n},{v!r},{c!r}")
    return "\n".join(lines) + "\n"
