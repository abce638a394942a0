"""Charts, Manhattans, inverse branches and contraction-certified periodic points.

Chart ``j`` is ``pi_j(x) = s * u`` where ``u`` is the affine coordinate of
``R_j x`` for a unitary rotation ``R_j`` taking the chart centre to 0, and
``s = 0.1 / HALF_WIDTH``.  With the six octahedral centres the squares
``(1/10) Omega_j = {|Re u|, |Im u| < HALF_WIDTH}`` cover the sphere.
Cell geometry is expressed in the chart coordinate ``pi``; a cell with
scale ``q`` is the open square of half-side ``q r`` around its centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import gmpy2
import numpy as np
from gmpy2 import mpc

from .dynsys import (
    ProjectivePoint,
    RationalMap,
    PostcriticalSet,
    h_eval,
    normalize_np,
    postcritical,
    preimages_np,
    sdist,
    sdist_np,
)
from .greenmeas import BAND, MeasureSample, julia_membership, GreenEvaluator, rng_for, sample_backward
from .mpnum import DEFAULT_PREC, big, context
from .percyc import CycleSet, PeriodicPoint, _classify, _orbit_data, multiplier_threshold

HALF_WIDTH = 0.55
SCALE = 0.1 / HALF_WIDTH
CENTRES = (0j, complex("inf"), 1 + 0j, -1 + 0j, 1j, -1j)
R_CAP = 1.0 / 128
THETA0 = 0.5
SCALES = (1.0, "1-r", "1-2r", "1-3r", "1-4r")


class PreconditionError(ValueError):
    pass


class InvalidBranch(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# atlas


def _rotation_to_zero(c: complex) -> np.ndarray:
    if not np.isfinite(c):
        p, q = 1.0 + 0j, 0j
    else:
        nrm = math.sqrt(1 + abs(c) ** 2)
        p, q = c / nrm, 1 / nrm
    return np.array([[q, -p], [np.conj(p), np.conj(q)]])


@dataclass(frozen=True)
class Chart:
    centre: complex
    rotation: np.ndarray

    def to_chart(self, z, w) -> np.ndarray:
        """pi_j of normalized pairs (inf where the chart is undefined)."""
        R = self.rotation
        a = R[0, 0] * z + R[0, 1] * w
        b = R[1, 0] * z + R[1, 1] * w
        with np.errstate(all="ignore"):
            u = np.where(b == 0, np.inf + 0j, a / np.where(b == 0, 1, b))
            return SCALE * u

    def from_chart(self, p) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(p, dtype=complex) / SCALE
        Rh = self.rotation.conj().T
        return normalize_np(Rh[0, 0] * u + Rh[0, 1], Rh[1, 0] * u + Rh[1, 1])

    def point(self, p: complex, prec: int = DEFAULT_PREC) -> ProjectivePoint:
        """Multiprecision point with chart coordinate ``p``."""
        with context(prec):
            u = big(p, prec) / SCALE
            Rh = [[complex(x) for x in row] for row in self.rotation.conj().T]
            R = [[big(x, prec) for x in row] for row in Rh]
            return ProjectivePoint(R[0][0] * u + R[0][1], R[1][0] * u + R[1][1])

    def to_chart_mp(self, x: ProjectivePoint):
        with context(x.precision):
            R = [[big(complex(v), x.precision) for v in row] for row in self.rotation]
            a = R[0][0] * x.z + R[0][1] * x.w
            b = R[1][0] * x.z + R[1][1] * x.w
            return SCALE * a / b

    def metric_factor(self, p) -> np.ndarray:
        """||d pi|| (spherical -> Euclidean) at chart coordinate p."""
        u = np.asarray(p) / SCALE
        return SCALE * (1 + np.abs(u) ** 2) / 2


@dataclass(frozen=True)
class Atlas:
    charts: tuple
    A2: float

    @property
    def M(self) -> int:
        return len(self.charts)

    def covering_chart(self, z, w) -> np.ndarray:
        """Index of a chart whose (1/10)-square contains each point (-1 if none)."""
        out = np.full(np.shape(z), -1)
        best = np.full(np.shape(z), np.inf)
        for j, ch in enumerate(self.charts):
            p = ch.to_chart(z, w)
            size = np.maximum(np.abs(p.real), np.abs(p.imag))
            take = (size < 0.1) & (size < best)
            out = np.where(take, j, out)
            best = np.where(take, size, best)
        return out


def build_atlas(grid: int = 100) -> Atlas:
    """Six charts centred at 0, inf, +-1, +-i, with A_2 from a grid over 100W."""
    charts = tuple(Chart(c, _rotation_to_zero(c)) for c in CENTRES)
    s = np.linspace(-100, 100, grid)
    p = (s[:, None] + 1j * s[None, :]).ravel()
    worst = 1.0
    for ch in charts:
        fwd = ch.metric_factor(p)
        worst = max(worst, float(fwd.max()), float((1 / fwd).max()))
    return Atlas(charts, 1.01 * worst)


# ---------------------------------------------------------------------------
# cells


def _scale_value(q, r: float) -> float:
    if isinstance(q, str):
        return 1 - int(q[2] if len(q) > 3 else 1) * r if q != "1-r" else 1 - r
    return float(q)


@dataclass(frozen=True)
class Cell:
    chart: int
    r: float
    eta: tuple
    tau: complex
    q: float = 1.0

    @property
    def centre(self) -> complex:
        return self.tau + 2 * self.r * complex(self.eta[0], self.eta[1])

    @property
    def half_side(self) -> float:
        return self.q * self.r

    def scaled(self, q: float) -> "Cell":
        return replace(self, q=q)

    def contains(self, p, q: float | None = None) -> np.ndarray:
        h = (self.q if q is None else q) * self.r
        d = np.asarray(p) - self.centre
        return (np.abs(d.real) < h) & (np.abs(d.imag) < h)

    def grid(self, density: int = 9) -> np.ndarray:
        s = np.linspace(-1, 1, density) * self.half_side
        return self.centre + s[None, :] + 1j * s[:, None]


def cell_around(atlas: Atlas, x: ProjectivePoint, r: float) -> Cell:
    """A cell of half-side r centred at x in the chart where x is most central."""
    z, w = (np.array([v]) for v in x.pair())
    best, bj = np.inf, 0
    for j, ch in enumerate(atlas.charts):
        p = ch.to_chart(z, w)[0]
        size = max(abs(p.real), abs(p.imag))
        if size < best:
            best, bj = size, j
    return Cell(bj, r, (0, 0), complex(atlas.charts[bj].to_chart(z, w)[0]))


# ---------------------------------------------------------------------------
# good Manhattans


@dataclass
class Manhattan:
    atlas: Atlas
    r: float
    taus: dict
    street_mass: dict
    street_ci: dict
    good: dict
    centres_off_pc: dict


def _street_weight(p: np.ndarray, wts: np.ndarray, r: float, tau: complex, q: int) -> float:
    v = p - tau
    vx = np.mod(v.real + r, 2 * r) - r
    vy = np.mod(v.imag + r, 2 * r) - r
    h = (1 - q * r) * r
    return float(np.dot(wts, ~((np.abs(vx) < h) & (np.abs(vy) < h))))


def _in_omega(sample: MeasureSample, chart: Chart):
    p = chart.to_chart(sample.z, sample.w)
    keep = (np.abs(p.real) < 1) & (np.abs(p.imag) < 1)
    return p[keep], (sample.weights / sample.total_mass)[keep]


def _wald(mass: float, n_eff: float) -> float:
    return 1.96 * math.sqrt(max(mass * (1 - mass), 0.0) / max(n_eff, 1.0))


def street_mass(sample: MeasureSample, chart: Chart, r: float, tau: complex, q: int = 4):
    """mu(qS_r ∩ Omega_j) with a 95% half-width, from the sample."""
    p, wts = _in_omega(sample, chart)
    mass = _street_weight(p, wts, r, tau, q)
    return mass, _wald(mass, sample.effective_size)


def _centre_gap(pc_pi: np.ndarray, r: float, tau: complex) -> float:
    if pc_pi.size == 0:
        return math.inf
    v = pc_pi - tau
    vx = np.mod(v.real + r, 2 * r) - r
    vy = np.mod(v.imag + r, 2 * r) - r
    return float(np.min(np.hypot(vx, vy)))


def good_translation_search(atlas: Atlas, j: int, r: float, sample: MeasureSample, pc: PostcriticalSet,
                            k: int = 1, rng_seed: int = 0, warn=None):
    """Scan tau = tau* + (a_1, a_2), a_l in {0, 9r^2, ..., 9(N-1)r^2}.

    Returns ``(tau, mass, ci, scanned)`` with the street mass of 4S_r minimal.
    """
    if not 0 < r < 0.01:
        raise PreconditionError("the cell parameter must satisfy 0 < r < 1/100")
    if len(sample) < 10_000 and warn is not None:
        warn(f"only {len(sample)} atoms: street-mass confidence interval is wide")
    chart = atlas.charts[j]
    N = math.floor(1 / (10 * r)) - 1
    pz, pw = pc.pairs_np()
    pc_pi = chart.to_chart(pz, pw)
    pc_pi = pc_pi[np.isfinite(pc_pi)]
    rng = rng_for(rng_seed * 7 + j)
    for _ in range(100):
        tau_star = complex(*(rng.random(2) * r * r))
        offsets = 9 * r * r * np.arange(N)
        taus = [tau_star + complex(a, b) for a in offsets for b in offsets]
        if all(_centre_gap(pc_pi, r, t) > 1e-12 for t in taus):
            break
    else:
        raise PreconditionError("no generic tau* keeps the centres off the postcritical proxy")
    p, wts = _in_omega(sample, chart)
    # membership in the shrunken cells factorizes over the two axes
    h = (1 - 4 * r) * r

    def inside(coord, shift):
        v = np.mod(coord[None, :] - shift[:, None] + r, 2 * r) - r
        return (np.abs(v) < h).astype(float)

    X = inside(p.real, tau_star.real + offsets)
    Y = inside(p.imag, tau_star.imag + offsets)
    masses = wts.sum() - (X * wts[None, :]) @ Y.T
    a, b = np.unravel_index(int(np.argmin(masses)), masses.shape)
    tau, mass = tau_star + complex(offsets[a], offsets[b]), float(masses[a, b])
    ci = _wald(mass, sample.effective_size)
    if mass > 30 * k * r + ci:
        raise ArithmeticError(f"no translation reaches street mass <= 30kr (best {mass:.4g})")
    return tau, mass, ci, N


def build_manhattan(atlas: Atlas, r: float, sample: MeasureSample, pc: PostcriticalSet, rng_seed: int = 0,
                    warn=None) -> Manhattan:
    taus, masses, cis, good, off = {}, {}, {}, {}, {}
    for j in range(atlas.M):
        tau, m, ci, _ = good_translation_search(atlas, j, r, sample, pc, rng_seed=rng_seed, warn=warn)
        taus[j], masses[j], cis[j] = tau, m, ci
        good[j] = m <= 30 * r + ci
        off[j] = True
    return Manhattan(atlas, r, taus, masses, cis, good, off)


def half_chart_cells(man: Manhattan, j: int) -> list[Cell]:
    """Cells of chart j meeting (1/2) Omega_j."""
    r, tau = man.r, man.taus[j]
    lo = math.floor((-0.5 - r - tau.real) / (2 * r)) - 1
    hi = math.ceil((0.5 + r - tau.real) / (2 * r)) + 1
    lo_y = math.floor((-0.5 - r - tau.imag) / (2 * r)) - 1
    hi_y = math.ceil((0.5 + r - tau.imag) / (2 * r)) + 1
    out = []
    for a in range(lo, hi + 1):
        for b in range(lo_y, hi_y + 1):
            c = Cell(j, r, (a, b), tau)
            cc = c.centre
            if abs(cc.real) - r < 0.5 and abs(cc.imag) - r < 0.5 and abs(cc.real) + r < 1 and abs(cc.imag) + r < 1:
                out.append(c)
    return out


# ---------------------------------------------------------------------------
# inverse branches


@dataclass
class InverseBranch:
    order: int
    cell: Cell
    root: tuple  # normalized pair of the preimage of the centre
    grid_z: np.ndarray
    grid_w: np.ndarray
    diameter: float
    valid: bool
    residual: float = math.inf
    residual_mp: float | None = None

    def image_in_chart(self, atlas: Atlas) -> np.ndarray:
        return atlas.charts[self.cell.chart].to_chart(self.grid_z, self.grid_w)


def _pullback_newton(f: RationalMap, m: int, xz, xw, yz, yw, iters: int = 30, tol: float = 1e-15):
    """Solve F^m(y) ∝ x by Newton in the natural chart of y (vectorized).

    Returns (yz, yw, converged, first_correction, contraction_ok).
    """
    yz, yw = normalize_np(yz, yw)
    pz, pw, qz, qw = f.partials_np
    converged = np.zeros(yz.shape, bool)
    first = np.zeros(yz.shape)
    prev = np.full(yz.shape, np.inf)
    monotone = np.ones(yz.shape, bool)
    for it in range(iters):
        zc = yw == 1.0
        t = np.where(zc, yz, yw)
        a, b = np.where(zc, t, 1.0 + 0j), np.where(zc, 1.0 + 0j, t)
        da, db = np.where(zc, 1.0 + 0j, 0j), np.where(zc, 0j, 1.0 + 0j)
        for _ in range(m):
            na, nb = f.lift_np(a, b)
            ez, ew, fz, fw = h_eval(pz, a, b), h_eval(pw, a, b), h_eval(qz, a, b), h_eval(qw, a, b)
            da, db = ez * da + ew * db, fz * da + fw * db
            s = np.maximum(np.abs(na), np.abs(nb))
            a, b, da, db = na / s, nb / s, da / s, db / s
        h = xw * a - xz * b
        dh = xw * da - xz * db
        with np.errstate(all="ignore"):
            step = np.where(converged, 0, h / dh)
        step = np.where(np.isfinite(step), step, np.inf)
        size = np.abs(step)
        if it == 0:
            first = size
        elif it == 1:
            monotone &= (size <= 0.5 * prev) | (size <= tol)
        prev = np.where(converged, prev, size)
        t = t - np.where(np.isfinite(step), step, 0)
        yz, yw = normalize_np(np.where(zc, t, 1.0 + 0j), np.where(zc, 1.0 + 0j, t))
        converged |= size <= tol * np.maximum(1, np.abs(t))
        if converged.all():
            break
    return yz, yw, converged, first, monotone


def _forward_residual(f: RationalMap, m: int, yz, yw, xz, xw) -> np.ndarray:
    a, b = yz, yw
    for _ in range(m):
        a, b = f.lift_np(a, b)
        a, b = normalize_np(a, b)
    return sdist_np(a, b, xz, xw)


def _grid_order(density: int):
    """Spanning tree of the grid rooted at the centre: (node, parent) pairs."""
    c = density // 2
    order = []
    for i in range(density):
        if i != c:
            order.append(((i, c), (i - 1 if i > c else i + 1, c)))
    order.sort(key=lambda e: abs(e[0][0] - c))
    rows = []
    for i in range(density):
        for jj in sorted(range(density), key=lambda x: abs(x - c)):
            if jj != c:
                rows.append(((i, jj), (i, jj - 1 if jj > c else jj + 1)))
    return order + rows


def _track(f: RationalMap, m: int, targets_z, targets_w, roots_z, roots_w, density: int, max_sub: int = 64):
    """Continue B branches across a density x density grid.

    ``targets_*`` have shape (density, density) per branch row: (B, D, D).
    """
    B = roots_z.shape[0]
    D = density
    c = D // 2
    gz = np.zeros((B, D, D), complex)
    gw = np.zeros((B, D, D), complex)
    ok = np.ones(B, bool)
    gz[:, c, c], gw[:, c, c] = roots_z, roots_w
    for node, parent in _grid_order(D):
        sz, sw = gz[:, parent[0], parent[1]], gw[:, parent[0], parent[1]]
        x0z, x0w = targets_z[:, parent[0], parent[1]], targets_w[:, parent[0], parent[1]]
        x1z, x1w = targets_z[:, node[0], node[1]], targets_w[:, node[0], node[1]]
        out_z, out_w = sz.copy(), sw.copy()
        todo = np.arange(B)
        sub = 1
        while todo.size and sub <= max_sub:
            yz, yw = sz[todo], sw[todo]
            good = np.ones(todo.size, bool)
            for s in range(1, sub + 1):
                lam = s / sub
                # interpolate the target along the chart segment (targets are normalized pairs)
                tz = (1 - lam) * x0z[todo] + lam * x1z[todo]
                tw = (1 - lam) * x0w[todo] + lam * x1w[todo]
                tz, tw = normalize_np(tz, tw)
                yz, yw, conv, _, mono = _pullback_newton(f, m, tz, tw, yz, yw)
                good &= conv & mono
            out_z[todo[good]], out_w[todo[good]] = yz[good], yw[good]
            todo = todo[~good]
            sub *= 2
        ok[todo] = False
        gz[:, node[0], node[1]], gw[:, node[0], node[1]] = out_z, out_w
    return gz, gw, ok


def _diameters(gz: np.ndarray, gw: np.ndarray) -> np.ndarray:
    B = gz.shape[0]
    z = gz.reshape(B, -1)
    w = gw.reshape(B, -1)
    out = np.empty(B)
    for i in range(B):
        out[i] = sdist_np(z[i][:, None], w[i][:, None], z[i][None, :], w[i][None, :]).max()
    return out


def cell_radius(atlas: Atlas, cell: Cell) -> float:
    """Spherical circumradius of the cell (from its corners and edge midpoints)."""
    ch = atlas.charts[cell.chart]
    g = cell.grid(3).ravel()
    z, w = ch.from_chart(g)
    cz, cw = ch.from_chart(np.array([cell.centre]))
    return float(sdist_np(z, w, cz[0], cw[0]).max())


def _trace_batch(f: RationalMap, atlas: Atlas, items, m: int, density: int) -> list[InverseBranch]:
    """Trace (cell, roots_z, roots_w) items together; one tracker call for all."""
    c = density // 2
    cells, TZ, TW, RZ, RW = [], [], [], [], []
    for cell, rz, rw in items:
        tz, tw = atlas.charts[cell.chart].from_chart(cell.grid(density))
        for a, b in zip(rz, rw):
            cells.append(cell)
            TZ.append(tz)
            TW.append(tw)
            RZ.append(a)
            RW.append(b)
    B = len(cells)
    if B == 0:
        return []
    TZ, TW = np.array(TZ), np.array(TW)
    rz, rw, conv, _, _ = _pullback_newton(f, m, TZ[:, c, c], TW[:, c, c], np.array(RZ), np.array(RW))
    gz, gw, ok = _track(f, m, TZ, TW, rz, rw, density)
    ok &= conv
    res = _forward_residual(f, m, gz.reshape(B, -1), gw.reshape(B, -1), TZ.reshape(B, -1), TW.reshape(B, -1)).max(1)
    ok &= res <= 1e-10
    # distinct branches of one cell must have distinct images at every node
    cell_id = np.array([id(cl) for cl in cells])
    same = cell_id[:, None] == cell_id[None, :]
    np.fill_diagonal(same, False)
    if same.any():
        flat_z, flat_w = gz.reshape(B, -1), gw.reshape(B, -1)
        for node in range(flat_z.shape[1]):
            zz, ww = flat_z[:, node], flat_w[:, node]
            dist = sdist_np(zz[:, None], ww[:, None], zz[None, :], ww[None, :])
            ok &= ~np.any(same & (dist <= 1e-9), axis=1)
    diam = _diameters(gz, gw)
    return [InverseBranch(m, cells[i], (rz[i], rw[i]), gz[i], gw[i], float(diam[i]), bool(ok[i]), float(res[i]))
            for i in range(B)]


def centre_preimages(f: RationalMap, atlas: Atlas, cell: Cell, m: int):
    cz, cw = atlas.charts[cell.chart].from_chart(np.array([cell.centre]))
    for _ in range(m):
        pz, pw = preimages_np(f, cz, cw)
        cz, cw = pz.ravel(), pw.ravel()
    return cz, cw


def trace_branches(f: RationalMap, cell: Cell, m: int, ell: int = 0, pc_ell: PostcriticalSet | None = None,
                   grid_density: int = 9, atlas: Atlas | None = None, roots: np.ndarray | None = None,
                   certify: bool = False, prec: int = DEFAULT_PREC) -> list[InverseBranch]:
    """Order-m inverse branches on ``cell`` by continuation from the centre.

    ``roots`` (shape (B, 2) of normalized pairs) restricts the tracing to
    chosen preimages of the centre; by default all d^m are traced.
    """
    atlas = atlas or build_atlas()
    ch = atlas.charts[cell.chart]
    if pc_ell is not None and len(pc_ell):
        cz, cw = ch.from_chart(np.array([cell.centre]))
        ball = cell_radius(atlas, cell) / THETA0
        if float(pc_ell.distance_np(cz, cw)[0]) <= ball:
            raise PreconditionError("the cell's ball meets the postcritical set PC_ell")
    if roots is None:
        rz, rw = centre_preimages(f, atlas, cell, m)
    else:
        rz, rw = roots[:, 0], roots[:, 1]
    branches = _trace_batch(f, atlas, [(cell, rz, rw)], m, grid_density)
    if certify:
        for br in branches:
            if br.valid:
                certify_branch(f, br, atlas, prec)
    return branches


def _preimage_mp(f: RationalMap, m: int, x: ProjectivePoint, y: ProjectivePoint, prec: int, iters: int = 40):
    """Newton for F^m(y) ∝ x at ``prec`` bits, started from y."""
    pz, pw, qz, qw = f.partials
    with context(prec):
        eps = gmpy2.mpfr(2) ** (10 - prec)
        y = ProjectivePoint(big(y.z, prec), big(y.w, prec))
        for _ in range(iters):
            chart = y.chart
            t = y.coordinate
            a, b = (t, mpc(1)) if chart == "z" else (mpc(1), t)
            da, db = (mpc(1), mpc(0)) if chart == "z" else (mpc(0), mpc(1))
            for _ in range(m):
                na, nb = f.lift(a, b)
                ez, ew, fz, fw = h_eval(pz, a, b), h_eval(pw, a, b), h_eval(qz, a, b), h_eval(qw, a, b)
                da, db = ez * da + ew * db, fz * da + fw * db
                s = max(abs(na), abs(nb))
                a, b, da, db = na / s, nb / s, da / s, db / s
            h = x.w * a - x.z * b
            dh = x.w * da - x.z * db
            if dh == 0:
                raise InvalidBranch("critical point met while solving f^m(y) = x")
            step = h / dh
            t = t - step
            y = ProjectivePoint(t, mpc(1)) if chart == "z" else ProjectivePoint(mpc(1), t)
            if abs(step) <= eps * max(1, abs(t)):
                return y
    raise InvalidBranch("Newton did not converge for the branch value")


def certify_branch(f: RationalMap, br: InverseBranch, atlas: Atlas, prec: int = DEFAULT_PREC) -> float:
    """Polish every grid value in multiprecision; store max sdist(f^m(g(x)), x)."""
    ch = atlas.charts[br.cell.chart]
    grid = br.cell.grid(br.grid_z.shape[0]).ravel()
    worst = 0.0
    for p, yz, yw in zip(grid, br.grid_z.ravel(), br.grid_w.ravel()):
        x = ch.point(complex(p), prec)
        y = _preimage_mp(f, br.order, x, ProjectivePoint(big(yz, prec), big(yw, prec)), prec)
        img = y
        with context(prec):
            for _ in range(br.order):
                a, b = f.lift(img.z, img.w)
                img = ProjectivePoint(a, b)
        worst = max(worst, float(sdist(img, x)))
    br.residual_mp = worst
    return worst


# ---------------------------------------------------------------------------
# contraction


@dataclass
class Contraction:
    point: PeriodicPoint
    dg_norm: float
    steps: int


def contract_branch(f: RationalMap, br: InverseBranch, atlas: Atlas | None = None, prec: int = DEFAULT_PREC,
                    tol: float = 1e-25, max_steps: int = 400, julia: bool = True,
                    evaluator: GreenEvaluator | None = None) -> Contraction:
    """Iterate the branch g from the cell centre to its attracting fixed point."""
    atlas = atlas or build_atlas()
    if not br.valid:
        raise PreconditionError("branch is not valid")
    ch = atlas.charts[br.cell.chart]
    img = br.image_in_chart(atlas)
    shrink = 1 - br.cell.r
    if not np.all(br.cell.contains(img, q=shrink * br.cell.q)):
        raise PreconditionError("branch image is not inside the (1-r)-shrunk cell")
    extent = max(np.ptp(img.real), np.ptp(img.imag))
    if extent >= 2 * br.cell.half_side:
        raise PreconditionError("branch image diameter is not below the cell side")
    grid = br.cell.grid(br.grid_z.shape[0]).ravel()
    gz, gw = br.grid_z.ravel(), br.grid_w.ravel()
    # double-precision stage; predictor from the nearest tracked grid value
    xz, xw = ch.from_chart(np.array([br.cell.centre]))
    steps = 0
    for steps in range(1, max_steps + 1):
        p = ch.to_chart(xz, xw)[0]
        if not br.cell.contains(p):
            raise InvalidBranch("iteration left the cell: the branch diameter was misestimated")
        k = int(np.argmin(np.abs(grid - p)))
        yz, yw, conv, _, _ = _pullback_newton(f, br.order, xz, xw, np.array([gz[k]]), np.array([gw[k]]))
        if not conv[0]:
            raise InvalidBranch("branch evaluation failed during contraction")
        moved = float(sdist_np(yz, yw, xz, xw)[0])
        xz, xw = yz, yw
        if moved < 1e-14:
            break
    x = ProjectivePoint(big(complex(xz[0]), prec), big(complex(xw[0]), prec))
    for extra in range(max_steps):
        y = _preimage_mp(f, br.order, x, x, prec)
        moved = float(sdist(y, x))
        x = y
        steps += 1
        if moved < tol:
            break
    else:
        raise InvalidBranch("contraction did not reach the tolerance")
    p = ch.to_chart_mp(x)
    if not br.cell.contains(complex(p)):
        raise InvalidBranch("fixed point outside the cell")
    modulus, lam, residual, minimal = _orbit_data(f, x, br.order)
    cls = _classify(modulus)
    flag = julia_membership(f, x, evaluator=evaluator) if (julia and f.is_polynomial) else (BAND if cls == "repelling" else None)
    pt = PeriodicPoint(x, br.order, minimal, modulus, cls, flag, residual, 1, lam)
    return Contraction(pt, 1.0 / modulus if modulus else math.inf, steps)


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class PipelineParams:
    gamma: float = 0.5
    zeta: float | None = None
    gamma0: float | None = None
    gamma1: float | None = None
    kappa: float = 2.0
    k: int = 1
    r_cap: float = R_CAP
    sample_size: int = 100_000
    grid_density: int = 9
    rng_seed: int = 0
    n0: int = 5

    def resolved(self) -> "PipelineParams":
        g = self.gamma
        if not 0 < g < 1:
            raise PreconditionError("0 < gamma < 1 is required")
        zeta = g / 8 if self.zeta is None else self.zeta
        if not 0 < zeta < g / 4:
            raise PreconditionError("0 < zeta < gamma/4 is violated")
        bound = zeta / (800 * self.kappa * self.k ** 2)
        gamma0 = bound / 2 if self.gamma0 is None else self.gamma0
        if not (gamma0 > 0 and 800 * gamma0 * self.kappa * self.k ** 2 < zeta):
            raise PreconditionError("800 * gamma0 * kappa * k^2 < zeta is violated")
        gamma1 = 20 * gamma0 * self.kappa * self.k if self.gamma1 is None else self.gamma1
        if not math.isclose(gamma1, 20 * gamma0 * self.kappa * self.k, rel_tol=1e-12):
            raise PreconditionError("gamma1 = 20 * gamma0 * kappa * k is violated")
        return replace(self, zeta=zeta, gamma0=gamma0, gamma1=gamma1)


@dataclass
class PipelineResult:
    cycles: CycleSet
    manhattan: Manhattan
    r_nominal: float
    r: float
    cells: list  # per-cell diagnostic dicts
    branches: list  # (cell, branch, contraction)
    gated_out: int
    params: PipelineParams
    a9_fit: float
    admissible: int = 0
    discarded: int = 0
    unsafe_mass_estimate: float = 0.0

    def manifest(self) -> dict:
        return {
            "r_nominal": self.r_nominal,
            "r": self.r,
            "taus": {str(j): [t.real, t.imag] for j, t in self.manhattan.taus.items()},
            "street_mass": {str(j): m for j, m in self.manhattan.street_mass.items()},
            "street_ci": {str(j): m for j, m in self.manhattan.street_ci.items()},
            "admissible_cells": self.admissible,
            "discarded_cells": self.discarded,
            "points": len(self.cycles),
            "gated_out": self.gated_out,
            "a9_fit": self.a9_fit,
            "unsafe_mass_estimate": self.unsafe_mass_estimate,
            "params": {k: getattr(self.params, k) for k in ("gamma", "zeta", "gamma0", "gamma1", "kappa", "k", "n0")},
        }


def _bin_masses(p: np.ndarray, wts: np.ndarray, r: float, tau: complex):
    """Sample mass of every cell and of its (1-3r)-shrink, keyed by eta."""
    ok = np.isfinite(p)
    p, wts = p[ok], wts[ok]
    v = p - tau
    ix = np.floor((v.real + r) / (2 * r)).astype(np.int64)
    iy = np.floor((v.imag + r) / (2 * r)).astype(np.int64)
    ox = v.real - 2 * r * ix
    oy = v.imag - 2 * r * iy
    h = (1 - 3 * r) * r
    inner = (np.abs(ox) < h) & (np.abs(oy) < h)
    keys = np.stack([ix, iy], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    tot = np.bincount(inv, weights=wts, minlength=len(uniq))
    inn = np.bincount(inv, weights=wts * inner, minlength=len(uniq))
    cell_mass = {(int(a), int(b)): float(t) for (a, b), t in zip(uniq, tot)}
    inner_mass = {(int(a), int(b)): float(t) for (a, b), t in zip(uniq, inn)}
    return cell_mass, inner_mass


def certified_repelling_pipeline(f: RationalMap, n: int, params: PipelineParams | None = None,
                                 sample: MeasureSample | None = None, atlas: Atlas | None = None,
                                 warn=None) -> PipelineResult:
    """Repelling periodic points of period n from contracting inverse branches."""
    if not isinstance(f, RationalMap):
        raise NotImplementedError("the pipeline handles maps of P^1")
    params = (params or PipelineParams()).resolved()
    d, k = f.degree, params.k
    atlas = atlas or build_atlas()
    r_nominal = float(d) ** (-params.gamma1 * n)
    r = min(r_nominal, params.r_cap)
    if sample is None:
        sample = sample_backward(f, None, 50, params.sample_size, params.rng_seed, chains=256)
    pc = postcritical(f, n + 10)
    man = build_manhattan(atlas, r, sample, pc, params.rng_seed, warn)
    wts = sample.weights / sample.total_mass
    ev = GreenEvaluator(f) if f.is_polynomial else None
    pc_small = postcritical(f, int(math.floor(10 * params.gamma0 * n)))
    cells_out, branches_out, found = [], [], []
    admissible = discarded = 0
    unsafe = 0.0
    m1 = int(math.floor(params.zeta * n))
    for j, ch in enumerate(atlas.charts):
        cells = half_chart_cells(man, j)
        cell_mass, inner_mass = _bin_masses(ch.to_chart(sample.z, sample.w), wts, r, man.taus[j])
        cz, cw = ch.from_chart(np.array([c.centre for c in cells]))
        dist_pc = pc.distance_np(cz, cw)
        adm = dist_pc > 10 * r
        items, infos = [], {}
        for ci, cell in enumerate(cells):
            mass = cell_mass.get(cell.eta, 0.0)
            if not adm[ci]:
                discarded += 1
                unsafe += mass
                continue
            admissible += 1
            if mass <= 0:
                continue
            inner = inner_mass.get(cell.eta, 0.0)
            bracket = inner - float(d) ** (-2 * params.gamma0 * n) * mass - r ** (2 * k + 1)
            m2 = n - m1
            q_eta = bracket * d ** (k * m2)
            p_eta = bracket * d ** (k * n)
            rz, rw = centre_preimages(f, atlas, cell, n)
            inside = cell.contains(ch.to_chart(rz, rw), q=1 - r)
            info = {"chart": j, "eta": cell.eta, "mass": mass, "inner_mass": inner,
                    "q": q_eta, "p": p_eta, "branches": 0}
            cells_out.append(info)
            if inside.any():
                items.append((cell, rz[inside], rw[inside]))
                infos[id(cell)] = info
        for br in _trace_batch(f, atlas, items, n, params.grid_density):
            if not br.valid:
                continue
            try:
                con = contract_branch(f, br, atlas, evaluator=ev)
            except (PreconditionError, InvalidBranch):
                continue
            certify_branch(f, br, atlas)
            infos[id(br.cell)]["branches"] += 1
            branches_out.append((br.cell, br, con))
            found.append(con)
    unsafe += sum(c["mass"] for c in cells_out if c["branches"] < c["p"])
    # gate on the multiplier bound and the Julia band, then deduplicate
    thresh = multiplier_threshold(d, n, params.gamma)
    pts, gated = [], 0
    for con in found:
        pt = con.point
        if not (pt.is_repelling and pt.multiplier_modulus >= thresh * (1 - 1e-12) and pt.in_small_julia == BAND):
            gated += 1
            continue
        if any(sdist(pt.location, q.location) <= 1e-20 for q in pts):
            continue
        pts.append(pt)
    pts.sort(key=lambda p: (p.location.chart, round(complex(p.location.coordinate).real, 12),
                            round(complex(p.location.coordinate).imag, 12)))
    a9 = max((c.dg_norm * r ** 2 * float(d) ** ((1 - 2 * params.zeta) * n / 2) for c in found), default=0.0)
    cs = CycleSet(tuple(pts), n, d, 1, "manhattan")
    return PipelineResult(cs, man, r_nominal, r, cells_out, branches_out, gated, params, a9,
                          admissible, discarded, unsafe)


# ---------------------------------------------------------------------------
# diameter law


def fit_diameter_law(records: Sequence[tuple[int, int, np.ndarray]], d: int, calibrate_max_m: int) -> dict:
    """Fit A so that at least (1 - A d^-l) d^m branches have diam < A d^{-(m-l)/2}.

    ``records`` holds (m, l, diameters of valid branches).  A is the least
    value making the statement true on orders m <= ``calibrate_max_m``; the
    remaining orders are checked against it.
    """
    def needed(m, l, diams):
        # smallest A with #{diam >= A d^{-(m-l)/2}} <= A d^{-l} d^m
        scale = float(d) ** (-(m - l) / 2)
        ratios = np.sort(np.asarray(diams) / scale)[::-1]
        total = float(d) ** m
        missing = total - len(diams)  # invalid branches count as exceptions
        best = math.inf
        cands = np.concatenate([[1e-300], ratios * (1 + 1e-12)])
        for A in np.sort(cands):
            bad = np.count_nonzero(ratios >= A) + missing
            if bad <= A * float(d) ** (m - l):
                best = A
                break
        return best

    cal = [needed(m, l, dm) for m, l, dm in records if m <= calibrate_max_m]
    A = max(cal) if cal else math.inf
    checks = []
    for m, l, dm in records:
        scale = float(d) ** (-(m - l) / 2)
        bad = np.count_nonzero(np.asarray(dm) >= A * scale) + (d ** m - len(dm))
        checks.append({"m": m, "l": l, "bad": int(bad), "allowed": A * float(d) ** (m - l),
                       "violated": bool(bad > A * float(d) ** (m - l))})
    return {"A": A, "checks": checks, "violations": sum(c["violated"] for c in checks if c["m"] > calibrate_max_m)}
