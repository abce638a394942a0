from __future__ import annotations

import cmath
import math

import numpy as np
import pytest

from equidyn.dynsys import ProjectivePoint, RationalMap, postcritical, sdist, sdist_np
from equidyn.greenmeas import MeasureSample, exact_measure
from equidyn.manhattan import (
    SCALE,
    Cell,
    PipelineParams,
    PreconditionError,
    build_atlas,
    build_manhattan,
    cell_around,
    contract_branch,
    fit_diameter_law,
    good_translation_search,
    half_chart_cells,
    trace_branches,
)

SQ = RationalMap.quadratic(0)
BASILICA = RationalMap.quadratic(-1)
ATLAS = build_atlas()


def pt(x, prec=128):
    return ProjectivePoint.from_affine(x, prec)


def test_atlas_covers_the_sphere():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(100_000, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    # stereographic projection from the north pole, with the pole itself at infinity
    z = (v[:, 0] + 1j * v[:, 1]) / (1 - v[:, 2])
    w = np.ones_like(z)
    assert np.all(ATLAS.covering_chart(z, w) >= 0)
    assert ATLAS.M == 6


def test_chart_derivative_bound_on_a_grid():
    s = np.linspace(-1, 1, 101)
    p = (s[:, None] + 1j * s[None, :]).ravel()
    for ch in ATLAS.charts:
        f = ch.metric_factor(p)
        assert f.max() <= ATLAS.A2 and (1 / f).max() <= ATLAS.A2


def test_overlap_metric_comparability():
    rng = np.random.default_rng(1)
    x = rng.normal(size=2000) + 1j * rng.normal(size=2000)
    z, w = x, np.ones_like(x)
    for a in ATLAS.charts:
        for b in ATLAS.charts:
            pa, pb = a.to_chart(z, w), b.to_chart(z, w)
            ok = (np.abs(pa) < 1) & (np.abs(pb) < 1)
            if ok.any():
                ratio = a.metric_factor(pa[ok]) / b.metric_factor(pb[ok])
                assert ratio.max() <= ATLAS.A2 ** 2 and ratio.min() >= ATLAS.A2 ** -2


def test_chart_round_trip():
    x = np.array([0.3 + 0.2j, -2.0, 5j, 0.01])
    for ch in ATLAS.charts:
        p = ch.to_chart(x, np.ones_like(x))
        ok = np.isfinite(p)
        z, w = ch.from_chart(p[ok])
        assert np.allclose(sdist_np(z, w, x[ok], np.ones(ok.sum())), 0, atol=1e-12)


def test_cell_geometry():
    c = Cell(0, 0.01, (2, -1), 0.001 + 0.002j)
    assert c.centre == 0.001 + 0.002j + 0.02 * complex(2, -1)
    assert c.contains(c.centre + 0.009)
    assert not c.contains(c.centre + 0.009, q=0.5)
    assert c.grid(5).shape == (5, 5)


def test_street_mass_on_the_circle():
    circle = exact_measure("circle", 100_000, 2)
    pc = postcritical(SQ, 10)
    for j in (2, 4):  # charts centred on +1 and +i contain arcs of the circle
        tau, mass, ci, N = good_translation_search(ATLAS, j, 0.005, circle, pc)
        assert mass <= 30 * 0.005
        assert N == math.floor(1 / (10 * 0.005)) - 1
    # atoms at -1 sit at the antipode of the chart centred on +1
    far = MeasureSample(np.full(20_000, -1 + 0j), np.ones(20_000, complex), np.full(20_000, 5e-5), "periodic-points")
    tau, mass, ci, N = good_translation_search(ATLAS, 2, 0.005, far, pc)
    assert mass == 0


def test_translation_search_preconditions():
    circle = exact_measure("circle", 20_000, 2)
    notes = []
    with pytest.raises(PreconditionError):
        good_translation_search(ATLAS, 2, 0.02, circle, postcritical(SQ, 2))
    good_translation_search(ATLAS, 2, 0.005, exact_measure("circle", 500, 2), postcritical(SQ, 2), warn=notes.append)
    assert notes


def test_manhattan_cells_cover_half_chart():
    circle = exact_measure("circle", 20_000, 2)
    man = build_manhattan(ATLAS, 0.008, circle, postcritical(SQ, 3))
    assert all(man.good.values())
    cells = half_chart_cells(man, 2)
    assert cells
    centres = np.array([c.centre for c in cells])
    assert np.abs(centres.real).max() < 0.5 + 0.008 and np.abs(centres.imag).max() < 0.5 + 0.008


def _circle_cell(theta, r=0.005):
    return cell_around(ATLAS, pt(cmath.exp(1j * theta)), r)


def test_square_branches_near_one():
    cell = _circle_cell(0.0)
    prev = None
    for m in (1, 2, 3):
        brs = trace_branches(SQ, cell, m, atlas=ATLAS)
        assert len(brs) == 2 ** m and all(b.valid for b in brs)
        diams = np.array([b.diameter for b in brs])
        # z -> z^(1/2^m) contracts arcs near the circle by 2^m, uniformly over branches
        assert np.ptp(diams) <= 1e-3 * diams.max()
        if prev is not None:
            assert abs(diams.mean() / prev - 0.5) < 0.01
        prev = diams.mean()
    # at a chart centre ds = 2|du| and the cell is a square of side 2r/SCALE in u; diameter is its diagonal
    assert abs(prev * 8 / (4 * math.sqrt(2) * 0.005 / SCALE) - 1) < 0.05


def test_branch_identity_and_disjointness():
    cell = _circle_cell(0.7)
    brs = trace_branches(BASILICA, cell, 4, atlas=ATLAS, certify=True)
    valid = [b for b in brs if b.valid]
    assert len(valid) == 16
    assert max(b.residual_mp for b in valid) <= 1e-20
    for i, a in enumerate(valid):
        for b in valid[i + 1:]:
            gap = sdist_np(a.grid_z.ravel()[:, None], a.grid_w.ravel()[:, None],
                           b.grid_z.ravel()[None, :], b.grid_w.ravel()[None, :]).min()
            assert gap > 2 * 1e-12


def test_postcritical_cell_is_rejected():
    cell = cell_around(ATLAS, pt(0), 0.005)
    with pytest.raises(PreconditionError):
        trace_branches(SQ, cell, 2, ell=1, pc_ell=postcritical(SQ, 1), atlas=ATLAS)


def test_contraction_recovers_a_period_three_point():
    omega = cmath.exp(2j * math.pi / 7)
    cell = cell_around(ATLAS, pt(omega), 0.005)
    brs = trace_branches(SQ, cell, 3, atlas=ATLAS)
    hits = [b for b in brs if np.all(cell.contains(b.image_in_chart(ATLAS), q=1 - cell.r))]
    assert len(hits) == 1
    con = contract_branch(SQ, hits[0], ATLAS)
    assert float(sdist(con.point.location, pt(omega, 256))) < 1e-15
    assert con.point.classification == "repelling"
    assert abs(float(con.point.multiplier_modulus) - 8) < 1e-20
    assert abs(con.dg_norm - 1 / 8) < 1e-20
    others = [b for b in brs if b is not hits[0]]
    with pytest.raises(PreconditionError):
        contract_branch(SQ, others[0], ATLAS)


def test_pipeline_parameter_checks():
    with pytest.raises(PreconditionError, match="zeta < gamma/4"):
        PipelineParams(gamma=0.5, zeta=0.2).resolved()
    with pytest.raises(PreconditionError, match="800"):
        PipelineParams(gamma=0.5, gamma0=0.1).resolved()
    with pytest.raises(PreconditionError, match="gamma"):
        PipelineParams(gamma=1.5).resolved()
    p = PipelineParams().resolved()
    assert p.zeta == 0.0625 and 800 * p.gamma0 * p.kappa < p.zeta
    assert math.isclose(p.gamma1, 20 * p.gamma0 * p.kappa)


def test_diameter_law_fit_on_synthetic_records():
    d = 2
    rng = np.random.default_rng(0)
    records = []
    for m in range(1, 9):
        for ell in (0, 2):
            diams = 0.3 * d ** (-(m - ell) / 2) * rng.uniform(0.1, 1, d ** m)
            records.append((m, ell, diams))
    law = fit_diameter_law(records, d, 4)
    assert law["violations"] == 0 and 0 < law["A"] <= 0.31
    # inflating every m = 8 diameter pushes the exception count past A d^(m - l)
    bad = [(m, l, dm * (50 if m == 8 else 1)) for m, l, dm in records]
    assert fit_diameter_law(bad, d, 4)["violations"] > 0
