from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equidyn.dynsys import ProductMap, ProjectivePoint, RationalMap
from equidyn.equidist import (
    FitRefused,
    MeasureSample,
    constant,
    cycles_sample,
    embed,
    envelope,
    fit_rate,
    height,
    make_test_family,
    pair,
    periodic_discrepancy,
    preimage_discrepancy,
    prefactor_trend,
    rate_csv,
    reference_measure,
    unembed,
)
from equidyn.greenmeas import exact_measure, preimage_tree, sample_backward
from equidyn.percyc import find_periodic

SQ = RationalMap.quadratic(0)
BASILICA = RationalMap.quadratic(-1)


def pt(x):
    return ProjectivePoint.from_affine(x)


def test_embedding_round_trip():
    x = np.array([0, 1, -2j, 0.3 + 0.4j])
    z, w = unembed(embed(x, np.ones_like(x)))
    assert np.allclose(z / w, x)
    P = embed(np.array([1.0 + 0j]), np.array([0j]))
    assert np.allclose(P, [[0, 0, 1]])


def test_pair_examples():
    s = sample_backward(BASILICA, None, 10, 1000, rng_seed=3, chains=8)
    phi = make_test_family("smooth", 1)[0]
    assert pair(s, s, phi) == 0
    circle = exact_measure("circle", 1 << 12, quadrature=True)
    for n in range(2, 8):
        atoms = cycles_sample(find_periodic(SQ, n))
        assert abs(pair(atoms, circle, height()) - 2.0 ** (-(n + 1))) < 1e-12
    one = constant(1.0)
    assert abs(pair(atoms, circle, one) - (atoms.total_mass - 1)) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.1, 5), st.integers(0, 100))
def test_pair_is_bilinear_in_weights(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20) + 1j * rng.normal(size=20)
    w1, w2 = rng.uniform(0.1, 1, 20), rng.uniform(0.1, 1, 20)
    phi = make_test_family("trig", 3, verify=False)[2]
    ones = np.ones(20, complex)

    def S(wts):
        return MeasureSample(x, ones, wts, "periodic-points")

    empty = MeasureSample(np.zeros(0, complex), np.zeros(0, complex), np.zeros(0), "periodic-points")
    lhs = pair(S(a * w1 + b * w2), empty, phi)
    rhs = a * pair(S(w1), empty, phi) + b * pair(S(w2), empty, phi)
    assert abs(lhs - rhs) <= 1e-12 * (abs(lhs) + 1)


def test_pair_bounded_by_mass_and_transport():
    rng = np.random.default_rng(2)
    x = rng.normal(size=200) + 1j * rng.normal(size=200)
    y = x * (1 + 1e-3 * rng.normal(size=200))
    ones = np.ones(200, complex)
    a = MeasureSample(x, ones, np.full(200, 1 / 200), "periodic-points")
    b = MeasureSample(y, ones, np.full(200, 1 / 200), "periodic-points")
    from equidyn.dynsys import sdist_np
    transport = float(np.mean(sdist_np(x, ones, y, ones)))
    for phi in make_test_family("smooth", 4):
        assert abs(pair(a, b, phi)) <= (phi.norm_C1 - phi.norm_C0) * transport + 1e-15


def test_family_examples():
    trig = make_test_family("trig", 5)
    assert len(trig) == 5 and all(t.norm_C1 <= 10 for t in trig)
    c = constant(0.7)
    assert c.norm_C1 == c.norm_C0 == 0.7
    for kind in ("hölder(1/2)", "holder:0.25"):
        fam = make_test_family(kind, 3)
        assert all(t.verify(10_000, 9) for t in fam)
        assert all(t.alpha in (0.5, 0.25) for t in fam)
    assert all(t.verify() for t in make_test_family("bump", 3, rng_seed=4))
    with pytest.raises(ValueError):
        make_test_family("wavelet", 2)


def test_family_is_reproducible():
    a = make_test_family("smooth", 3, rng_seed=11)
    b = make_test_family("smooth", 3, rng_seed=11)
    x = np.array([0.2 + 0.1j, -3.0])
    for p, q in zip(a, b):
        assert np.array_equal(p(x, np.ones(2)), q(x, np.ones(2)))


def test_closed_form_rate_for_the_square():
    fit = periodic_discrepancy(SQ, range(2, 11), height(), "all")
    for n, v in fit.series:
        assert abs(v - 2.0 ** (-(n + 1))) < 1e-12
    assert abs(fit.xi - 0.5) < 1e-6
    assert fit.xi_ci[1] - fit.xi_ci[0] < 1e-9


def test_synthetic_series_fit():
    ns = list(range(1, 15))
    fit = fit_rate(ns, [3 * 0.7 ** n for n in ns])
    assert abs(fit.xi - 0.7) < 1e-10 and abs(fit.A - 3) < 1e-8


def test_fit_refusals():
    with pytest.raises(FitRefused):
        fit_rate([1, 2, 3], [1e-3, 1e-4, 1e-5], ci=[1, 1, 1])
    with pytest.raises(FitRefused):
        periodic_discrepancy(SQ, [2, 3], height(), "all")
    with pytest.raises(FitRefused):
        preimage_discrepancy(SQ, pt(2), [3], height())


def test_square_smooth_rates_sit_near_one_half():
    ref = reference_measure(SQ)
    cycles = {n: find_periodic(SQ, n) for n in range(4, 11)}
    for phi in make_test_family("smooth", 3, rng_seed=1):
        fit = periodic_discrepancy(SQ, range(4, 11), phi, "all", reference=ref, cycles=cycles)
        assert 0.45 <= fit.xi <= 0.55


def test_preimage_closed_form_for_the_square():
    fit = preimage_discrepancy(SQ, pt(2), range(2, 13), height())
    for m, v in fit.series:
        t = 4 ** (2.0 ** -m)
        assert abs(v - (t / (1 + t) - 0.5)) < 1e-12
    # the series is tanh(2^-m log 2) / 2, whose ratios tend to 1/2 from above
    assert 0.5 <= fit.xi <= 0.5 + 1e-3
    assert fit.envelope_check["ok"]


def test_preimage_rejects_postcritical_base_point():
    with pytest.raises(ValueError):
        preimage_discrepancy(BASILICA, pt(-1), range(2, 6), height())


def test_preimage_truncates_at_the_atom_cap():
    notes = []
    fit = preimage_discrepancy(SQ, pt(2), range(2, 9), height(), cap=64, notice=notes.append)
    assert [m for m, _ in fit.series] == [2, 3, 4, 5, 6] and notes


def test_envelope_detects_a_slow_tail():
    ns = list(range(2, 14))
    fast = [0.5 * 2 ** (-n / 3) for n in ns]
    assert envelope(ns, fast, [0] * len(ns), 2 ** (-1 / 3))["ok"]
    slow = [0.5 * 0.95 ** n for n in ns]
    assert not envelope(ns, slow, [0] * len(ns), 2 ** (-1 / 3))["ok"]


def test_prefactor_trend_is_reported():
    out = prefactor_trend(BASILICA, [pt(0.4 + 0.6j), pt(-1 + 1e-3)], range(3, 8), height())
    assert len(out) == 2 and out[1][0] > out[0][0]


def test_rate_report_columns():
    fit = periodic_discrepancy(SQ, range(2, 7), height(), "all")
    text = rate_csv(SQ.key, fit, "all", "# config_hash=x")
    lines = text.splitlines()
    assert lines[0] == "# config_hash=x"
    assert lines[1] == "map_hash,phi_id,Q_choice,n,pairing,ci"
    payload = json.loads(fit.to_json())
    for key in ("A", "xi", "xi_ci", "r2", "envelope_check"):
        assert key in payload


def test_product_pairing_uses_tensor_functions():
    f = ProductMap(SQ, SQ)
    cs = find_periodic(f, 3)
    atoms = cycles_sample(cs)
    assert math.isclose(atoms.total_mass, (2 ** 3 + 1) ** 2 / 4 ** 3)
    tree = preimage_tree(f, (pt(2), pt(3)), 2)
    assert math.isclose(tree.total_mass, 1.0)
    v = pair(tree, atoms, height())
    assert np.isfinite(v)
