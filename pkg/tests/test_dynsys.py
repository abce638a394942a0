from __future__ import annotations

import gmpy2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from equidyn.dynsys import (
    NotACycle,
    ProductMap,
    ProjectivePoint,
    RationalMap,
    apply,
    chart_derivative,
    critical_points,
    cycle_multiplier,
    iterate,
    postcritical,
    preimages,
    preimages_np,
    sdist,
    spherical_derivative,
)
from equidyn.mpnum import context

SQ = RationalMap.quadratic(0)
BASILICA = RationalMap.quadratic(-1)
RABBITISH = RationalMap.quadratic(0.1j)


def pt(x, prec=128):
    return ProjectivePoint.from_affine(x, prec)


def same(p, q, tol=1e-30):
    return float(sdist(p, q)) <= tol


def test_normalization_and_charts():
    p = ProjectivePoint(gmpy2.mpc(4), gmpy2.mpc(1))
    assert p.z == 1 and complex(p.w) == 0.25 and p.chart == "w"
    assert pt(0.5).chart == "z"
    with pytest.raises(ValueError):
        ProjectivePoint(gmpy2.mpc(0), gmpy2.mpc(0))


@pytest.mark.parametrize("f, x, image", [
    (SQ, 2, 4),
    (BASILICA, 0, -1),
    (SQ, None, None),
])
def test_apply_examples(f, x, image):
    assert same(apply(f, pt(x)), pt(image))


def test_iterate_examples():
    assert same(iterate(BASILICA, pt(0), 2), pt(0))
    x = pt(0.3 + 0.1j)
    assert iterate(RABBITISH, x, 0) is x
    assert same(iterate(SQ, pt(2), 3), pt(256))
    with pytest.raises(ValueError):
        iterate(SQ, x, -1)


def test_spherical_derivative_examples():
    assert abs(float(spherical_derivative(SQ, pt(1))) - 2) < 1e-30
    assert spherical_derivative(SQ, pt(0)) == 0
    # 1/z^2 is z^2 followed by the inversion, which is a spherical isometry
    inv = RationalMap.rational([1], [0, 0, 1])
    for x in (0.3 + 0.4j, 1.7, -2j):
        assert abs(float(spherical_derivative(inv, pt(x))) - float(spherical_derivative(SQ, pt(x)))) < 1e-30


def test_degree_one_maps_are_rejected():
    with pytest.raises(ValueError):
        RationalMap.rational([0, 1], [1])
    with pytest.raises(ValueError):
        RationalMap.rational([0, 0, 1], [0, 1])  # common zero at 0


def test_cycle_multiplier_examples():
    with context(256):
        w = gmpy2.mpc(-1, gmpy2.sqrt(3)) / 2
        cycle = [ProjectivePoint(w, gmpy2.mpc(1)), ProjectivePoint(w * w, gmpy2.mpc(1))]
    mod, lam = cycle_multiplier(SQ, cycle)
    assert abs(float(mod) - 4) < 1e-30
    assert abs(complex(lam) - 4) < 1e-12
    mod, _ = cycle_multiplier(BASILICA, [pt(0), pt(-1)])
    assert mod == 0
    mod, _ = cycle_multiplier(SQ, [pt(1)])
    assert abs(float(mod) - 2) < 1e-30
    with pytest.raises(NotACycle):
        cycle_multiplier(SQ, [pt(2)])


def test_critical_points_examples():
    crit = critical_points(BASILICA)
    assert sorted(m for _, m in crit) == [1, 1]
    assert any(same(c, pt(0)) for c, _ in crit) and any(c.is_infinity() for c, _ in crit)
    cube = critical_points(RationalMap.polynomial([0, 0, 0, 1]))
    assert sorted(m for _, m in cube) == [2, 2]
    rat = RationalMap.rational([-1, 0, 1], [1, 0, 1])
    crit = critical_points(rat)
    assert sum(m for _, m in crit) == 2 * 2 - 2
    assert any(same(c, pt(0)) for c, _ in crit) and any(c.is_infinity() for c, _ in crit)


def test_postcritical_examples():
    pc = postcritical(SQ, 5)
    assert len(pc) == 2
    pc = postcritical(BASILICA, 2)
    locs = pc.locations()
    assert len(locs) == 3
    for target in (pt(-1), pt(0), pt(None)):
        assert any(same(p, target) for p in locs)
    assert len(postcritical(RABBITISH, 0)) == 0


def test_postcritical_monotone():
    prev = postcritical(RABBITISH, 0)
    for m in range(1, 8):
        cur = postcritical(RABBITISH, m)
        assert cur.contains(prev)
        prev = cur


def test_preimage_examples():
    roots = preimages(SQ, pt(1))
    assert sorted(round(p.to_complex().real) for p in roots) == [-1, 1]
    zeros = preimages(SQ, pt(0))
    assert len(zeros) == 2 and all(same(p, pt(0)) for p in zeros)
    assert all(same(p, pt(0)) for p in preimages(BASILICA, pt(-1)))
    inf = preimages(SQ, pt(None))
    assert len(inf) == 2 and all(p.is_infinity() for p in inf)


@settings(max_examples=100, deadline=None)
@given(st.complex_numbers(max_magnitude=50, allow_nan=False, allow_infinity=False))
def test_degree_law_for_preimages(a):
    for f in (BASILICA, RABBITISH):
        pre = preimages(f, pt(a))
        assert len(pre) == f.degree
        for p in pre:
            assert float(sdist(apply(f, p), pt(a))) < 1e-30


def test_vectorized_preimages_match():
    a = np.array([0.3 + 0.2j, -1.2, 2j])
    z, w = preimages_np(RABBITISH, a, np.ones(3))
    for i, ai in enumerate(a):
        exact = sorted((p.to_complex() for p in preimages(RABBITISH, pt(ai))), key=lambda c: (c.real, c.imag))
        got = sorted((z[i] / w[i]), key=lambda c: (c.real, c.imag))
        assert np.allclose(exact, got, atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(min_magnitude=0.2, max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_chart_independence(x):
    # |f'| (1+|x|^2)/(1+|f|^2) computed in the z-chart and in the w-chart
    p = pt(x, 256)
    d = spherical_derivative(RABBITISH, p)
    with context(256):
        fx = apply(RABBITISH, p)
        lam = chart_derivative(RABBITISH, p, "z" if fx.chart == "z" else "w")
        ax = abs(p.coordinate) ** 2
        af = abs(fx.coordinate) ** 2
        direct = abs(lam) * (1 + ax) / (1 + af)
        assert abs(direct - d) <= 1e-20 * max(d, 1)


@settings(max_examples=30, deadline=None)
@given(st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False), st.integers(1, 10))
def test_chain_rule(x, n):
    f = RABBITISH
    p = pt(x, 256)
    orbit = [p]
    for _ in range(n - 1):
        orbit.append(apply(f, orbit[-1]))
    with context(256):
        prod = gmpy2.mpfr(1)
        for q in orbit:
            prod *= spherical_derivative(f, q)
        # derivative of f^n via the lifted Jacobian of the composed map
        fn = f
        for _ in range(n - 1):
            fn = compose(fn, f)
        whole = spherical_derivative(fn, p)
        if whole > 1e-200:
            assert abs(whole - prod) <= 1e-15 * whole


def compose(g, f):
    """g o f for polynomial maps, via coefficient composition."""
    from equidyn.mpnum import poly_compose
    return RationalMap(poly_compose(g.P, f.P), f.Q)


def test_product_map_components():
    prod = ProductMap(SQ, BASILICA)
    x = (pt(2), pt(0))
    img = apply(prod, x)
    assert same(img[0], pt(4)) and same(img[1], pt(-1))
    d1, d2 = spherical_derivative(prod, x)
    assert d2 == 0 and d1 > 0
    with pytest.raises(ValueError):
        ProductMap(SQ, RationalMap.polynomial([0, 0, 0, 1]))


def test_map_text_is_canonical():
    f = RationalMap.parse("degree 2\nP 0.1 0 1\nQ 1\n")
    g = RationalMap.parse("Q 1\nP 0=0.1 2=1\n")
    assert f.to_text() == g.to_text() and f.key == g.key
    assert RationalMap.parse(f.to_text()).key == f.key
