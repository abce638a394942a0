from __future__ import annotations

import cmath
import math

import pytest
from hypothesis import given, settings, strategies as st

from equidyn.dynsys import ProductMap, ProjectivePoint, RationalMap, sdist
from equidyn.greenmeas import BAND
from equidyn.percyc import (
    count_exceptional,
    cycle_csv,
    cycles_from_text,
    cycles_to_text,
    expected_count,
    filter_repelling_gamma,
    find_periodic,
    minimal_periods,
    multiplier_threshold,
    multiset_distance,
    nonrepelling_cycles,
    select_q,
)

SQ = RationalMap.quadratic(0)
BASILICA = RationalMap.quadratic(-1)


def has(cs, x, tol=1e-25):
    target = ProjectivePoint.from_affine(x)
    return any(float(sdist(p.location, target)) <= tol for p in cs)


def test_square_period_three():
    cs = find_periodic(SQ, 3, "expand")
    assert cs.total_with_multiplicity == 9 == expected_count(2, 3)
    assert has(cs, 0) and has(cs, None)
    for k in range(7):
        assert has(cs, cmath.exp(2j * math.pi * k / 7), 1e-15)


def test_small_examples():
    assert len(find_periodic(SQ, 1)) == 3
    for x in (0, 1, None):
        assert has(find_periodic(SQ, 1), x)
    cs = find_periodic(BASILICA, 1)
    for x in ((1 + 5 ** 0.5) / 2, (1 - 5 ** 0.5) / 2, None):
        assert has(cs, x, 1e-15)


def test_minimal_period_sieve():
    p1 = find_periodic(SQ, 1)
    p2 = minimal_periods(find_periodic(SQ, 2), {1: p1})
    minimal = [p for p in p2 if p.minimal_period == 2]
    assert len(minimal) == 2
    for p in minimal:
        assert abs(abs(p.location.to_complex()) - 1) < 1e-30
        assert abs(p.location.to_complex() ** 3 - 1) < 1e-14
    assert all(p.minimal_period == 1 for p in minimal_periods(p1, {}))
    with pytest.raises(ValueError):
        minimal_periods(find_periodic(SQ, 4), {1: p1})


def test_prime_period_point_outside_fixed_set():
    cs = find_periodic(BASILICA, 3)
    fixed = find_periodic(BASILICA, 1)
    sieved = minimal_periods(cs, {1: fixed})
    assert sum(p.minimal_period == 3 for p in sieved) == 6


def test_filter_examples():
    cs = find_periodic(SQ, 4)
    kept = filter_repelling_gamma(cs, 0.5)
    assert len(kept) == 15
    assert not has(kept, 0) and not has(kept, None)
    assert multiplier_threshold(2, 4, 0.5) == 2.0
    everything = filter_repelling_gamma(cs, 1.0)
    assert len(everything) == sum(p.is_repelling and p.in_small_julia == BAND for p in cs)
    bas = filter_repelling_gamma(find_periodic(BASILICA, 2), 0.5)
    assert not has(bas, 0) and not has(bas, -1)
    with pytest.raises(ValueError):
        filter_repelling_gamma(cs, 1.5)


def test_count_examples():
    for n in range(1, 6):
        assert count_exceptional(find_periodic(SQ, n)) == (2, 2)
    A, _ = count_exceptional(find_periodic(BASILICA, 2))
    assert A >= 2
    prod = find_periodic(ProductMap(SQ, BASILICA), 2)
    _, B = count_exceptional(prod)
    assert B >= 6


@pytest.mark.parametrize("d, c", [(2, -1), (2, 0.1j), (3, 0.3)])
def test_divisor_consistency(d, c):
    f = RationalMap.polynomial([c] + [0] * (d - 1) + [1])
    small = find_periodic(f, 2)
    big_ = find_periodic(f, 4)
    for p in small:
        assert any(float(sdist(p.location, q.location)) < 1e-20 for q in big_)


def test_residual_certification():
    cs = find_periodic(RationalMap.quadratic(0.1j), 6)
    assert max(p.residual for p in cs) <= 1e-20


def test_product_count_and_csv():
    cs = find_periodic(ProductMap(SQ, BASILICA), 2)
    assert cs.total_with_multiplicity == 25 and cs.k == 2
    text = cycle_csv(cs)
    assert text.splitlines()[0] == "re,im,chart,period,minimal_period,multiplier_modulus,class,julia_flag,multiplicity,residual"
    assert len(text.splitlines()) == 1 + len(cs)


def test_cache_text_round_trip():
    for cs in (find_periodic(BASILICA, 3), find_periodic(ProductMap(SQ, BASILICA), 2)):
        back = cycles_from_text(cycles_to_text(cs))
        assert cycles_to_text(back) == cycles_to_text(cs)
        assert multiset_distance(back, cs) == 0


def test_select_q():
    cs = find_periodic(BASILICA, 4)
    strict = select_q(cs, "P_nγ")
    rep = select_q(cs, "repelling")
    assert len(strict) <= len(rep) <= len(select_q(cs, "all"))
    with pytest.raises(ValueError):
        select_q(cs, "some")


def test_nonrepelling_bound_for_a_few_quadratics():
    for c in (-1, 0.1j, -0.12 + 0.75j, 0.3):
        cycles = nonrepelling_cycles(RationalMap.quadratic(c), 6)
        assert len(cycles) <= 2  # the fixed point at infinity counts as one


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 0.25), st.floats(-1, 1))
def test_backends_agree(re, im):
    f = RationalMap.quadratic(complex(re, im))
    a = find_periodic(f, 5, "expand", julia=False)
    b = find_periodic(f, 5, "newton-seeded", julia=False)
    assert multiset_distance(a, b) <= 1e-15


def test_cardinality_cubic():
    f = RationalMap.polynomial([0.2j, 0.1, 0, 1])
    for n in range(1, 5):
        assert find_periodic(f, n, julia=False).total_with_multiplicity == 3 ** n + 1
