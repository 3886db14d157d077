import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisym.bounds import memindep_case
from trisym.gridopt import (
    FEASIBLE_P1,
    alternatives,
    family_grid,
    feasible_p1,
    ideal_3d,
    limited_params,
    predict_3d,
    select_grid,
)
from trisym.kernels import KernelShape

KERNELS = ["syrk", "syr2k", "symm"]


def shape(kernel, n1, n2):
    return KernelShape(kernel, n1, n2)


def test_feasible_values():
    assert FEASIBLE_P1[:6] == (6, 12, 20, 30, 56, 72)
    assert feasible_p1(5) is None and feasible_p1(29) == 20 and feasible_p1(30) == 30


def test_case1_example():
    g = select_grid(shape("syrk", 100, 10000), 10)
    assert (g.algo, g.p1, g.p2) == ("1d", 1, 10)
    assert g.predicted_bandwidth == pytest.approx(4545)


def test_case2_example():
    g = select_grid(shape("symm", 1000, 10), 12)
    assert (g.algo, g.c, g.p1, g.p2) == ("2d", 3, 12, 1)


def test_case3_example():
    g = select_grid(shape("syrk", 16, 16), 60)
    assert g.ideal_p1 == pytest.approx(60 ** (2 / 3))
    assert (g.algo, g.c, g.p1, g.p2) == ("3d", 3, 12, 5)


def test_single_rank():
    g = select_grid(shape("syr2k", 10, 10), 1)
    assert (g.algo, g.p1, g.p2, g.predicted_bandwidth) == ("1d", 1, 1, 0)


def test_bad_P():
    with pytest.raises(ValueError):
        select_grid(shape("syrk", 4, 4), 0)


def test_family_grid_fallback():
    # ideal p1 for a thin problem is below 6, so the smallest grid is used
    assert family_grid(shape("syrk", 48, 144), 12, "3d") == (6, 2)
    assert family_grid(shape("syrk", 48, 144), 12, "2d") == (12, 1)
    assert family_grid(shape("syrk", 48, 144), 12, "1d") == (1, 12)
    with pytest.raises(ValueError):
        family_grid(shape("syrk", 48, 144), 5, "2d")


SWEEP = [(k, n1, n2, P) for k in KERNELS for n1 in (8, 48, 144, 1000) for n2 in (1, 16, 288, 10000)
         for P in (1, 2, 6, 11, 12, 24, 48, 60, 100, 512, 1024)]


@pytest.mark.parametrize("k, n1, n2, P", SWEEP[::3])
def test_grid_invariants(k, n1, n2, P):
    g = select_grid(shape(k, n1, n2), P)
    assert g.p1 * g.p2 <= P
    if g.algo == "2d":
        assert g.p2 == 1
    if g.algo == "1d":
        assert g.p1 == 1
    if g.algo in ("2d", "3d"):
        assert g.p1 == g.c * (g.c + 1)
    assert g.utilization == pytest.approx(g.p1 * g.p2 / P)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(KERNELS), st.integers(2, 3000), st.integers(1, 20000), st.integers(1, 4096))
def test_selected_dominates_alternatives(k, n1, n2, P):
    s = shape(k, n1, n2)
    g = select_grid(s, P)
    for alt in alternatives(s, P).values():
        assert g.predicted_bandwidth <= alt.predicted_bandwidth
    named = {1: "1d", 2: "2d", 3: "3d"}[memindep_case(s.m, n1, n2, P)]
    assert g.overridden == (g.algo != named)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(KERNELS), st.integers(2, 3000), st.integers(1, 20000), st.integers(1, 4096))
def test_balance_at_ideal_point(k, n1, n2, P):
    s = shape(k, n1, n2)
    p1, p2 = ideal_3d(s, P)
    assert p1 * p2 == pytest.approx(P, rel=1e-12)
    # each 3D term meets its lower-bound counterpart, with n1^2 standing in for n1(n1-1)
    per_matrix = n1 * n2 / (math.sqrt(p1) * p2)
    tri = n1 * n1 / (2 * p1)
    V = n1 * n1 * n2 / P
    x1, x2 = s.m ** (-1 / 3) * V ** (2 / 3), s.m ** (2 / 3) / 2 * V ** (2 / 3)
    assert abs(per_matrix - x1) <= 1e-9 * x1
    assert abs(tri - x2) <= 1e-9 * x2
    # so the total is 3/2 of the communicated non-symmetric words
    assert abs(s.m * per_matrix + tri - 1.5 * s.m * per_matrix) <= 1e-9 * tri


def test_predict_3d_at_p2_one_is_2d():
    s = shape("syr2k", 48, 30)
    for c in (2, 3, 4):
        alt = predict_3d(s, c, 1)
        assert alt == pytest.approx(s.m * 48 * 30 / c * (1 - 1 / (c * (c + 1))))


def test_utilization_at_least_half():
    low = []
    for P in range(1, 1025):
        for k, n1, n2 in [("syrk", 16, 16), ("symm", 1000, 10), ("syrk", 100, 10000), ("syr2k", 144, 288)]:
            g = select_grid(shape(k, n1, n2), P)
            if g.utilization < 0.5:
                low.append((k, n1, n2, P, g.algo, g.p1, g.p2))
    print(f"utilization < 1/2 at {len(low)} points: {low[:5]}")
    assert not low


def test_limited_examples():
    assert limited_params(48, 4, 144, 3) == limited_params(48, 4, 144)
    lp = limited_params(48, 4, 144, 3)
    assert (lp.p1, lp.p2, lp.b) == (12, 4, 6)


def test_limited_rounds_to_nearest_divisor():
    lp = limited_params(48, 5, 144)
    assert lp.p2 in (4, 6) and 48 % lp.p2 == 0


def test_limited_x_just_above_one():
    lp = limited_params(60, 1.01, 100)
    assert lp.p2 == 2 and lp.p1 == 30


def test_limited_full_utilization():
    for c in (2, 3, 4, 5):
        p1 = c * (c + 1)
        for x in (2, 3, 5):
            lp = limited_params(p1 * x, x, 100)
            assert (lp.p1, lp.p2) == (p1, x)
            assert lp.p1 * lp.p2 == p1 * x


@settings(max_examples=100, deadline=None)
@given(st.integers(6, 2000), st.floats(1.01, 64), st.integers(1, 5000))
def test_limited_params_properties(P, x, n1):
    lp = limited_params(P, x, n1)
    assert P % lp.p2 == 0
    assert lp.p1 * lp.p2 <= P and lp.p1 in FEASIBLE_P1
    assert lp.b == max(1, math.isqrt(n1 // lp.c))
