import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisym.bounds import (
    memdep_opt_oracle,
    memdep_opt_solve,
    memindep_case,
    memindep_kkt_residual,
    memindep_lb,
    memindep_opt_oracle,
    memindep_opt_solve,
    memindep_W,
    par_memdep_lb,
    seq_read_lb,
)
from trisym.kernels import KernelShape

SYRK = lambda n1, n2: KernelShape("syrk", n1, n2)
SYR2K = lambda n1, n2: KernelShape("syr2k", n1, n2)
SYMM = lambda n1, n2: KernelShape("symm", n1, n2)


# -- memory-dependent bounds ---------------------------------------------------------


def test_seq_read_lb_example():
    assert seq_read_lb(SYRK(16, 16), 32) == pytest.approx(416.0, rel=1e-12)


def test_syr2k_doubles_first_term():
    s1, s2 = SYRK(16, 16), SYR2K(16, 16)
    M = 32
    assert seq_read_lb(s2, M) + 2 * M == pytest.approx(2 * (seq_read_lb(s1, M) + 2 * M))


def test_degenerate_n2():
    assert seq_read_lb(SYRK(16, 0), 32) == -64


def test_par_memdep_examples():
    assert par_memdep_lb(SYRK(16, 16), 1, 32) == seq_read_lb(SYRK(16, 16), 32)
    assert par_memdep_lb(SYRK(16, 16), 4, 32) == pytest.approx(56.0)
    assert par_memdep_lb(SYMM(16, 16), 4, 32) == pytest.approx(176.0)


# -- memory-independent bounds --------------------------------------------------------


def test_case1_example():
    r = memindep_lb(SYRK(100, 10000), 10)
    assert r.case_id == 1
    assert r.W == pytest.approx(10000 * math.sqrt(9900) / 10 + 4950)
    assert r.W == pytest.approx(104448.7, abs=0.1)


def test_case3_example():
    r = memindep_lb(SYRK(16, 16), 64)
    assert r.case_id == 3
    assert r.W == pytest.approx(1.5 * (16 * 15 * 16 / 64) ** (2 / 3))
    assert r.W == pytest.approx(22.99, abs=0.01)


def test_case2_example():
    r = memindep_lb(SYMM(1000, 10), 100)
    assert r.case_id == 2
    assert r.W == pytest.approx(2 * 10 * math.sqrt(999000 / 100) + 999000 / 200)


def test_lb_subtracts_owned_data():
    s = SYR2K(40, 30)
    r = memindep_lb(s, 24)
    assert r.lb == pytest.approx(r.W - (40 * 39 / 2 + 2 * 40 * 30) / 24)


def test_ties_go_to_lower_case():
    # n1 == m*n2 and P exactly at the case-1 threshold
    n1, n2 = 10, 10
    t1 = n2 / math.sqrt(n1 * (n1 - 1))
    assert memindep_case(1, n1, n2, t1) == 1


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([1, 2]), st.integers(2, 400), st.integers(1, 400))
def test_case_boundaries_are_continuous(m, n1, n2):
    N = n1 * (n1 - 1)
    if n1 <= m * n2:
        P = m * n2 / math.sqrt(N)
        a, b = memindep_W(m, n1, n2, P, 1), memindep_W(m, n1, n2, P, 3)
    else:
        P = N / (m * n2) ** 2
        a, b = memindep_W(m, n1, n2, P, 2), memindep_W(m, n1, n2, P, 3)
    assert a == pytest.approx(b, rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([1, 2]), st.integers(2, 300), st.integers(1, 300), st.integers(1, 4096))
def test_selected_case_never_below_case3(m, n1, n2, P):
    c = memindep_case(m, n1, n2, P)
    W = memindep_W(m, n1, n2, P, c)
    assert W >= memindep_W(m, n1, n2, P, 3) * (1 - 1e-12)


# -- optimization problems --------------------------------------------------------


def test_memdep_solve_examples():
    a = memdep_opt_solve(1, 3)
    assert (a.x1, a.x2) == pytest.approx((2, 1)) and a.value == pytest.approx(math.sqrt(2))
    b = memdep_opt_solve(2, 3)
    assert (b.x1, b.x2) == pytest.approx((1, 1)) and b.value == pytest.approx(math.sqrt(2) / 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.floats(0.01, 1e6))
def test_memdep_scales_as_one_over_m(m, X):
    assert memdep_opt_solve(m, X).value == pytest.approx(memdep_opt_solve(1, X).value / m, rel=1e-12)


def test_memdep_oracle_examples():
    o = memdep_opt_oracle(1, 3, grid=2000)
    assert math.sqrt(2) * (1 - 1e-3) <= o.value <= math.sqrt(2) * (1 + 1e-12)
    o2 = memdep_opt_oracle(2, 3, grid=2000)
    cell = (3 / 2 / 2000, 3 / 2000)
    assert abs(o2.x1 - 1) <= cell[0] and abs(o2.x2 - 1) <= cell[1]
    assert memdep_opt_oracle(1, 1e-12, grid=1000).value < 1e-17


def test_memindep_solve_examples():
    pt = memindep_opt_solve(1, 4, 4, 64)
    assert pt.case_id == 3
    assert pt.x1 == pytest.approx((12 * 4 / 64) ** (2 / 3))
    assert pt.x1 == pytest.approx(0.8255, abs=1e-4)
    assert pt.x2 == pytest.approx(0.4128, abs=1e-4)
    p1 = memindep_opt_solve(1, 100, 10000, 10)
    assert p1.case_id == 1 and p1.x2 == 100 * 99 / 2
    p2 = memindep_opt_solve(2, 1000, 10, 100)
    assert p2.case_id == 2 and p2.x2 == 999000 / 200


def _draw(rng):
    m = int(rng.integers(1, 3))
    n1 = int(rng.integers(2, 500))
    n2 = int(rng.integers(1, 500))
    P = int(rng.integers(1, 5000))
    return m, n1, n2, P


def test_memindep_closed_form_matches_bound_and_kkt():
    rng = np.random.default_rng(11)
    for _ in range(300):
        m, n1, n2, P = _draw(rng)
        pt = memindep_opt_solve(m, n1, n2, P)
        W = memindep_W(m, n1, n2, P, pt.case_id)
        assert pt.value(m) == pytest.approx(W, rel=1e-12)
        assert memindep_kkt_residual(m, n1, n2, P, pt) <= 1e-9


def test_kkt_detects_a_wrong_point():
    pt = memindep_opt_solve(1, 50, 50, 64)
    moved = type(pt)(pt.case_id, pt.x1 * 1.01, pt.x2)
    assert memindep_kkt_residual(1, 50, 50, 64, moved) > 1e-6


def test_memindep_oracle_agrees():
    rng = np.random.default_rng(5)
    for _ in range(40):
        m, n1, n2, P = _draw(rng)
        pt = memindep_opt_solve(m, n1, n2, P)
        o, cell = memindep_opt_oracle(m, n1, n2, P, grid=4001)
        closed = pt.value(m)
        assert o.value(m) >= closed * (1 - 1e-9)
        assert o.value(m) <= closed * (1 + 1e-3)
        assert abs(o.x2 - pt.x2) <= cell * (1 + 1e-9)
