import itertools
import json
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corank.errors import DomainError
from corank.padic import (
    SATURATED, PadicMatrixSample, cokernel_expansion, cokernel_hist, cokernel_measure_chain, cokernel_measure_exact,
    fp_corank_prob, snf_type,
)
from corank.qseries import PGroupType, group_types


@pytest.fixture(autouse=True)
def _wide_mpmath():
    with mpmath.workprec(256):
        yield


def _det(M):
    n = len(M)
    if n == 1:
        return M[0][0]
    return sum((-1) ** j * M[0][j] * _det([row[:j] + row[j + 1:] for row in M[1:]]) for j in range(n))


def _vp(x, p, cap):
    if x == 0:
        return cap
    v = 0
    while x % p == 0:
        x //= p
        v += 1
    return v


def _minor_type(M, p, N):
    """Valuations of the elementary divisors, from minimal valuations of k x k minors."""
    n, cols = len(M), len(M[0])
    mins = [0]
    for k in range(1, n + 1):
        best = N * k
        for rs in itertools.combinations(range(n), k):
            for cs in itertools.combinations(range(cols), k):
                best = min(best, _vp(_det([[M[i][j] for j in cs] for i in rs]), p, N * k))
        mins.append(best)
    return [mins[k] - mins[k - 1] for k in range(1, n + 1)]


@settings(max_examples=150, deadline=None)
@given(st.sampled_from([2, 3]), st.integers(1, 3), st.integers(0, 1), st.data())
def test_snf_matches_minor_oracle(p, n, m, data):
    N = 12
    # small entries with many multiples of p stress the pivoting
    entry = st.sampled_from([0, 1, p, p * p, p**3, 1 + p, 2 * p, p**4 * 3 % p**N, 5])
    M = [[data.draw(entry) for _ in range(n + m)] for _ in range(n)]
    t = snf_type(PadicMatrixSample(p, N, n, m, tuple(map(tuple, M))))
    divs = _minor_type(M, p, N)
    if any(d >= N for d in divs):
        assert t is SATURATED
    else:
        assert t.lam == tuple(sorted((d for d in divs if d > 0), reverse=True))


def test_snf_diagonal_and_saturation():
    s = PadicMatrixSample(3, 10, 3, 0, ((9, 0, 0), (0, 3, 0), (0, 0, 1)))
    assert snf_type(s) == PGroupType(3, (2, 1))
    z = PadicMatrixSample(2, 8, 2, 0, ((0, 0), (0, 0)))
    assert snf_type(z) is SATURATED and z.saturated
    with pytest.raises(DomainError):
        PadicMatrixSample(2, 0, 1, 0, ((1,),))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 3, 5]), st.integers(2, 4), st.data())
def test_snf_invariant_under_unimodular_operations(p, n, data):
    N = 15
    mod = p**N
    rng = np.random.default_rng(data.draw(st.integers(0, 10**6)))
    M = rng.integers(0, mod, size=(n, n)).tolist()
    base = snf_type(PadicMatrixSample(p, N, n, 0, tuple(map(tuple, M))))
    for _ in range(6):
        i, j = rng.choice(n, 2, replace=False)
        f = int(rng.integers(0, mod))
        if rng.random() < 0.5:
            M[i] = [(a + f * b) % mod for a, b in zip(M[i], M[j])]
        else:
            for row in M:
                row[i] = (row[i] + f * row[j]) % mod
    assert snf_type(PadicMatrixSample(p, N, n, 0, tuple(map(tuple, M)))) == base


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([2, 3, 5]), st.integers(1, 9), st.integers(0, 2), st.integers(0, 3))
def test_exact_measure_equals_chain_formula(p, n, m, s):
    for t in group_types(p, s):
        ex = cokernel_measure_exact(p, n, m, t)
        ch = cokernel_measure_chain(p, n, m, t)
        exm = mpmath.mpf(ex.numerator) / ex.denominator
        assert abs(exm - ch.value) <= ch.error + mpmath.mpf(10) ** -60


@pytest.mark.parametrize("p,n,m", [(2, 3, 0), (3, 4, 1), (2, 5, 2)])
def test_rank_marginals_recover_finite_field_corank_law(p, n, m):
    """Summing cokernel measures by p-rank gives the corank law of the reduction mod p."""
    s = 40 if p == 2 else 25
    by_rank = {}
    for t in group_types(p, s, max_rank=n):
        by_rank[t.rank] = by_rank.get(t.rank, Fraction(0)) + cokernel_measure_exact(p, n, m, t)
    for r in range(n + 1):
        target = fp_corank_prob(p, n, m, r)
        assert 0 <= target - by_rank.get(r, 0) < Fraction(1, p ** (s // 2))


def test_measure_vanishes_above_rank_and_rejects_bad_input():
    assert cokernel_measure_exact(2, 2, 0, PGroupType(2, (1, 1, 1))) == 0
    with pytest.raises(DomainError):
        cokernel_measure_exact(3, 2, 0, PGroupType(2, (1,)))
    with pytest.raises(DomainError):
        cokernel_measure_exact(2, 0, 0, PGroupType(2, ()))


@pytest.mark.parametrize("p", [2, 3, 5])
@pytest.mark.parametrize("m", [0, 1, 2])
def test_expansion_within_cap(p, m):
    for t in group_types(p, 2):
        rep = cokernel_expansion(p, m, t, range(1, 12))
        assert rep.ok, (t, [float(r[3]) for r in rep.rows])


def test_snf_histogram_is_deterministic():
    a = cokernel_hist(3, 2, 0, 3000, seed=4)
    b = cokernel_hist(3, 2, 0, 3000, seed=4)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["saturated"] + sum(d["counts"].values()) == 3000


def test_snf_histogram_against_exact_measure():
    h = cokernel_hist(3, 2, 1, 20000, seed=9)
    for t in group_types(3, 2):
        p = float(cokernel_measure_exact(3, 2, 1, t))
        sd = math.sqrt(p * (1 - p) / h.valid)
        assert abs(h.counts.get(t, 0) / h.valid - p) <= 5 * sd
