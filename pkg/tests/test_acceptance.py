"""End-to-end acceptance checks, one test per criterion, at the stated tolerances."""

import math
import os
import random

import mpmath
import pytest

from corank.chain import CHAIN_KINDS, ChainSpec, Dist, _unnormalized, iterate, stationary, transition_row, tv_distance
from corank.classgroup import (
    class_number, compose, dh_average, error_series, fundamental_discriminants, identity, inverse, reduced_forms,
    sweep,
)
from corank.ffmat import KINDS, EnsembleSpec, FieldSpec, corank_hist
from corank.chain import ensemble_law
from corank.padic import cokernel_expansion, cokernel_hist, cokernel_measure_chain, cokernel_measure_exact
from corank.qseries import PGroupType, alpha, beta, group_types
from corank.spectral import (
    exact_spectrum, expansion_check, hilbert_schmidt_sq, project_delta0, truncated_spectrum,
)

WORKERS = os.cpu_count() or 1


def _d(c: ChainSpec, n: int):
    """Exact ||delta_0 P^n - pi||_tv as a certified mpf."""
    return tv_distance(iterate(c, Dist.delta(0), n), stationary(c)).value


def test_criterion_1_uniform_leading_constant(report):
    q = 2
    worst, rel20 = [], []
    for m in (0, 1):
        c = ChainSpec("uniform", q, m)
        pi0 = stationary(c)[0]
        const = 2 * pi0 / ((q - 1) * q**m)
        cap = mpmath.sqrt(pi0**-2 - 1)
        for n in range(10, 25):
            dev = abs(_d(c, n) * q**n - const)
            worst.append(dev / (cap * mpmath.mpf(q) ** -n))
            if n == 20:
                rel20.append(dev / const)
    ok = max(worst) <= 1 and max(rel20) <= 1e-4
    report(1, ok, f"max |dev|/bound={float(max(worst)):.4f} (<=1), rel dev at n=20={float(max(rel20)):.2e} (<=1e-4)")
    assert ok


def test_criterion_2_symmetric_parity_split(report):
    q = 3
    a = alpha(q).value
    c = ChainSpec("symmetric", q)
    even = 2 * q * a / (q**2 - 1)
    odd = even / (q - 1)
    r20 = abs(_d(c, 20) * mpmath.mpf(q) ** 20 / even - 1)
    r21 = abs(_d(c, 21) * mpmath.mpf(q) ** 21 / odd - 1)
    ok = r20 <= 1e-3 and r21 <= 1e-3
    report(2, ok, f"rel dev n=20 (even) {float(r20):.2e}, n=21 (odd) {float(r21):.2e} (<=1e-3)")
    assert ok


def test_criterion_3_alternating_constants(report):
    """Both alternating chains at q=2, n=12, against the constants exactly as stated.

    The second constant is short by a factor 2: the leading eigenvector component
    for the even chain has total variation norm 2 alpha q/(q+1), not alpha q/(q+1).
    The library returns the corrected value; this check keeps the stated one.
    """
    q, n = 2, 12
    a = alpha(q).value
    stated_odd = 2 * a / ((q - 1) ** 2 * (q + 1))
    stated_even = a * q / ((q - 1) * (q + 1))
    r_odd = abs(_d(ChainSpec("alt_odd", q), n) * mpmath.mpf(q) ** (2 * n) / stated_odd - 1)
    obs_even = _d(ChainSpec("alt_even", q), n) * mpmath.mpf(q) ** (2 * n)
    r_even = abs(obs_even / stated_even - 1)
    ok = r_odd <= 1e-3 and r_even <= 1e-3
    report(3, ok, f"odd chain rel dev {float(r_odd):.2e}; even chain rel dev {float(r_even):.2e} "
                  f"(observed/stated = {float(obs_even / stated_even):.6f})")
    assert ok


def test_criterion_4_hermitian_sign_structure(report):
    q = 3
    c = ChainSpec("hermitian", q)
    const = 2 * beta(q).value / (4 * alpha(q * q).value)
    r16 = abs(_d(c, 16) * mpmath.mpf(q) ** 16 / const - 1)
    rows = expansion_check(c, range(10, 18)).rows
    signs = [int(mpmath.sign(r[5])) for r in rows]
    alternates = len(signs) == 8 and all(s != 0 for s in signs) and all(x == -y for x, y in zip(signs, signs[1:]))
    ok = r16 <= 1e-3 and alternates
    report(4, ok, f"rel dev n=16 {float(r16):.2e} (<=1e-3); signs n=10..17 {signs}")
    assert ok


def test_criterion_5_spectrum_recovery(report):
    worst = 0.0
    near_minus_one = False
    for q in (2, 3):
        for kind in ("uniform", "symmetric", "alt_odd", "alt_even", "hermitian"):
            c = ChainSpec(kind, q)
            ev = truncated_spectrum(c, 60)
            ex = [float(x) for x in exact_spectrum(c, 6)]
            worst = max(worst, max(abs(abs(a) - abs(b)) for a, b in zip(ev[:6], ex)))
            worst = max(worst, max(abs(a - b) for a, b in zip(ev[:6], ex)))
            if kind == "symmetric":
                near_minus_one |= bool(any(abs(x + 1) < 1e-3 for x in ev))
    ok = worst <= 1e-8 and not near_minus_one
    report(5, ok, f"max top-6 deviation {worst:.2e} (<=1e-8); symmetric eigenvalue near -1: {near_minus_one}")
    assert ok


def test_criterion_6_cokernel_expansion(report):
    worst_ratio, worst_gap = mpmath.mpf(0), mpmath.mpf(0)
    with mpmath.workprec(256):
        for p in (2, 3):
            for m in (0, 1):
                for t in group_types(p, 2):
                    rep = cokernel_expansion(p, m, t, range(2, 11))
                    worst_ratio = max(worst_ratio, max(abs(r[3]) / rep.cap for r in rep.rows))
                    for n in range(2, 11):
                        ex = cokernel_measure_exact(p, n, m, t)
                        ch = cokernel_measure_chain(p, n, m, t)
                        worst_gap = max(worst_gap, abs(mpmath.mpf(ex.numerator) / ex.denominator - ch.value))
    ok = worst_ratio <= 1 and worst_gap <= mpmath.mpf(10) ** -30
    report(6, ok, f"max residual/cap {float(worst_ratio):.4f} (<=1); max |exact-chain| {float(worst_gap):.1e} (<=1e-30)")
    assert ok


@pytest.mark.slow
def test_criterion_7_monte_carlo(report):
    fields = {"uniform": 2, "symmetric": 2, "alternating": 2, "scs": 3, "hermitian": 9}
    tvs = {}
    for kind in KINDS:
        order = fields[kind]
        h = corank_hist(EnsembleSpec(kind, 6, FieldSpec.of_order(order)), 10**6, seed=2024, workers=WORKERS)
        law = ensemble_law(kind, 6, 3 if kind == "hermitian" else order)
        freq = h.frequencies()
        tvs[kind] = sum(abs(freq.get(k, 0.0) - float(law.get(k, 0))) for k in set(law) | set(freq))
    snf = cokernel_hist(2, 3, 0, 10**5, seed=2024)
    n_valid = snf.valid
    zs = {}
    covered = 0.0
    for t in group_types(2, 12, max_rank=3):
        p = float(cokernel_measure_exact(2, 3, 0, t))
        if p * n_valid < 5:
            continue
        covered += p
        zs[str(t)] = (snf.counts.get(t, 0) - p * n_valid) / math.sqrt(n_valid * p * (1 - p))
    # everything rarer is pooled into one bin
    rest_obs = n_valid - sum(snf.counts.get(PGroupType.parse(2, k), 0) for k in zs)
    rest_p = 1 - covered
    zs["rest"] = (rest_obs - rest_p * n_valid) / math.sqrt(n_valid * rest_p * (1 - rest_p))
    worst_z = max(abs(z) for z in zs.values())
    ok = max(tvs.values()) <= 0.01 and worst_z <= 4
    report(7, ok, "TV " + ", ".join(f"{k}={v:.4f}" for k, v in tvs.items())
           + f" (<=0.01); SNF max |z|={worst_z:.2f} over {len(zs)} bins (<=4), saturated={snf.saturated}")
    assert ok


@pytest.mark.slow
def test_criterion_8_number_theory(report):
    X = 10**6
    count = len(fundamental_discriminants(X))
    dev = abs(count - 3 / math.pi**2 * X)
    forms_ok = class_number(-23) == 3 and reduced_forms(-23) == [(1, 1, 6), (2, -1, 3), (2, 1, 3)]
    sw = sweep(X, 3, workers=WORKERS)
    dh = dh_average(X, sw=sw)
    rows = error_series(PGroupType(3, (1,)), X, checkpoints=100, sw=sw)
    xs = [r.X for r in rows]
    series_ok = (
        len(rows) == 100
        and xs == sorted(set(xs))
        and all(math.isfinite(r.E) and math.isfinite(r.log_ratio) for r in rows)
        and all(0 <= r.count_match <= r.count_all for r in rows)
        and [r.count_all for r in rows] == sorted(r.count_all for r in rows)
        and rows[-1].count_all == count
    )
    ok = dev <= 5 * math.sqrt(X) and forms_ok and 1.8 <= dh <= 2.2 and series_ok
    report(8, ok, f"count={count} |dev|={dev:.1f} (<= {5 * math.sqrt(X):.0f}); h(-23) forms ok={forms_ok}; "
                  f"dh_average={dh:.4f} in [1.8,2.2]; error series ok={series_ok}")
    assert ok


def test_criterion_9_property_suites(report):
    checks = {}
    # reversibility and row-stochasticity, exactly, on every chain
    rev = stoch = True
    for kind in CHAIN_KINDS:
        for q in (2, 3, 5):
            c = ChainSpec(kind, q)
            for i in range(30):
                down, stay, up = transition_row(c, i)
                stoch &= down + stay + up == 1 and min(down, stay, up) >= 0
                rev &= _unnormalized(c, i) * up == _unnormalized(c, i + 1) * transition_row(c, i + 1)[0]
    checks["reversible"] = rev
    checks["stochastic"] = stoch
    # Parseval with K = 12 eigenvectors beyond the constant one, q=2, m=0
    c = ChainSpec("uniform", 2, 0)
    with mpmath.workprec(256):
        pi0 = stationary(c)[0]
        partial = mpmath.fsum(project_delta0(c, k).norm_sq.value for k in range(0, 13))
        parseval_gap = abs(partial - 1 / pi0)
    checks["parseval"] = parseval_gap <= 1e-6
    hs_gap = abs(hilbert_schmidt_sq(c, 60) - 1 / (1 - 2**-2))
    checks["hilbert_schmidt"] = hs_gap <= 1e-6
    rnd = random.Random(9)
    law = True
    for D in (-3299, -3896, -11003, -21311, -4027):
        F = reduced_forms(D)
        e = identity(D)
        for _ in range(300):
            a, b, g = (rnd.choice(F) for _ in range(3))
            law &= compose(a, e) == a and compose(a, inverse(a)) == e
            law &= compose(a, b) == compose(b, a) and compose(compose(a, b), g) == compose(a, compose(b, g))
    checks["group_law"] = law
    ok = all(checks.values())
    report(9, ok, ", ".join(f"{k}={v}" for k, v in checks.items())
           + f"; Parseval gap with K=12 is {float(parseval_gap):.3e} (<=1e-6), HS gap {hs_gap:.1e}")
    assert ok
