"""Cokernels of Haar-random matrices over Z_p.

Exact finite-n measures, the same measures through the uniform corank chain,
the two-term large-n expansion, and a Smith-normal-form sampler that works
with residues mod p^N.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np

from .chain import ChainSpec, Dist, iterate, stationary
from .errors import DomainError
from .ffmat import CHUNK, chunk_rng
from .qseries import DEFAULT_PREC, Approx, PGroupType, _mp, aut_order, eta, eta_inf, lambda_m, w_m


class _Saturated:
    def __repr__(self):
        return "SATURATED"


SATURATED = _Saturated()


@dataclass(frozen=True)
class PadicMatrixSample:
    p: int
    N: int
    n: int
    m: int
    entries: tuple  # row-major tuple of rows, residues mod p^N

    def __post_init__(self):
        if self.N < 1:
            raise DomainError("precision exponent must be at least 1")

    @property
    def saturated(self) -> bool:
        return snf_valuations(self) is None


def valuation(x: int, p: int, cap: int) -> int:
    if x == 0:
        return cap
    v = 0
    while x % p == 0 and v < cap:
        x //= p
        v += 1
    return v


def snf_valuations(s: PadicMatrixSample) -> list[int] | None:
    """p-valuations of the Smith diagonal, or None if some diagonal entry is 0 mod p^N."""
    p, N = s.p, s.N
    mod = p**N
    M = [[int(x) % mod for x in row] for row in s.entries]
    rows, cols = len(M), len(M[0]) if M else 0
    vals = []
    for t in range(rows):
        best, bi, bj = N, -1, -1
        for i in range(t, rows):
            for j in range(t, cols):
                if M[i][j]:
                    v = valuation(M[i][j], p, N)
                    if v < best:
                        best, bi, bj = v, i, j
                        if v == 0:
                            break
            if best == 0:
                break
        if bi < 0:
            return None
        M[t], M[bi] = M[bi], M[t]
        for row in M:
            row[t], row[bj] = row[bj], row[t]
        piv = M[t][t]
        pv = p**best
        uinv = pow(piv // pv, -1, mod)
        for i in range(t + 1, rows):
            if M[i][t]:
                f = (M[i][t] // pv) * uinv % mod
                M[i] = [(a - f * b) % mod for a, b in zip(M[i], M[t])]
        for j in range(t + 1, cols):
            if M[t][j]:
                f = (M[t][j] // pv) * uinv % mod
                for row in M:
                    row[j] = (row[j] - f * row[t]) % mod
        vals.append(best)
    return vals


def snf_type(s: PadicMatrixSample):
    """Cokernel type of the sample, or SATURATED."""
    vals = snf_valuations(s)
    if vals is None:
        return SATURATED
    return PGroupType(s.p, tuple(v for v in vals if v > 0))


def sample_matrix(p: int, N: int, n: int, m: int, rng: np.random.Generator) -> PadicMatrixSample:
    ent = rng.integers(0, p**N, size=(n, n + m), dtype=np.int64)
    return PadicMatrixSample(p, N, n, m, tuple(tuple(int(x) for x in row) for row in ent))


@dataclass
class CokernelHist:
    p: int
    n: int
    m: int
    N: int
    samples: int
    seed: int
    counts: Counter = field(default_factory=Counter)
    saturated: int = 0

    @property
    def valid(self) -> int:
        return self.samples - self.saturated

    def to_dict(self):
        return {
            "p": self.p, "n": self.n, "m": self.m, "N": self.N, "samples": self.samples, "seed": self.seed,
            "saturated": self.saturated,
            "counts": {str(t): c for t, c in sorted(self.counts.items(), key=lambda kv: (kv[0].order, kv[0].lam))},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def cokernel_hist(p: int, n: int, m: int, samples: int, seed: int = 0, N: int = 20) -> CokernelHist:
    """SNF Monte Carlo; saturated samples are excluded from ``counts`` and tallied apart."""
    h = CokernelHist(p, n, m, N, samples, seed)
    for chunk in range((samples + CHUNK - 1) // CHUNK):
        size = min(CHUNK, samples - chunk * CHUNK)
        ent = chunk_rng(seed, chunk).integers(0, p**N, size=(size, n, n + m), dtype=np.int64)
        for mat in ent.tolist():
            t = snf_type(PadicMatrixSample(p, N, n, m, tuple(map(tuple, mat))))
            if t is SATURATED:
                h.saturated += 1
            else:
                h.counts[t] += 1
    return h


def cokernel_measure_exact(p: int, n: int, m: int, t: PGroupType) -> Fraction:
    """Haar measure of {M in Mat_{n x (n+m)}(Z_p) : coker M = G}."""
    if n < 1 or m < 0:
        raise DomainError("need n >= 1 and m >= 0")
    if t.p != p:
        raise DomainError("group type prime does not match p")
    r = t.rank
    if r > n:
        return Fraction(0)
    return Fraction(1, t.order**m * aut_order(t)) * eta(n + m, p) * eta(n, p) / (eta(m, p) * eta(n - r, p))


def fp_corank_prob(p: int, n: int, m: int, r: int) -> Fraction:
    """P(corank = r) for a uniform n x (n+m) matrix over F_p, closed form."""
    if r < 0 or r > n:
        return Fraction(0)
    return Fraction(1, p ** (r * (r + m))) * eta(n + m, p) * eta(n, p) / (eta(n - r, p) * eta(r, p) * eta(r + m, p))


def cokernel_measure_chain(p: int, n: int, m: int, t: PGroupType, prec: int = DEFAULT_PREC) -> Approx:
    """The same measure as w_m(G) / pi_m(r) * (delta_0 P_m^n)(r)."""
    r = t.rank
    c = ChainSpec("uniform", p, m)
    d = iterate(c, Dist.delta(0), n)
    if r > n:
        return Approx(mpmath.mpf(0), mpmath.mpf(0))
    pi = stationary(c, max(r, 1), prec)
    w = w_m(t, m, prec)
    with mpmath.workprec(prec + 32):
        x = _mp(d[r])
        val = w.value / pi[r] * x
        err = (w.error / pi[r] + w.value * pi.error / pi[r] ** 2) * x + mpmath.mpf(2) ** -prec
    return Approx(val, err)


@dataclass
class ExpansionCheck:
    t: PGroupType
    m: int
    w: Approx
    lam: Approx
    cap: object
    rows: list = field(default_factory=list)  # (n, exact, two_term, scaled_residual)

    @property
    def ok(self) -> bool:
        return all(abs(r[3]) <= self.cap for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mu_exact", "w_plus_lambda_p^-n", "scaled_residual", "cap", "within_cap"])
        with mpmath.workprec(160):
            for n, ex, tt, sr in self.rows:
                w.writerow([n, mpmath.nstr(_mp(ex), 25), mpmath.nstr(tt, 25), mpmath.nstr(sr, 12),
                            mpmath.nstr(self.cap, 12), abs(sr) <= self.cap])
        return buf.getvalue()


def expansion_cap(p: int, m: int, prec: int = DEFAULT_PREC):
    """(eta_m(p)^2 / eta_inf(p)^2 - 1)^{1/2}."""
    ei = eta_inf(p, prec)
    with mpmath.workprec(prec + 32):
        em = _mp(eta(m, p))
        return mpmath.sqrt(em**2 / ei.value**2 - 1)


def cokernel_expansion(p: int, m: int, t: PGroupType, ns=range(1, 11), prec: int = DEFAULT_PREC) -> ExpansionCheck:
    """w_m(G), lambda_m(G) and the scaled residual |mu_n - w - lambda p^-n| p^{2n} for each n."""
    w = w_m(t, m, prec)
    lam = lambda_m(t, m, prec)
    out = ExpansionCheck(t, m, w, lam, expansion_cap(p, m, prec))
    with mpmath.workprec(prec + 32):
        for n in ns:
            ex = cokernel_measure_exact(p, n, m, t)
            two = w.value + lam.value * mpmath.mpf(p) ** -n
            out.rows.append((n, ex, two, (_mp(ex) - two) * mpmath.mpf(p) ** (2 * n)))
    return out
