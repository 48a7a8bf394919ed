"""q-products, q-series coefficients and finite abelian p-group constants.

Finite products are returned as exact :class:`fractions.Fraction` values.
Infinite products and series come back as :class:`Approx`, a value paired
with a certified absolute error bound.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import mpmath

from .errors import DomainError

DEFAULT_PREC = int(os.environ.get("CORANK_PREC", "256"))
INF = math.inf


class Approx(NamedTuple):
    """A high-precision real together with an absolute error bound."""

    value: mpmath.mpf
    error: mpmath.mpf

    def __float__(self) -> float:
        return float(self.value)

    def contains(self, x, slack=0) -> bool:
        return abs(self.value - x) <= self.error + slack


def as_rational(q) -> Fraction:
    if isinstance(q, Fraction):
        return q
    if isinstance(q, int):
        return Fraction(q)
    if isinstance(q, str):
        return Fraction(q)
    if isinstance(q, float):
        return Fraction(q).limit_denominator(10**12)
    raise DomainError(f"cannot interpret {q!r} as a rational number")


def _check_q(q):
    if q <= 1:
        raise DomainError(f"q must exceed 1, got {q}")


def _mp(x):
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def _check_prec(prec):
    if prec < 64:
        raise DomainError("precision must be at least 64 bits")


def eta(k, q, prec: int = DEFAULT_PREC):
    """prod_{j=1}^{k} (1 - q^{-j}); exact for finite k, ``Approx`` for k = inf."""
    if k == INF:
        return eta_inf(q, prec)
    if k < 0:
        raise DomainError("eta index must be non-negative")
    q = as_rational(q)
    _check_q(q)
    out = Fraction(1)
    for j in range(1, int(k) + 1):
        out *= 1 - q**-j
    return out


def _odd_product(q, prec, *, sign, start, step, invert=False) -> Approx:
    # prod over j = start, start+step, ... of (1 + sign*q^{-j}), optionally inverted
    _check_prec(prec)
    qf = as_rational(q) if not isinstance(q, mpmath.mpf) else q
    _check_q(qf)
    with mpmath.workprec(prec + 32):
        qm = _mp(qf)
        target = mpmath.mpf(2) ** -(prec + 8)
        val = mpmath.mpf(1)
        j = start
        while True:
            val *= 1 + sign * qm**-j
            j += step
            # tail factor lies in [1 - eps, 1 + eps] with eps = sum_{i>=j} q^{-i}
            eps = qm ** -(j - 1) / (qm - 1)
            if eps < target:
                break
        if invert:
            val = 1 / val
        err = 2 * val * eps + mpmath.mpf(2) ** -(prec + 16) * j
    return Approx(val, err)


def eta_inf(q, prec: int = DEFAULT_PREC) -> Approx:
    return _odd_product(q, prec, sign=-1, start=1, step=1)


def alpha(q, prec: int = DEFAULT_PREC) -> Approx:
    """prod over odd i of (1 - q^{-i})."""
    return _odd_product(q, prec, sign=-1, start=1, step=2)


def beta(q, prec: int = DEFAULT_PREC) -> Approx:
    """prod over odd i of (1 + q^{-i})^{-1}."""
    return _odd_product(q, prec, sign=+1, start=1, step=2, invert=True)


def even_product(q, J: int, prec: int = DEFAULT_PREC):
    """Finite prod over even i <= J of (1 - q^{-i})."""
    with mpmath.workprec(prec + 32):
        qm = _mp(as_rational(q))
        val = mpmath.mpf(1)
        for i in range(2, J + 1, 2):
            val *= 1 - qm**-i
    return val


def theta_m(q, m, prec: int = DEFAULT_PREC) -> Approx:
    """Normaliser of the uniform-chain stationary law for real q > 1, m > -1.

    theta_m(q)^{-1} = sum_i 1 / (q^{i(i+m)} eta_i(q) prod_{j<=i} (1 - q^{-m-j})).
    """
    _check_prec(prec)
    with mpmath.workprec(prec + 32):
        qm = _mp(q) if not isinstance(q, mpmath.mpf) else q
        mm = _mp(m) if not isinstance(m, mpmath.mpf) else m
        if qm <= 1:
            raise DomainError(f"q must exceed 1, got {q}")
        if mm <= -1:
            raise DomainError(f"m must exceed -1, got {m}")
        target = mpmath.mpf(2) ** -(prec + 8)
        term = mpmath.mpf(1)
        total = term
        i = 0
        while True:
            ratio = qm ** -(2 * i + 1 + mm) / ((1 - qm ** -(i + 1)) * (1 - qm ** -(mm + i + 1)))
            term *= ratio
            total += term
            i += 1
            nxt = qm ** -(2 * i + 1 + mm) / ((1 - qm ** -(i + 1)) * (1 - qm ** -(mm + i + 1)))
            if term < target and nxt < 1:
                tail = term * nxt / (1 - nxt)
                break
        val = 1 / total
        err = tail * val * val + mpmath.mpf(2) ** -(prec + 16) * i
    return Approx(val, err)


def euler_coeffs(q, K: int) -> list[Fraction]:
    """b_k = (-1)^k / prod_{j<=k} (q^j - 1), the coefficients of prod_i (1 - q^{-i} t)."""
    q = as_rational(q)
    _check_q(q)
    if K < 0:
        raise DomainError("K must be non-negative")
    out = [Fraction(1)]
    for k in range(1, K + 1):
        out.append(-out[-1] / (q**k - 1))
    return out


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


@dataclass(frozen=True)
class PGroupType:
    """Isomorphism type of a finite abelian p-group, sum of Z/p^{lam_i}."""

    p: int
    lam: tuple[int, ...] = ()

    def __post_init__(self):
        if not _is_prime(self.p):
            raise DomainError(f"{self.p} is not prime")
        lam = tuple(int(x) for x in self.lam)
        if any(x < 1 for x in lam):
            raise DomainError("partition parts must be positive")
        object.__setattr__(self, "lam", tuple(sorted(lam, reverse=True)))

    @classmethod
    def parse(cls, p: int, text: str) -> "PGroupType":
        text = text.strip().strip("[]() ")
        if text in ("", "0", "trivial"):
            return cls(p, ())
        return cls(p, tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip()))

    @property
    def rank(self) -> int:
        return len(self.lam)

    @property
    def order(self) -> int:
        return self.p ** sum(self.lam)

    def torsion_order(self, k: int) -> int:
        """#G[p^k]."""
        return self.p ** sum(min(x, k) for x in self.lam)

    def __str__(self):
        return "[" + ",".join(map(str, self.lam)) + "]"


def partitions(total: int, max_part: int | None = None):
    """All partitions of ``total`` as non-increasing tuples."""
    if max_part is None:
        max_part = total
    if total == 0:
        yield ()
        return
    for first in range(min(total, max_part), 0, -1):
        for rest in partitions(total - first, first):
            yield (first,) + rest


def group_types(p: int, max_exponent: int, max_rank: int | None = None):
    """All PGroupTypes with |G| <= p^max_exponent (and rank <= max_rank)."""
    for s in range(max_exponent + 1):
        for lam in partitions(s):
            if max_rank is None or len(lam) <= max_rank:
                yield PGroupType(p, lam)


def aut_order(t: PGroupType) -> int:
    """|Aut(G)| via the closed formula for abelian p-groups (Hillar and Rhea)."""
    p = t.p
    e = sorted(t.lam)  # ascending
    n = len(e)
    if n == 0:
        return 1
    d = [max(l for l in range(1, n + 1) if e[l - 1] == e[k]) for k in range(n)]
    c = [min(l for l in range(1, n + 1) if e[l - 1] == e[k]) for k in range(n)]
    out = 1
    for k in range(1, n + 1):
        out *= p ** d[k - 1] - p ** (k - 1)
    for j in range(n):
        out *= p ** (e[j] * (n - d[j]))
    for i in range(n):
        out *= p ** ((e[i] - 1) * (n - c[i] + 1))
    return out


def w_m(t: PGroupType, m: int, prec: int = DEFAULT_PREC) -> Approx:
    """Cohen-Lenstra weight (eta_inf(p)/eta_m(p)) / (|G|^m |Aut G|)."""
    if m < 0:
        raise DomainError("m must be non-negative")
    ei = eta_inf(t.p, prec)
    scale = Fraction(1, t.order**m * aut_order(t)) / eta(m, t.p)
    with mpmath.workprec(prec + 32):
        s = _mp(scale)
        return Approx(ei.value * s, ei.error * s)


def lambda_m(t: PGroupType, m: int, prec: int = DEFAULT_PREC) -> Approx:
    """Coefficient of p^{-n} in the cokernel-probability expansion."""
    w = w_m(t, m, prec)
    p = t.p
    factor = (1 + Fraction(1, p**m) - p**t.rank) / Fraction(p - 1)
    with mpmath.workprec(prec + 32):
        f = _mp(factor)
        return Approx(w.value * f, w.error * abs(f))
