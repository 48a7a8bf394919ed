"""Tridiagonal corank chains: transition rows, stationary laws, iteration, TV distance.

Five chains are supported, all birth-death chains on {0, 1, 2, ...}:

========== ==========================================================
uniform    n x (n+m) matrices; real q > 1 and m > -1 are accepted
symmetric  symmetric n x n matrices
alt_odd    alternating (2n+1) x (2n+1) matrices, state j = (corank-1)/2
alt_even   alternating 2n x 2n matrices, state j = corank/2
hermitian  Hermitian matrices over F_{q^2}
========== ==========================================================

Transition probabilities are exact rationals whenever q is rational (and m is
an integer for the uniform chain); everything else uses mpmath reals.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction

import mpmath

from . import qseries
from .errors import DomainError
from .qseries import DEFAULT_PREC, Approx, _mp, as_rational, eta

CHAIN_KINDS = ("uniform", "symmetric", "alt_odd", "alt_even", "hermitian")
_ALIASES = {"sym": "symmetric", "alternating_odd": "alt_odd", "alternating_even": "alt_even", "her": "hermitian"}


def _num(x):
    if isinstance(x, mpmath.mpf):
        return x
    if isinstance(x, float):
        return as_rational(x)
    return as_rational(x)


@dataclass(frozen=True)
class ChainSpec:
    kind: str
    q: Fraction | mpmath.mpf
    m: Fraction | mpmath.mpf = Fraction(0)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in CHAIN_KINDS:
            raise DomainError(f"unknown chain kind {self.kind!r}; expected one of {CHAIN_KINDS}")
        object.__setattr__(self, "kind", kind)
        q, m = _num(self.q), _num(self.m)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "m", m)
        if q <= 1:
            raise DomainError(f"q must exceed 1, got {q}")
        if kind == "uniform":
            if m <= -1:
                raise DomainError(f"m must exceed -1, got {m}")
        else:
            if m != 0:
                raise DomainError(f"the {kind} chain takes no m parameter")
            if isinstance(q, mpmath.mpf):
                raise DomainError("real (non-rational) q is only supported for the uniform chain")

    @property
    def exact(self) -> bool:
        """Transition probabilities are rational."""
        if isinstance(self.q, mpmath.mpf):
            return False
        return isinstance(self.m, Fraction) and self.m.denominator == 1

    @property
    def extended_domain(self) -> bool:
        """Parameters outside the integer-m, prime-power-q setting of the matrix models."""
        return self.kind == "uniform" and not (self.exact and self.m >= 0)

    def __str__(self):
        if self.kind == "uniform":
            return f"uniform(q={self.q}, m={self.m})"
        return f"{self.kind}(q={self.q})"

    def to_dict(self):
        d = {"kind": self.kind, "q": str(self.q)}
        if self.kind == "uniform":
            d["m"] = str(self.m)
        return d


def _pow(q, e):
    """q**e, exact when both are rational with e integral."""
    if isinstance(q, Fraction) and isinstance(e, (int, Fraction)) and Fraction(e).denominator == 1:
        return q ** int(e)
    return _mp(q) ** _mp(e)


def transition_row(c: ChainSpec, i: int):
    """(down, stay, up) probabilities out of state i."""
    if i < 0:
        raise DomainError("state must be non-negative")
    q, m = c.q, c.m
    if c.kind == "uniform":
        down = (1 - _pow(q, -i)) * (1 - _pow(q, -m - i))
        up = _pow(q, -1 - 2 * i - m)
    elif c.kind == "symmetric":
        down = 1 - q**-i
        up = q ** (-i - 1)
    elif c.kind == "alt_odd":
        down = (1 - q ** (-2 * i)) * (1 - q ** (-2 * i - 1))
        up = q ** (-4 * i - 3)
    elif c.kind == "alt_even":
        down = (1 - q ** (-2 * i)) * (1 - q ** (-2 * i + 1))
        up = q ** (-4 * i - 1)
    else:
        down = 1 - q ** (-2 * i)
        up = q ** (-2 * i - 1)
    stay = 1 - down - up
    if down < 0 or up < 0 or stay < 0:
        raise DomainError(f"{c} has a negative transition probability at state {i}")
    return down, stay, up


def rows(c: ChainSpec, K: int) -> list:
    return [transition_row(c, i) for i in range(K + 1)]


@dataclass(frozen=True)
class Dist:
    """Truncated distribution on {0..K} with a certified bound on the mass beyond K.

    ``error`` bounds the total L1 uncertainty of the listed weights themselves
    (zero for exact rational weights).
    """

    weights: tuple
    tail_bound: mpmath.mpf | Fraction = Fraction(0)
    exact: bool = True
    error: mpmath.mpf | Fraction = Fraction(0)

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i] if 0 <= i < len(self.weights) else 0

    @classmethod
    def delta(cls, i: int = 0, K: int | None = None) -> "Dist":
        K = i if K is None else K
        return cls(tuple(Fraction(int(j == i)) for j in range(K + 1)))

    @property
    def K(self) -> int:
        return len(self.weights) - 1

    def total(self):
        return sum(self.weights, Fraction(0) if self.exact else mpmath.mpf(0))

    def as_mpf(self, prec: int = DEFAULT_PREC) -> "Dist":
        with mpmath.workprec(prec + 32):
            w = tuple(_mp(x) for x in self.weights)
        return Dist(w, self.tail_bound, False, self.error)

    def to_csv(self, prec_digits: int = 30) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["index", "weight"])
        for i, x in enumerate(self.weights):
            wr.writerow([i, _fmt(x, prec_digits)])
        return buf.getvalue()

    def to_json(self, prec_digits: int = 30) -> str:
        return json.dumps(
            {
                "weights": [_fmt(x, prec_digits) for x in self.weights],
                "tail_bound": _fmt(self.tail_bound, 6),
                "error": _fmt(self.error, 6),
                "numeric_mode": "exact-rational" if self.exact else "mpf",
            }
        )


def _fmt(x, digits):
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    return mpmath.nstr(x, digits)


def normalizer(c: ChainSpec, prec: int = DEFAULT_PREC, form: str = "eta") -> Approx:
    """pi(0) for the chain, with a certified error bound."""
    q = c.q
    if c.kind == "uniform":
        if form == "eta" and c.exact and c.m >= 0:
            ei = qseries.eta_inf(q, prec)
            with mpmath.workprec(prec + 32):
                s = _mp(1 / eta(int(c.m), q))
                return Approx(ei.value * s, ei.error * s)
        return qseries.theta_m(q, c.m, prec)
    if c.kind in ("symmetric", "alt_even"):
        return qseries.alpha(q, prec)
    if c.kind == "alt_odd":
        a = qseries.alpha(q, prec)
        with mpmath.workprec(prec + 32):
            s = _mp(1 / (1 - 1 / q))
            return Approx(a.value * s, a.error * s)
    return qseries.beta(q, prec)


def _unnormalized(c: ChainSpec, i: int):
    """pi(i)/pi(0) from the closed-form product."""
    q, m = c.q, c.m
    if c.kind == "uniform":
        den = _pow(q, i * (i + m))
        for j in range(1, i + 1):
            den *= (1 - _pow(q, -j)) * (1 - _pow(q, -m - j))
        return 1 / den
    if c.kind == "symmetric":
        den = Fraction(1)
        for j in range(1, i + 1):
            den *= q**j - 1
        return 1 / den
    if c.kind == "alt_odd":
        return eta(1, q) / (q ** (2 * i * i + i) * eta(2 * i + 1, q))
    if c.kind == "alt_even":
        return 1 / (q ** (2 * i * i - i) * eta(2 * i, q))
    return 1 / (q ** (i * i) * eta(i, q * q))


def ratio(c: ChainSpec, i: int):
    """pi(i+1)/pi(i) = up(i)/down(i+1) by detailed balance."""
    return transition_row(c, i)[2] / transition_row(c, i + 1)[0]


def default_K(c: ChainSpec, prec: int = DEFAULT_PREC) -> int:
    """Smallest K whose certified stationary tail is below 2^{-prec/2}."""
    target = mpmath.mpf(2) ** -(prec // 2)
    with mpmath.workprec(prec + 32):
        w = mpmath.mpf(1)
        i = 0
        while True:
            r = _mp(ratio(c, i))
            w *= r
            i += 1
            if r < mpmath.mpf(1) / 2 and w < target:
                return i


def stationary(c: ChainSpec, K: int | None = None, prec: int = DEFAULT_PREC, form: str = "eta") -> Dist:
    """Stationary law on {0..K}; tail mass bounded by geometric ratio domination."""
    if K is None:
        K = default_K(c, prec)
    if K < 1:
        raise DomainError("truncation index must be at least 1")
    pi0 = normalizer(c, prec, form)
    with mpmath.workprec(prec + 32):
        w = tuple(pi0.value * _mp(_unnormalized(c, i)) for i in range(K + 1))
        r = _mp(ratio(c, K))
        j = K
        # ratios decrease eventually; start the geometric bound once they do
        while not (r < 1 and _mp(ratio(c, j + 1)) <= r):
            j += 1
            r = _mp(ratio(c, j))
        head = sum((pi0.value * _mp(_unnormalized(c, i)) for i in range(K + 1, j + 1)), mpmath.mpf(0))
        wj = pi0.value * _mp(_unnormalized(c, j))
        tail = head + wj * r / (1 - r)
        err = pi0.error / pi0.value * sum(w) + mpmath.mpf(2) ** -(prec + 8) * (K + 1)
    return Dist(w, tail * (1 + mpmath.mpf(2) ** -prec), False, err)


def step(c: ChainSpec, w: list, R: list) -> tuple[list, object]:
    """One application mu -> mu P on {0..K}; returns new weights and mass pushed past K."""
    K = len(w) - 1
    zero = w[0] * 0
    out = [zero] * (K + 1)
    for i, x in enumerate(w):
        if not x:
            continue
        down, stay, up = R[i]
        out[i] += x * stay
        if i:
            out[i - 1] += x * down
        if i < K:
            out[i + 1] += x * up
    leaked = w[K] * R[K][2]
    return out, leaked


def iterate(c: ChainSpec, init: Dist, n: int, K: int | None = None, prec: int = DEFAULT_PREC) -> Dist:
    """init * P^n truncated to {0..K}.

    For an exactly-known initial law supported on {0..s}, any K >= s + n is
    lossless; a smaller K would silently discard live mass and is rejected.
    """
    if n < 0:
        raise DomainError("number of steps must be non-negative")
    support = max((i for i, x in enumerate(init.weights) if x), default=0)
    if K is None:
        K = max(support + n, init.K)
    if init.tail_bound == 0 and K < support + n:
        raise DomainError(f"truncation K={K} would drop mass: need K >= {support + n}")
    exact = init.exact and c.exact
    if exact:
        w = [Fraction(init[i]) for i in range(K + 1)]
        R = rows(c, K)
        leaked_total = Fraction(0)
        for _ in range(n):
            w, leaked = step(c, w, R)
            leaked_total += leaked
        return Dist(tuple(w), leaked_total, True, Fraction(0))
    with mpmath.workprec(prec + 32):
        w = [_mp(init[i]) for i in range(K + 1)]
        R = [tuple(_mp(x) for x in row) for row in rows(c, K)]
        leaked_total = mpmath.mpf(0)
        for _ in range(n):
            w, leaked = step(c, w, R)
            leaked_total += leaked
        tail = _mp(init.tail_bound) + leaked_total
        err = _mp(init.error) + _mp(init.tail_bound) + mpmath.mpf(2) ** -(prec + 8) * n * (K + 1)
    return Dist(tuple(w), tail, False, err)


def tv_distance(a: Dist, b: Dist, prec: int = DEFAULT_PREC) -> Approx:
    """Sum |a(i) - b(i)| (no 1/2 factor), with both truncations folded into the error."""
    K = max(a.K, b.K)
    if a.exact and b.exact and a.tail_bound == 0 and b.tail_bound == 0:
        v = sum((abs(Fraction(a[i]) - Fraction(b[i])) for i in range(K + 1)), Fraction(0))
        with mpmath.workprec(prec + 32):
            return Approx(_mp(v), mpmath.mpf(2) ** -(prec + 16))
    with mpmath.workprec(prec + 32):
        core = mpmath.fsum(abs(_mp(a[i]) - _mp(b[i])) for i in range(K + 1))
        tails = _mp(a.tail_bound) + _mp(b.tail_bound)
        err = tails / 2 + _mp(a.error) + _mp(b.error) + mpmath.mpf(2) ** -(prec + 8) * (K + 1)
        return Approx(core + tails / 2, err)


def ensemble_law(kind: str, n: int, q, m: int = 0) -> dict[int, Fraction]:
    """Exact corank law of an n x n (or n x (n+m)) structured matrix ensemble.

    ``q`` is the chain parameter: the field size, except for Hermitian
    matrices over F_{q^2} where it is the square root of the field size.
    """
    q = as_rational(q)

    def run(kind, steps, m=0):
        return iterate(ChainSpec(kind, q, m), Dist.delta(0), steps).weights

    if kind == "uniform":
        return {i: x for i, x in enumerate(run("uniform", n, m)) if x}
    if kind in ("symmetric", "hermitian"):
        return {i: x for i, x in enumerate(run(kind, n)) if x}
    if kind == "alternating":
        k, odd = divmod(n, 2)
        law = run("alt_odd" if odd else "alt_even", k)
        return {2 * j + odd: x for j, x in enumerate(law) if x}
    if kind == "scs":
        if q.denominator != 1 or q.numerator % 2 == 0:
            raise DomainError("skew centrosymmetric law requires odd q")
        k, odd = divmod(n, 2)
        law = run("uniform", k, odd)
        return {2 * j + odd: x for j, x in enumerate(law) if x}
    raise DomainError(f"unknown ensemble kind {kind!r}")
