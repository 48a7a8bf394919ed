"""Spectral analysis of the corank chains in l^2(pi).

Eigenvectors are sought in the form v(j) = pi(j) * f(j), where f is a finite
combination of exponentials f(j) = sum_b a_b * c_b^j with bases c_b = s * q^e
(s = +-1). Because every transition probability is itself a finite sum of
terms gamma * (q^e)^j, the eigen-equation vP = lam*v reduces to a linear system
in the a_b obtained by matching the coefficient of each exponential in j. The
system is solved exactly in rationals whenever the chain is rational.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath
import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import qseries
from .chain import ChainSpec, Dist, _pow, iterate, normalizer, ratio, stationary, transition_row, tv_distance
from .errors import DomainError
from .qseries import DEFAULT_PREC, Approx, _mp

Key = tuple[int, int]  # (sign, exponent): the function j -> (sign * q^exponent)^j


def _rate_terms(c: ChainSpec) -> tuple[list, list]:
    """down(j) and up(j) as lists of (coefficient, key)."""
    q, m = c.q, c.m
    one = Fraction(1)
    if c.kind == "uniform":
        qm = _pow(q, -m)
        down = [(one, (1, 0)), (-(1 + qm), (1, -1)), (qm, (1, -2))]
        up = [(_pow(q, -1 - m), (1, -2))]
    elif c.kind == "symmetric":
        down = [(one, (1, 0)), (-one, (1, -1))]
        up = [(1 / q, (1, -1))]
    elif c.kind == "alt_odd":
        down = [(one, (1, 0)), (-(1 + 1 / q), (1, -2)), (1 / q, (1, -4))]
        up = [(q**-3, (1, -4))]
    elif c.kind == "alt_even":
        down = [(one, (1, 0)), (-(1 + q), (1, -2)), (q, (1, -4))]
        up = [(1 / q, (1, -4))]
    else:
        down = [(one, (1, 0)), (-one, (1, -2))]
        up = [(1 / q, (1, -2))]
    return down, up


def scaling_base(c: ChainSpec) -> Key:
    """Generator of the exponential family: q, +-q, q^2 or -q."""
    return {"uniform": (1, 1), "symmetric": (1, 1), "alt_odd": (1, 2), "alt_even": (1, 2), "hermitian": (-1, 1)}[c.kind]


def eigenvalue(c: ChainSpec, k: int, sign: int = 1):
    if k < 0:
        raise DomainError("eigenvalue index must be non-negative")
    q = c.q
    if c.kind == "symmetric":
        if sign not in (1, -1):
            raise DomainError("sign must be +1 or -1")
        if k == 0 and sign == -1:
            raise DomainError("-1 is not an eigenvalue of the symmetric chain")
        return sign * q**-k
    if sign != 1:
        raise DomainError(f"the {c.kind} chain has no signed eigenvalue pairs")
    if c.kind == "uniform":
        return _pow(q, -k)
    if c.kind in ("alt_odd", "alt_even"):
        return q ** (-2 * k)
    return (-q) ** -k


def bases(c: ChainSpec, k: int) -> list[Key]:
    """Exponential bases spanning the eigenvector for the k-th eigenvalue."""
    if c.kind == "uniform":
        return [(1, i) for i in range(k + 1)]
    if c.kind == "symmetric":
        out = [(1, 0)]
        for i in range(1, k + 1):
            out += [(1, i), (-1, i)]
        return out
    if c.kind in ("alt_odd", "alt_even"):
        return [(1, 2 * i) for i in range(k + 1)]
    return [((-1) ** i, i) for i in range(k + 1)]


def _base_value(c: ChainSpec, key: Key):
    s, e = key
    return s * _pow(c.q, e)


def eigen_system(c: ChainSpec, basis: list[Key], lam) -> tuple[list[Key], list[list]]:
    """Rows of the coefficient-matching system, one per exponential key."""
    down, up = _rate_terms(c)
    rows_: dict[Key, list] = {}

    def add(key, col, val):
        rows_.setdefault(key, [0] * len(basis))[col] += val

    for col, (s, e) in enumerate(basis):
        cb = _base_value(c, (s, e))
        add((s, e), col, 1 - lam)
        for gamma, (ts, te) in down:
            add((s * ts, e + te), col, gamma * (1 / cb - 1))
        for gamma, (ts, te) in up:
            add((s * ts, e + te), col, gamma * (cb - 1))
    keys = sorted(rows_)
    return keys, [rows_[k] for k in keys]


def _nullspace_exact(A: list[list[Fraction]], ncols: int) -> list[list[Fraction]]:
    M = [list(map(Fraction, row)) for row in A]
    pivots = []
    r = 0
    for col in range(ncols):
        piv = next((i for i in range(r, len(M)) if M[i][col] != 0), None)
        if piv is None:
            continue
        M[r], M[piv] = M[piv], M[r]
        inv = 1 / M[r][col]
        M[r] = [x * inv for x in M[r]]
        for i in range(len(M)):
            if i != r and M[i][col] != 0:
                f = M[i][col]
                M[i] = [a - f * b for a, b in zip(M[i], M[r])]
        pivots.append(col)
        r += 1
    free = [j for j in range(ncols) if j not in pivots]
    out = []
    for fcol in free:
        v = [Fraction(0)] * ncols
        v[fcol] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -M[i][fcol]
        out.append(v)
    return out


@dataclass(frozen=True)
class EigVec:
    """v = sum_b a_b (pi o c_b), with (pi o c)(j) = pi(j) c^j."""

    chain: ChainSpec
    k: int
    sign: int
    eigenvalue: object
    bases: tuple[Key, ...]
    coeffs: tuple
    residual: object = 0  # max |A a| of the coefficient system

    @property
    def exact(self) -> bool:
        return all(isinstance(a, Fraction) for a in self.coeffs)

    def f(self, j: int):
        """v(j) / pi(j)."""
        return sum(a * _base_value(self.chain, b) ** j for a, b in zip(self.coeffs, self.bases))

    def vector(self, pi: Dist, prec: int = DEFAULT_PREC) -> list:
        with mpmath.workprec(prec + 32):
            return [_mp(pi[j]) * _mp(self.f(j)) for j in range(pi.K + 1)]

    def sup_bound(self) -> tuple:
        """(A, C) with |f(j)| <= A * C^j for all j."""
        A = sum(abs(_mp(a)) for a in self.coeffs)
        C = max(abs(_mp(_base_value(self.chain, b))) for b in self.bases)
        return A, C


def eigvec(c: ChainSpec, k: int, sign: int = 1) -> EigVec:
    """Eigenvector for the k-th eigenvalue (signed for the symmetric chain).

    Normalised so that the coefficient of the highest basis whose sign matches
    the eigenvalue equals 1.
    """
    lam = eigenvalue(c, k, sign)
    basis = bases(c, k)
    keys, A = eigen_system(c, basis, lam)
    if c.exact:
        null = _nullspace_exact(A, len(basis))
        if len(null) != 1:
            raise DomainError(f"eigenspace for {lam} in {c} has dimension {len(null)}")
        v = null[0]
    else:
        v = _nullvector_numeric(A, len(basis))
    norm_idx = _norm_index(c, basis, k, sign)
    if v[norm_idx] == 0:
        raise AssertionError("normalising coefficient vanished")
    scale = v[norm_idx]
    coeffs = tuple(x / scale for x in v)
    resid = max(abs(sum(r[i] * coeffs[i] for i in range(len(basis)))) for r in A)
    return EigVec(c, k, sign, lam, tuple(basis), coeffs, resid)


def _norm_index(c, basis, k, sign):
    if c.kind == "symmetric" and k > 0:
        return basis.index((sign, k))
    return len(basis) - 1


def _nullvector_numeric(A, n):
    with mpmath.workprec(DEFAULT_PREC + 64):
        M = mpmath.matrix([[_mp(x) for x in row] for row in A])
        # fix the last coordinate to 1 and solve the rest in the least-squares sense
        if n == 1:
            return [mpmath.mpf(1)]
        lhs = M[:, : n - 1]
        rhs = -M[:, n - 1]
        sol, _ = mpmath.qr_solve(lhs, rhs)
        return [sol[i] for i in range(n - 1)] + [mpmath.mpf(1)]


def _series_K(c: ChainSpec, A, C, prec: int) -> int:
    """Index beyond which pi(j) A^2 C^{2j} sums to below 2^{-prec}, geometrically."""
    target = mpmath.mpf(2) ** -(prec + 16)
    with mpmath.workprec(prec + 32):
        pi0 = _mp(normalizer(c, 64).value)
        t = pi0 * A * A
        j = 0
        while True:
            r = _mp(ratio(c, j)) * C * C
            t *= r
            j += 1
            if r < mpmath.mpf(1) / 2 and t < target:
                return j


@dataclass(frozen=True)
class Projection:
    """Component of delta_0 along one eigenvector."""

    eigvec: EigVec
    coefficient: object  # <delta_0, v>_pi / <v, v>_pi
    inner: Approx  # <v, v>_pi
    weights: tuple  # coefficient * v(j), j <= K
    tv_norm: Approx
    norm_sq: Approx  # ||component||_pi^2


def _weighted_tail(c: ChainSpec, pi: Dist, C, K: int):
    """Bound on sum_{j>K} pi(j) C^j using eventually decreasing ratios."""
    with mpmath.workprec(DEFAULT_PREC + 64):
        w = _mp(pi[K]) * C**K
        head = mpmath.mpf(0)
        j = K
        r = _mp(ratio(c, j)) * C
        while not (r < 1 and _mp(ratio(c, j + 1)) * C <= r):
            w *= r
            head += w
            j += 1
            r = _mp(ratio(c, j)) * C
        return (head + w * r / (1 - r)) * (1 + mpmath.mpf(2) ** -DEFAULT_PREC)


def _rel_error(pi: Dist):
    return _mp(pi.error) / mpmath.fsum(_mp(x) for x in pi.weights)


def inner(u: EigVec, v: EigVec, prec: int = DEFAULT_PREC) -> Approx:
    """<u, v>_pi = sum_j pi(j) f_u(j) f_v(j), truncated with a certified tail."""
    c = u.chain
    Au, Cu = u.sup_bound()
    Av, Cv = v.sup_bound()
    A = mpmath.sqrt(Au * Av)
    C = mpmath.sqrt(Cu * Cv)
    K = _series_K(c, A, C, prec)
    pi = stationary(c, K, prec)
    with mpmath.workprec(prec + 64):
        terms = [_mp(pi[j]) * _mp(u.f(j)) * _mp(v.f(j)) for j in range(K + 1)]
        total = mpmath.fsum(terms)
        tail = A * A * _weighted_tail(c, pi, C * C, K)
        err = tail + _rel_error(pi) * mpmath.fsum(abs(t) for t in terms) + mpmath.mpf(2) ** -prec
    return Approx(total, err)


def project_delta0(c: ChainSpec, k: int, sign: int = 1, prec: int = DEFAULT_PREC) -> Projection:
    v = eigvec(c, k, sign)
    nn = inner(v, v, prec)
    A, C = v.sup_bound()
    K = _series_K(c, A, C, prec)
    pi = stationary(c, K, prec)
    with mpmath.workprec(prec + 64):
        f0 = _mp(v.f(0))  # <delta_0, v>_pi = v(0)/pi(0)
        kappa = f0 / nn.value
        w = tuple(kappa * x for x in v.vector(pi, prec + 32))
        tv = mpmath.fsum(abs(x) for x in w)
        tv_err = abs(kappa) * A * _weighted_tail(c, pi, C, K) + _rel_error(pi) * tv
        tv_err += abs(f0) * nn.error / nn.value**2 * tv / max(abs(kappa), mpmath.mpf(2) ** -prec)
        nsq = f0 * f0 / nn.value
        nsq_err = f0 * f0 * nn.error / nn.value**2 * 2
    return Projection(v, kappa, nn, w, Approx(tv, tv_err), Approx(nsq, nsq_err))


def combined_tv(parts: list[Projection], signs: list[int], prec: int = DEFAULT_PREC) -> Approx:
    """|| sum_i signs[i] * parts[i] ||_tv."""
    K = max(len(p.weights) for p in parts)
    with mpmath.workprec(prec + 64):
        total = mpmath.fsum(
            abs(mpmath.fsum(s * (p.weights[j] if j < len(p.weights) else 0) for p, s in zip(parts, signs)))
            for j in range(K)
        )
        err = sum(p.tv_norm.error for p in parts)
    return Approx(total, err)


# -- moments -----------------------------------------------------------------


def moment_series(c: ChainSpec, k: int, sign: int = 1, prec: int = DEFAULT_PREC) -> Approx:
    """sum_i pi(i) (sign q^k)^i by direct summation."""
    C = abs(_mp(_pow(c.q, k)))
    K = _series_K(c, mpmath.mpf(1), mpmath.sqrt(C), prec)
    pi = stationary(c, K, prec)
    base = sign * _pow(c.q, k)
    with mpmath.workprec(prec + 64):
        b = _mp(base)
        terms = [_mp(pi[i]) * b**i for i in range(K + 1)]
        total = mpmath.fsum(terms)
        err = _weighted_tail(c, pi, C, K) + _rel_error(pi) * mpmath.fsum(abs(t) for t in terms) + mpmath.mpf(2) ** -prec
    return Approx(total, err)


def moments_closed(c: ChainSpec, kmax: int) -> dict[Key, object]:
    """Moments over the chain's exponential family, by orthogonality to constants.

    Every eigenvector for an eigenvalue other than 1 sums to zero, which gives
    sum_b a_b M(b) = 0; processing eigenvalues in order of index determines the
    new moments level by level. Exact when the chain is rational.
    """
    M: dict[Key, object] = {(1, 0): Fraction(1) if c.exact else mpmath.mpf(1)}
    for k in range(1, kmax + 1):
        signs = (1, -1) if c.kind == "symmetric" else (1,)
        vecs = [eigvec(c, k, s) for s in signs]
        unknown = [b for b in vecs[0].bases if b not in M]
        rows_, rhs = [], []
        for v in vecs:
            rows_.append([v.coeffs[v.bases.index(b)] for b in unknown])
            rhs.append(-sum(a * M[b] for a, b in zip(v.coeffs, v.bases) if b in M))
        sol = _solve(rows_, rhs, c.exact)
        M.update(zip(unknown, sol))
    return M


def _solve(A, b, exact):
    n = len(A)
    if exact:
        M = [list(map(Fraction, row)) + [Fraction(bb)] for row, bb in zip(A, b)]
    else:
        M = [[_mp(x) for x in row] + [_mp(bb)] for row, bb in zip(A, b)]
    for col in range(n):
        piv = max(range(col, n), key=lambda i: abs(M[i][col]))
        M[col], M[piv] = M[piv], M[col]
        for i in range(n):
            if i != col and M[i][col] != 0:
                f = M[i][col] / M[col][col]
                M[i] = [x - f * y for x, y in zip(M[i], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def moment(c: ChainSpec, k: int, sign: int = 1, prec: int = DEFAULT_PREC):
    """M(pi, k) = sum_i pi(i) (sign q^k)^i.

    Uses the closed inductive value when (sign, k) lies in the chain's
    exponential family, otherwise direct summation. Returns an exact rational
    or an ``Approx``.
    """
    if k < 0:
        raise DomainError("moment order must be non-negative")
    if k == 0 and sign == 1:
        return Fraction(1) if c.exact else mpmath.mpf(1)
    if c.kind == "uniform":
        closed, level = sign == 1, k
    elif c.kind == "symmetric":
        closed, level = k > 0, k
    elif c.kind in ("alt_odd", "alt_even"):
        closed, level = sign == 1 and k % 2 == 0, k // 2
    else:
        closed, level = sign == (-1) ** k, k
    if closed:
        return moments_closed(c, level)[(sign, k)]
    return moment_series(c, k, sign, prec)


# -- leading constants and expansions ------------------------------------------


@dataclass(frozen=True)
class LeadingTerm:
    """d_n ~ constant(n) * rate^n, with constant depending on n mod 2 when paired."""

    chain: ChainSpec
    rate: object  # |lambda_1|
    next_rate: object  # |lambda_2| (or |lambda_3| for a +- pair)
    even: Approx
    odd: Approx
    sign_alternating: bool
    note: str = ""

    def constant(self, n: int) -> Approx:
        return self.even if n % 2 == 0 else self.odd


def leading_constant(c: ChainSpec, prec: int = DEFAULT_PREC) -> LeadingTerm:
    """Closed-form leading constant of ||delta_0 P^n - pi||_tv."""
    q = c.q
    with mpmath.workprec(prec + 32):
        qm = _mp(q)
        if c.kind == "uniform":
            pi0 = normalizer(c, prec)
            s = 2 / ((qm - 1) * qm ** _mp(c.m))
            val = Approx(pi0.value * s, pi0.error * s)
            return LeadingTerm(c, 1 / q, _pow(q, -2), val, val, False)
        a = qseries.alpha(q, prec)
        if c.kind == "symmetric":
            se = 2 * qm / (qm**2 - 1)
            so = se / (qm - 1)
            return LeadingTerm(
                c, 1 / q, q**-2, Approx(a.value * se, a.error * se), Approx(a.value * so, a.error * so), False,
                "eigenvalue pair +-1/q: constant depends on the parity of n",
            )
        if c.kind == "alt_odd":
            s = 2 / ((qm - 1) ** 2 * (qm + 1))
            val = Approx(a.value * s, a.error * s)
            return LeadingTerm(c, q**-2, q**-4, val, val, False)
        if c.kind == "alt_even":
            # ||nu'||_tv = 2 nu'(0) = 2 alpha q/(q+1), and the projection coefficient is 1/(q-1)
            s = 2 * qm / ((qm - 1) * (qm + 1))
            val = Approx(a.value * s, a.error * s)
            return LeadingTerm(c, q**-2, q**-4, val, val, False)
        b = qseries.beta(q, prec)
        a2 = qseries.alpha(q * q, prec)
        s = 2 / ((qm + 1) * a2.value)
        err = b.error * s + b.value * s * a2.error / a2.value
        val = Approx(b.value * s, err)
        return LeadingTerm(c, 1 / q, q**-2, val, val, True, "dominant eigenvalue -1/q: signed components alternate")


def projected_constant(c: ChainSpec, parity: int = 0, prec: int = DEFAULT_PREC) -> Approx:
    """Leading constant computed from the spectral projections of delta_0."""
    if c.kind == "symmetric":
        plus = project_delta0(c, 1, 1, prec)
        minus = project_delta0(c, 1, -1, prec)
        return combined_tv([plus, minus], [1, (-1) ** parity], prec)
    return project_delta0(c, 1, 1, prec).tv_norm


def implicit_cap(c: ChainSpec, prec: int = DEFAULT_PREC):
    """(pi(0)^{-2} - 1)^{1/2}, the bound used for the O(|lambda_2|^n) remainder."""
    pi0 = normalizer(c, prec)
    with mpmath.workprec(prec + 32):
        return mpmath.sqrt(pi0.value**-2 - 1)


@dataclass
class ExpansionReport:
    chain: ChainSpec
    cap: object
    rate: object
    next_rate: object
    rows: list = field(default_factory=list)  # (n, tv_exact, tv_leading, residual, normalized, signed_inner)
    prec: int = DEFAULT_PREC

    @property
    def ok(self) -> bool:
        return all(abs(r[4]) <= self.cap for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "tv_exact", "tv_leading", "residual", "normalized_residual", "signed_inner", "numeric_mode", "prec_bits"])
        for n, tv, lead, res, norm, sig in self.rows:
            w.writerow([n, mpmath.nstr(tv, 20), mpmath.nstr(lead, 20), mpmath.nstr(res, 12), mpmath.nstr(norm, 12),
                        mpmath.nstr(sig, 12), "exact-iteration/mpf", self.prec])
        return buf.getvalue()


def expansion_check(c: ChainSpec, ns, prec: int = DEFAULT_PREC) -> ExpansionReport:
    """Compare exact ||delta_0 P^n - pi||_tv with the leading spectral term."""
    lead = leading_constant(c, prec)
    cap = implicit_cap(c, prec)
    pi = stationary(c, None, prec)
    nu = eigvec(c, 1, 1)
    rep = ExpansionReport(c, cap, lead.rate, lead.next_rate, prec=prec)
    with mpmath.workprec(prec + 32):
        r1, r2 = _mp(lead.rate), _mp(lead.next_rate)
        for n in ns:
            d = iterate(c, Dist.delta(0), n, prec=prec)
            tv = tv_distance(d, pi, prec).value
            lt = lead.constant(n).value * r1**n
            res = tv - lt
            K = max(d.K, pi.K)
            signed = mpmath.fsum((_mp(d[j]) - _mp(pi[j])) * _mp(nu.f(j)) for j in range(K + 1))
            rep.rows.append((n, tv, lt, res, res / r2**n, signed))
    return rep


# -- truncation ----------------------------------------------------------------


def symmetrized_block(c: ChainSpec, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of the leading N x N block of D^{1/2} P D^{-1/2}."""
    if N < 2:
        raise DomainError("truncation order must be at least 2")
    R = [transition_row(c, i) for i in range(N)]
    diag = np.array([float(r[1]) for r in R])
    off = np.array([float(mpmath.sqrt(_mp(R[i][2]) * _mp(R[i + 1][0]))) for i in range(N - 1)])
    return diag, off


def truncated_spectrum(c: ChainSpec, N: int) -> np.ndarray:
    """Eigenvalues of the truncated symmetrised operator, largest modulus first (ties: positive first)."""
    diag, off = symmetrized_block(c, N)
    ev = eigh_tridiagonal(diag, off, eigvals_only=True)
    # round the modulus so that +-q^{-k} pairs tie exactly and the positive member leads
    order = sorted(range(len(ev)), key=lambda i: (-round(abs(ev[i]), 10), -ev[i]))
    return ev[order]


def exact_spectrum(c: ChainSpec, count: int) -> list:
    """The first ``count`` eigenvalues of the infinite operator, in the same order."""
    out = []
    k = 0
    while len(out) < count:
        if c.kind == "symmetric":
            out.append(eigenvalue(c, k, 1))
            if k:
                out.append(eigenvalue(c, k, -1))
        else:
            out.append(eigenvalue(c, k))
        k += 1
    return out[:count]


def hilbert_schmidt_sq(c: ChainSpec, N: int) -> float:
    """sum lambda^2 over the truncated spectrum, i.e. the squared Frobenius norm of the block."""
    diag, off = symmetrized_block(c, N)
    return float(np.sum(diag**2) + 2 * np.sum(off**2))


def spectrum_csv(c: ChainSpec, N: int) -> str:
    ev = truncated_spectrum(c, N)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "eigenvalue", "modulus", "sign", "numeric_mode"])
    for i, x in enumerate(ev):
        w.writerow([i, repr(float(x)), repr(abs(float(x))), "+" if x >= 0 else "-", "float64"])
    return buf.getvalue()
