"""Finite fields, structured random matrices over them, and corank histograms.

Field elements are encoded as integers 0 <= x < p^k: the base-p digits of x
are the coefficients (constant term first) of a polynomial reduced modulo the
field's defining polynomial. All arithmetic goes through precomputed tables so
that whole batches of matrices can be row-reduced with numpy fancy indexing.
"""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError
from .qseries import _is_prime

KINDS = ("uniform", "symmetric", "alternating", "hermitian", "scs")
CHUNK = 8192  # trials per RNG substream


def _poly_mulmod(a, b, mod, p):
    k = len(mod) - 1
    prod = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                prod[i + j] = (prod[i + j] + x * y) % p
    # mod is monic, highest coefficient last
    for d in range(len(prod) - 1, k - 1, -1):
        c = prod[d]
        if c:
            for i in range(k + 1):
                prod[d - k + i] = (prod[d - k + i] - c * mod[i]) % p
    return (prod + [0] * k)[:k]


def _poly_divides(f, g, p):
    """True if monic f divides g over F_p (coefficients low degree first)."""
    g = list(g)
    df = len(f) - 1
    for d in range(len(g) - 1, df - 1, -1):
        c = g[d] % p
        if c:
            for i in range(df + 1):
                g[d - df + i] = (g[d - df + i] - c * f[i]) % p
    return not any(x % p for x in g[:df])


def _monic_polys(p, deg):
    for low in itertools.product(range(p), repeat=deg):
        yield list(reversed(low)) + [1]


def is_irreducible(mod, p) -> bool:
    k = len(mod) - 1
    for d in range(1, k // 2 + 1):
        for f in _monic_polys(p, d):
            if _poly_divides(f, mod, p):
                return False
    return True


def default_modulus(p: int, k: int) -> tuple[int, ...]:
    """Lowest (lexicographic in the non-leading coefficients) monic irreducible of degree k."""
    if k == 1:
        return (0, 1)
    for low in itertools.product(range(p), repeat=k):
        mod = list(low) + [1]
        if mod[0] and is_irreducible(mod, p):
            return tuple(mod)
    raise AssertionError("no irreducible polynomial found")


@dataclass(frozen=True)
class FieldSpec:
    """The field F_{p^k}; ``modulus`` lists coefficients constant term first."""

    p: int
    k: int = 1
    modulus: tuple[int, ...] | None = None

    def __post_init__(self):
        if not _is_prime(self.p):
            raise DomainError(f"characteristic {self.p} is not prime")
        if self.k < 1:
            raise DomainError("extension degree must be positive")
        if self.modulus is None:
            object.__setattr__(self, "modulus", default_modulus(self.p, self.k))
        mod = tuple(int(c) % self.p for c in self.modulus)
        if len(mod) != self.k + 1 or mod[-1] != 1:
            raise DomainError("modulus must be monic of degree k")
        if self.k > 1 and not is_irreducible(list(mod), self.p):
            raise DomainError(f"modulus {mod} is reducible over F_{self.p}")
        object.__setattr__(self, "modulus", mod)

    @classmethod
    def of_order(cls, q: int) -> "FieldSpec":
        for p in range(2, q + 1):
            if q % p == 0:
                k, r = 0, q
                while r % p == 0:
                    r //= p
                    k += 1
                if r != 1:
                    break
                return cls(p, k)
        raise DomainError(f"{q} is not a prime power")

    @property
    def order(self) -> int:
        return self.p**self.k

    @property
    def has_conjugation(self) -> bool:
        return self.k % 2 == 0

    def __str__(self):
        return f"F_{self.order}"

    def to_dict(self):
        return {"p": self.p, "k": self.k, "modulus": list(self.modulus)}

    @cached_property
    def tables(self) -> "FieldTables":
        return FieldTables.build(self)


@dataclass(frozen=True, eq=False)
class FieldTables:
    add: np.ndarray
    sub: np.ndarray
    mul: np.ndarray
    neg: np.ndarray
    inv: np.ndarray
    conj: np.ndarray | None
    fixed: np.ndarray  # elements fixed by conjugation (the whole field if none)

    @classmethod
    def build(cls, F: FieldSpec) -> "FieldTables":
        p, k, q = F.p, F.k, F.order
        digits = [[(x // p**i) % p for i in range(k)] for x in range(q)]

        def enc(d):
            return sum(c * p**i for i, c in enumerate(d))

        add = np.empty((q, q), dtype=np.int16)
        mul = np.empty((q, q), dtype=np.int16)
        for x in range(q):
            for y in range(q):
                add[x, y] = enc([(a + b) % p for a, b in zip(digits[x], digits[y])])
                mul[x, y] = enc(_poly_mulmod(digits[x], digits[y], list(F.modulus), p))
        neg = np.array([enc([(-a) % p for a in digits[x]]) for x in range(q)], dtype=np.int16)
        sub = add[:, neg]
        inv = np.zeros(q, dtype=np.int16)
        for x in range(1, q):
            inv[x] = int(np.nonzero(mul[x] == 1)[0][0])
        conj = None
        fixed = np.arange(q, dtype=np.int16)
        if k % 2 == 0:
            # x -> x^{p^{k/2}}
            e = p ** (k // 2)
            conj = np.empty(q, dtype=np.int16)
            for x in range(q):
                acc, base, n = 1, x, e
                while n:
                    if n & 1:
                        acc = mul[acc, base]
                    base = mul[base, base]
                    n >>= 1
                conj[x] = acc
            fixed = np.nonzero(conj == np.arange(q))[0].astype(np.int16)
        for t in (add, sub, mul, neg, inv, fixed):
            t.setflags(write=False)
        if conj is not None:
            conj.setflags(write=False)
        return cls(add, sub, mul, neg, inv, conj, fixed)


@dataclass(frozen=True)
class EnsembleSpec:
    """A uniform distribution on one of the structured matrix spaces."""

    kind: str
    n: int
    field: FieldSpec
    m: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown ensemble kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise DomainError("matrix size must be positive")
        if self.m < 0:
            raise DomainError("m must be non-negative")
        if self.kind != "uniform" and self.m:
            raise DomainError("only the uniform ensemble takes m")
        if self.kind == "hermitian" and not self.field.has_conjugation:
            raise DomainError("Hermitian matrices need a field of even extension degree")
        if self.kind == "scs" and self.field.p == 2:
            raise DomainError("skew centrosymmetric ensemble requires odd characteristic")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n + self.m)

    def to_dict(self):
        return {"kind": self.kind, "n": self.n, "m": self.m, "field": self.field.to_dict()}

    @cached_property
    def layout(self) -> list["Slot"]:
        return _layout(self)


@dataclass(frozen=True)
class Slot:
    """One free coordinate and the entries it determines.

    ``domain`` is "all" or "fixed" (the conjugation-fixed subfield); each target
    is (row, col, op) with op one of "id", "neg", "conj".
    """

    domain: str
    targets: tuple[tuple[int, int, str], ...]


def _layout(e: EnsembleSpec) -> list[Slot]:
    n, cols = e.shape
    slots: list[Slot] = []
    if e.kind == "uniform":
        for i in range(n):
            for j in range(cols):
                slots.append(Slot("all", ((i, j, "id"),)))
    elif e.kind == "symmetric":
        for i in range(n):
            for j in range(i, n):
                tg = ((i, j, "id"),) if i == j else ((i, j, "id"), (j, i, "id"))
                slots.append(Slot("all", tg))
    elif e.kind == "alternating":
        for i in range(n):
            for j in range(i + 1, n):
                slots.append(Slot("all", ((i, j, "id"), (j, i, "neg"))))
    elif e.kind == "hermitian":
        for i in range(n):
            slots.append(Slot("fixed", ((i, i, "id"),)))
            for j in range(i + 1, n):
                slots.append(Slot("all", ((i, j, "id"), (j, i, "conj"))))
    else:
        slots = _scs_layout(n)
    return slots


def _scs_layout(n: int) -> list[Slot]:
    # orbits of (i, j) under (i,j)->(j,i) [sign -1] and (i,j)->(n-1-j, n-1-i) [sign +1]
    seen: set[tuple[int, int]] = set()
    slots = []
    for i in range(n):
        for j in range(n):
            if (i, j) in seen:
                continue
            signs = {(i, j): 1}
            stack = [(i, j)]
            forced_zero = False
            while stack:
                a, b = stack.pop()
                s = signs[(a, b)]
                for nb, t in (((b, a), -s), ((n - 1 - b, n - 1 - a), s)):
                    if nb in signs:
                        if signs[nb] != t:
                            forced_zero = True
                    else:
                        signs[nb] = t
                        stack.append(nb)
            seen.update(signs)
            if not forced_zero:
                slots.append(
                    Slot("all", tuple((a, b, "id" if s == 1 else "neg") for (a, b), s in sorted(signs.items())))
                )
    return slots


def _fill(e: EnsembleSpec, values: np.ndarray) -> np.ndarray:
    """values: (B, n_slots) field elements -> (B, rows, cols) matrices."""
    T = e.field.tables
    B = values.shape[0]
    M = np.zeros((B,) + e.shape, dtype=np.int16)
    for s, slot in enumerate(e.layout):
        v = values[:, s]
        for i, j, op in slot.targets:
            if op == "id":
                M[:, i, j] = v
            elif op == "neg":
                M[:, i, j] = T.neg[v]
            else:
                M[:, i, j] = T.conj[v]
    return M


def sample_batch(e: EnsembleSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    T = e.field.tables
    q = e.field.order
    values = np.empty((size, len(e.layout)), dtype=np.int16)
    for s, slot in enumerate(e.layout):
        if slot.domain == "all":
            values[:, s] = rng.integers(0, q, size=size)
        else:
            values[:, s] = T.fixed[rng.integers(0, len(T.fixed), size=size)]
    M = _fill(e, values)
    if e.kind == "scs":
        _check_scs(e, M)
    return M


def sample(e: EnsembleSpec, rng: np.random.Generator) -> np.ndarray:
    return sample_batch(e, rng, 1)[0]


def _check_scs(e: EnsembleSpec, M: np.ndarray) -> None:
    n = e.n
    T = e.field.tables
    flip = M[:, ::-1, ::-1].transpose(0, 2, 1)
    if not (np.array_equal(T.neg[M.transpose(0, 2, 1)], M) and np.array_equal(flip, M)):
        raise AssertionError("skew centrosymmetric orbit layout produced an invalid matrix")


def enumerate_ensemble(e: EnsembleSpec):
    """Every matrix of the ensemble, each exactly once (small cases only)."""
    T = e.field.tables
    domains = [range(e.field.order) if s.domain == "all" else T.fixed.tolist() for s in e.layout]
    total = 1
    for d in domains:
        total *= len(d)
    if total > 2_000_000:
        raise DomainError(f"ensemble has {total} elements; too many to enumerate")
    values = np.array(list(itertools.product(*domains)), dtype=np.int16).reshape(total, len(domains))
    return _fill(e, values)


def batch_rank(F: FieldSpec, mats: np.ndarray) -> np.ndarray:
    """Row-reduce a stack of matrices (B, r, c) over F; returns ranks."""
    T = F.tables
    M = np.array(mats, dtype=np.int16, copy=True)
    B, r, c = M.shape
    rank = np.zeros(B, dtype=np.int64)
    rows = np.arange(r)
    for col in range(c):
        elig = (M[:, :, col] != 0) & (rows[None, :] >= rank[:, None])
        has = elig.any(axis=1)
        if not has.any():
            continue
        b = np.nonzero(has)[0]
        piv = elig[b].argmax(axis=1)
        rk = rank[b]
        top = M[b, rk].copy()
        pr = M[b, piv].copy()
        M[b, piv] = top
        pr = T.mul[T.inv[pr[:, col]][:, None], pr]
        M[b, rk] = pr
        factors = M[b, :, col].copy()
        factors[rows[None, :] <= rk[:, None]] = 0
        M[b] = T.sub[M[b], T.mul[factors[:, :, None], pr[:, None, :]]]
        rank[b] += 1
    return rank


def rank(M, F: FieldSpec) -> int:
    M = np.asarray(M, dtype=np.int16)
    if M.size == 0:
        return 0
    return int(batch_rank(F, M[None])[0])


def corank(M, F: FieldSpec) -> int:
    M = np.asarray(M)
    return M.shape[0] - rank(M, F)


@dataclass
class CorankHist:
    ensemble: EnsembleSpec
    trials: int
    seed: int
    counts: dict[int, int] = field(default_factory=dict)

    def frequencies(self) -> dict[int, float]:
        return {k: v / self.trials for k, v in sorted(self.counts.items())}

    def to_dict(self):
        return {
            "ensemble": {k: v for k, v in self.ensemble.to_dict().items() if k != "field"},
            "field": self.ensemble.field.to_dict(),
            "trials": self.trials,
            "seed": self.seed,
            "counts": {str(k): v for k, v in sorted(self.counts.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "CorankHist":
        F = FieldSpec(d["field"]["p"], d["field"]["k"], tuple(d["field"]["modulus"]))
        e = EnsembleSpec(d["ensemble"]["kind"], d["ensemble"]["n"], F, d["ensemble"].get("m", 0))
        return cls(e, d["trials"], d["seed"], {int(k): v for k, v in d["counts"].items()})


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    """Independent stream for trial block ``chunk``; identical however blocks are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _hist_chunk(args):
    e, seed, chunk, size = args
    mats = sample_batch(e, chunk_rng(seed, chunk), size)
    cor = e.n - batch_rank(e.field, mats)
    return np.bincount(cor, minlength=e.n + 1)


def corank_hist(e: EnsembleSpec, trials: int, seed: int = 0, workers: int = 1) -> CorankHist:
    if trials < 1:
        raise DomainError("trials must be positive")
    jobs = [(e, seed, c, min(CHUNK, trials - c * CHUNK)) for c in range((trials + CHUNK - 1) // CHUNK)]
    total = np.zeros(e.n + 1, dtype=np.int64)
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            for part in ex.map(_hist_chunk, jobs):
                total += part
    else:
        for job in jobs:
            total += _hist_chunk(job)
    counts = {i: int(c) for i, c in enumerate(total) if c}
    return CorankHist(e, trials, seed, counts)
