"""Class groups of imaginary quadratic fields through reduced binary quadratic forms.

Bulk sweeps count reduced forms for every discriminant below a bound with
numpy, then recover the p-Sylow subgroup only where p^2 divides h(D).
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .qseries import DEFAULT_PREC, PGroupType, _is_prime, aut_order, eta_inf

Form = tuple  # (a, b, c)


def _check_disc(D: int):
    if D >= 0 or D % 4 not in (0, 1):
        raise DomainError(f"{D} is not a negative discriminant")


def squarefree_mask(X: int) -> np.ndarray:
    """mask[k] is True when k is squarefree, for 0 <= k < X."""
    mask = np.ones(max(X, 1), dtype=bool)
    mask[0] = False
    for p in range(2, math.isqrt(max(X - 1, 0)) + 1):
        if _is_prime(p):
            mask[p * p :: p * p] = False
    return mask


def fundamental_mask(X: int) -> np.ndarray:
    """mask[d] is True when -d is a fundamental discriminant, 0 < d < X."""
    X = int(X)
    sf = squarefree_mask(X)
    d = np.arange(X)
    out = (d % 4 == 3) & sf
    q4 = d // 4
    out |= (d % 4 == 0) & ((q4 % 4 == 1) | (q4 % 4 == 2)) & sf[q4]
    out[0] = False
    return out


def fundamental_discriminants(X: int) -> np.ndarray:
    """Negative fundamental discriminants D with |D| < X, ordered by |D|."""
    return -np.flatnonzero(fundamental_mask(X))


def is_fundamental(D: int) -> bool:
    if D >= 0:
        return False
    d = -D
    return bool(fundamental_mask(d + 1)[d])


def reduce_form(a: int, b: int, c: int) -> Form:
    """Reduce a positive definite form to the unique reduced representative."""
    if a <= 0 or b * b - 4 * a * c >= 0:
        raise DomainError("form is not positive definite")
    while True:
        if not (-a < b <= a):
            r = (a - b) // (2 * a)
            c = a * r * r + b * r + c
            b = b + 2 * r * a
        if a > c:
            a, b, c = c, -b, a
            continue
        if a == c and b < 0:
            b = -b
        return (a, b, c)


def is_reduced(f: Form) -> bool:
    a, b, c = f
    return -a < b <= a <= c and not (a == c and b < 0)


def reduced_forms(D: int) -> list[Form]:
    """All primitive reduced forms of discriminant D."""
    _check_disc(D)
    out = []
    a = 1
    while 3 * a * a <= -D:
        for b in range(-a + 1, a + 1):
            if (b - D) % 2:
                continue
            num = b * b - D
            if num % (4 * a):
                continue
            c = num // (4 * a)
            if c < a or (c == a and b < 0):
                continue
            if math.gcd(math.gcd(a, b), c) == 1:
                out.append((a, b, c))
        a += 1
    return out


def class_number(D: int) -> int:
    return len(reduced_forms(D))


def identity(D: int) -> Form:
    _check_disc(D)
    return (1, D % 2, (D % 2 - D) // 4)


def inverse(f: Form) -> Form:
    a, b, c = f
    return reduce_form(a, -b, c)


def _xgcd(a: int, b: int):
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return x0, y0, a


def compose(f: Form, g: Form) -> Form:
    """Gauss composition followed by reduction."""
    (a1, b1, c1), (a2, b2, c2) = f, g
    if a1 > a2:
        (a1, b1, c1), (a2, b2, c2) = (a2, b2, c2), (a1, b1, c1)
    s = (b1 + b2) // 2
    n = b2 - s
    if a2 % a1 == 0:
        y1, d = 0, a1
    else:
        u, _, d = _xgcd(a2, a1)
        y1 = u
    if s % d == 0:
        y2, x2, d1 = -1, 0, d
    else:
        u, v, d1 = _xgcd(s, d)
        x2, y2 = u, -v
    v1, v2 = a1 // d1, a2 // d1
    r = (y1 * y2 * n - x2 * c2) % v1
    b3 = b2 + 2 * v2 * r
    a3 = v1 * v2
    c3 = (c2 * d1 + r * (b2 + v2 * r)) // v1
    return reduce_form(a3, b3, c3)


def power(f: Form, k: int) -> Form:
    D = f[1] ** 2 - 4 * f[0] * f[2]
    out = identity(D)
    base = f
    if k < 0:
        base, k = inverse(f), -k
    while k:
        if k & 1:
            out = compose(out, base)
        k >>= 1
        if k:
            base = compose(base, base)
    return out


def form_order(f: Form, bound: int | None = None) -> int:
    D = f[1] ** 2 - 4 * f[0] * f[2]
    e = identity(D)
    x, k = f, 1
    while x != e:
        x = compose(x, f)
        k += 1
        if bound is not None and k > bound:
            raise DomainError("form order exceeds bound")
    return k


def _sqrt_mod(a: int, p: int) -> int | None:
    a %= p
    if p == 2 or a == 0:
        return a
    if pow(a, (p - 1) // 2, p) != 1:
        return None
    if p % 4 == 3:
        return pow(a, (p + 1) // 4, p)
    for x in range(p):  # small primes only
        if x * x % p == a:
            return x
    return None


def prime_form(D: int, l: int) -> Form | None:
    """A form (l, b, c) of discriminant D, or None if l is inert."""
    if l == 2:
        if D % 8 == 1:
            return reduce_form(2, 1, (1 - D) // 8)
        if D % 4 == 0 and (D // 4) % 4 in (2, 3):
            b = 2 if (D // 4) % 4 == 3 else 0
            return reduce_form(2, b, (b * b - D) // 8)
        return None
    r = _sqrt_mod(D, l)
    if r is None:
        return None
    for b in (r, l - r, r + l, 2 * l - r):
        if (b - D) % 2 == 0 and (b * b - D) % (4 * l) == 0:
            return reduce_form(l, b, (b * b - D) // (4 * l))
    return None


def _vp(h: int, p: int) -> int:
    v = 0
    while h % p == 0:
        h //= p
        v += 1
    return v


def _partition_from_torsion(p: int, logs: list[int]) -> tuple[int, ...]:
    # logs[k] = log_p #G[p^k]; number of parts >= k is logs[k] - logs[k-1]
    ge = [logs[k] - logs[k - 1] for k in range(1, len(logs))]
    lam = []
    for k in range(len(ge)):
        nxt = ge[k + 1] if k + 1 < len(ge) else 0
        lam += [k + 1] * (ge[k] - nxt)
    return tuple(sorted(lam, reverse=True))


def sylow_elements(D: int, p: int, h: int | None = None) -> list[Form]:
    """Elements of the p-Sylow subgroup of Cl(D), built from images of prime forms."""
    if h is None:
        h = class_number(D)
    v = _vp(h, p)
    e = identity(D)
    if v == 0:
        return [e]
    target = p**v
    cof = h // target
    H = {e}
    l = 1
    while len(H) < target:
        l += 1
        if not _is_prime(l):
            continue
        if l * l > -D and l > 4 * math.isqrt(-D) + 50:
            raise DomainError(f"prime forms failed to generate the Sylow subgroup for D={D}")
        f = prime_form(D, l)
        if f is None:
            continue
        x = power(f, cof)
        if x in H:
            continue
        # extend H by cosets of successive powers of x
        cosets = [H]
        y = x
        while y not in H:
            cosets.append({compose(y, g) for g in H})
            y = compose(y, x)
        H = set().union(*cosets)
    return sorted(H)


def p_sylow_type(D: int, p: int, h: int | None = None) -> PGroupType:
    """Isomorphism type of the p-part of the class group of discriminant D."""
    _check_disc(D)
    if not _is_prime(p):
        raise DomainError(f"{p} is not prime")
    if h is None:
        h = class_number(D)
    v = _vp(h, p)
    if v == 0:
        return PGroupType(p, ())
    if v == 1:
        return PGroupType(p, (1,))
    H = sylow_elements(D, p, h)
    e = identity(D)
    # depth(g) = least k with g^{p^k} = e, via the p-power map
    nxt = {g: power(g, p) for g in H}
    depth = {e: 0}

    def _depth(g):
        chain = []
        while g not in depth:
            chain.append(g)
            g = nxt[g]
        d = depth[g]
        for x in reversed(chain):
            d += 1
            depth[x] = d
        return depth[chain[0]] if chain else d

    hist = [0] * (v + 2)
    for g in H:
        hist[_depth(g)] += 1
    logs, acc = [], 0
    for k in range(v + 1):
        acc += hist[k]
        logs.append(round(math.log(acc, p)))
        if logs[-1] == v:
            break
    return PGroupType(p, _partition_from_torsion(p, logs))


def torsion_count(D: int, p: int, k: int = 1) -> int:
    """#Cl(D)[p^k] by brute force over all reduced forms."""
    e = identity(D)
    return sum(1 for f in reduced_forms(D) if power(f, p**k) == e)


def class_numbers(X: int) -> np.ndarray:
    """h[d] = number of primitive-or-not reduced forms of discriminant -d, d < X.

    At fundamental discriminants every form is primitive, so h[d] = h(-d) there.
    """
    X = int(X)
    h = np.zeros(X, dtype=np.int64)
    a = 1
    while 3 * a * a < X:
        cmax = (X - 1 + a * a) // (4 * a)
        if cmax >= a:
            b = np.arange(-a + 1, a + 1, dtype=np.int64)[:, None]
            c = np.arange(a, cmax + 1, dtype=np.int64)[None, :]
            d = 4 * a * c - b * b
            ok = (d < X) & ((c > a) | (b >= 0))
            h += np.bincount(d[ok], minlength=X)[:X]
        a += 1
    return h


# ---- type cache -------------------------------------------------------------

CACHE_MAGIC = b"CLGT"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHH")
_RECORD = struct.Struct("<qB")


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(buf: bytes, pos: int):
    shift = n = 0
    while True:
        byte = buf[pos]
        pos += 1
        n |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return n, pos
        shift += 7


def encode_record(D: int, p: int, lam: tuple[int, ...]) -> bytes:
    return _RECORD.pack(D, p) + _varint(len(lam)) + b"".join(_varint(x) for x in lam)


class TypeCache:
    """Append-only binary store of p-Sylow types keyed by (D, p).

    Layout: header (magic, version, reserved, little-endian) followed by
    records (int64 D, uint8 p, varint count, varint parts...).
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = path
        self.data: dict[tuple[int, int], tuple[int, ...]] = {}
        if path is not None and os.path.exists(path):
            self.data = self.load(path)

    @staticmethod
    def load(path) -> dict:
        with open(path, "rb") as fh:
            buf = fh.read()
        if len(buf) < _HEADER.size:
            raise DomainError("cache file truncated")
        magic, version, _ = _HEADER.unpack_from(buf, 0)
        if magic != CACHE_MAGIC:
            raise DomainError("not a class-group type cache")
        if version != CACHE_VERSION:
            raise DomainError(f"unsupported cache version {version}")
        pos = _HEADER.size
        out = {}
        while pos < len(buf):
            if pos + _RECORD.size > len(buf):
                break  # torn final record
            D, p = _RECORD.unpack_from(buf, pos)
            q = pos + _RECORD.size
            try:
                k, q = _read_varint(buf, q)
                lam = []
                for _ in range(k):
                    x, q = _read_varint(buf, q)
                    lam.append(x)
            except IndexError:
                break
            out[(D, p)] = tuple(lam)
            pos = q
        return out

    def get(self, D: int, p: int):
        return self.data.get((D, p))

    def add_many(self, items):
        new = [(D, p, lam) for D, p, lam in items if (D, p) not in self.data]
        for D, p, lam in new:
            self.data[(D, p)] = tuple(lam)
        if self.path is None or not new:
            return
        fresh = not os.path.exists(self.path)
        with open(self.path, "ab") as fh:
            if fresh:
                fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, 0))
            fh.write(b"".join(encode_record(D, p, lam) for D, p, lam in new))


# ---- sweeps -----------------------------------------------------------------


def _types_shard(args):
    p, pairs = args
    return [(int(D), p, p_sylow_type(int(D), p, int(h)).lam) for D, h in pairs]


@dataclass
class Sweep:
    """p-Sylow types of all fundamental discriminants with |D| < X."""

    X: int
    p: int
    discs: np.ndarray  # negative, ordered by |D|
    h: np.ndarray
    types: list  # tuple partitions aligned with discs


def sweep(X: int, p: int, workers: int = 1, cache: TypeCache | None = None) -> Sweep:
    if not _is_prime(p):
        raise DomainError(f"{p} is not prime")
    if X < 4:
        raise DomainError("X must be at least 4")
    hall = class_numbers(X)
    ds = np.flatnonzero(fundamental_mask(X))
    hs = hall[ds]
    types: list = [None] * len(ds)
    todo = []
    for i, (d, h) in enumerate(zip(ds.tolist(), hs.tolist())):
        v = _vp(h, p)
        if v == 0:
            types[i] = ()
        elif v == 1:
            types[i] = (1,)
        else:
            hit = cache.get(-d, p) if cache is not None else None
            if hit is not None:
                types[i] = hit
            else:
                todo.append((i, -d, h))
    if todo:
        pairs = [(D, h) for _, D, h in todo]
        if workers > 1:
            size = max(1, len(pairs) // (workers * 8))
            shards = [(p, pairs[j : j + size]) for j in range(0, len(pairs), size)]
            with ProcessPoolExecutor(workers) as ex:
                results = [r for chunk in ex.map(_types_shard, shards) for r in chunk]
        else:
            results = _types_shard((p, pairs))
        for (i, _, _), (_, _, lam) in zip(todo, results):
            types[i] = lam
        if cache is not None:
            cache.add_many(results)
    return Sweep(X, p, -ds, hs, types)


def expected_density(t: PGroupType, prec: int = DEFAULT_PREC) -> float:
    """eta_inf(p) / |Aut G| times 3/pi^2, the predicted count per unit X."""
    return float(eta_inf(t.p, prec).value) / aut_order(t) * 3 / math.pi**2


@dataclass
class ErrorRow:
    X: int
    count_all: int
    count_match: int
    E: float
    log_ratio: float


def error_series(t: PGroupType, X: int, checkpoints: int = 20, workers: int = 1,
                 cache: TypeCache | None = None, sw: Sweep | None = None) -> list[ErrorRow]:
    """Cumulative match counts against the heuristic prediction at evenly spaced X."""
    if checkpoints < 1:
        raise DomainError("need at least one checkpoint")
    if sw is None:
        sw = sweep(X, t.p, workers, cache)
    absd = -sw.discs
    match = np.fromiter((lam == t.lam for lam in sw.types), dtype=bool, count=len(sw.types))
    cum = np.cumsum(match)
    dens = expected_density(t)
    rows = []
    for j in range(1, checkpoints + 1):
        x = X * j // checkpoints
        k = int(np.searchsorted(absd, x, side="left"))
        cm = int(cum[k - 1]) if k else 0
        E = cm - dens * x
        lr = math.log(abs(E)) / math.log(x) if abs(E) > 0 and x > 1 else float("-inf")
        rows.append(ErrorRow(x, k, cm, E, lr))
    return rows


def error_series_csv(rows: list[ErrorRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["X", "count_all", "count_match", "E", "log_ratio"])
    for r in rows:
        w.writerow([r.X, r.count_all, r.count_match, f"{r.E:.6f}", f"{r.log_ratio:.6f}"])
    return buf.getvalue()


def dh_average(X: int, workers: int = 1, cache: TypeCache | None = None, sw: Sweep | None = None) -> float:
    """Mean of 3^{rank of Cl(D)[3]} over fundamental D with |D| < X."""
    if sw is None:
        sw = sweep(X, 3, workers, cache)
    if not sw.types:
        raise DomainError("no discriminants below X")
    return float(np.mean([3 ** len(lam) for lam in sw.types]))
