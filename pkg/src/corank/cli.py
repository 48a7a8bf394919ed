"""Command-line entry point: ``corank <subcommand> [flags]``.

Every run prints its resolved configuration as ``# key=value`` header lines
ahead of the CSV body, so a saved output records how to reproduce itself.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction

import mpmath

from . import __version__
from .chain import ChainSpec, Dist, ensemble_law, iterate
from .errors import DomainError
from .qseries import DEFAULT_PREC, PGroupType

EXIT_OK, EXIT_INTERNAL, EXIT_DOMAIN = 0, 1, 2


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    prec: int = DEFAULT_PREC
    workers: int = 1
    out: str | None = None
    json: str | None = None
    svg: str | None = None

    def to_dict(self) -> dict:
        return {
            "command": self.command, "params": dict(sorted(self.params.items())), "seed": self.seed,
            "prec": self.prec, "workers": self.workers, "out": self.out, "json": self.json, "svg": self.svg,
        }

    def header(self) -> str:
        lines = [f"# corank {__version__}", f"# command={self.command}"]
        for k, v in sorted(self.params.items()):
            lines.append(f"# {k}={v}")
        lines += [f"# seed={self.seed}", f"# prec={self.prec}", f"# workers={self.workers}"]
        return "\n".join(lines) + "\n"


# ---- argument handling ------------------------------------------------------


def _n_range(text: str) -> range:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            return range(int(a), int(b) + 1)
        n = int(text)
        return range(n, n + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def read_config(path: str) -> dict:
    """Parse a key=value file; blank lines and # comments are ignored."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DomainError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _common(p: argparse.ArgumentParser, seed=False, workers=False, svg=False):
    p.add_argument("--prec", type=int, default=DEFAULT_PREC, help="working precision in bits")
    p.add_argument("--out", "-o", default=None, help="CSV output path (default stdout)")
    p.add_argument("--json", default=None, help="also write full JSON here")
    p.add_argument("--config", default=None, help="key=value file; explicit flags win")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if workers:
        p.add_argument("--workers", type=int, default=1)
    if svg:
        p.add_argument("--svg", default=None, help="write a static SVG plot here")


def _chain_args(p, m=True):
    p.add_argument("--kind", default="uniform", help="uniform, symmetric, alt_odd, alt_even, hermitian")
    p.add_argument("--q", default="2")
    if m:
        p.add_argument("--m", default="0")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="corank", description="Corank chains, cokernel laws and class-group statistics.")
    ap.add_argument("--version", action="version", version=f"corank {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chain", help="exact law of delta_0 P^n, or its distance to stationarity")
    _chain_args(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tv", action="store_true", help="emit the TV table for steps 1..n instead")
    _common(p)

    p = sub.add_parser("simulate", help="Monte Carlo corank histogram against the exact law")
    p.add_argument("--ensemble", default="uniform", help="uniform, symmetric, alternating, hermitian, scs")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--field", type=int, default=None, help="field order (default: smallest admissible)")
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--trials", type=int, default=100000)
    p.add_argument("--threshold", type=float, default=0.01, help="TV threshold reported in the overlay")
    _common(p, seed=True, workers=True)

    p = sub.add_parser("spectrum", help="eigenvalues of the truncated chain")
    _chain_args(p)
    p.add_argument("--N", type=int, default=60)
    _common(p)

    p = sub.add_parser("expansion", help="exact TV distance against the leading spectral term")
    _chain_args(p)
    p.add_argument("--n-range", type=_n_range, default=_n_range("10..24"))
    _common(p)

    p = sub.add_parser("cokernel", help="cokernel measures over Z_p and their large-n expansion")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--type", default="", help="partition of the p-group, e.g. 1 or 2,1")
    p.add_argument("--n-range", type=_n_range, default=_n_range("1..8"))
    p.add_argument("--validate", action="store_true", help="exit non-zero if any row exceeds the cap")
    p.add_argument("--samples", type=int, default=0, help="also run an SNF Monte Carlo (JSON only)")
    p.add_argument("--snf-n", type=int, default=3)
    p.add_argument("--N", type=int, default=20, help="p-adic working precision exponent")
    _common(p, seed=True)

    p = sub.add_parser("classgroup", help="Sylow-type counts of imaginary quadratic class groups")
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--type", default="1")
    p.add_argument("--X", type=float, default=1e6)
    p.add_argument("--checkpoints", type=int, default=100)
    p.add_argument("--cache", default=None, help="binary type cache path")
    _common(p, workers=True, svg=True)
    return ap


def parse_args(argv=None) -> argparse.Namespace:
    ap = build_parser()
    ns = ap.parse_args(argv)
    if ns.config:
        conf = read_config(ns.config)
        # rebuild with the file as defaults so that explicit flags still win
        sp = ap._subparsers._group_actions[0].choices[ns.command]
        known = {a.dest: a for a in sp._actions}
        unknown = sorted(set(conf) - set(known))
        if unknown:
            raise DomainError(f"unknown config keys: {', '.join(unknown)}")
        for k, v in conf.items():
            a = known[k]
            if isinstance(a, argparse._StoreTrueAction):
                conf[k] = _bool(v)
            elif a.type is not None:
                conf[k] = a.type(v)
        sp.set_defaults(**conf)
        ns = ap.parse_args(argv)
    return ns


# ---- output -----------------------------------------------------------------


def _emit(cfg: RunConfig, body: str, payload: dict | None = None):
    text = cfg.header() + body
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if cfg.json:
        doc = {"config": cfg.to_dict(), "result": payload or {}, "metadata": {"version": __version__}}
        with open(cfg.json, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _s(x, digits=20) -> str:
    if isinstance(x, Fraction):
        with mpmath.workprec(4 * digits + 64):
            return mpmath.nstr(mpmath.mpf(x.numerator) / x.denominator, digits)
    if isinstance(x, (mpmath.mpf, float, int)):
        return mpmath.nstr(x, digits)
    return str(x)


def _cfg(ns, command, params) -> RunConfig:
    return RunConfig(command, params, getattr(ns, "seed", 0), ns.prec, getattr(ns, "workers", 1),
                     ns.out, ns.json, getattr(ns, "svg", None))


# ---- subcommands ------------------------------------------------------------


def cmd_chain(ns) -> int:
    c = ChainSpec(ns.kind, ns.q, ns.m)
    if ns.n is None or ns.n < 0:
        raise DomainError("--n must be given and non-negative")
    cfg = _cfg(ns, "chain", {**c.to_dict(), "n": ns.n, "tv": ns.tv})
    if ns.tv:
        from .spectral import expansion_check

        rep = expansion_check(c, range(1, ns.n + 1), ns.prec)
        _emit(cfg, rep.to_csv(), {"chain": c.to_dict(), "cap": _s(rep.cap), "ok": rep.ok,
                                  "rows": [[r[0]] + [_s(x) for x in r[1:]] for r in rep.rows]})
        return EXIT_OK
    d = iterate(c, Dist.delta(0), ns.n, prec=ns.prec)
    rows = [[i, str(w) if isinstance(w, Fraction) else "", _s(w, 25)] for i, w in enumerate(d.weights)]
    _emit(cfg, _csv(["index", "weight_exact", "weight"], rows),
          {"chain": c.to_dict(), "weights": [r[1] or r[2] for r in rows], "tail_bound": _s(d.tail_bound, 6)})
    return EXIT_OK


def _smallest_field(kind: str) -> int:
    return {"scs": 3, "hermitian": 9}.get(kind, 2)


def cmd_simulate(ns) -> int:
    from .ffmat import EnsembleSpec, FieldSpec, corank_hist

    order = ns.field or _smallest_field(ns.ensemble)
    F = FieldSpec.of_order(order)
    e = EnsembleSpec(ns.ensemble, ns.n, F, ns.m)
    h = corank_hist(e, ns.trials, ns.seed, ns.workers)
    q = math.isqrt(order) if ns.ensemble == "hermitian" else order
    law = ensemble_law(ns.ensemble, ns.n, q, ns.m)
    freq = h.frequencies()
    keys = sorted(set(law) | set(freq))
    tv = sum(abs(freq.get(k, 0.0) - float(law.get(k, 0))) for k in keys)
    cfg = _cfg(ns, "simulate", {"ensemble": ns.ensemble, "n": ns.n, "field": order, "m": ns.m,
                                "trials": ns.trials, "threshold": ns.threshold})
    rows = [[k, h.counts.get(k, 0), f"{freq.get(k, 0.0):.8f}", _s(law.get(k, Fraction(0)), 12)] for k in keys]
    body = _csv(["corank", "count", "empirical", "exact"], rows)
    body += f"# tv={tv:.8f}\n# within_threshold={tv <= ns.threshold}\n"
    payload = {"histogram": h.to_dict(), "exact": {str(k): str(v) for k, v in sorted(law.items())},
               "tv": round(tv, 12), "within_threshold": tv <= ns.threshold}
    _emit(cfg, body, payload)
    return EXIT_OK


def cmd_spectrum(ns) -> int:
    from .spectral import spectrum_csv, truncated_spectrum

    c = ChainSpec(ns.kind, ns.q, ns.m)
    if ns.N < 2:
        raise DomainError("N must be at least 2")
    cfg = _cfg(ns, "spectrum", {**c.to_dict(), "N": ns.N})
    _emit(cfg, spectrum_csv(c, ns.N), {"chain": c.to_dict(), "eigenvalues": [repr(float(x)) for x in truncated_spectrum(c, ns.N)]})
    return EXIT_OK


def cmd_expansion(ns) -> int:
    from .spectral import expansion_check

    c = ChainSpec(ns.kind, ns.q, ns.m)
    cfg = _cfg(ns, "expansion", {**c.to_dict(), "n_range": f"{ns.n_range.start}..{ns.n_range.stop - 1}"})
    rep = expansion_check(c, ns.n_range, ns.prec)
    _emit(cfg, rep.to_csv() + f"# cap={_s(rep.cap, 12)}\n# within_cap={rep.ok}\n",
          {"chain": c.to_dict(), "cap": _s(rep.cap), "ok": rep.ok,
           "rows": [[r[0]] + [_s(x) for x in r[1:]] for r in rep.rows]})
    return EXIT_OK


def cmd_cokernel(ns) -> int:
    from .padic import cokernel_expansion, cokernel_hist

    t = PGroupType.parse(ns.p, ns.type)
    if ns.n_range.start < 1:
        raise DomainError("n must be at least 1")
    params = {"p": ns.p, "m": ns.m, "type": str(t), "n_range": f"{ns.n_range.start}..{ns.n_range.stop - 1}",
              "validate": ns.validate, "samples": ns.samples}
    if ns.samples:
        params.update({"snf_n": ns.snf_n, "N": ns.N})
    cfg = _cfg(ns, "cokernel", params)
    rep = cokernel_expansion(ns.p, ns.m, t, ns.n_range, ns.prec)
    payload = {"type": str(t), "w": _s(rep.w.value, 30), "lambda": _s(rep.lam.value, 30), "cap": _s(rep.cap, 12),
               "ok": rep.ok, "rows": [[n, str(ex), _s(tt, 30), _s(sr, 12)] for n, ex, tt, sr in rep.rows]}
    if ns.samples:
        payload["snf"] = cokernel_hist(ns.p, ns.snf_n, ns.m, ns.samples, ns.seed, ns.N).to_dict()
    _emit(cfg, rep.to_csv() + f"# w={_s(rep.w.value, 25)}\n# lambda={_s(rep.lam.value, 25)}\n# within_cap={rep.ok}\n", payload)
    if ns.validate and not rep.ok:
        print("validation failed: a scaled residual exceeds the cap", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def _plot_error_series(rows, path, title):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "corank"
    pts = [(r.X, abs(r.E)) for r in rows if r.E != 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    if pts:
        ax.loglog([x for x, _ in pts], [y for _, y in pts], marker=".", lw=1)
        xs = [pts[0][0], pts[-1][0]]
        ax.loglog(xs, [x**0.5 for x in xs], ls="--", lw=0.8, label="X^(1/2)")
        ax.legend()
    ax.set_xlabel("X")
    ax.set_ylabel("|E(X)|")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_classgroup(ns) -> int:
    from .classgroup import TypeCache, dh_average, error_series, error_series_csv, sweep

    t = PGroupType.parse(ns.p, ns.type)
    X = int(ns.X)
    cache = TypeCache(ns.cache) if ns.cache else None
    cfg = _cfg(ns, "classgroup", {"p": ns.p, "type": str(t), "X": X, "checkpoints": ns.checkpoints,
                                  "cache": ns.cache})
    sw = sweep(X, ns.p, ns.workers, cache)
    rows = error_series(t, X, ns.checkpoints, sw=sw)
    body = error_series_csv(rows)
    payload = {"type": str(t), "rows": [[r.X, r.count_all, r.count_match, round(r.E, 6), round(r.log_ratio, 6)]
                                        for r in rows]}
    if ns.p == 3:
        dh = dh_average(X, sw=sw)
        body += f"# dh_average={dh:.6f}\n"
        payload["dh_average"] = dh
    if ns.svg:
        _plot_error_series(rows, ns.svg, f"p={ns.p}, G={t}")
    _emit(cfg, body, payload)
    return EXIT_OK


COMMANDS = {
    "chain": cmd_chain, "simulate": cmd_simulate, "spectrum": cmd_spectrum, "expansion": cmd_expansion,
    "cokernel": cmd_cokernel, "classgroup": cmd_classgroup,
}


def main(argv=None) -> int:
    try:
        ns = parse_args(argv)
        return COMMANDS[ns.command](ns)
    except (DomainError, ValueError) as exc:
        # DomainError subclasses ValueError; both mean the inputs were unusable
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

if __name__ == "__main__":
    sys.exit(main())
