"""Command-line front end.

Numeric rows go to stdout (or --out) as CSV or JSON; the run manifest goes
next to --out, or to stderr when writing to stdout. Exit codes: 0 ok,
2 input error, 3 budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BudgetError, InputError, ModeError, UnsupportedError
from .systems import FAMILIES, load_system, system_from_json

log = logging.getLogger("afflab")

EXIT_OK, EXIT_INPUT, EXIT_BUDGET = 0, 2, 3


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return repr(x)


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    return [int(v) for v in _floats(text)]


class Run:
    """Collects output rows and the manifest for one invocation."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.t0 = time.perf_counter()
        self.header = None
        self.rows = []
        self.payload = None
        self.words = 0
        self.budget_hit = False

    def system(self):
        if not self.args.system:
            raise InputError("--system is required")
        return load_system(self.args.system)

    def input_hash(self):
        p = getattr(self.args, "system", None) or getattr(self.args, "points", None)
        if not p:
            return None
        try:
            return "sha256:" + hashlib.sha256(Path(p).read_bytes()).hexdigest()
        except OSError:
            return None

    def manifest(self, status: str) -> dict:
        params = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("func",)}
        return {"tool": "afflab", "version": __version__, "subcommand": self.args.command,
                "input_hash": self.input_hash(), "params": params,
                "seeds": {"seed": getattr(self.args, "seed", None)},
                "wall_time_s": round(time.perf_counter() - self.t0, 6),
                "budget": {"limit": self.args.budget, "words_evaluated": self.words},
                "status": status}

    def body(self) -> str:
        fmt = self.args.format
        if self.payload is not None and (fmt == "json" or self.header is None):
            return json.dumps(self.payload, indent=2, sort_keys=True, default=_json_default) + "\n"
        if fmt == "json":
            return json.dumps([dict(zip(self.header, r)) for r in self.rows], indent=2) + "\n"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if self.header:
            w.writerow(self.header)
        for r in self.rows:
            w.writerow([_num(v) for v in r])
        return buf.getvalue()

    def emit(self, status: str = "ok"):
        text = self.body()
        man = json.dumps(self.manifest(status), indent=2, sort_keys=True, default=_json_default) + "\n"
        if self.args.out:
            out = Path(self.args.out)
            out.write_text(text)
            Path(str(out) + ".manifest.json").write_text(man)
        else:
            sys.stdout.write(text)
            if not self.args.quiet:
                sys.stderr.write(man)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return _num(o)
    return str(o)


def _engine_words(system) -> int:
    from .pressure import _ENGINES
    return sum(e.words_evaluated for e in _ENGINES.get(system, {}).values())


# -- subcommands ---------------------------------------------------------------

def cmd_phi(run: Run):
    from .linalg import phi_s
    a = run.args
    sysm = run.system()
    s = _require_s(a)
    words = [tuple(_ints(w)) for w in a.word] if a.word else None
    run.header = ["word", "s", "phi", "tag"]
    if words is None:
        count = sysm.size if sysm.is_finite else (a.trunc or 10)
        words = [(i,) for i in range(count)]
    for w in words:
        M = sysm.product(w)
        for sv in s:
            run.rows.append([" ".join(map(str, w)), sv, phi_s(M, sv), "exact"])


def _require_s(a) -> list:
    if a.s is None:
        raise InputError("--s is required")
    vals = _floats(a.s)
    if any(v < 0 for v in vals):
        raise InputError("s must be non-negative")
    return vals


def cmd_pressure(run: Run):
    from .potentials import QMCertificate
    from .pressure import pressure_bracket
    a = run.args
    sysm = run.system()
    cert = None
    if a.certificate:
        cert = QMCertificate.from_json(json.loads(Path(a.certificate).read_text()))
    run.header = ["s", "n", "N", "upper", "lower_certified", "lower_heuristic", "tail_term", "wall_ms",
                  "lower_route", "certification", "note"]
    N = a.trunc if not sysm.is_finite else None
    if not sysm.is_finite and N is None:
        N = 1000
    for s in _require_s(a):
        try:
            br = pressure_bracket(sysm, s, n_max=a.n or 8, N=N, certificate=cert, threads=a.threads,
                                  budget=a.budget)
        finally:
            run.words = _engine_words(sysm)
        if br.infinite:
            run.rows.append([s, br.n, N if N else "all", math.inf, math.inf, math.inf, math.inf, "",
                             "divergence", "certified_upper|certified_lower|heuristic",
                             "+inf (s below theta)"])
            continue
        if br.n < (a.n or 8) and any(nt.startswith("levels capped") for nt in br.notes):
            run.budget_hit = True
        tags = ["certified_upper"]
        if br.lower_certified is not None:
            tags.append("certified_lower")
        tags.append("heuristic")
        run.rows.append([s, br.n, br.N, br.upper, br.lower_certified, br.lower_heuristic, br.tail_term,
                         round(br.wall_ms, 3) if a.timing else "", br.lower_route or "", "|".join(tags),
                         "; ".join(br.notes)])


def cmd_theta(run: Run):
    from .pressure import theta_estimate
    sysm = run.system()
    t = theta_estimate(sysm, tol=run.args.tol or 1e-3)
    run.header = ["theta_lower", "theta_upper", "tag"]
    run.rows.append([t.lower, t.upper, "exact" if t.exact else "certified_interval"])


def cmd_dim(run: Run):
    from .dimension import affinity_dimension
    a = run.args
    sysm = run.system()
    try:
        r = affinity_dimension(sysm, tol=a.tol or 1e-6, budget=a.budget, n_max=a.n or 12, N=a.trunc,
                               threads=a.threads, seed=a.seed)
    finally:
        run.words = _engine_words(sysm)
    run.budget_hit = r.budget_limited
    run.header = ["dim_lower", "dim_upper", "converged", "tag", "note"]
    run.rows.append([r.lower, r.upper, "yes" if r.converged else "no", "certified_interval",
                     "; ".join(r.notes)])


def cmd_ldim(run: Run):
    from .dimension import ldim_curve
    a = run.args
    sysm = run.system()
    sched = _ints(a.schedule) if a.schedule else [10, 100, 1000]
    curve = ldim_curve(sysm, sched, tol=a.tol or 1e-4, budget=a.budget)
    run.header = ["N", "ldim", "tag"]
    for N, v in curve:
        run.rows.append([N, v, "certified_lower"])


def cmd_blocks(run: Run):
    from .reducibility import detriangularise
    a = run.args
    sysm = run.system()
    bs = detriangularise(sysm, trials=a.trials, seed=a.seed, N=a.trunc)
    run.header = ["block", "dim", "irreducible", "confidence", "cond", "completely_reducible", "ill_conditioned"]
    for t, (m, flag) in enumerate(zip(bs.block_dims, bs.irreducible_flags)):
        run.rows.append([t, m, "yes" if flag else "no", bs.confidence, bs.cond,
                         "yes" if bs.completely_reducible else "no", "yes" if bs.ill_conditioned else "no"])
    if a.format == "json":
        run.payload = {"block_dims": bs.block_dims, "cond": bs.cond, "conjugator": bs.conjugator,
                       "completely_reducible": bs.completely_reducible, "confidence": bs.confidence,
                       "ill_conditioned": bs.ill_conditioned, "notes": bs.notes}


def cmd_equilibrium(run: Run):
    import warnings
    from .measures import equilibrium_approx
    a = run.args
    sysm = run.system()
    s = _require_s(a)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        e = equilibrium_approx(sysm, s, a.n or 10)
    payload = e.to_json()
    payload["label"] = f"level-{e.n} approximation"
    if a.weights:
        payload["weights"] = e.weights.tolist()
    run.payload = payload


def cmd_sample(run: Run):
    from .dimension import chaos_game_sample
    a = run.args
    sysm = run.system()
    pts = chaos_game_sample(sysm, a.count, seed=a.seed, N=a.trunc)
    run.header = [f"x{j}" for j in range(pts.shape[1])]
    run.rows = [list(p) for p in pts]


def cmd_boxdim(run: Run):
    from .dimension import box_counting, chaos_game_sample
    a = run.args
    if a.points:
        pts = np.loadtxt(a.points, delimiter=",", skiprows=1, ndmin=2)
    else:
        pts = chaos_game_sample(run.system(), a.count, seed=a.seed, N=a.trunc)
    bc = box_counting(pts)
    run.header = ["scale", "count", "estimate", "tag"]
    for e, c in zip(bc.scales, bc.counts):
        run.rows.append([e, c, bc.estimate, "heuristic"])


def cmd_examples(run: Run):
    a = run.args
    action = a.action or "list"
    if action == "list":
        run.header = ["name", "params"]
        for name, entry in sorted(FAMILIES.items()):
            run.rows.append([name, json.dumps(entry["schema"], sort_keys=True)])
        if a.format == "json":
            run.payload = {k: v["schema"] for k, v in sorted(FAMILIES.items())}
    elif action == "show":
        if not a.name or a.name not in FAMILIES:
            raise InputError(f"unknown family {a.name!r}; try 'examples list'")
        params = json.loads(a.params) if a.params else {}
        sysm = FAMILIES[a.name]["builder"](params)
        obj = {"dim": sysm.dim, "norm": "operator-euclidean", "kind": "family",
               "family": {"name": a.name, "params": params}}
        system_from_json(obj)
        run.payload = obj
    else:
        raise InputError(f"unknown examples action {action!r}")


def cmd_certify(run: Run):
    from .potentials import certificate_search
    a = run.args
    sysm = run.system()
    s = _require_s(a)[0]
    cert = certificate_search(sysm, s, max_F_len=a.max_f_len, checked_len=a.checked_len, N=a.trunc)
    if cert is None:
        run.payload = {"certificate": None, "note": "ratio degenerated below the 1e-12 floor"}
    else:
        run.payload = dict(cert.to_json(), ref=cert.ref, log_K=cert.log_K)


COMMANDS = {"phi": cmd_phi, "pressure": cmd_pressure, "theta": cmd_theta, "dim": cmd_dim, "ldim": cmd_ldim,
            "blocks": cmd_blocks, "equilibrium": cmd_equilibrium, "sample": cmd_sample,
            "boxdim": cmd_boxdim, "examples": cmd_examples, "certify": cmd_certify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", help="system JSON file")
    common.add_argument("--s", help="exponent s, or a comma-separated list")
    common.add_argument("--n", type=int, help="word length / level")
    common.add_argument("--trunc", type=int, help="truncation N for countable systems")
    common.add_argument("--tol", type=float, help="tolerance")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--budget", type=int, default=None, help="max word evaluations (default 1e8)")
    common.add_argument("--out", help="write output here (manifest goes to OUT.manifest.json)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--quiet", action="store_true", help="do not print the manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="afflab", description="Affinity dimension and pressure toolkit")
    parser.add_argument("--version", action="version", version=f"afflab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("phi", parents=[common], help="singular value function of word products")
    p.add_argument("--word", action="append", help="comma-separated letters (repeatable)")
    p = sub.add_parser("pressure", parents=[common], help="certified pressure brackets")
    p.add_argument("--certificate", help="quasi-multiplicativity certificate JSON")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column (not reproducible)")
    sub.add_parser("theta", parents=[common], help="finiteness threshold interval")
    sub.add_parser("dim", parents=[common], help="affinity dimension interval")
    p = sub.add_parser("ldim", parents=[common], help="lower affinity dimension curve")
    p.add_argument("--schedule", help="comma-separated truncations")
    p = sub.add_parser("blocks", parents=[common], help="block-triangular structure")
    p.add_argument("--trials", type=int, default=32)
    p = sub.add_parser("equilibrium", parents=[common], help="level-n Gibbs weight diagnostics (JSON)")
    p.add_argument("--weights", action="store_true", help="include the weight vector")
    p = sub.add_parser("sample", parents=[common], help="chaos-game attractor points")
    p.add_argument("--count", type=int, default=10000)
    p = sub.add_parser("boxdim", parents=[common], help="box-counting dimension estimate")
    p.add_argument("--count", type=int, default=100000)
    p.add_argument("--points", help="points CSV instead of sampling")
    p = sub.add_parser("examples", parents=[common], help="built-in families")
    p.add_argument("action", nargs="?", choices=("list", "show"))
    p.add_argument("name", nargs="?")
    p.add_argument("--params", help="JSON object of family parameters")
    p = sub.add_parser("certify", parents=[common], help="search a quasi-multiplicativity certificate")
    p.add_argument("--max-F-len", dest="max_f_len", type=int, default=2)
    p.add_argument("--checked-len", dest="checked_len", type=int, default=4)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        sys.stderr.write("afflab: error: --threads must be at least 1\n")
        return EXIT_INPUT
    run = Run(args, argv)
    try:
        COMMANDS[args.command](run)
    except BudgetError as exc:
        sys.stderr.write(f"afflab: budget exhausted: {exc}\n")
        run.emit(status="budget_exhausted")
        return EXIT_BUDGET
    except (InputError, ModeError, UnsupportedError, OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(f"afflab: error: {exc}\n")
        return EXIT_INPUT
    if run.budget_hit:
        sys.stderr.write("afflab: budget exhausted before the requested level; rows are partial\n")
        run.emit(status="budget_exhausted")
        return EXIT_BUDGET
    run.emit()
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
