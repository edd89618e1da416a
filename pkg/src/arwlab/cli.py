"""Command-line front end.

Exit codes: 0 success, 1 invalid arguments, 2 an acceptance band or check
failed.
"""

import argparse
import json
import math
import sys
from pathlib import Path

from .core import ConfigError, InitSpec, SimParams
from .experiments import (RATIO_BAND, ExperimentPlan, PlanEntry, asymptotic_sweep, knn_stationary_run, run_plan,
                          slow_clustered_scenario)

EXIT_OK, EXIT_ARGS, EXIT_BAND = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


def parse_init(text):
    """``default``, ``clustered``, ``disjoint:A`` or ``file:PATH`` (JSON)."""
    if text.startswith("file:"):
        path = Path(text[5:])
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read init file {path}: {exc}") from None
        if isinstance(doc, list):
            return InitSpec.explicit(doc)
        if isinstance(doc, dict) and doc.get("variant") == "disjoint":
            return InitSpec.disjoint(doc.get("a", 0), doc.get("red_sites", ()), doc.get("blue_sites", ()))
        raise ConfigError("init file must hold a list of [vertex, colour, count] or a disjoint-site object")
    return InitSpec.parse(text)


def _common(p, n_many=False, p_many=False):
    if n_many:
        p.add_argument("--n", type=int, nargs="+", required=True, help="population sizes, increasing")
    else:
        p.add_argument("--n", type=int, required=True, help="particles per colour")
    if p_many:
        p.add_argument("--p", type=float, nargs="+", default=[0.5], help="red speeds")
    else:
        p.add_argument("--p", type=float, default=0.5, help="probability that a red moves")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--init", default="default", help="default | clustered | disjoint:A | file:PATH")
    p.add_argument("--w-exponent", type=float, default=1.0 / 3.0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser():
    ap = _Parser(prog="arwlab", description="Two-type annihilating random walk laboratory")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one plan entry")
    _common(s)
    s.add_argument("--topology", choices=("complete", "bipartite"), default="complete")
    s.add_argument("--decimate", type=int, default=0, help="keep (t, M, R, B, level) every k steps")
    s.add_argument("--budget", type=int, help="step cap per trial (default 10 n^2)")
    s.add_argument("--workers", type=int)

    s = sub.add_parser("sweep", help="ratio table over n and p")
    _common(s, n_many=True, p_many=True)
    s.add_argument("--workers", type=int)

    s = sub.add_parser("oracle-bake", help="recompute the frozen constants")
    s.add_argument("--out", help="constants file (default: the packaged one)")

    s = sub.add_parser("scenario", help="acceptance scenarios")
    sc = s.add_subparsers(dest="scenario", required=True, parser_class=_Parser)
    c = sc.add_parser("slow-clustered", help="stacked reds with a slow red speed")
    c.add_argument("--n", type=int, default=2**14)
    c.add_argument("--p", type=float, help="red speed (default 1/(4 ln n))")
    c.add_argument("--trials", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--full", action="store_true", help="run to extinction instead of stopping past 3 n ln n")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.add_argument("--out")
    k = sc.add_parser("knn-stationary", help="stationary reds on K_{n,n}")
    k.add_argument("--n", type=int, default=2**14)
    k.add_argument("--trials", type=int, default=200)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--layout", choices=("random", "one_side", "clustered"), default="random")
    k.add_argument("--format", choices=("csv", "json"), default="csv")
    k.add_argument("--out")

    s = sub.add_parser("audit", help="statistical audits")
    au = s.add_subparsers(dest="audit", required=True, parser_class=_Parser)
    b = au.add_parser("bias", help="conditional move frequencies against the analytic bounds")
    _common(b)
    b.add_argument("--workers", type=int)
    return ap


def _emit(obj, args):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text)
    if getattr(args, "format", "csv") == "json":
        sys.stdout.write(text)


def _simulate(args):
    params = SimParams(args.n, args.p, args.topology, parse_init(args.init), args.seed)
    plan = ExperimentPlan((PlanEntry(params, args.trials),), master_seed=args.seed, w_exponent=args.w_exponent,
                          budget=args.budget, decimate=args.decimate)
    res = run_plan(plan, args.out, args.format, args.workers)
    e = res.summary.entries[0]
    if args.format == "json" and not args.out:
        sys.stdout.write(res.summary.to_json())
    else:
        ratio = f"{e.ratio:.4f}" if args.n > 1 else "n/a"
        print(f"n={e.n} p={e.p} {e.topology} init={e.init_variant} trials={e.trials}")
        print(f"mean T={e.mean_T:.3f} +- {e.stderr_T:.3f}  min={e.min_T} max={e.max_T}  ratio={ratio}")
        print(f"tau outcomes: {e.tau_outcomes}  truncated={e.truncated}")
        for f in res.files:
            print(f"wrote {f}")
    return EXIT_OK


def _sweep(args):
    r = asymptotic_sweep(args.n, args.p, args.trials, args.seed, parse_init(args.init), args.w_exponent,
                         workers=args.workers)
    print(r.table())
    if args.out:
        _emit(r.summary.as_dict(), argparse.Namespace(out=args.out, format="csv"))
    ok = r.in_band and not r.non_monotone and not r.speed_mismatch
    print(f"band {RATIO_BAND}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_BAND


def _bake(args):
    from .oracles import CONSTANTS_PATH, bake

    path = Path(args.out) if args.out else CONSTANTS_PATH
    doc = bake(path)
    for name, entry in sorted(doc["constants"].items()):
        print(f"{name} = {entry['value']!r}")
    print(f"wrote {path}")
    return EXIT_OK


def _slow(args):
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    rep = slow_clustered_scenario(args.n, args.trials, args.seed, args.p, args.full)
    d = {k: getattr(rep, k) for k in rep.__dataclass_fields__}
    d.update(events_ok=rep.events_ok, slow_ok=rep.slow_ok)
    _emit(d, args)
    if args.format != "json":
        print(f"n={rep.n} p={rep.p:.5f} trials={rep.trials} horizon={rep.horizon}")
        print(f"T > 3 n ln n in {100 * rep.frac_beyond:.2f}% of trials")
        print(f"events before horizon: mean {rep.events_mean:.1f} range [{rep.events_min}, {rep.events_max}] "
              f"vs {rep.events_prediction:.1f} +- {rep.events_tolerance:.1f}")
        if rep.ratio is not None:
            print(f"ratio mean T / (2 n ln n) = {rep.ratio:.4f}")
    if args.p is not None:
        return EXIT_OK  # bands only apply at the default slow speed
    return EXIT_OK if rep.slow_ok and rep.events_ok else EXIT_BAND


def _knn(args):
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    rep = knn_stationary_run(args.n, args.trials, args.layout, args.seed)
    d = {k: getattr(rep, k) for k in rep.__dataclass_fields__}
    d.update(lower_ok=rep.lower_ok, band_ok=rep.band_ok)
    _emit(d, args)
    if args.format != "json":
        print(f"n={rep.n} layout={rep.layout} trials={rep.trials}")
        print(f"mean T={rep.mean_T:.1f} +- {rep.stderr_T:.1f} ratio={rep.ratio:.4f}")
        lo = rep.lower / (2 * rep.n * math.log(rep.n)) if rep.n >= 3 else float("nan")
        print(f"lower bound ratio {lo:.4f} ({'ok' if rep.lower_ok else 'VIOLATED'}); "
              f"order independence at n={rep.abelian_n}: {'ok' if rep.abelian_ok else 'BROKEN'}")
    return EXIT_OK if rep.band_ok and rep.lower_ok and rep.abelian_ok else EXIT_BAND


def _audit(args):
    params = SimParams(args.n, args.p, "complete", parse_init(args.init), args.seed)
    plan = ExperimentPlan((PlanEntry(params, args.trials),), master_seed=args.seed, w_exponent=args.w_exponent,
                          audit=True)
    res = run_plan(plan, args.out, args.format, args.workers)
    checks = res.summary.entries[0].extra["audit"]
    if args.format == "json" and not args.out:
        sys.stdout.write(json.dumps(checks, indent=2) + "\n")
    else:
        for c in checks:
            print(f"{c['stratum']:<14} {c['check']:<22} steps={c['steps']:<10d} observed={c['observed']:<12.6g} "
                  f"bound={c['bound']:<12.6g} {c['verdict']}")
    return EXIT_BAND if any(c["verdict"] == "fail" for c in checks) else EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"simulate": _simulate, "sweep": _sweep, "oracle-bake": _bake, "audit": _audit}.get(args.verb)
    if args.verb == "scenario":
        handler = _slow if args.scenario == "slow-clustered" else _knn
    try:
        return handler(args)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"arwlab: error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
