"""Command-line front door.

Every subcommand writes a JSON report (sorted keys, resolved config and seed
embedded) and a ``.meta.json`` sidecar holding the timestamp, runtime and
worker count, so reports are byte-identical across reruns and thread counts.

Exit codes: 0 pass, 2 a check ran and failed, 1 usage or runtime error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import time
import traceback
import warnings

import numpy as np

from . import __version__, seeding
from .errors import GWError, TruncationError

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
OUTPUT_ENV = "GWFOREST_OUTPUT_DIR"
# options that change where or how fast a run happens, never what it computes
_NOT_CONFIG = {"threads", "out", "report", "func", "csv"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- report plumbing

def _clean(x):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUTPUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def _provenance(err: BaseException) -> str:
    """Innermost package module on the traceback of ``err``."""
    mod = "gwforest.cli"
    for frame, _ in traceback.walk_tb(err.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("gwforest"):
            mod = name
    return mod


# ---------------------------------------------------------------- law helpers

def _law(args):
    from .lawspec import parse_law
    return parse_law(args.law)


def _multitype(law, args):
    from .lawspec import default_x0
    from .multitype import MultitypeLaw
    if not isinstance(law, MultitypeLaw):
        raise UsageError(f"{args.command} needs a multitype law")
    return int(args.x0) if args.x0 is not None else default_x0(law)


def _is_lamination(law) -> bool:
    from .laminations import LaminationLaw
    return isinstance(law, LaminationLaw)


def _b_values(law, x0, K):
    """b on a retained window; closed forms for the lamination law."""
    from . import laminations, spectral
    if _is_lamination(law):
        types = laminations.lamination_types(K)
        _, b, _ = laminations.closed_form_vectors(types)
        return types, b, "closed-form"
    sd = spectral.spectral_data(law, x0, K)
    return sd.types, sd.b, "solver"


# ---------------------------------------------------------------- subcommands

def cmd_sample_leafed(args, out):
    from .leafed import LeafedLaw, estimate_params, exploration_processes, sample_leafed_forest, \
        write_leafed_csv
    law = _law(args)
    if not isinstance(law, LeafedLaw):
        raise UsageError("sample-leafed needs a leafed law")
    try:
        f = sample_leafed_forest(law, args.budget, args.seed, hard_cap=args.hard_cap)
    except TruncationError as err:
        if args.csv and err.partial is not None:
            write_leafed_csv(os.path.join(out, "forest_partial.csv"), err.partial)
        raise
    tr = exploration_processes(f)
    if args.csv:
        write_leafed_csv(os.path.join(out, "forest.csv"), f)
        tr.to_csv(os.path.join(out, "trace_vertices.csv"), os.path.join(out, "trace_type1.csv"))
    est = estimate_params(law, args.param_samples, args.seed)
    res = {"n_nodes": f.n_nodes, "n_trees": f.forest.n_trees,
           "n_type1": int((f.bit == 1).sum()), "max_H_ell": float(tr.H_ell.max()),
           "max_H_one": int(tr.H_one.max()), "params": est.to_dict()}
    return res, True


def cmd_sample_multitype(args, out):
    from .multitype import sample_multitype_forest, write_multitype_csv
    law = _law(args)
    x0 = _multitype(law, args)
    try:
        f = sample_multitype_forest(law, x0, args.budget, args.seed, hard_cap=args.hard_cap)
    except TruncationError as err:
        if args.csv and err.partial is not None:
            write_multitype_csv(os.path.join(out, "forest_partial.csv"), err.partial)
        raise
    if args.csv:
        write_multitype_csv(os.path.join(out, "forest.csv"), f)
    vals, cnt = np.unique(f.types, return_counts=True)
    res = {"x0": x0, "n_nodes": f.n_nodes, "n_trees": f.forest.n_trees,
           "max_generation": int(f.forest.generation.max()),
           "type_counts": {str(int(v)): int(c) for v, c in zip(vals, cnt)}}
    return res, True


def cmd_reduce(args, out):
    from .multitype import sample_multitype_forest
    from .reduction import reduce, verify_prop1, write_reduced_csv
    law = _law(args)
    x0 = _multitype(law, args)
    truncated = False
    try:
        f = sample_multitype_forest(law, x0, args.budget, args.seed, hard_cap=args.hard_cap)
    except TruncationError as err:
        # a frontier-truncated tree is still a finite tree; the identity applies to it
        f, truncated = err.partial, True
    rt = reduce(f, x0)
    res = {"x0": x0, "n_nodes": f.n_nodes, "n_trees": f.forest.n_trees, "truncated": truncated,
           "n_bit1": int((rt.leafed.bit == 1).sum()),
           "n_type_x0": int((f.types == x0).sum()),
           "max_length": float(rt.leafed.length.max())}
    ok = True
    if args.verify_prop1:
        ok, first = verify_prop1(f, x0, reduced=rt)
        res["prop1"] = bool(ok)
        res["first_mismatch_rank"] = first
    if args.csv:
        write_reduced_csv(os.path.join(out, "reduced.csv"), rt)
    return res, bool(ok)


def cmd_spectral(args, out):
    from . import spectral
    law = _law(args)
    x0 = _multitype(law, args)
    if args.mode == "mc" and args.seed is None:
        raise UsageError("--seed is required in mc mode")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sd = spectral.spectral_data(law, x0, args.K, mode=args.mode, n_samples=args.n_samples,
                                    seed=args.seed or 0)
    res = sd.to_json_dict()
    res["x0"] = x0
    res["kernel_leak"] = sd.kernel_leak
    res["warnings"] = [str(w.message) for w in caught]
    if args.double_check:
        sd2 = spectral.spectral_data(law, x0, 2 * args.K, mode=args.mode,
                                     n_samples=args.n_samples, seed=args.seed or 0)
        i, j = sd.index(x0), sd2.index(x0)
        res["doubling"] = {"K2": sd2.K, "delta_a_x0": abs(sd.a[i] - sd2.a[j]),
                           "delta_b_x0": abs(sd.b[i] - sd2.b[j])}
    ok = abs(sd.eigenvalue - 1.0) <= args.criticality_tol and not caught
    return res, bool(ok)


def _first_return(x0):
    def g(paths):
        if paths.shape[1] == 0:
            return np.zeros(paths.shape[0])
        before = (paths[:, :-1] != x0).all(axis=1)
        return (before & (paths[:, -1] == x0)).astype(float)
    return g


def cmd_verify_mto(args, out):
    from .leafed import LeafedLaw
    from .spine import verify_many_to_one
    law = _law(args)
    res = {}
    if isinstance(law, LeafedLaw):
        if args.functional != "one":
            raise UsageError("only --functional one applies to leafed laws")
        rep = verify_many_to_one(law, n=args.n, R=args.R, seed=args.seed,
                                 z_threshold=args.z_threshold)
    else:
        x0 = _multitype(law, args)
        types, b, src = _b_values(law, x0, max(args.K, args.n + 10))
        g = None if args.functional == "one" else _first_return(x0)
        rep = verify_many_to_one(law, b_values=b, b_types=types, x0=x0, g=g, n=args.n, R=args.R,
                                 seed=args.seed, upto=args.functional == "first-return",
                                 z_threshold=args.z_threshold)
        res.update({"x0": x0, "b_source": src})
    res.update(rep.to_dict())
    return res, rep.passed


def _scales(law, x0, s, seed):
    """Half-normal scales at time s: leafed, multitype direct and reduced."""
    from . import spectral
    from .leafed import LeafedLaw, estimate_params
    from .reduction import reduced_params
    if isinstance(law, LeafedLaw):
        est = estimate_params(law, 10**6, seed)
        return {"leafed": 2 * est.mu / math.sqrt(est.sigma2) * math.sqrt(s / est.m)}
    sd = spectral.spectral_data(law, x0, 60)
    i = sd.index(x0)
    rp = reduced_params(sd.a[i], sd.b[i], sd.eta2)
    return {"direct": 2 / math.sqrt(sd.eta2) * math.sqrt(s),
            "reduced": 2 * rp["mu"] / math.sqrt(rp["sigma2"]) * math.sqrt(s / rp["m"]),
            "params": rp}


def cmd_verify_scaling(args, out):
    from . import scaling
    from .leafed import LeafedLaw
    from .reduction import reduced_params
    law = _law(args)
    leafed = isinstance(law, LeafedLaw)
    x0 = None if leafed else _multitype(law, args)
    if args.test == "closeness":
        if leafed:
            est = scaling.estimate_params(law, 10**6, args.seed)
            mu, m = est.mu, est.m
        else:
            from . import spectral
            sd = spectral.spectral_data(law, x0, 60)
            i = sd.index(x0)
            rp = reduced_params(sd.a[i], sd.b[i], sd.eta2)
            mu, m = rp["mu"], rp["m"]
        rep = scaling.closeness_trend(law, mu * args.mu_factor, m, args.n_small, args.n,
                                      args.runs, args.seed, x0, min_runs=args.min_runs)
        return rep, rep["pass"]
    if args.test == "hypothesis":
        if not leafed:
            raise UsageError("the hypothesis report applies to leafed laws")
        y = np.geomspace(1.0, args.y_max, args.y_points)
        rep = scaling.hypothesis_H_report(law, args.R, y, args.seed, args.level)
        ok = rep["H_c"]["pass"] and rep["H_c2"]["positive"] and not (
            rep["H_02"]["flag"] or rep["H_12"]["flag"])
        return rep, bool(ok)
    routes = ["leafed"] if leafed else (["direct", "reduced"] if args.route == "both" else [args.route])
    res = {"x0": x0, "tests": []}
    ok = True
    for s in args.s:
        sc = _scales(law, x0, s, args.seed)
        for route in routes:
            scale = sc[route] * args.scale_factor
            samples = scaling.height_marginals(law, args.n, [s], args.R, args.seed, x0=x0,
                                               route="direct" if route == "leafed" else route,
                                               lanes=args.lanes)
            if args.csv:
                samples[s].to_csv(os.path.join(out, f"marginal_{route}_s{s:g}.csv"))
            rep = scaling.half_normal_test(samples[s], scale, args.level).to_dict()
            rep["route"] = route
            res["tests"].append(rep)
            ok &= rep["pass"]
        if not leafed:
            res.setdefault("scale_equality", []).append(
                {"s": s, "direct": sc["direct"], "reduced": sc["reduced"],
                 "abs_diff": abs(sc["direct"] - sc["reduced"]),
                 "equal": abs(sc["direct"] - sc["reduced"]) <= 1e-12 * sc["direct"]})
            ok &= res["scale_equality"][-1]["equal"]
    return res, bool(ok)


def cmd_survival(args, out):
    from . import laminations, scaling
    from .leafed import LeafedLaw
    law = _law(args)
    x0 = None if isinstance(law, LeafedLaw) else _multitype(law, args)
    ref = scaling.survival_reference(law, x0)
    if _is_lamination(law) and x0 == 4 and len(args.n) >= 2:
        rep = scaling.survival_constant_report(
            law, x0, args.n, args.R, args.seed,
            {"2b4/eta2": laminations.SURVIVAL_LIMIT, "2/eta2": laminations.SURVIVAL_ALT},
            exact=laminations.survival_exact(args.n))
        return rep, rep["pass"]
    rows = [scaling.survival_estimate(law, n, args.R, args.seed, x0=x0, reference=ref,
                                      rel_tol=args.rel_tol).to_dict() for n in args.n]
    return {"x0": x0, "reference": ref, "estimates": rows}, all(r["pass"] for r in rows)


def _type_set(text):
    out = set()
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.update(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.add(int(part))
    return sorted(out)


def cmd_drift_check(args, out):
    from . import spectral
    law = _law(args)
    x0 = _multitype(law, args)
    lo, hi = args.range
    types = spectral.retained_types(law, x0, hi - x0 + 1 + args.headroom)
    mm = spectral.mean_matrix(law, types)
    # a underflows far out in the window; b and p are what the check needs
    eig = spectral.solve_eigenvectors(mm.M, allow_underflow=True)
    ker = spectral.spine_kernel(mm.M, eig.b)
    rep = spectral.drift_check(ker.p, types, args.beta, args.beta_margin, _type_set(args.C),
                               lo, hi, b=eig.b)
    res = rep.to_dict()
    res.update({"window": [int(types[0]), int(types[-1])], "eigenvalue": eig.eigenvalue})
    return res, rep.passed


def cmd_laminations(args, out):
    from .laminations import reproduce_section5
    rep = reproduce_section5(args.n, args.R, args.seed, args.K, survival_n=args.survival_n)
    rep.pop("runtime", None)
    ok = rep["spectral"]["pass"] and rep["expected_Zn_pass"]
    if args.require_survival:
        ok = ok and rep["survival"]["pass"]
    rep["pass"] = bool(ok)
    return rep, bool(ok)


# ---------------------------------------------------------------- parser

def _common(p, law="builtin:lamination", seed_required=True, x0=True):
    p.add_argument("--law", default=law, help="builtin:<name> or file:<path.json>")
    if x0:
        p.add_argument("--x0", type=int, default=None, help="distinguished/root type")
    if seed_required:
        p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or .)")
    p.add_argument("--report", default=None, help="report file name")
    p.add_argument("--threads", type=int, default=None, help="worker cap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gwforest", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gwforest {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-leafed", help="sample a leafed forest")
    _common(p, law="builtin:geometric", x0=False)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--hard-cap", type=int, default=10**8)
    p.add_argument("--param-samples", type=int, default=10**5)
    p.add_argument("--csv", action="store_true", help="write forest and trace CSVs")
    p.set_defaults(func=cmd_sample_leafed)

    p = sub.add_parser("sample-multitype", help="sample a multitype forest")
    _common(p)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--hard-cap", type=int, default=10**8)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_sample_multitype)

    p = sub.add_parser("reduce", help="sample, reduce and check height preservation")
    _common(p)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--hard-cap", type=int, default=10**7)
    p.add_argument("--verify-prop1", action="store_true")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("spectral", help="mean matrix, eigenvectors, eta^2 and spine kernel")
    _common(p, seed_required=False)
    p.add_argument("--seed", type=int, default=None, help="required in mc mode")
    p.add_argument("--K", type=int, default=60)
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--criticality-tol", type=float, default=1e-6)
    p.add_argument("--double-check", action="store_true", help="compare with K doubled")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("verify-mto", help="dual simulation of a many-to-one identity")
    _common(p)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--R", type=int, default=10**5)
    p.add_argument("--K", type=int, default=60)
    p.add_argument("--functional", choices=("one", "first-return"), default="one")
    p.add_argument("--z-threshold", type=float, default=3.0)
    p.set_defaults(func=cmd_verify_mto)

    p = sub.add_parser("verify-scaling", help="half-normal marginals and coupling trends")
    _common(p)
    p.add_argument("--test", choices=("marginal", "closeness", "hypothesis"), default="marginal")
    p.add_argument("--n", type=int, default=10**4)
    p.add_argument("--s", type=float, nargs="+", default=[1.0])
    p.add_argument("--R", type=int, default=2000)
    p.add_argument("--route", choices=("direct", "reduced", "both"), default="both")
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--lanes", type=int, default=500)
    p.add_argument("--scale-factor", type=float, default=1.0, help="power self-test multiplier")
    p.add_argument("--n-small", type=int, default=10**3)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--min-runs", type=int, default=8)
    p.add_argument("--mu-factor", type=float, default=1.0)
    p.add_argument("--y-max", type=float, default=100.0)
    p.add_argument("--y-points", type=int, default=12)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_verify_scaling)

    p = sub.add_parser("survival", help="n P(h_max >= n) against its limit")
    _common(p)
    p.add_argument("--n", type=int, nargs="+", default=[200])
    p.add_argument("--R", type=int, default=5 * 10**5)
    p.add_argument("--rel-tol", type=float, default=0.1)
    p.set_defaults(func=cmd_survival)

    p = sub.add_parser("drift-check", help="geometric drift of the spine kernel")
    _common(p, seed_required=False)
    p.add_argument("--beta", type=float, default=1.5)
    p.add_argument("--beta-margin", type=float, default=0.1)
    p.add_argument("--C", default="4-9", help="finite set, e.g. 4-9 or 4,5,7")
    p.add_argument("--range", type=int, nargs=2, default=[10, 500], metavar=("LO", "HI"))
    p.add_argument("--headroom", type=int, default=60)
    p.set_defaults(func=cmd_drift_check)

    p = sub.add_parser("laminations", help="closed forms, exact chain and survival constant")
    p.add_argument("--n", type=int, nargs="+", default=[50, 100])
    p.add_argument("--K", type=int, default=60)
    p.add_argument("--R", type=int, default=10**5)
    p.add_argument("--survival-n", type=int, nargs="+", default=[100, 200, 400])
    p.add_argument("--require-survival", action="store_true",
                   help="fail unless the survival constant is decided")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_laminations)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_ERROR if e.code else EXIT_PASS
    seeding.set_default_threads(args.threads)
    t0 = time.perf_counter()
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        out = _out_dir(args)
        result, passed = args.func(args, out)
        report = {"command": args.command, "config": _config(args), "seed": getattr(args, "seed", None),
                  "version": __version__, "pass": bool(passed), "result": result}
        name = args.report or f"{args.command}.json"
        path = os.path.join(out, name)
        with open(path, "w") as fh:
            fh.write(_dumps(report))
        meta = {"report": name, "started": started, "runtime_s": time.perf_counter() - t0,
                "threads": seeding.default_threads(), "argv": list(sys.argv[1:] if argv is None else argv)}
        with open(os.path.splitext(path)[0] + ".meta.json", "w") as fh:
            fh.write(_dumps(meta))
    except UsageError as err:
        print(f"gwforest: usage error: {err}", file=sys.stderr)
        return EXIT_ERROR
    except (GWError, ValueError, TypeError, KeyError, OSError) as err:
        print(f"gwforest: error [{_provenance(err)}]: {err}", file=sys.stderr)
        return EXIT_ERROR
    finally:
        seeding.set_default_threads(None)
    status = "PASS" if passed else "FAIL"
    print(f"{args.command}: {status} ({path})")
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
