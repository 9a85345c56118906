"""Command-line front end: ``specstab {describe,verify,stein,pushforward,sweep}``.

Exit codes: 0 pass (or success), 1 certificate failure, 2 usage, input or
parameter error, 3 certificate not applicable.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .branch import decompose
from .candidate import candidate_from_model, read_candidate_csv
from .exceptions import SpecstabError
from .models import FAMILIES, make_model
from .orthopoly import gegenbauer_rescale_factor
from .pushforward import mu_star, nu_star
from .stability import (TOL_IPP, TOL_LEMMA, TOL_MAIN, TOL_NORMALIZATION, StabilityReport, certify,
                        cubic_violation, tilt_family)
from .stein import interior_grid, solve_stein, stein_constant

EXIT_OK, EXIT_FAIL, EXIT_ERROR, EXIT_NA = 0, 1, 2, 3

TEST_FUNCTIONS = {"t": lambda t: np.asarray(t, dtype=float), "sin": np.sin}


# -- serialization -------------------------------------------------------------------

def _encode(obj):
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)   # "inf", "-inf", "nan"
    return obj


def _decode_value(obj):
    if isinstance(obj, dict):
        return {k: _decode_value(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_value(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def dumps(obj) -> str:
    """JSON with sorted keys; floats as their shortest round-trip repr, non-finite ones as strings."""
    return json.dumps(_encode(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def report_to_json(report: StabilityReport) -> str:
    return dumps(report.to_dict())


def report_from_json(text: str) -> StabilityReport:
    return StabilityReport.from_dict(_decode_value(json.loads(text)))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else "%.17g" % v for v in row])
    return buf.getvalue()


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


# -- commands -----------------------------------------------------------------------------

def _model(args):
    return make_model(args.family, s=args.s, theta=args.theta, N=args.bigN)


def cmd_describe(args) -> int:
    model = _model(args)
    dec = decompose(model, args.k)
    branches = []
    for br in dec.branches:
        rates = br.endpoint_rates()
        branches.append({
            "index": br.index, "J": list(br.J), "I": list(br.I), "mu_mass": br.mu_mass,
            "rates": [{"side": r.side, "endpoint": r.value, "kind": r.kind, "exponent": r.exponent} for r in rates],
            "admissible": all(r.ok for r in rates),
        })
    info = {"model": model.ident, "params": model.params(), "k": args.k,
            "eigenvalues": [model.eigenvalue(i) for i in range(1, args.k + 1)],
            "critical_points": dec.crit.tolist(), "branches": branches, "assumption": dec.assumption_holds}
    if model.family == "beta":
        info["gegenbauer_rescale"] = [gegenbauer_rescale_factor(model.N, i) for i in range(1, args.k + 1)]
    if args.format == "json":
        _emit(dumps(info), args.out)
        return EXIT_OK
    lines = [f"model        {model.ident}", f"k            {args.k}",
             "eigenvalues  " + " ".join(f"{v:.12g}" for v in info["eigenvalues"]),
             "critical     " + (" ".join(f"{c:.12g}" for c in info["critical_points"]) or "none"),
             f"branches     {len(branches)}"]
    for b in branches:
        rate_txt = "; ".join(f"{r['side']}: {r['kind']} (exponent {r['exponent']:.4g})" for r in b["rates"])
        lines.append(f"  [{b['index']}] J=({b['J'][0]:.6g}, {b['J'][1]:.6g}) I=({b['I'][0]:.6g}, {b['I'][1]:.6g}) "
                     f"mu(J)={b['mu_mass']:.6g}  {rate_txt}")
    if "gegenbauer_rescale" in info:
        lines.append("rescale      " + " ".join(f"{v:.12g}" for v in info["gegenbauer_rescale"]))
    lines.append("assumption   " + ("holds" if info["assumption"] else "violated"))
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _overrides(args):
    if args.inject_branch is None:
        return None
    return {0: cubic_violation(0)}


def _plot_path(out, suffix):
    p = Path(out)
    return p.with_name(f"{p.stem}.{suffix}.csv")


def _emit_branch_cdfs(model, k, candidate, out):
    rows = []
    lam = model.eigenvalue(k)
    for br in decompose(model, k).branches:
        law = mu_star(br, lam)
        _, pushed = nu_star(candidate, br)
        t = interior_grid(law, 200, 1e-4, 1 - 1e-4)
        cnu = pushed.cdf(t) if pushed is not None else np.full(t.shape, math.nan)
        rows.extend((br.index, ti, a, b) for ti, a, b in zip(t, law.cdf(t), cnu))
    _emit(_csv_text(["branch", "t", "cdf_mu_star", "cdf_nu_star"], rows), _plot_path(out, "branches"))


def _tolerances(args) -> dict:
    return dict(tol_normalization=args.tol_normalization, tol_lemma=args.tol_lemma, tol_ipp=args.tol_ipp,
                tol_main=args.tol_main)


def cmd_verify(args) -> int:
    model = _model(args)
    candidate = read_candidate_csv(args.input, model)
    report = certify(candidate, model, args.k, normalize=args.auto_normalize, overrides=_overrides(args),
                     **_tolerances(args))
    _emit(report_to_json(report), args.out)
    if args.emit_plot_data and args.out and report.status != "not-applicable":
        _emit_branch_cdfs(model, args.k, candidate, args.out)
    return {"pass": EXIT_OK, "fail": EXIT_FAIL, "not-applicable": EXIT_NA}[report.status]


def cmd_stein(args) -> int:
    model = _model(args)
    lam = model.eigenvalue(args.k)
    g = TEST_FUNCTIONS[args.g]
    rows = []
    for br in decompose(model, args.k).branches:
        law = mu_star(br, lam)
        sol = solve_stein(br, law, lam, g)
        const = stein_constant(br, law, lam).value
        t, psi, dpsi, res = sol.table(interior_grid(law, args.n))
        rows.extend((br.index, *vals, const) for vals in zip(t, psi, dpsi, res))
    _emit(_csv_text(["branch", "t", "psi", "dpsi", "residual", "stein_constant"], rows), args.out)
    return EXIT_OK


def cmd_pushforward(args) -> int:
    model = _model(args)
    lam = model.eigenvalue(args.k)
    rows = []
    for br in decompose(model, args.k).branches:
        law = mu_star(br, lam)
        t = interior_grid(law, args.n, 1e-6, 1 - 1e-6)
        rows.extend((br.index, br.mu_mass, *v) for v in zip(t, law.cdf(t), law.sf(t), law.density(t)))
    _emit(_csv_text(["branch", "mu_mass", "t", "cdf", "sf", "density"], rows), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    model = _model(args)
    base = read_candidate_csv(args.input, model) if args.input else candidate_from_model(model, args.n_elements)
    eps = [float(e) for e in args.eps.split(",")]
    rows, worst = [], EXIT_OK
    for e, nu in zip(eps, tilt_family(base, model, args.k, eps, seed=args.seed)):
        rep = certify(nu, model, args.k, normalize=args.auto_normalize, **_tolerances(args))
        code = {"pass": EXIT_OK, "fail": EXIT_FAIL, "not-applicable": EXIT_NA}[rep.status]
        worst = max(worst, code)
        rhs = rep.C * rep.main_bracket if rep.C is not None else math.nan
        lhs = rep.main_lhs if rep.main_lhs is not None else math.nan
        rows.append((e, rep.status, lhs, rhs, rep.main_bracket, rep.C if rep.C is not None else math.nan,
                     rep.lemma_lhs, rep.lemma_rhs))
    text = _csv_text(["eps", "status", "main_lhs", "main_rhs", "bracket", "C", "lemma_lhs", "lemma_rhs"], rows)
    _emit(text, args.out)
    if args.emit_plot_data and args.out:
        _emit(_csv_text(["eps", "main_lhs", "main_rhs"], [(r[0], r[2], r[3]) for r in rows]),
              _plot_path(args.out, "curve"))
    return worst


# -- parser -------------------------------------------------------------------------------

def _positive(text):
    v = float(text)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _index(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"k must be >= 1, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specstab", description="Spectral stability certificates for "
                                     "gaussian, gamma and beta diffusion models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--family", choices=FAMILIES, default="gaussian")
    common.add_argument("--s", type=_positive, default=1.0, help="gamma shape")
    common.add_argument("--theta", type=_positive, default=1.0, help="gamma scale")
    common.add_argument("--bigN", type=_positive, default=3.0, help="beta dimension parameter N")
    common.add_argument("--k", type=_index, default=1, help="eigenfunction index")
    common.add_argument("--out", help="output file (default: stdout)")
    tols = argparse.ArgumentParser(add_help=False)
    tols.add_argument("--tol-normalization", type=_positive, default=TOL_NORMALIZATION)
    tols.add_argument("--tol-lemma", type=_positive, default=TOL_LEMMA)
    tols.add_argument("--tol-ipp", type=_positive, default=TOL_IPP)
    tols.add_argument("--tol-main", type=_positive, default=TOL_MAIN, help="relative to C")
    tols.add_argument("--auto-normalize", action="store_true",
                      help="reweight a candidate that narrowly fails the normalization check")
    tols.add_argument("--emit-plot-data", action="store_true", help="write extra CSV next to --out")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", parents=[common], help="eigenvalues, critical points and branches")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("verify", parents=[common, tols], help="stability report for a candidate CSV")
    p.add_argument("--input", required=True, help="candidate CSV with header x,density")
    p.add_argument("--inject-branch", choices=("cubic",),
                   help="replace branch 0 by a synthetic branch violating the growth assumption")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stein", parents=[common], help="Stein solutions on every branch (CSV)")
    p.add_argument("--g", choices=sorted(TEST_FUNCTIONS), default="t")
    p.add_argument("--n", type=int, default=200, help="grid points per branch")
    p.set_defaults(func=cmd_stein)

    p = sub.add_parser("pushforward", parents=[common], help="pushforward laws on every branch (CSV)")
    p.add_argument("--n", type=int, default=200, help="grid points per branch")
    p.set_defaults(func=cmd_pushforward)

    p = sub.add_parser("sweep", parents=[common, tols], help="certificate along a tilt family (CSV)")
    p.add_argument("--input", help="base candidate CSV (default: mu on a grid)")
    p.add_argument("--eps", default="0.01,0.02,0.05", help="comma-separated tilt strengths")
    p.add_argument("--n-elements", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    try:
        return args.func(args)
    except (SpecstabError, OSError, ValueError) as exc:
        print(f"specstab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
