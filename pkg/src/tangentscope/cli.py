"""Command line entry point.

Every run writes its artifacts into ``--out`` together with ``run.json``, the
canonical argument list of the run.  ``--config run.json`` replays a run; the
artifacts are byte-identical because nothing time- or path-dependent is
written and all sampling goes through the seeded generators.

Exit status: 0 on success, 1 on input errors, 2 when a construction refuses
(the diagnostic is written to ``refusal.json`` and echoed on stderr).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .circle import ArcSet, GridFunction, lp_norm
from .counterexamples import (DEFAULT_SEED, ConstructionRefused, alternating_set, blaschke_product,
                              l1_divergent_function, littlewood_set)
from .dyadic import (DEFAULT_RESOLUTION_CAP, DyadicRect, DyadicStep2D, RareSequence, RectBasis, lemma_L4_function,
                     quasi_cover_check, saks_function, tx2_cover, verify_L4, verify_saks,
                     validate_quasi_certificate)
from .kernels import kernel_from_spec
from .operators import (convolve_at_eps, curve_oscillation, hl_maximal, lambda_maximal, preset,
                        weak_type_check)
from .regions import carlsson_bound, curve_from_spec, pi_infty, pi_p, pi_plain, pi_star, r_string

# flags that never enter run.json: they name where to write, not what to compute
_PLUMBING = ("out", "config")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# serialisation helpers


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, DyadicRect):
        return {"i": obj.i, "j": obj.j, "m1": obj.m1, "m2": obj.m2}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n")


def _quantiles(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {f"q{int(q * 100):02d}": float(np.quantile(a, q)) for q in (0.0, 0.1, 0.5, 0.9, 1.0)}


def _rect(text: str) -> DyadicRect:
    try:
        parts = [int(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"--rect expects i,j,m1,m2 integers, got {text!r}") from None
    if len(parts) != 4:
        raise InputError(f"--rect expects i,j,m1,m2, got {text!r}")
    R = DyadicRect(*parts)
    if not (1 <= R.i <= (1 << R.m1) and 1 <= R.j <= (1 << R.m2)):
        raise InputError(f"--rect {text!r} does not lie in the unit square")
    return R


def _square(text: str) -> DyadicRect:
    try:
        i, j, m = (int(t) for t in text.split(","))
    except ValueError:
        raise InputError(f"--Q expects i,j,m integers, got {text!r}") from None
    if not (1 <= i <= (1 << m) and 1 <= j <= (1 << m)):
        raise InputError(f"--Q {text!r} does not lie in the unit square")
    return DyadicRect(i, j, m, m)


def _delta(text: str) -> RareSequence:
    try:
        return RareSequence.parse(text)
    except ValueError as exc:
        raise InputError(f"--delta {text!r}: {exc}") from None


def _basis(text: str) -> RectBasis:
    if text in ("all_dyadic", "all"):
        return RectBasis.all_dyadic()
    if text == "squares":
        return RectBasis.squares()
    if text.startswith("rare:"):
        return RectBasis.rare(_delta(text[len("rare:"):]))
    raise InputError(f"unknown basis {text!r} (all_dyadic, squares, rare:<n1,n2,...>)")


def _kernel(args):
    try:
        return kernel_from_spec(args.kernel)
    except (ValueError, OSError) as exc:
        raise InputError(f"--kernel: {exc}") from None


def _curve(args):
    try:
        return curve_from_spec(args.curve)
    except (ValueError, OSError) as exc:
        raise InputError(f"--curve: {exc}") from None


def _function(args) -> GridFunction:
    if args.f is not None:
        try:
            f = GridFunction.from_csv(args.f)
        except (ValueError, OSError) as exc:
            raise InputError(f"--f: {exc}") from None
        if args.grid is not None and f.n_samples != args.grid:
            raise InputError(f"--f has {f.n_samples} samples but --grid {args.grid}")
        return f
    try:
        return preset(args.preset, args.grid or 4096, p=args.p)
    except ValueError as exc:
        raise InputError(f"--preset: {exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_pi(args, out: Path) -> dict:
    kernel, curve = _kernel(args), _curve(args)
    if args.rmax_exponent < 1:
        raise InputError("--rmax-exponent must be at least 1")
    eps = 2.0 ** -np.arange(1, args.rmax_exponent + 1)
    fn = args.functional
    if fn in ("p", "tilde-p", "carlsson") and args.p < 1:
        raise InputError("--p must be at least 1")
    rows = []
    if fn in ("infty", "star"):
        deltas = 2.0 ** -np.arange(1, args.delta_exponent + 1)
        tab = (pi_infty if fn == "infty" else pi_star)(kernel, curve, delta_sequence=deltas, eps_sequence=eps)
        for d, e, v in tab.rows():
            rows.append((repr(d), r_string(e), repr(v)))
        summary = {"estimate": tab.estimate, "statistic": tab.statistic, "deltas": tab.deltas,
                   "last_delta_trend": tab.per_delta[-1].trend if tab.per_delta[-1] else None}
    else:
        if fn == "plain":
            est = pi_plain(kernel, curve, eps_sequence=eps)
        elif fn in ("p", "tilde-p"):
            est = pi_p(kernel, curve, args.p, mode="sup" if fn == "tilde-p" else "limsup", eps_sequence=eps)
        else:
            est = carlsson_bound(kernel, curve, args.p, eps_sequence=eps)
        for e, v in zip(est.eps_values, est.samples):
            rows.append(("", r_string(e), repr(v)))
        summary = {"tail_max": est.tail_max, "tail_min": est.tail_min, "trend": est.trend, "sup": est.sup}
    with open(out / "table.csv", "w") as fh:
        fh.write("delta,r,value\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    summary.update({"functional": fn, "kernel": args.kernel, "curve": args.curve, "p": args.p,
                    "r_sequence": [r_string(e) for e in eps]})
    _write_json(out / "summary.json", summary)
    return summary


def _eps_window(args):
    if not 1 <= args.kmin <= args.kmax:
        raise InputError("need 1 <= --kmin <= --kmax")
    return 2.0 ** -np.arange(args.kmin, args.kmax + 1)


def cmd_converge(args, out: Path) -> dict:
    kernel, curve, f = _kernel(args), _curve(args), _function(args)
    e = 2.0 ** -args.kmax
    lam = float(curve.at_eps(e))
    th = f.theta
    vals = np.asarray(convolve_at_eps(kernel, e, f, th + args.side * lam))
    g = GridFunction(vals)
    g.to_csv(out / "converge.csv")
    err = np.abs(vals - f.samples)
    summary = {"r": r_string(e), "eps": e, "lambda": lam, "side": args.side, "N": f.n_samples,
               "max_error": float(err.max()), "error_quantiles": _quantiles(err)}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_maximal(args, out: Path) -> dict:
    kernel, curve, f = _kernel(args), _curve(args), _function(args)
    eps = _eps_window(args)
    rep = lambda_maximal(kernel, curve, f, eps_set=eps)
    rep.values.to_csv(out / "maximal.csv")
    C, t = weak_type_check(rep, f, args.p, list(rep.level_set_measures))
    mf = hl_maximal(GridFunction(np.abs(f.samples) ** args.p)).samples ** (1.0 / args.p)
    v = rep.values.samples
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mf > 0, v / mf, np.where(v > 0, np.inf, 0.0))
    summary = {"best_constant": C, "witness_t": t, "max_ratio": float(np.max(ratio)), "p": args.p,
               "N": f.n_samples, "r_sequence": [r_string(e) for e in eps], "lp_norm": lp_norm(f, args.p),
               "notes": rep.notes}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_osc(args, out: Path) -> dict:
    kernel, curve, f = _kernel(args), _curve(args), _function(args)
    eps = _eps_window(args)
    n = args.samples
    if n < 2:
        raise InputError("--samples must be at least 2")
    xs = 2.0 * math.pi * np.arange(n) / n
    osc = curve_oscillation(kernel, curve, f, xs, None, eps_window=eps)
    GridFunction(osc).to_csv(out / "osc.csv")
    summary = {"oscillation_quantiles": _quantiles(osc), "N": f.n_samples, "samples": n,
               "r_sequence": [r_string(e) for e in eps]}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_counterexample(args, out: Path) -> dict:
    kernel, curve = _kernel(args), _curve(args)
    if args.depth < 1:
        raise InputError("--depth must be at least 1")
    N = args.grid or 4096
    kind = args.kind
    common = dict(N=N, seed=args.seed)
    if args.samples is not None:
        common["samples"] = args.samples
    data = {"constructor": kind, "kernel": args.kernel, "curve": args.curve, "depth": args.depth, "N": N,
            "seed": args.seed}
    E = None
    if kind == "littlewood":
        b = littlewood_set(kernel, curve, args.depth, **common)
        data.update(pi_star_estimate=b.pi_star_estimate, stages=[s.as_dict() for s in b.stages],
                    witnesses=[w.as_dict() for w in b.witnesses], continuity_surrogate=b.continuity_surrogate,
                    oscillation=_quantiles(b.oscillation), fraction_at_least_half=b.fraction_at_least(0.5),
                    layers=b.layers.describe())
        E = b.layers
    elif kind == "alternating":
        b = alternating_set(kernel, curve, args.depth, **common)
        data.update(pi_infty_estimate=b.pi_infty_estimate, stages=[s.as_dict() for s in b.stages],
                    stage_bounds=b.bounds(), perturbation=b.perturbation,
                    oscillation=[_quantiles(b.oscillation[:, k]) for k in range(b.depth)],
                    certified=[_quantiles(b.certified()[:, k]) for k in range(b.depth)],
                    layers=b.layers.describe())
        E = b.layers
    elif kind == "l1div":
        b = l1_divergent_function(kernel, curve, args.depth, **common)
        data.update(stages=[s.as_dict() for s in b.stages], witnesses=[w.as_dict() for w in b.witnesses],
                    l1_norm=b.l1_norm(), values=[_quantiles(b.values[:, k]) for k in range(b.depth)])
        fa = b.f_arcs
        with open(out / "f_arcs.csv", "w") as fh:
            fh.write("start,end,weight\n")
            for a, c, w in zip(fa.starts, fa.ends, fa.weights):
                fh.write(f"{a!r},{c!r},{w!r}\n")
        b.f.to_csv(out / "f.csv")
        E = ArcSet.from_arrays(fa.starts, fa.ends)
    else:
        b = blaschke_product(kernel, curve, args.depth, **common)
        data.update(pi_star_estimate=b.pi_star_estimate, stages=[s.as_dict() for s in b.stages],
                    factors=[{"n": n, "delta": d} for n, d in b.spec.factors],
                    witnesses=[w.as_dict() for w in b.witnesses],
                    differences=[_quantiles(b.differences[:, k]) for k in range(b.depth)],
                    fraction_at_least_half=b.fraction_at_least(0.5))
        b.boundary.to_csv(out / "blaschke.csv")
    if E is not None:
        try:
            arcs = E if isinstance(E, ArcSet) else E.arcset()
            arcs.to_csv(out / "E.csv")
            data["E_materialised"] = True
        except MemoryError as exc:
            data["E_materialised"] = False
            data["E_note"] = str(exc)
    _write_json(out / "stages.json", data)
    return data


def cmd_dyadic_l4(args, out: Path) -> dict:
    Q = _square(args.Q)
    if args.L < 2:
        raise InputError("--L must be at least 2")
    try:
        b = lemma_L4_function(args.L, Q, resolution_cap=args.cap)
    except ValueError as exc:
        raise ConstructionRefused(str(exc), {"constructor": "l4", "reason": "resolution_budget",
                                             "cap": args.cap}) from None
    rep = verify_L4(b, samples=args.samples, seed=args.seed)
    # cell averages at the template resolution: the nested copies average to zero on every child square
    s = Q.m1 + b.n
    flat_cells = {}
    side = 1 << b.n
    for a in range(side):
        for c in range(side):
            R = DyadicRect((Q.i - 1) * side + a + 1, (Q.j - 1) * side + c + 1, s, s)
            v = b.f.average(R)
            if v:
                flat_cells[((Q.i - 1) * side + a, (Q.j - 1) * side + c)] = v
    DyadicStep2D(s, flat_cells).to_csv(out / "f.csv")
    tree = {"L": b.L, "n": b.n, "alpha": b.alpha, "beta": b.beta, "m": b.m, "Q": Q,
            "levels": [{"level": p, "own": f"u(., {b.n})" if p <= b.m else f"{b.beta} v",
                        "children": [[a, c] for a, c, *_ in node.children], "child_exponent": b.n}
                       for p, node in enumerate(b.nodes, start=1)]}
    _write_json(out / "tree.json", tree)
    wit = {"conclusions": rep.conclusions, "sup_norm": rep.sup_norm, "support_measure": rep.support_measure,
           "support_wd_exponent": rep.support_wd_exponent, "min_witness_average": rep.min_witness_average,
           "coverage": rep.coverage, "exterior_samples": rep.exterior_samples,
           "templates": [{"level": w.level, "cell": list(w.cell), "rect": w.rect, "average": w.average,
                          "wd_exponent": w.wd_exponent} for w in b.template_witnesses()]}
    _write_json(out / "witnesses.json", wit)
    return {"ok": rep.ok, "conclusions": rep.conclusions, "sup_norm": rep.sup_norm,
            "support_measure": rep.support_measure}


def cmd_dyadic_saks(args, out: Path) -> dict:
    delta = _delta(args.delta)
    if args.K < 1:
        raise InputError("--K must be at least 1")
    try:
        sb = saks_function(delta, args.K, resolution_cap=args.cap)
    except ValueError as exc:
        raise ConstructionRefused(str(exc), {"constructor": "saks", "reason": "schedule_infeasible",
                                             "delta": list(delta.nus), "K": args.K}) from None
    rep = verify_saks(sb, samples=args.samples, seed=args.seed)
    data = {"delta": list(delta.nus), "gamma": delta.gamma, "K": args.K,
            "stages": [{"k": s.k, "L": s.L, "l": s.l, "nu_p": delta.nus[s.p], "nu_p_next": delta.nus[s.p + 1],
                        "alpha": s.alpha, "beta": s.beta} for s in sb.stages],
            "sup_norms": [[a, b] for a, b in rep.sup_norms], "l1_norm": rep.l1_norm,
            "zero_integrals": rep.zero_integrals, "min_witness_ratio": rep.min_witness_ratio,
            "stabilization": rep.stabilization_ok, "ok": rep.ok}
    _write_json(out / "saks.json", data)
    return data


def cmd_dyadic_cover(args, out: Path) -> dict:
    delta = _delta(args.delta)
    R = _rect(args.rect)
    try:
        res = tx2_cover(R, delta)
    except ValueError as exc:
        raise InputError(f"--rect: {exc}") from None
    data = {"R_prime": R, "R_doubleprime": res.R_doubleprime, "ratio": res.ratio, "gamma": res.gamma,
            "bound": Fraction(1, 4 ** res.gamma), "ok": res.ok}
    _write_json(out / "cover.json", data)
    return data


def cmd_dyadic_quasi(args, out: Path) -> dict:
    R = _rect(args.rect)
    B1, M = _basis(args.b1), _basis(args.m)
    try:
        c = Fraction(args.c)
    except ValueError:
        raise InputError(f"--c {args.c!r} is not a number") from None
    if c < 1:
        raise InputError("--c must be at least 1")
    res = quasi_cover_check(R, B1, M, c, args.search_resolution)
    data = {"R": R, "B1": B1.describe(), "M": M.describe(), "c": c, "status": res.status,
            "searched": res.searched, "reason": res.reason}
    if res.certificate is not None:
        cert = res.certificate
        data["certificate"] = {"R_prime": cert.R_prime, "pieces": list(cert.pieces),
                               "validated": validate_quasi_certificate(cert, B1, M)}
    _write_json(out / "quasi.json", data)
    return data


# ---------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)


def _add_analysis(p):
    p.add_argument("--kernel", default="poisson")
    p.add_argument("--curve", default="nontangential:c=1")
    p.add_argument("--grid", type=int, default=None, help="grid size N")


def _add_function(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--f", default=None, help="GridFunction CSV")
    src.add_argument("--preset", default="step", choices=["const", "step", "cos", "bump", "power"])
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=14)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tangentscope", description="Approximate identities, approach regions and dyadic bases.")
    parser.add_argument("--version", action="version", version=f"tangentscope {__version__}")
    parser.add_argument("--config", default=None, help="replay the run described by a run.json")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("pi", help="region functionals")
    p.add_argument("--functional", required=True, choices=["plain", "p", "tilde-p", "infty", "star", "carlsson"])
    _add_analysis(p)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--rmax-exponent", type=int, default=20)
    p.add_argument("--delta-exponent", type=int, default=10)
    _add_common(p)
    p.set_defaults(handler=cmd_pi)

    for name, fn in (("converge", cmd_converge), ("maximal", cmd_maximal), ("osc", cmd_osc)):
        p = sub.add_parser(name)
        _add_analysis(p)
        _add_function(p)
        if name == "converge":
            p.add_argument("--side", type=float, default=1.0, help="multiple of lambda(r) added to the grid point")
        if name == "osc":
            p.add_argument("--samples", type=int, default=64)
        _add_common(p)
        p.set_defaults(handler=fn)

    p = sub.add_parser("counterexample")
    p.add_argument("kind", choices=["littlewood", "alternating", "l1div", "blaschke"])
    _add_analysis(p)
    p.set_defaults(curve="power:alpha=0.5")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--samples", type=int, default=None)
    _add_common(p)
    p.set_defaults(handler=cmd_counterexample)

    p = sub.add_parser("dyadic")
    dsub = p.add_subparsers(dest="dyadic_command", required=True, parser_class=_Parser)
    q = dsub.add_parser("l4")
    q.add_argument("--L", type=int, default=2)
    q.add_argument("--Q", default="1,1,0", help="dyadic square as i,j,m")
    q.add_argument("--cap", type=int, default=DEFAULT_RESOLUTION_CAP)
    q.add_argument("--samples", type=int, default=100)
    _add_common(q)
    q.set_defaults(handler=cmd_dyadic_l4)
    q = dsub.add_parser("saks")
    q.add_argument("--delta", default="1,2,3,100")
    q.add_argument("--K", type=int, default=1)
    q.add_argument("--cap", type=int, default=DEFAULT_RESOLUTION_CAP)
    q.add_argument("--samples", type=int, default=50)
    _add_common(q)
    q.set_defaults(handler=cmd_dyadic_saks)
    q = dsub.add_parser("cover")
    q.add_argument("--delta", required=True)
    q.add_argument("--rect", required=True, help="i,j,m1,m2")
    _add_common(q)
    q.set_defaults(handler=cmd_dyadic_cover)
    q = dsub.add_parser("quasi")
    q.add_argument("--rect", required=True, help="i,j,m1,m2")
    q.add_argument("--b1", required=True, help="all_dyadic | squares | rare:<n1,n2,...>")
    q.add_argument("--m", default="all_dyadic")
    q.add_argument("--c", default="1")
    q.add_argument("--search-resolution", type=int, default=None)
    _add_common(q)
    q.set_defaults(handler=cmd_dyadic_quasi)
    return parser


def _canonical_argv(parser, args) -> list:
    """Subcommand path plus every non-plumbing option, sorted, so a replay rebuilds the same namespace."""
    argv = [args.command]
    if args.command == "dyadic":
        argv.append(args.dyadic_command)
    if args.command == "counterexample":
        argv.append(args.kind)
    opts = {}
    for k, v in sorted(vars(args).items()):
        if k in _PLUMBING or k in ("handler", "command", "dyadic_command", "kind") or v is None:
            continue
        if k == "preset" and getattr(args, "f", None) is not None:
            continue
        opts[k] = v
    for k, v in opts.items():
        argv += ["--" + k.replace("_", "-"), str(v)]
    return argv


def _replay_argv(config_path: str, out: str | None) -> list:
    try:
        cfg = json.loads(Path(config_path).read_text())
        argv = list(cfg["argv"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InputError(f"--config {config_path}: {exc}") from None
    return argv + (["--out", out] if out else [])


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if "--config" in argv:
            i = argv.index("--config")
            if i + 1 >= len(argv):
                raise InputError("--config needs a path")
            cfg_path = argv[i + 1]
            rest = argv[:i] + argv[i + 2:]
            out = None
            if "--out" in rest:
                j = rest.index("--out")
                out = rest[j + 1] if j + 1 < len(rest) else None
            argv = _replay_argv(cfg_path, out)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            # argparse exits on --help/--version (0) and on usage errors (1)
            return int(exc.code or 0)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        run = {"argv": _canonical_argv(parser, args), "version": __version__}
        _write_json(out / "run.json", run)
        summary = args.handler(args, out)
    except InputError as exc:
        print(f"tangentscope: error: {exc}", file=sys.stderr)
        return 1
    except ConstructionRefused as exc:
        print(f"tangentscope: construction refused: {exc}", file=sys.stderr)
        print(json.dumps(_jsonable(exc.diagnostic), sort_keys=True), file=sys.stderr)
        _write_json(out / "refusal.json", {"message": str(exc), "diagnostic": exc.diagnostic})
        return 2
    print(json.dumps(_jsonable(summary), sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
