"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error, 3 certificate refused.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import reports
from .applications import PipelineConfig, run_demo, run_pipeline
from .bounds import MODES, RiskQuery, epsilon_bar
from .certificate import fixed_projector_solution
from .errors import CertificateRefused, ScoutError
from .fixtures import FIXTURES, load_fixture
from .lyapunov import LyapunovProblem, gamma_star_fixed_P, max_violation, minimize_gamma, solve_free_P
from .sampling import (
    GeneratedObservations,
    StreamFile,
    default_threads,
    export_csv,
    import_csv,
    write_stream,
)
from .systems import GraphSpec, build_consensus, build_opinion, load_matrices_csv

log = logging.getLogger("subspace_scout")


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------------


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _writable(path):
    if path is None:
        return None
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _figdir(path):
    if path is None:
        return None
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _threads(args):
    return args.threads if args.threads else default_threads()


def _positive_int(text):
    v = int(float(text))
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _beta(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("beta must lie in (0, 1)")
    return v


def _system(args):
    chosen = [s for s in (args.fixture, args.graph, args.matrices) if s]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --fixture, --graph, --matrices")
    if args.fixture:
        if args.fixture not in FIXTURES:
            raise UsageError(f"unknown fixture {args.fixture!r}; choose from {sorted(FIXTURES)}")
        return load_fixture(args.fixture), {"fixture": args.fixture}
    if args.graph:
        spec = GraphSpec.load(_existing(args.graph))
        sys_ = build_opinion(spec) if spec.signed else build_consensus(spec)
        return sys_, {"graph": str(args.graph), "sha256": _sha256(args.graph)}
    return load_matrices_csv(_existing(args.matrices)), {"matrices": str(args.matrices),
                                                         "sha256": _sha256(args.matrices)}


def _add_system(p):
    p.add_argument("--fixture", help=f"built-in system: {', '.join(sorted(FIXTURES))}")
    p.add_argument("--graph", help="graph JSON (plain edges: consensus, signed edges: opinion)")
    p.add_argument("--matrices", help="CSV of Q*n rows holding the stacked mode matrices")


def _config_dict(args, skip=("func", "report", "figures", "config")):
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# -- subcommands -----------------------------------------------------------------------


def cmd_sample(args):
    sys_, source = _system(args)
    if args.n is not None and args.n != sys_.n:
        raise UsageError(f"--n {args.n} does not match the system dimension {sys_.n}")
    if not args.no_persist and not args.out:
        raise UsageError("--out is required unless --no-persist is given")
    out = _writable(args.out)
    obs = GeneratedObservations(sys_, args.num_samples, args.seed, retain_modes=args.retain_modes)
    rep = {"command": "sample", "config": _config_dict(args), "system": source, "n": sys_.n, "N": obs.N}
    if args.no_persist:
        stats = obs.map_blocks(lambda b: (float(np.einsum("ij,ij->", b.Y, b.Y)), len(b.Y)), _threads(args))
        rep["mean_sq_norm_y"] = sum(s for s, _ in stats) / obs.N
        rep["persisted"] = False
    elif out.suffix == ".csv":
        export_csv(obs, out)
        rep.update(persisted=True, out=str(out), format="csv", sha256=_sha256(out))
    else:
        write_stream(obs, out, args.seed)
        rep.update(persisted=True, out=str(out), format="binary", sha256=_sha256(out))
    rep["complete"] = True
    return rep, 0


def _load_samples(path):
    if path == "-":
        import tempfile

        with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as tmp:
            tmp.write(sys.stdin.read())
        obs, normalized = import_csv(tmp.name)
        Path(tmp.name).unlink()
        return obs, normalized, {"samples": "stdin"}
    p = _existing(path)
    prov = {"samples": str(p), "sha256": _sha256(p)}
    if p.suffix == ".csv":
        obs, normalized = import_csv(p)
        return obs, normalized, prov
    return StreamFile(p), False, prov


def cmd_solve(args):
    basis = np.loadtxt(_existing(args.fix_P), delimiter=",", ndmin=2) if args.fix_P else None
    fig = _figdir(args.figures)
    obs, normalized, prov = _load_samples(args.samples)
    rep = {"command": "solve", "config": _config_dict(args), "provenance": prov, "n": obs.n, "N": obs.N,
           "normalized_input": normalized, "complete": False}
    threads = _threads(args)
    if basis is not None:
        if basis.shape[0] != obs.n:
            raise UsageError(f"basis has {basis.shape[0]} rows, samples have n={obs.n}")
        sol, P = fixed_projector_solution(basis, 1.0)
        if args.gamma == "min":
            sol.gamma = gamma_star_fixed_P(obs, P, threads)
        else:
            sol.gamma = float(args.gamma)
        sol.max_violation = max_violation(obs, P, sol.gamma, threads)
        rep["structure"] = "fixed projector"
    else:
        if args.gamma == "min":
            X, Y = obs.arrays()
            hi = args.gamma_hi or float(np.max(np.linalg.norm(Y, axis=1) / np.linalg.norm(X, axis=1))) * 1.000001
            prob = LyapunovProblem(obs, "min", tol_feas=args.tol_feas, tol_opt=args.tol_opt, threads=threads)
            _, sol = minimize_gamma(prob, args.gamma_lo, hi, args.bisection_tol)
        else:
            prob = LyapunovProblem(obs, float(args.gamma), tol_feas=args.tol_feas, tol_opt=args.tol_opt,
                                   threads=threads)
            sol = solve_free_P(prob)
        sol = sol.with_rank(sol.split.r)
        rep["structure"] = "free"
    rep["solution"] = {"P": sol.P, "gamma": sol.gamma, "objective": sol.objective,
                       "max_violation": sol.max_violation, "status": sol.status, "iterations": sol.iterations,
                       "kernel_rank": sol.split.r, "chi": sol.chi, "working_set": sol.working_set,
                       "cuts": sol.cuts, "info": sol.info, **sol.gap_report()}
    if fig is not None:
        from .plotting import plot_spectrum

        rep["figures"] = {"spectrum": plot_spectrum(sol.spectrum, sol.split.r, fig / "spectrum.png")}
    rep["complete"] = True
    return rep, 0


def _pipeline_config(args, base=None):
    d = dict(base or {})
    for key in ("seed", "n_small", "n_large", "beta", "gamma_mode", "epsbar_mode", "candidate_tol"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if isinstance(d.get("gamma_mode"), str) and d["gamma_mode"] != "min":
        d["gamma_mode"] = float(d["gamma_mode"])
    d["threads"] = _threads(args)
    try:
        return PipelineConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _pipeline_figures(res, fig):
    from .plotting import plot_block_norms, plot_spectrum

    out = {}
    if res.spectrum is not None:
        out["spectrum"] = plot_spectrum(res.spectrum, res.kernel_rank, fig / "spectrum.png",
                                        "exploratory P: eigenvalues")
    wb = res.report.get("white_box", {})
    if "modes" in wb:
        out["block_norms"] = plot_block_norms(wb, fig / "block_norms.png")
    return out


def _finish_pipeline(res, args, rep_extra):
    rep = res.report
    rep.update(rep_extra)
    fig = _figdir(args.figures)
    if fig is not None:
        rep["figures"] = _pipeline_figures(res, fig)
    return rep, 3 if res.refusal is not None else 0


def cmd_certify(args):
    sys_, source = _system(args)
    _writable(args.report)
    cfg = _pipeline_config(args)
    res = run_pipeline(sys_, cfg, args.kind)
    return _finish_pipeline(res, args, {"command": "certify", "system_source": source})


def _demo(kind):
    def run(args):
        base = {}
        if args.config:
            base = json.loads(_existing(args.config).read_text())
        _writable(args.report)
        cfg = _pipeline_config(args, base)
        res = run_demo(kind, cfg)
        return _finish_pipeline(res, args, {"command": f"demo-{kind}"})

    return run


def cmd_plot_bounds(args):
    out = _writable(args.out)
    fig = _writable(args.figure)
    if args.k is not None and len(args.n) > 1:
        raise UsageError("--k applies to a single --n")
    Ns = np.unique(np.round(np.logspace(np.log10(args.n_min), np.log10(args.n_max), args.points)).astype(np.int64))
    modes = MODES if args.mode == "both" else (args.mode,)
    rows, curves = [], {}
    for n in args.n:
        k = args.k if args.k is not None else n * (n + 1) // 2
        for beta in args.beta:
            for m in modes:
                grid = Ns[Ns >= max(k, 1)]
                eps = [epsilon_bar(RiskQuery(int(N), k, beta, m)) for N in grid]
                curves[f"n={n} beta={beta:g} {m}"] = (grid, np.array(eps))
                rows += [{"n": n, "k": k, "beta": beta, "mode": m, "N": int(N), "epsbar": e} for N, e in zip(grid, eps)]
    lines = ["n,k,beta,mode,N,epsbar"]
    lines += [f"{r['n']},{r['k']},{r['beta']!r},{r['mode']},{r['N']},{r['epsbar']!r}" for r in rows]
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
    rep = {"command": "plot-bounds", "config": _config_dict(args), "rows": rows}
    if out is not None:
        rep["csv"] = str(out)
    if fig is not None:
        from .plotting import plot_risk_curve

        rep["figure"] = plot_risk_curve(curves, fig)
    rep["complete"] = True
    return rep, 0


# -- parser ----------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--report", help="write the JSON report here")
    common.add_argument("--threads", type=_positive_int,
                        help="worker threads (default: SUBSPACE_SCOUT_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="subspace-scout", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="draw one-step observations from a system")
    _add_system(s)
    s.add_argument("--n", type=_positive_int, help="expected state dimension (checked)")
    s.add_argument("--num-samples", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="binary stream, or CSV when the name ends in .csv")
    s.add_argument("--no-persist", action="store_true", help="generate and reduce without writing samples")
    s.add_argument("--retain-modes", action="store_true", help="store mode indices (white-box debugging)")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("solve", parents=[common], help="solve the Lyapunov program on stored samples")
    s.add_argument("--samples", required=True, help="binary stream, CSV file, or - for CSV on stdin")
    s.add_argument("--gamma", required=True, help="a positive value or 'min'")
    s.add_argument("--gamma-lo", type=float, default=0.0)
    s.add_argument("--gamma-hi", type=float)
    s.add_argument("--bisection-tol", type=float, default=1e-3)
    s.add_argument("--fix-P", dest="fix_P", help="CSV kernel basis (n rows); P is the projector onto its complement")
    s.add_argument("--tol-feas", type=float, default=1e-8)
    s.add_argument("--tol-opt", type=float, default=1e-6)
    s.add_argument("--figures", help="directory for PNG figures")
    s.set_defaults(func=cmd_solve)

    def pipeline_flags(s, demo=False):
        s.add_argument("--seed", type=int)
        s.add_argument("--n-small", type=_positive_int)
        s.add_argument("--n-large", type=_positive_int)
        s.add_argument("--beta", type=_beta)
        s.add_argument("--gamma-mode", help="exploratory gamma: 'min' or a positive value")
        s.add_argument("--epsbar-mode", choices=MODES)
        s.add_argument("--candidate-tol", type=float)
        s.add_argument("--figures", help="directory for PNG figures")
        if demo:
            s.add_argument("--config", help="JSON config {seed, n_small, n_large, beta, gamma_mode, epsbar_mode}")

    s = sub.add_parser("certify", parents=[common], help="full pipeline on a white-box system")
    _add_system(s)
    s.add_argument("--kind", choices=("auto", "consensus", "opinion"), default="auto")
    pipeline_flags(s)
    s.set_defaults(func=cmd_certify)

    for kind in ("consensus", "opinion"):
        s = sub.add_parser(f"demo-{kind}", parents=[common], help=f"{kind} demo on the built-in network")
        pipeline_flags(s, demo=True)
        s.set_defaults(func=_demo(kind))

    s = sub.add_parser("plot-bounds", parents=[common], help="risk level against sample size")
    s.add_argument("--beta", type=_beta, nargs="+", default=[0.1, 0.01, 0.001])
    s.add_argument("--n", type=_positive_int, nargs="+", default=[2, 4, 8], help="state dimension(s)")
    s.add_argument("--k", type=int, help="support bound (default n(n+1)/2; single --n only)")
    s.add_argument("--mode", choices=MODES + ("both",), default="both")
    s.add_argument("--n-min", type=float, default=1e2)
    s.add_argument("--n-max", type=float, default=1e9)
    s.add_argument("--points", type=_positive_int, default=29)
    s.add_argument("--out", help="CSV output (default stdout)")
    s.add_argument("--figure", help="PNG output")
    s.set_defaults(func=cmd_plot_bounds)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    report_path = args.report
    try:
        if report_path:
            _writable(report_path)
        rep, code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"subspace-scout: error: {exc}", file=sys.stderr)
        return 2
    except CertificateRefused as exc:
        rep = {"command": args.command, "config": _config_dict(args), "complete": False,
               "status": type(exc).__name__, "refusal": {"reason": str(exc), "eta": getattr(exc, "eta", None),
                                                         "suggested_n": getattr(exc, "suggested_n", None)}}
        code = 3
    except (ScoutError, ValueError, OSError) as exc:
        print(f"subspace-scout: {type(exc).__name__}: {exc}", file=sys.stderr)
        if report_path:
            reports.write({"command": args.command, "config": _config_dict(args), "complete": False,
                           "error": f"{type(exc).__name__}: {exc}"}, report_path)
        return 1
    if code == 3:
        print(f"subspace-scout: certificate refused: {rep.get('refusal', {}).get('reason')}", file=sys.stderr)
    if report_path:
        reports.write(rep, report_path)
    elif args.command != "plot-bounds":
        sys.stdout.write(reports.dumps(rep))
    return code


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
