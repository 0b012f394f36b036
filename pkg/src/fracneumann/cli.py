"""Command-line driver.

Exit status: 0 on success, 1 on validation failure or bad usage, 2 when a
solver fails to converge.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .domain import build_domain, to_nodal
from .experiments import fitted_constants, run_sweep
from .fileio import (EigenImportError, csv_row, emit_csv, emit_manifest, load_manifest,
                     parse_eps_grid, read_config, read_eigen_import)
from .keller_segel import MAPPINGS, KSParams, keller_segel_reconstruct
from .linear import resolvent_kernel
from .operators import heat_kernel, poisson_kernel
from .semilinear import SemilinearConfig, SolverError, solve
from .verification import SUITES, run_suite

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2

log = logging.getLogger("fracneumann")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> tuple:
    return tuple(float(s) for s in str(text).replace(";", ",").split(",") if s.strip())


# option name -> (converter, default); shared by flags and config files
PROBLEM_OPTIONS = {
    "epsilon": (float, 0.01),
    "p": (float, 2.0),
    "nx": (int, 128),
    "ny": (int, 128),
    "nz": (int, None),
    "lx": (float, 1.0),
    "ly": (float, 1.0),
    "lz": (float, 1.0),
    "seed": (int, 0),
    "oversample": (int, 2),
    "newton_tol": (float, 1e-10),
    "center": (_floats, None),
}


def _add_problem_options(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--p", type=float, help="exponent of u_+^p")
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--nz", type=int, help="third grid size (3D boxes only)")
    p.add_argument("--lx", type=float)
    p.add_argument("--ly", type=float)
    p.add_argument("--lz", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--oversample", type=int)
    p.add_argument("--newton-tol", type=float)
    p.add_argument("--center", type=_floats, help="tent center, comma-separated")
    p.add_argument("--out", default="run", help="output directory")


def _resolve(args, options: dict) -> dict:
    """Flag > config file > default, per key."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    known = set(options)
    unknown = set(cfg) - known - {"out", "eps", "threads", "mapping", "d1", "d2", "chi",
                                  "a", "b", "mean", "tol"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, (conv, default) in options.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            try:
                out[key] = conv(cfg[key])
            except ValueError as err:
                raise UsageError(f"config key {key}: {err}") from err
        else:
            out[key] = default
    out["_file"] = cfg
    return out


def _semilinear_config(r: dict) -> SemilinearConfig:
    if r["nz"] is None:
        lengths, grid = (r["lx"], r["ly"]), (r["nx"], r["ny"])
    else:
        lengths, grid = (r["lx"], r["ly"], r["lz"]), (r["nx"], r["ny"], r["nz"])
    return SemilinearConfig(eps=r["epsilon"], p=r["p"], lengths=lengths, grid=grid,
                            oversample=r["oversample"], newton_tol=r["newton_tol"],
                            seed=r["seed"], center=r["center"])


def _write_nodal(path: Path, field) -> None:
    d = field.domain
    cols = [m.ravel() for m in d.mesh] + [field.values.ravel()]
    names = ["x", "y", "z"][:d.n] + ["value"]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
               comments="", fmt="%.17g")


# ---------------------------------------------------------------- commands

def cmd_solve(args) -> int:
    r = _resolve(args, PROBLEM_OPTIONS)
    cfg = _semilinear_config(r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        report = solve(cfg)
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        if err.report is not None:
            emit_manifest(err.report.summary(), out / "report.json")
        return EXIT_SOLVER
    emit_manifest(report.summary(), out / "report.json")
    _write_nodal(out / "solution.csv", to_nodal(report.u))
    emit_manifest({
        "tool": "fracneumann", "version": __version__, "command": "solve",
        "config": cfg.to_dict(), "seed": cfg.seed,
        "files": {"report": "report.json", "solution": "solution.csv"},
        "timing": {"wall_seconds": time.perf_counter() - t0},
    }, out / "manifest.json")
    print(f"energy={report.energy:.10g} residual={report.residual:.3e} "
          f"sup={report.sup:.6g} inf={report.inf:.6g} constant={report.is_constant}")
    if not report.accepted:
        print(f"solution not accepted: {report.message or 'criticality checks failed'}",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _sweep_from_manifest(path):
    m = load_manifest(path)
    if m.get("command") != "sweep":
        raise UsageError(f"{path} is not a sweep manifest")
    cfg = SemilinearConfig(**m["config"])
    return cfg, m["eps_list"], tuple(m["q_list"]), tuple(m["etas"]), m.get("threads", 1)


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    if args.manifest:
        cfg, eps_list, q_list, etas, threads = _sweep_from_manifest(args.manifest)
        if args.threads is not None:
            threads = args.threads
    else:
        r = _resolve(args, PROBLEM_OPTIONS)
        cfg = _semilinear_config(r)
        spec = args.eps or r["_file"].get("eps", "1e-3:1e-1:log:9")
        try:
            eps_list = parse_eps_grid(spec)
        except ValueError as err:
            raise UsageError(str(err)) from err
        q_list, etas = (1.0, 2.0), None
        threads = args.threads if args.threads is not None else int(r["_file"].get("threads", 1))
    records = run_sweep(eps_list, cfg, q_list=q_list, etas=etas, threads=threads)
    out = Path(args.out)
    emit_csv(records, out / "sweep.csv")
    ok = [rec for rec in records if rec.ok]
    frozen_etas = sorted(ok[0].measures) if ok and ok[0].measures else list(etas or ())
    lam1 = build_domain(cfg.n, cfg.lengths, cfg.grid).first_eigenvalue
    try:
        constants = fitted_constants(records, cfg.p, lam1, q_list)
    except ValueError as err:
        constants = {"error": str(err)}
    emit_manifest({
        "tool": "fracneumann", "version": __version__, "command": "sweep",
        "config": cfg.to_dict(), "seed": cfg.seed, "eps_list": list(eps_list),
        "q_list": list(q_list), "etas": frozen_etas, "threads": threads,
        "grids": {repr(rec.eps): list(rec.grid) for rec in records},
        "fitted_constants": constants,
        "files": {"records": "sweep.csv"},
        "failures": {repr(rec.eps): rec.failed for rec in records if not rec.ok},
        "timing": {"wall_seconds": time.perf_counter() - t0},
    }, out / "manifest.json")
    for rec in records:
        row = csv_row(rec)
        print(f"eps={row.epsilon:.4g} energy={row.energy:.6g} sup={row.sup:.4g} "
              f"constant={row.is_constant} {rec.failed}")
    return EXIT_SOLVER if len(ok) < len(records) else EXIT_OK


def cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    failed = 0
    for name in names:
        for check in run_suite(name, tol=args.tol, seed=args.seed):
            print(f"[{name}] {check.line()}")
            failed += not check.passed
    return EXIT_INVALID if failed else EXIT_OK


def _points(text, n):
    pts = []
    for chunk in text.split(";"):
        vals = _floats(chunk)
        if len(vals) != n:
            raise UsageError(f"point {chunk!r} needs {n} coordinates")
        pts.append(vals)
    return np.array(pts)


def cmd_kernels(args) -> int:
    lengths = (args.lx, args.ly)
    d = build_domain(2, lengths, (args.nx, args.ny))
    pts = _points(args.points, 2)
    params = _floats(args.values)
    if any(v <= 0 for v in params):
        raise UsageError("kernel parameters must be positive")
    rows = []
    for v in params:
        for x in pts:
            for z in pts:
                if args.kind == "heat":
                    val = heat_kernel(d, v, x, z)
                elif args.kind == "poisson":
                    val = poisson_kernel(d, v, x, z)
                else:
                    val = resolvent_kernel(d, v, x, z)
                rows.append((v, *x, *z, float(np.ravel(val)[0])))
    header = "param,x1,x2,z1,z2,value"
    lines = [header] + [",".join("%.17g" % c for c in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


KS_OPTIONS = {
    "d1": (float, 1.0), "d2": (float, 0.1), "chi": (float, 2.0), "a": (float, 1.0),
    "b": (float, 1.0), "mean": (float, 1.0), "mapping": (str, "squared"), "tol": (float, 1e-6),
}


def cmd_ks(args) -> int:
    r = _resolve(args, {**PROBLEM_OPTIONS, **KS_OPTIONS})
    try:
        ks = KSParams(D1=r["d1"], D2=r["d2"], chi=r["chi"], a=r["a"], b=r["b"],
                      mean=r["mean"], mapping=r["mapping"])
        r["epsilon"], r["p"] = ks.eps, ks.p
        cfg = _semilinear_config(r)
    except ValueError as err:
        print(f"invalid parameters: {err}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = solve(cfg)
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    if not report.accepted:
        print(f"solution not accepted: {report.message}", file=sys.stderr)
        return EXIT_SOLVER
    state = keller_segel_reconstruct(report, ks, oversample=cfg.oversample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_nodal(out / "rho.csv", state.rho)
    _write_nodal(out / "c.csv", state.c)
    summary = {"eps": ks.eps, "p": ks.p, "mapping": ks.mapping, "lambda": state.lam,
               "beta": state.beta, "chemical_residual": state.chemical_residual,
               "flux_residual": state.flux_residual, "constant": report.is_constant}
    emit_manifest({"tool": "fracneumann", "version": __version__, "command": "ks",
                   "config": cfg.to_dict(), "ks": {k: r[k] for k in KS_OPTIONS},
                   "result": summary, "files": {"rho": "rho.csv", "c": "c.csv"}},
                  out / "manifest.json")
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    if state.chemical_residual > r["tol"]:
        print(f"chemical residual {state.chemical_residual:.3e} exceeds {r['tol']:.1e}",
              file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def cmd_import_eigen(args) -> int:
    try:
        d = read_eigen_import(args.path)
    except EigenImportError as err:
        print(f"invalid eigenpair file: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: n={d.n} grid={d.grid} modes={d.modes.shape[0]} volume={d.volume:g} "
          f"lambda_1={d.first_eigenvalue:.10g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracneumann", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one semilinear problem")
    _add_problem_options(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="solve over an eps grid and fit scalings")
    _add_problem_options(p)
    p.add_argument("--eps", help="a:b:log:n, a:b:lin:n or a comma list")
    p.add_argument("--threads", type=int, help="worker threads (default: env or 1)")
    p.add_argument("--manifest", help="re-run the sweep recorded in this manifest")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run a self-check suite")
    p.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("kernels", help="tabulate heat, Poisson or resolvent kernels")
    p.add_argument("--kind", choices=("heat", "poisson", "resolvent"), default="heat")
    p.add_argument("--values", default="0.05,0.2,1",
                   help="t, y or eps values, comma-separated")
    p.add_argument("--points", default="0.25,0.25;0.5,0.5;0.75,0.1",
                   help="sample points 'x,y;x,y;...'")
    p.add_argument("--nx", type=int, default=128)
    p.add_argument("--ny", type=int, default=128)
    p.add_argument("--lx", type=float, default=1.0)
    p.add_argument("--ly", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("ks", help="chemotaxis steady state from a semilinear solution")
    _add_problem_options(p)
    p.add_argument("--d1", "--D1", dest="d1", type=float)
    p.add_argument("--d2", "--D2", dest="d2", type=float)
    p.add_argument("--chi", type=float)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--mean", type=float, help="prescribed mean of rho")
    p.add_argument("--mapping", choices=MAPPINGS)
    p.add_argument("--tol", type=float, help="acceptance bound on the chemical residual")
    p.set_defaults(func=cmd_ks)

    p = sub.add_parser("import-eigen", help="validate an eigenpair file")
    p.add_argument("path")
    p.set_defaults(func=cmd_import_eigen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
