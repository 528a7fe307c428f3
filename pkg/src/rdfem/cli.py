"""Command-line entry point: ``rdfem <subcommand> [options]``.

Subcommands write CSV to ``--out`` (or standard output). ``--gnuplot`` adds a
``.dat`` file of whitespace-separated blocks per rho and ``--plot`` a PNG
figure next to the CSV. The exit code is 1 when any row failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex

log = logging.getLogger("rdfem")

DEFAULTS = {
    "table-h": dict(rho_list=[1.0, 1e-4, 1e-8], n_list=[4, 8, 16, 32]),
    "table-rho": dict(rho_list=[1.0, 1e-1, 1e-2, 1e-3, 1e-4]),
    "bench-precond": dict(),
    "adapt": dict(example="box", rho_list=[1e-3, 1e-4], dof_budget=200_000),
    "export-vtk": dict(rho_list=[1e-2], n_list=[8]),
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment configuration; flags override it")
    p.add_argument("--example", choices=ex.EXAMPLES)
    p.add_argument("--rho", type=float, nargs="+", help="regularization parameters")
    p.add_argument("--n", type=int, nargs="+", help="cells per axis of the structured meshes")
    p.add_argument("--p", type=int, nargs="+", help="BDDC subdomain counts")
    p.add_argument("--precond", choices=("none", "jacobi", "amg", "bddc"))
    p.add_argument("--tol", type=float, help="PCG tolerance (default 1e-8)")
    p.add_argument("--threads", type=int, help="worker threads for BDDC")
    p.add_argument("--budget", type=int, help="dof budget for adaptive refinement")
    p.add_argument("--theta", type=float, help="Dörfler marking parameter")
    p.add_argument("--out", type=Path, help="output path (CSV, or .vtk for export-vtk)")
    p.add_argument("--gnuplot", action="store_true", help="also write gnuplot data blocks")
    p.add_argument("--plot", action="store_true", help="also render a PNG figure next to --out")
    p.add_argument("-v", "--verbose", action="store_true", help="log each row to standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdfem", description="Reaction-diffusion FEM solvers and benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "table-h": "L2/H1 errors and eoc under uniform refinement (smooth example)",
        "table-rho": "squared L2/H^-1 target errors with h = rho^1/2 (smooth example)",
        "bench-precond": "PCG iteration counts and timings for AMG or BDDC",
        "adapt": "adaptive refinement for the box or nonzero_bc example",
        "export-vtk": "solve once and write mesh, solution and partition as VTK",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def make_config(args) -> ex.ExperimentConfig:
    d = dict(DEFAULTS[args.command])
    if args.config is not None:
        d.update(json.loads(args.config.read_text()))
    if args.command == "bench-precond":
        precond = args.precond or d.get("precond", "amg")
        if precond == "bddc":
            d.setdefault("rho_list", [1.0, 1e-4, 1e-8, 1e-12])
            d.setdefault("n_list", [16])
            d.setdefault("p_list", [2, 4, 8])
        else:
            d.setdefault("rho_list", list(ex.TABLE4_RHOS))
            d.setdefault("n_list", [8, 16, 32])
    overrides = dict(
        example=args.example,
        rho_list=args.rho,
        n_list=args.n,
        precond=args.precond,
        tol=args.tol,
        threads=args.threads,
        dof_budget=args.budget,
        theta=args.theta,
        output=str(args.out) if args.out else None,
    )
    d.update({k: v for k, v in overrides.items() if v is not None})
    if args.p:
        d["p"] = args.p[0]
        d["p_list"] = list(args.p) if len(args.p) > 1 else None
    elif d.get("p_list"):
        d["p"] = d["p_list"][0]
    return ex.ExperimentConfig.from_dict(d)


def _emit(table, args, kind, suffix=""):
    path = args.out if not suffix else args.out.with_name(args.out.stem + suffix + args.out.suffix)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.write(path, gnuplot=args.gnuplot)
    log.info("wrote %s", path)
    if args.plot and kind:
        from .plotting import plot_table

        png = plot_table(kind, table, path.with_suffix(".png"))
        log.info("wrote %s", png)


def _export_vtk(cfg, args):
    from .adapt import adaptive_solve, estimate
    from .assembly import build_system, recover_control
    from .bddc import partition_geometric
    from .mesh import build_structured_cube, write_vtk
    from .solver import solve_system

    target = ex.get_target(cfg.example)
    rho = float(cfg.rho_list[0])
    if cfg.dof_budget is not None:
        sol, _ = adaptive_solve(target, rho, cfg.dof_budget, cfg.precond, theta=cfg.theta, p=cfg.p,
                                tol=cfg.tol, threads=cfg.threads)
    else:
        system = build_system(build_structured_cube(cfg.n_list[0]), rho, target)
        sol = solve_system(system, cfg.precond, p=cfg.p, tol=cfg.tol, threads=cfg.threads).solution
    mesh = sol.mesh
    x = mesh.vertices
    cells = {"indicator": estimate(sol, target).per_tet_indicator,
             "generation": np.asarray(mesh.generation, dtype=np.int64)}
    if cfg.precond == "bddc" or args.p:
        cells["subdomain"] = partition_geometric(mesh, cfg.p).owner
    out = args.out or Path("solution.vtk")
    write_vtk(out, mesh,
              point_data={"u_h": sol.full(), "target": target(x[:, 0], x[:, 1], x[:, 2]),
                          "control": recover_control(sol, target)},
              cell_data=cells)
    log.info("wrote %s", out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if args.plot and args.out is None:
        print("--plot needs --out", file=sys.stderr)
        return 2
    try:
        cfg = make_config(args)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 2

    def row_log(r):
        log.info(", ".join(f"{k}={v}" for k, v in r.items()))

    if args.command == "export-vtk":
        return _export_vtk(cfg, args)
    if args.command == "table-h":
        tables = [(ex.run_convergence_table(cfg, row_log), "table-h", "")]
    elif args.command == "table-rho":
        tables = [(ex.run_rho_coupled_table(cfg, row_log), "table-rho", "")]
    elif args.command == "bench-precond":
        tables = [(ex.run_precond_bench(cfg, row_log), "bench-precond", "")]
    else:
        levels, summary = ex.run_adaptive_experiment(cfg, row_log)
        tables = [(levels, "adapt", ""), (summary, None, "_summary")]

    if args.out is None:
        sys.stdout.write("\n".join(t.to_csv() for t, _, _ in tables))
    else:
        for table, kind, suffix in tables:
            _emit(table, args, kind, suffix)
    failed = [r for t, _, _ in tables for r in t.failed_rows]
    if failed:
        print(f"{len(failed)} row(s) failed", file=sys.stderr)
        for r in failed:
            print("  " + ", ".join(f"{k}={v}" for k, v in r.items()), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
