"""Targets, experiment configurations and table runners.

Every runner returns an ``EocTable`` whose CSV form has a header line and
``%.6e`` floats. Columns ending in ``_seconds`` hold wall-clock times and are
left out when comparing runs for determinism.
"""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adapt import adaptive_solve
from .assembly import TargetField, build_system, h1_semi_error, l2_error, target_errors
from .mesh import build_structured_cube
from .solver import PRECONDITIONERS, solve_system

__all__ = [
    "EXAMPLES",
    "TABLE4_RHOS",
    "target_smooth",
    "target_box",
    "target_nonzero_bc",
    "get_target",
    "box_cut_mask",
    "manufactured_exact",
    "ExperimentConfig",
    "EocTable",
    "eoc_h",
    "eoc_rho",
    "coupled_n",
    "run_convergence_table",
    "run_rho_coupled_table",
    "run_precond_bench",
    "run_adaptive_experiment",
]

EXAMPLES = ("smooth", "box", "nonzero_bc")
TABLE4_RHOS = (1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)
BOX_LO, BOX_HI = 0.25, 0.75


def _sin3(x, y, z):
    return np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z)


def target_smooth() -> TargetField:
    return TargetField(_sin3, "smooth_h2", name="smooth")


def _box(x, y, z):
    inside = (x > BOX_LO) & (x < BOX_HI) & (y > BOX_LO) & (y < BOX_HI) & (z > BOX_LO) & (z < BOX_HI)
    return inside.astype(np.float64)


def box_cut_mask(x):
    """Tets (vertex coordinates ``x`` of shape (T, 4, 3)) crossed by the box surface.

    A tet is uncut when it lies in the closed box, or when along some axis all
    its vertices sit on one side of the box.
    """
    inside = ((x >= BOX_LO) & (x <= BOX_HI)).all(axis=(1, 2))
    below = (x <= BOX_LO).all(axis=1).any(axis=1)
    above = (x >= BOX_HI).all(axis=1).any(axis=1)
    return ~(inside | below | above)


def target_box() -> TargetField:
    return TargetField(_box, "discontinuous", cut_mask=box_cut_mask, name="box")


def target_nonzero_bc() -> TargetField:
    return TargetField(lambda x, y, z: 1.0 + _sin3(x, y, z), "smooth_nonzero_bc", name="nonzero_bc")


def get_target(example: str) -> TargetField:
    try:
        return {"smooth": target_smooth, "box": target_box, "nonzero_bc": target_nonzero_bc}[example]()
    except KeyError:
        raise ValueError(f"unknown example {example!r}; choose from {EXAMPLES}") from None


def manufactured_exact(rho: float):
    """Exact solution for the smooth target and its gradient.

    ``u = sin(pi x) sin(pi y) sin(pi z) / (3 rho pi^2 + 1)``.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    c = 1.0 / (3.0 * rho * np.pi**2 + 1.0)

    def u(x, y, z):
        return c * _sin3(x, y, z)

    def grad(x, y, z):
        sx, sy, sz = np.sin(np.pi * x), np.sin(np.pi * y), np.sin(np.pi * z)
        cx, cy, cz = np.cos(np.pi * x), np.cos(np.pi * y), np.cos(np.pi * z)
        return c * np.pi * np.stack([cx * sy * sz, sx * cy * sz, sx * sy * cz], axis=-1)

    return u, grad


def eoc_h(e_coarse: float, e_fine: float, n_coarse: int, n_fine: int) -> float:
    """``log(e(h1)/e(h2)) / log(h1/h2)``; ``log2(e(h)/e(h/2))`` when the mesh is halved."""
    return _eoc(e_coarse, e_fine, n_fine / n_coarse)


def eoc_rho(e1: float, e2: float, rho1: float, rho2: float) -> float:
    """``log(e1/e2) / log(rho1/rho2)``, applied to squared norms as in the coupled table."""
    return _eoc(e1, e2, rho1 / rho2)


def _eoc(e1, e2, ratio):
    if not (e1 > 0 and e2 > 0) or ratio == 1 or not np.isfinite(e1 * e2):
        return float("nan")
    return math.log(e1 / e2) / math.log(ratio)


def coupled_n(rho: float) -> int:
    """Cells per axis for ``h = rho^(1/2)``; the guard keeps exact powers from rounding up."""
    return max(1, math.ceil(rho**-0.5 - 1e-9))


@dataclass
class ExperimentConfig:
    """Settings for one experiment.

    ``p_list`` overrides ``p`` for preconditioner benchmarks sweeping the
    subdomain count.
    """

    example: str = "smooth"
    rho_list: list = field(default_factory=lambda: [1.0])
    n_list: Optional[list] = None
    dof_budget: Optional[int] = None
    precond: str = "amg"
    p: int = 4
    p_list: Optional[list] = None
    tol: float = 1e-8
    threads: int = 1
    seed: int = 0
    output: Optional[str] = None
    theta: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.example not in EXAMPLES:
            raise ValueError(f"unknown example {self.example!r}")
        if not self.rho_list:
            raise ValueError("rho_list must not be empty")
        if any(not (float(r) > 0) for r in self.rho_list):
            raise ValueError("every rho must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.precond not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.precond!r}")
        if self.precond == "bddc" and min(self.subdomain_counts) < 2:
            raise ValueError("bddc needs p >= 2")
        if self.n_list is not None and any(int(n) < 1 for n in self.n_list):
            raise ValueError("mesh sizes must be positive")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")

    @property
    def subdomain_counts(self) -> list:
        return list(self.p_list) if self.p_list else [self.p]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.6e" % v if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))
    if v is None:
        return ""
    return str(v)


@dataclass
class EocTable:
    """Rows of named values; ``eoc_*`` entries are NaN on the first row of each group."""

    columns: list
    rows: list = field(default_factory=list)
    title: str = ""

    def add(self, **values):
        missing = set(self.columns) - set(values)
        extra = set(values) - set(self.columns)
        if missing or extra:
            raise KeyError(f"row mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        self.rows.append(values)

    def column(self, name):
        return [r[name] for r in self.rows]

    def timing_columns(self):
        return [c for c in self.columns if c.endswith("_seconds")]

    @property
    def failed_rows(self):
        return [r for r in self.rows if r.get("status", "ok") != "ok"]

    def to_csv(self, timing: bool = True) -> str:
        cols = self.columns if timing else [c for c in self.columns if c not in self.timing_columns()]
        lines = [",".join(cols)]
        lines += [",".join(_fmt(r[c]) for c in cols) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_gnuplot(self, group_by: str = "rho") -> str:
        """Whitespace-separated blocks, one per value of ``group_by``, split by two blank lines."""
        blocks, current, last = [], [], object()
        for r in self.rows:
            key = r.get(group_by)
            if current and key != last:
                blocks.append(current)
                current = []
            current.append(" ".join(_fmt(r[c]) for c in self.columns if c != "status"))
            last = key
        if current:
            blocks.append(current)
        head = "# " + " ".join(c for c in self.columns if c != "status")
        return head + "\n" + "\n\n\n".join("\n".join(b) for b in blocks) + "\n"

    def write(self, path, gnuplot: bool = False):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())
        if gnuplot:
            with open(str(path) + ".dat", "w", encoding="utf-8") as fh:
                fh.write(self.to_gnuplot())


def _solve(system, cfg, p=None):
    return solve_system(system, cfg.precond, p=cfg.p if p is None else p, tol=cfg.tol, threads=cfg.threads)


def run_convergence_table(cfg: ExperimentConfig, log=None) -> EocTable:
    """L2 and H1-seminorm errors against the exact solution over a sequence of meshes."""
    if cfg.example != "smooth":
        raise ValueError("the convergence table needs the smooth example")
    n_list = cfg.n_list or [4, 8, 16, 32]
    target = target_smooth()
    table = EocTable(
        ["rho", "n", "h", "dofs", "l2", "eoc_l2", "h1", "eoc_h1", "iterations",
         "setup_seconds", "solve_seconds", "status"],
        title="h-convergence",
    )
    meshes = {}
    for rho in cfg.rho_list:
        u, grad = manufactured_exact(rho)
        prev = None
        for n in n_list:
            mesh = meshes.setdefault(n, build_structured_cube(n))
            row = dict(rho=float(rho), n=int(n), h=1.0 / n, dofs=0, l2=np.nan, eoc_l2=np.nan, h1=np.nan,
                       eoc_h1=np.nan, iterations=0, setup_seconds=0.0, solve_seconds=0.0, status="ok")
            try:
                system = build_system(mesh, rho, target)
                res = _solve(system, cfg)
                row.update(dofs=system.n, iterations=res.iterations, setup_seconds=res.setup_seconds,
                           solve_seconds=res.solve_seconds)
                if not res.converged:
                    row["status"] = "failed"
                row["l2"] = l2_error(res.solution, u)
                row["h1"] = h1_semi_error(res.solution, grad)
            except Exception as exc:  # noqa: BLE001 recorded as a failed row
                row["status"] = f"failed: {exc}".replace(",", ";")
            if prev is not None:
                row["eoc_l2"] = eoc_h(prev["l2"], row["l2"], prev["n"], n)
                row["eoc_h1"] = eoc_h(prev["h1"], row["h1"], prev["n"], n)
            table.add(**row)
            prev = row
            if log:
                log(row)
    return table


def run_rho_coupled_table(cfg: ExperimentConfig, log=None) -> EocTable:
    """Squared L2 and H^-1 distances to the target with ``h = rho^(1/2)``."""
    if cfg.example != "smooth":
        raise ValueError("the coupled table needs the smooth example")
    target = target_smooth()
    table = EocTable(
        ["rho", "n", "dofs", "l2_sq", "eoc_l2_sq", "hm1_sq", "eoc_hm1_sq", "iterations",
         "setup_seconds", "solve_seconds", "status"],
        title="rho-coupled",
    )
    prev = None
    for rho in cfg.rho_list:
        rho = float(rho)
        n = coupled_n(rho)
        row = dict(rho=rho, n=n, dofs=0, l2_sq=np.nan, eoc_l2_sq=np.nan, hm1_sq=np.nan, eoc_hm1_sq=np.nan,
                   iterations=0, setup_seconds=0.0, solve_seconds=0.0, status="ok")
        try:
            system = build_system(build_structured_cube(n), rho, target)
            res = _solve(system, cfg)
            row.update(dofs=system.n, iterations=res.iterations, setup_seconds=res.setup_seconds,
                       solve_seconds=res.solve_seconds)
            if not res.converged:
                row["status"] = "failed"
            row["l2_sq"], row["hm1_sq"] = target_errors(res.solution, target)
        except Exception as exc:  # noqa: BLE001
            row["status"] = f"failed: {exc}".replace(",", ";")
        if prev is not None:
            row["eoc_l2_sq"] = eoc_rho(prev["l2_sq"], row["l2_sq"], prev["rho"], rho)
            row["eoc_hm1_sq"] = eoc_rho(prev["hm1_sq"], row["hm1_sq"], prev["rho"], rho)
        table.add(**row)
        prev = row
        if log:
            log(row)
    return table


def run_precond_bench(cfg: ExperimentConfig, log=None) -> EocTable:
    """Iteration counts and times over meshes, rho and (for BDDC) subdomain counts."""
    if cfg.precond not in ("amg", "bddc", "jacobi"):
        raise ValueError("the benchmark needs an iterative preconditioner")
    target = get_target(cfg.example)
    n_list = cfg.n_list or ([8, 16, 32] if cfg.precond == "amg" else [16])
    p_list = cfg.subdomain_counts if cfg.precond == "bddc" else [0]
    table = EocTable(
        ["n", "p", "rho", "dofs", "iterations", "setup_seconds", "solve_seconds", "status"],
        title=f"{cfg.precond} iterations",
    )
    for n in n_list:
        mesh = build_structured_cube(n)
        for p in p_list:
            for rho in cfg.rho_list:
                row = dict(n=int(n), p=int(p), rho=float(rho), dofs=0, iterations=0, setup_seconds=0.0,
                           solve_seconds=0.0, status="ok")
                try:
                    system = build_system(mesh, rho, target)
                    res = _solve(system, cfg, p=p or cfg.p)
                    row.update(dofs=system.n, iterations=res.iterations, setup_seconds=res.setup_seconds,
                               solve_seconds=res.solve_seconds)
                    if not res.converged:
                        row["status"] = "failed"
                except Exception as exc:  # noqa: BLE001
                    row["status"] = f"failed: {exc}".replace(",", ";")
                table.add(**row)
                if log:
                    log(row)
    return table


def run_adaptive_experiment(cfg: ExperimentConfig, log=None):
    """Adaptive runs per rho; returns ``(levels, summary)`` tables.

    ``levels`` has one row per refinement level, ``summary`` the final level of
    each rho with eoc in rho of the squared target errors.
    """
    if cfg.example not in ("box", "nonzero_bc"):
        raise ValueError("the adaptive experiment needs the box or nonzero_bc example")
    if cfg.dof_budget is None:
        raise ValueError("the adaptive experiment needs a dof budget")
    target = get_target(cfg.example)
    levels = EocTable(
        ["rho", "level", "dofs", "n_tets", "eta", "l2_sq", "hm1_sq", "iterations",
         "setup_seconds", "solve_seconds", "status"],
        title="adaptive levels",
    )
    summary = EocTable(
        ["rho", "dofs", "levels", "l2_sq", "eoc_l2_sq", "hm1_sq", "eoc_hm1_sq", "total_seconds", "status"],
        title="adaptive rho sweep",
    )
    prev = None
    for rho in cfg.rho_list:
        rho = float(rho)
        t0 = time.perf_counter()
        srow = dict(rho=rho, dofs=0, levels=0, l2_sq=np.nan, eoc_l2_sq=np.nan, hm1_sq=np.nan,
                    eoc_hm1_sq=np.nan, total_seconds=0.0, status="ok")

        def record(lv, rho=rho):
            row = dict(rho=rho, level=lv.level, dofs=lv.dofs, n_tets=lv.n_tets, eta=lv.eta, l2_sq=lv.l2_sq,
                       hm1_sq=lv.hm1_sq, iterations=lv.iterations, setup_seconds=lv.setup_seconds,
                       solve_seconds=lv.solve_seconds, status="ok" if lv.converged else "failed")
            levels.add(**row)
            if log:
                log(row)

        try:
            _, hist = adaptive_solve(target, rho, cfg.dof_budget, cfg.precond, theta=cfg.theta, p=cfg.p,
                                     tol=cfg.tol, threads=cfg.threads, callback=record)
            last = hist[-1]
            srow.update(dofs=last.dofs, levels=len(hist), l2_sq=last.l2_sq, hm1_sq=last.hm1_sq)
            if not all(h.converged for h in hist):
                srow["status"] = "failed"
        except Exception as exc:  # noqa: BLE001
            srow["status"] = f"failed: {exc}".replace(",", ";")
        srow["total_seconds"] = time.perf_counter() - t0
        if prev is not None:
            srow["eoc_l2_sq"] = eoc_rho(prev["l2_sq"], srow["l2_sq"], prev["rho"], rho)
            srow["eoc_hm1_sq"] = eoc_rho(prev["hm1_sq"], srow["hm1_sq"], prev["rho"], rho)
        summary.add(**srow)
        prev = srow
    return levels, summary
