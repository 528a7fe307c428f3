"""PNG figures for experiment tables (matplotlib, Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_convergence", "plot_rho_coupled", "plot_bench", "plot_adaptive", "plot_table"]


def _groups(table, key):
    out = {}
    for r in table.rows:
        out.setdefault(r[key], []).append(r)
    return out


def _ok(rows, *cols):
    return [r for r in rows if all(np.isfinite(r[c]) and r[c] > 0 for c in cols)]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_convergence(table, path):
    """Errors against ``h`` on log-log axes, one line per rho."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for rho, rows in _groups(table, "rho").items():
        for ax, col in zip(axes, ("l2", "h1")):
            rr = _ok(rows, col)
            ax.loglog([r["h"] for r in rr], [r[col] for r in rr], "o-", label=f"rho={rho:g}")
    axes[0].set_title("L2 error")
    axes[1].set_title("H1-seminorm error")
    for ax in axes:
        ax.set_xlabel("h")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_rho_coupled(table, path):
    rows = table.rows
    fig, ax = plt.subplots(figsize=(5, 4))
    for col, label in (("l2_sq", "squared L2"), ("hm1_sq", "squared H^-1")):
        rr = _ok(rows, col)
        ax.loglog([r["rho"] for r in rr], [r[col] for r in rr], "o-", label=label)
    ax.set_xlabel("rho (h = rho^1/2)")
    ax.set_ylabel("distance to target")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_bench(table, path):
    """Iteration counts against rho, one line per mesh size (and subdomain count)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    keys = {}
    for r in table.rows:
        keys.setdefault((r["n"], r["p"]), []).append(r)
    for (n, p), rows in keys.items():
        label = f"h=1/{n}" + (f", p={p}" if p else "")
        ax.semilogx([r["rho"] for r in rows], [r["iterations"] for r in rows], "o-", label=label)
    ax.set_xlabel("rho")
    ax.set_ylabel("PCG iterations")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_adaptive(table, path):
    """Iterations and solver seconds over the adaptive levels, one line per rho."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for rho, rows in _groups(table, "rho").items():
        dofs = [r["dofs"] for r in rows]
        axes[0].semilogx(dofs, [r["iterations"] for r in rows], "o-", ms=3, label=f"rho={rho:g}")
        axes[1].loglog(dofs, [max(r["setup_seconds"] + r["solve_seconds"], 1e-6) for r in rows], "o-", ms=3,
                       label=f"rho={rho:g}")
    axes[0].set_ylabel("PCG iterations")
    axes[1].set_ylabel("seconds")
    for ax in axes:
        ax.set_xlabel("dofs")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=7)
    return _save(fig, path)


def plot_table(kind: str, table, path):
    fn = {
        "table-h": plot_convergence,
        "table-rho": plot_rho_coupled,
        "bench-precond": plot_bench,
        "adapt": plot_adaptive,
    }[kind]
    return fn(table, path)
