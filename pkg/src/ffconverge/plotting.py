"""Figures and CSV exports for run reports."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402
import numpy as np  # noqa: E402

from .eqmeasure import EquilibriumSolution  # noqa: E402
from .formfactor import BoundReport  # noqa: E402

DENSITY_HEADER = "xi,rho"
BOUNDS_HEADER = "N,u_n_estimate,u_n_stderr,bound_chain,theorem_envelope"


def _write(path: Path, header: str, rows: np.ndarray):
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join("%.17e" % v for v in row) + "\n")
    return path


def emit_density(xi, rho, path) -> Path:
    """Two-column CSV of a density profile; an empty profile gives a header-only file."""
    xi, rho = np.asarray(xi, dtype=float), np.asarray(rho, dtype=float)
    if xi.shape != rho.shape:
        raise ValueError("xi and rho must have the same shape")
    return _write(path, DENSITY_HEADER, np.column_stack([xi, rho]) if xi.size else np.empty((0, 2)))


def emit_bounds(reports, path) -> Path:
    rows = [(r.N, r.u_n_estimate, r.u_n_stderr, r.bound_chain, r.theorem_envelope) for r in reports]
    return _write(path, BOUNDS_HEADER, np.asarray(rows, dtype=float).reshape(-1, 5))


def emit_plotdata(obj, path) -> Path:
    """CSV export of an equilibrium solution (xi, rho) or of bound reports (five columns)."""
    if obj is None:
        return emit_density([], [], path)
    if isinstance(obj, EquilibriumSolution):
        on = (obj.nodes >= obj.a_N) & (obj.nodes <= obj.b_N)
        return emit_density(obj.nodes[on], obj.density[on], path)
    if isinstance(obj, BoundReport):
        return emit_bounds([obj], path)
    items = list(obj)
    if not items or all(isinstance(r, BoundReport) for r in items):
        return emit_bounds(items, path)
    raise TypeError(f"cannot export {type(obj).__name__}")


def plot_densities(closed: dict, direct: dict, path) -> Path | None:
    if not closed and not direct:
        return None
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for N, (xi, rho) in sorted(closed.items()):
        ax.plot(xi, rho, lw=1.6, label=f"closed form, N={N:.0e}")
    for N, (xi, rho) in sorted(direct.items()):
        ax.plot(xi, rho, ls="--", lw=1.0, label=f"direct, N={N:.0e}")
    ax.set_xlabel(r"$\xi$")
    ax.set_ylabel(r"$\rho(\xi)$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_bounds(reports, path) -> Path | None:
    reports = [r for r in reports if r.N >= 2]
    if not reports:
        return None
    N = np.array([r.N for r in reports])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.errorbar(N, [r.u_n_estimate for r in reports], yerr=[3 * r.u_n_stderr for r in reports],
                fmt="o", label="summand estimate (3 sigma)")
    ax.plot(N, [r.bound_chain for r in reports], "s-", label="bound chain")
    env = [(n, r.theorem_envelope) for n, r in zip(N, reports) if math.isfinite(r.theorem_envelope)]
    if env:
        ax.plot(*zip(*env), "^:", label="leading envelope")
    ax.set_yscale("log")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_xlabel("N")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_energy(records, path) -> Path | None:
    if not records:
        return None
    N = np.array([r["N"] for r in records], dtype=float)
    ratio = np.array([r["ratio_to_exponent"] for r in records])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.semilogx(N, ratio, "o-")
    ax.axhline(1.0, color="gray", lw=0.8)
    ax.set_xlabel("N")
    ax.set_ylabel(r"$N^2 E_N$ / leading exponent")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
