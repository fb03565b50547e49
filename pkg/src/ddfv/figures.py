"""PNG figures for CLI reports (matplotlib, Agg canvas, no pyplot state)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.collections import LineCollection, PolyCollection
from matplotlib.figure import Figure

from .mesh import DdfvMesh


def _figure(ncols: int = 1, width: float = 4.0, height: float = 3.4) -> Figure:
    fig = Figure(figsize=(width * ncols, height), dpi=110, layout="constrained")
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def _field_panel(ax, polys, values, title, vmin, vmax):
    pc = PolyCollection(polys, array=values, cmap="viridis", edgecolors="face", linewidths=0.2)
    pc.set_clim(vmin, vmax)
    ax.add_collection(pc)
    ax.autoscale_view()
    ax.set_aspect("equal")
    ax.set_title(title)
    return pc


def plot_mesh(mesh: DdfvMesh, path) -> Path:
    """Primal edges with centre-to-centre segments (2D) or a vertex cloud (3D)."""
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    if mesh.dim == 2:
        tri = mesh.points[mesh.cells]
        segs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        ax.add_collection(LineCollection(segs, colors="0.2", linewidths=0.6))
        xK = mesh.primal_center[mesh.dia_K[mesh.sub_dia]]
        xL = mesh.primal_center[mesh.dia_L[mesh.sub_dia]]
        ax.add_collection(LineCollection(np.stack([xK, xL], 1), colors="tab:red", linewidths=0.5, linestyles="--"))
        ax.set_aspect("equal")
        ax.autoscale_view()
    else:
        ax.scatter(mesh.points[:, 0], mesh.points[:, 1], s=4, c=mesh.points[:, 2], cmap="viridis")
        ax.set_aspect("equal")
    ax.set_title(f"{mesh.n_cells} simplices, {mesh.n_primal} primal, {mesh.n_dual} interior dual")
    return _save(fig, path)


def plot_fields(mesh: DdfvMesh, primal: np.ndarray, dual: np.ndarray, path, title: str = "u") -> Path:
    """Side-by-side primal and dual piecewise-constant fields."""
    fig = _figure(ncols=2)
    vals = np.concatenate([primal[: mesh.n_primal], dual])
    vmin, vmax = float(vals.min()), float(vals.max())
    if vmax <= vmin:
        vmax = vmin + 1.0
    axes = [fig.add_subplot(1, 2, i + 1) for i in range(2)]
    if mesh.dim == 2:
        cells = mesh.points[mesh.cells]
        _field_panel(axes[0], cells, np.asarray(primal)[mesh.cell_cluster], f"{title} on primal volumes", vmin, vmax)
        pc = _field_panel(axes[1], mesh.piece_simplices, np.asarray(dual)[mesh.piece_vertex], f"{title} on dual volumes", vmin, vmax)
    else:
        c = mesh.primal_center[: mesh.n_primal]
        axes[0].scatter(c[:, 0], c[:, 1], c=primal[: mesh.n_primal], s=6, vmin=vmin, vmax=vmax)
        pc = axes[1].scatter(mesh.points[:, 0], mesh.points[:, 1], c=dual, s=6, vmin=vmin, vmax=vmax)
        axes[0].set_title(f"{title} at primal centres (projected)")
        axes[1].set_title(f"{title} at vertices (projected)")
    fig.colorbar(pc, ax=axes, shrink=0.8)
    return _save(fig, path)


def plot_history(reports, per_step: dict, path) -> Path:
    """Residual, iterations and range of ``u`` per step."""
    fig = _figure(ncols=3, width=3.2)
    t = np.array([r.t for r in reports])
    ax = fig.add_subplot(1, 3, 1)
    ax.semilogy(t, np.maximum([r.residual for r in reports], 1e-300), ".-")
    ax.set_xlabel("t")
    ax.set_title("residual")
    ax = fig.add_subplot(1, 3, 2)
    ax.plot(t, [r.iterations for r in reports], ".-")
    ax.set_xlabel("t")
    ax.set_title("nonlinear iterations")
    ax = fig.add_subplot(1, 3, 3)
    ax.plot(t, [r.u_min for r in reports], label="min u")
    ax.plot(t, [r.u_max for r in reports], label="max u")
    if "mass_primal" in per_step:
        m = np.asarray(per_step["mass_primal"])[1:]
        ax.plot(t, m, "--", label="primal mass")
    ax.legend()
    ax.set_xlabel("t")
    return _save(fig, path)


def plot_convergence(rows: list[dict], keys, path, h_key: str = "size") -> Path:
    """Log-log error curves with a least-squares slope per key."""
    fig = _figure()
    ax = fig.add_subplot(1, 1, 1)
    h = np.array([r[h_key] for r in rows], float)
    for k in keys:
        e = np.array([r[k] for r in rows], float)
        if np.all(e > 0) and len(e) > 1:
            s = np.polyfit(np.log(h), np.log(e), 1)[0]
            ax.loglog(h, e, "o-", label=f"{k} (slope {s:.2f})")
    ax.set_xlabel(h_key)
    ax.set_ylabel("error")
    ax.legend()
    return _save(fig, path)
