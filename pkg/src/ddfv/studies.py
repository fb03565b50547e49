"""Error norms against reference solutions and refinement ladders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import SpaceTimeFunction
from .mesh import DdfvMesh
from .quadrature import gauss_legendre01, simplex_quadrature
from .reference import ReferenceSolution, front_position
from .solver import RunResult


@dataclass(frozen=True, eq=False)
class PieceQuadrature:
    """Quadrature on the overlaps ``K ∩ K*`` (points, weights, owners)."""

    X: np.ndarray  # (nq, d)
    W: np.ndarray  # (nq,)
    K: np.ndarray  # primal owner
    V: np.ndarray  # dual owner


def piece_quadrature(mesh: DdfvMesh, order: int = 4) -> PieceQuadrature:
    X, W = simplex_quadrature(mesh.piece_simplices, order)
    q = X.shape[1]
    return PieceQuadrature(
        X.reshape(-1, mesh.dim),
        W.ravel(),
        np.repeat(mesh.piece_primal, q),
        np.repeat(mesh.piece_vertex, q),
    )


def _parts(u: SpaceTimeFunction, n: int, pq: PieceQuadrature) -> dict[str, np.ndarray]:
    d = u.mesh.dim
    up = u.primal[n, pq.K]
    ud = u.dual[n, pq.V]
    return {"primal": up, "dual": ud, "combined": up / d + (d - 1) * ud / d}


def space_time_errors(
    u: SpaceTimeFunction,
    ref: Callable[[float, np.ndarray], np.ndarray],
    ps=(1.0, 2.0),
    *,
    order: int = 4,
    time_points: int = 3,
) -> dict[str, float]:
    """``||lift - u*||_{Lp((0, N dt) x Omega)}`` for the primal, dual and combined lifts."""
    pq = piece_quadrature(u.mesh, order)
    tg, wg = gauss_legendre01(time_points)
    acc = {(part, p): 0.0 for part in ("primal", "dual", "combined") for p in ps}
    for n in range(1, u.N + 1):
        vals = _parts(u, n, pq)
        for s, w in zip(tg, wg):
            ex = np.asarray(ref((n - 1 + s) * u.dt, pq.X), float)
            for part, v in vals.items():
                e = np.abs(v - ex)
                for p in ps:
                    acc[(part, p)] += u.dt * w * float(np.dot(pq.W, e**p))
    return {f"L{p:g}_{part}": float(acc[(part, p)] ** (1.0 / p)) for (part, p) in acc}


def final_time_errors(u: SpaceTimeFunction, ref, ps=(2.0,), order: int = 4) -> dict[str, float]:
    """Spatial ``Lp`` errors of ``u^N`` against ``u*(N dt)``."""
    pq = piece_quadrature(u.mesh, order)
    t = u.N * u.dt
    ex = np.asarray(ref(t, pq.X), float)
    out = {}
    for part, v in _parts(u, u.N, pq).items():
        for p in ps:
            out[f"final_L{p:g}_{part}"] = float(np.dot(pq.W, np.abs(v - ex) ** p)) ** (1.0 / p)
    return out


def _diamond_quadrature(mesh: DdfvMesh, order: int):
    """Signed quadrature on each diamond as two cones over its facet."""
    F = mesh.points[mesh.dia_facet]
    xK = mesh.primal_center[mesh.dia_K]
    xL = mesh.primal_center[mesh.dia_L]
    SK = np.concatenate([xK[:, None, :], F], axis=1)
    SL = np.concatenate([xL[:, None, :], F], axis=1)
    P = mesh.dia_P
    sK = np.sign(np.einsum("nd,nd->n", mesh.dia_normal, P - xK))
    sL = np.sign(np.einsum("nd,nd->n", mesh.dia_normal, xL - P))
    XK, WK = simplex_quadrature(SK, order)
    XL, WL = simplex_quadrature(SL, order)
    X = np.concatenate([XK, XL], axis=1)
    W = np.concatenate([WK * sK[:, None], WL * sL[:, None]], axis=1)
    return X, W


def gradient_error(result: RunResult, ref: ReferenceSolution, p: float | None = None, *, order: int = 3, time_points: int = 2) -> float:
    """``||grad_T w - grad A(u*)||_{Lp(Q)}`` with ``p`` defaulting to the problem's exponent."""
    from .operators import operator_matrices

    m = result.mesh
    spec = result.spec
    p = spec.p if p is None else p
    X, W = _diamond_quadrature(m, order)
    nD, q, d = X.shape
    G = operator_matrices(m).grad
    tg, wg = gauss_legendre01(time_points)
    total = 0.0
    for n in range(1, result.u.N + 1):
        w = np.concatenate([result.w.primal[n], result.w.dual[n]])
        gw = (G @ w).reshape(nD, d)
        for s, ww in zip(tg, wg):
            t = (n - 1 + s) * result.cfg.dt
            ge = ref.grad(t, X.reshape(-1, d), spec.A).reshape(nD, q, d)
            e = np.linalg.norm(gw[:, None, :] - ge, axis=-1) ** p
            total += result.cfg.dt * ww * float((W * e).sum())
    return float(max(total, 0.0) ** (1.0 / p))


def shock_position(u: SpaceTimeFunction, n: int, *, level: float = 0.5, y: float | None = None, samples: int = 2001) -> float:
    """Rightmost ``level`` crossing of the combined lift along a line parallel to ``x_1``."""
    from .fields import SpaceTimeLift

    m = u.mesh
    lo, hi = m.points.min(axis=0), m.points.max(axis=0)
    xs = np.linspace(lo[0], hi[0], samples)
    X = np.tile(0.5 * (lo + hi), (samples, 1))
    if y is not None:
        X[:, 1] = y
    X[:, 0] = xs
    lift = SpaceTimeLift(u)
    t = (n - 0.5) * u.dt
    _, _, comb = lift(t, X)
    return front_position(xs, comb, level)


# ---------------------------------------------------------------------------
# ladders


def observed_orders(h, e) -> list[float]:
    h = np.asarray(h, float)
    e = np.asarray(e, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return list(np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:]))


def fitted_order(h, e) -> float:
    """Least-squares slope of ``log e`` against ``log h``."""
    h = np.asarray(h, float)
    e = np.asarray(e, float)
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass
class LadderTable:
    rows: list[dict] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.asarray([r[key] for r in self.rows], float)

    def with_orders(self, keys, h_key: str = "size") -> list[dict]:
        h = self.column(h_key)
        out = [dict(r) for r in self.rows]
        for k in keys:
            o = observed_orders(h, self.column(k))
            for i, r in enumerate(out):
                r[f"order_{k}"] = o[i - 1] if i > 0 else float("nan")
        return out

    def header(self) -> list[str]:
        keys: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in keys:
                    keys.append(k)
        return keys


def run_ladder(
    levels,
    build: Callable[[int], tuple],
    reference: ReferenceSolution | None,
    *,
    final_time: bool = True,
    gradient: bool = True,
    ps=(1.0, 2.0),
    extra: Callable[[RunResult], dict] | None = None,
) -> tuple[LadderTable, list[RunResult]]:
    """Run ``build(level) -> (spec, mesh, cfg)`` for each level and tabulate errors."""
    from .solver import run

    table = LadderTable()
    results = []
    for lev in levels:
        spec, mesh, cfg = build(lev)
        res = run(spec, mesh, cfg)
        row = {
            "level": lev,
            "size": mesh.size,
            "dt": cfg.dt,
            "h": max(mesh.size, cfg.dt),
            "steps": res.u.N,
        }
        if reference is not None:
            pp = tuple(sorted(set(ps) | {spec.p}))
            row.update(space_time_errors(res.u, reference, pp))
            if final_time:
                row.update(final_time_errors(res.u, reference))
            if gradient and not spec.degenerate_A:
                row["Lp_grad_w"] = gradient_error(res, reference)
        row["w_gap_L2"] = res.diagnostics["w_gap_l2"]
        row["energy_grad_w"] = res.diagnostics["energy_grad_w"]
        row["penalization_sum"] = res.diagnostics["penalization_sum"]
        row["weak_bv_sum"] = res.diagnostics["weak_bv_sum"]
        if extra is not None:
            row.update(extra(res))
        table.rows.append(row)
        results.append(res)
    return table, results
