import numpy as np
import pytest

from ddfv.fields import SpaceTimeFunction
from ddfv.studies import (
    LadderTable,
    _diamond_quadrature,
    final_time_errors,
    fitted_order,
    observed_orders,
    piece_quadrature,
    shock_position,
    space_time_errors,
)


def test_piece_quadrature_integrates_affine(any_mesh, rng):
    pq = piece_quadrature(any_mesh, 2)
    assert pq.W.sum() == pytest.approx(any_mesh.domain_measure, rel=1e-12)
    r = rng.normal(size=any_mesh.dim)
    lo, hi = any_mesh.points.min(0), any_mesh.points.max(0)
    exact = float(np.prod(hi - lo)) * float(0.5 * (lo + hi) @ r)
    assert np.dot(pq.W, pq.X @ r) == pytest.approx(exact, rel=1e-12)


def test_diamond_quadrature_is_a_partition(any_mesh):
    X, W = _diamond_quadrature(any_mesh, 2)
    assert np.allclose(W.sum(axis=1), any_mesh.dia_measure, rtol=1e-12)


def test_constant_error_closed_forms(mesh8):
    N, dt, c = 4, 0.05, 0.7
    u = SpaceTimeFunction(mesh8, np.full((N + 1, mesh8.n_primal_total), c), np.full((N + 1, mesh8.n_vertices), c), dt, N * dt)
    zero = lambda t, X: np.zeros(len(X))  # noqa: E731
    e = space_time_errors(u, zero, ps=(1.0, 2.0, 3.0))
    for part in ("primal", "dual", "combined"):
        assert e[f"L1_{part}"] == pytest.approx(c * N * dt, rel=1e-12)
        assert e[f"L2_{part}"] == pytest.approx(c * np.sqrt(N * dt), rel=1e-12)
        assert e[f"L3_{part}"] == pytest.approx(c * (N * dt) ** (1 / 3), rel=1e-12)
    f = final_time_errors(u, lambda t, X: np.full(len(X), c))
    assert f["final_L2_combined"] == pytest.approx(0.0, abs=1e-15)


def test_orders_on_synthetic_data():
    h = np.array([0.1, 0.05, 0.025])
    e = 3.0 * h**1.5
    assert np.allclose(observed_orders(h, e), 1.5)
    assert fitted_order(h, e) == pytest.approx(1.5)
    t = LadderTable([{"size": a, "err": b} for a, b in zip(h, e)])
    rows = t.with_orders(["err"])
    assert np.isnan(rows[0]["order_err"]) and rows[2]["order_err"] == pytest.approx(1.5)
    assert t.header() == ["size", "err"]


def test_shock_position_of_step(mesh8):
    N = 2
    P = np.zeros((N + 1, mesh8.n_primal_total))
    D = np.zeros((N + 1, mesh8.n_vertices))
    P[:, : mesh8.n_primal] = (mesh8.primal_center[: mesh8.n_primal, 0] < 0.5).astype(float)
    D[:] = (mesh8.points[:, 0] < 0.5).astype(float)
    D[:, mesh8.dual_boundary] = 0.0
    u = SpaceTimeFunction(mesh8, P, D, 0.1, 0.2)
    assert abs(shock_position(u, N) - 0.5) <= 1 / 8
