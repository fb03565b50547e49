import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddfv import fields
from ddfv.fields import (
    DiscreteField,
    DiscreteFunction,
    DiscreteFunctionBar,
    MeshMismatch,
    SpaceTimeFunction,
    SpaceTimeLift,
    function_lp_norm,
    inner_fields,
    inner_functions,
    n_steps,
    project_bar,
    project_cells,
    time_average,
    wdot,
)
from ddfv.studies import space_time_errors


def _explicit_inner(m, w, v):
    d = m.dim
    acc = 0.0
    for K in range(m.n_primal):
        acc += m.primal_measure[K] * w.primal[K] * v.primal[K] / d
    for j, V in enumerate(m.dual_interior):
        acc += (d - 1) / d * m.dual_measure[V] * w.dual[j] * v.dual[j]
    return acc


def test_inner_product_matches_per_volume_sum(any_mesh, rng):
    m = any_mesh
    w = DiscreteFunction(m, rng.normal(size=m.n_primal), rng.normal(size=m.n_dual))
    v = DiscreteFunction(m, rng.normal(size=m.n_primal), rng.normal(size=m.n_dual))
    assert inner_functions(w, v) == pytest.approx(_explicit_inner(m, w, v), rel=1e-12)
    assert inner_functions(w.to_bar(), v.to_bar()) == pytest.approx(inner_functions(w, v), rel=1e-12)


def test_bar_constant_has_domain_measure(any_mesh):
    m = any_mesh
    one = DiscreteFunctionBar(m, np.ones(m.n_primal_total), np.ones(m.n_vertices))
    assert inner_functions(one, one) == pytest.approx(m.domain_measure, rel=1e-12)
    for p in (1.0, 2.0, 3.0):
        assert function_lp_norm(one, p) == pytest.approx(m.domain_measure ** (1 / p), rel=1e-12)


def test_inner_fields_explicit(mesh8, rng):
    F = DiscreteField(mesh8, rng.normal(size=(mesh8.n_diamonds, 2)))
    G = DiscreteField(mesh8, rng.normal(size=(mesh8.n_diamonds, 2)))
    explicit = sum(mD * f @ g for mD, f, g in zip(mesh8.dia_measure, F.values, G.values))
    assert inner_fields(F, G) == pytest.approx(explicit, rel=1e-12)


def test_projection_of_affine_data_hits_centroids(any_mesh, rng):
    m = any_mesh
    r = rng.normal(size=m.dim)
    f = lambda X: 0.7 + X @ r  # noqa: E731
    u = project_cells(f, m)
    S = m.points[m.cells]
    from ddfv.geometry import simplex_measure

    w = simplex_measure(S)
    c = S.mean(axis=1)
    for K in range(m.n_primal):
        sel = m.cell_cluster == K
        centroid = (w[sel, None] * c[sel]).sum(0) / w[sel].sum()
        assert u.primal[K] == pytest.approx(f(centroid[None])[0], rel=1e-12, abs=1e-13)


def test_projection_of_quadratic_on_squares(mesh8):
    u = project_cells(lambda X: X[:, 0] ** 2, mesh8, order=2)
    h = 1 / 8
    a = mesh8.primal_center[: mesh8.n_primal, 0] - h / 2
    assert np.allclose(u.primal, a * a + a * h + h * h / 3, rtol=1e-12)


def test_project_bar_boundary_values(mesh8):
    psi = project_bar(lambda X: 1 + X[:, 0], mesh8)
    b = np.arange(mesh8.n_primal, mesh8.n_primal_total)
    # boundary primal entries are facet averages: the facet midpoint value
    assert np.allclose(psi.primal[b], 1 + mesh8.primal_center[b, 0])
    assert psi.interface is not None and psi.interface.shape == (mesh8.n_diamonds,)


def test_time_average_closed_forms(mesh4):
    S = time_average(lambda t, X: np.full(len(X), t), 0.1, 3, mesh4)
    for n, s in enumerate(S, 1):
        assert np.allclose(s.primal, (n - 0.5) * 0.1)
    pulse = time_average(lambda t, X: np.full(len(X), 1.0 if t < 0.2 else 0.0), 0.15, 3, mesh4, breakpoints=(0.2,))
    assert np.allclose(pulse[0].primal, 1.0)
    assert np.allclose(pulse[1].primal, 1 / 3)
    assert np.allclose(pulse[2].dual, 0.0)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40))
def test_exact_reductions_are_order_independent(xs):
    a = np.array(xs)
    b = np.linspace(0.5, 2.0, len(a))
    prev = fields.set_exact_reductions(True)
    try:
        got = wdot(a, b)
        perm = np.arange(len(a))[::-1]
        assert got == wdot(a[perm], b[perm])
        assert got == math.fsum(a * b)
    finally:
        fields.set_exact_reductions(prev)


def test_validation_errors(mesh4, mesh8):
    with pytest.raises(MeshMismatch):
        DiscreteFunction(mesh4, np.zeros(3), np.zeros(mesh4.n_dual))
    with pytest.raises(ValueError):
        DiscreteFunction(mesh4, np.full(mesh4.n_primal, np.nan), np.zeros(mesh4.n_dual))
    a = DiscreteFunction(mesh4, np.zeros(mesh4.n_primal), np.zeros(mesh4.n_dual))
    b = DiscreteFunction(mesh8, np.zeros(mesh8.n_primal), np.zeros(mesh8.n_dual))
    with pytest.raises(MeshMismatch):
        inner_functions(a, b)
    with pytest.raises(ValueError):
        SpaceTimeFunction(mesh4, np.zeros((3, mesh4.n_primal_total)), np.zeros((3, mesh4.n_vertices)), 0.1, 0.5)


def test_n_steps():
    assert n_steps(1.0, 1 / 64) == 64
    assert n_steps(0.1, 0.0125) == 8
    assert n_steps(0.5, 0.3) == 1


def test_lift_norm_matches_quadrature(mesh8, rng):
    N = 3
    P = rng.normal(size=(N + 1, mesh8.n_primal_total))
    D = rng.normal(size=(N + 1, mesh8.n_vertices))
    u = SpaceTimeFunction(mesh8, P, D, 0.1, 0.3)
    lift = SpaceTimeLift(u)
    zero = lambda t, X: np.zeros(len(X))  # noqa: E731
    errs = space_time_errors(u, zero, ps=(1.0, 2.0))
    for part in ("primal", "dual"):
        for p in (1.0, 2.0):
            assert lift.lp_norm(p, part) == pytest.approx(errs[f"L{p:g}_{part}"], rel=1e-10)
    up, ud, _ = lift(0.15, mesh8.primal_center[:5] + 1e-3)
    assert np.allclose(up, P[2, :5])
