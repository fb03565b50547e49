import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddfv.physics import (
    A_theta,
    MonotoneMap,
    UnknownProblem,
    builtin_problem,
    burgers_flux,
    diffusion_flux,
    entropy_pair,
    identity_map,
    inverse_lookup,
    linear_flux,
    power_map,
    sign_minus,
    sign_plus,
    stieltjes,
    tilde_A_theta,
)

vals = st.floats(-3, 3, allow_nan=False)


@given(vals)
def test_stieltjes_against_power_closed_form(z):
    # int_0^z s d(|s| s) = 2 |z|^3 / 3
    got = stieltjes(lambda s: s, power_map(2.0), 0.0, z)[0]
    assert got == pytest.approx(2 * abs(z) ** 3 / 3, rel=1e-12, abs=1e-14)


@given(vals, vals)
def test_stieltjes_orientation(a, b):
    th = power_map(3.0)
    f = lambda s: np.cos(s)  # noqa: E731
    assert stieltjes(f, th, a, b)[0] == pytest.approx(-stieltjes(f, th, b, a)[0], abs=1e-13)


def test_stieltjes_jump_picks_point_value():
    # phi(c) (theta(b) - theta(a)) with theta(c) = 0 at the jump itself
    got = stieltjes(lambda s: np.exp(s), sign_plus(0.3), [-1.0, 0.3, 1.0, -1.0], [1.0, 1.0, 0.3, 0.3])
    assert got[0] == pytest.approx(np.exp(0.3))
    assert got[1] == pytest.approx(np.exp(0.3))
    assert got[2] == pytest.approx(-np.exp(0.3))
    assert got[3] == pytest.approx(0.0)


def test_riemann_fallback_agrees():
    smooth = power_map(2.0)
    rough = MonotoneMap(smooth.value)  # no derivative registered
    a = np.array([-1.0, 0.2])
    b = np.array([0.5, 1.5])
    f = lambda s: np.sin(s) + 2  # noqa: E731
    assert np.allclose(stieltjes(f, rough, a, b), stieltjes(f, smooth, a, b), rtol=1e-6)


@given(st.floats(-2, 2), st.floats(-1, 1))
def test_A_theta_sign_plus_closed_form(z, c):
    # int_0^z sign+(s - c) dA(s) = A(max(z, c)) - A(max(0, c))
    A = power_map(2.0)
    got = A_theta(sign_plus(c), A)(np.array([z]))[0]
    exact = float(A(np.array([max(z, c)]))[0] - A(np.array([max(0.0, c)]))[0])
    assert got == pytest.approx(exact, rel=1e-11, abs=1e-12)


@given(st.floats(-5, 5))
def test_inverse_lookup_roundtrip(b):
    A = power_map(3.0)
    z = inverse_lookup(A, np.array([b]))
    assert A(z)[0] == pytest.approx(b, abs=1e-9)
    # int_0^z s d(s^3) = 3 z^4 / 4 with z^3 = b
    assert tilde_A_theta(identity_map(), A)(np.array([b]))[0] == pytest.approx(0.75 * abs(b) ** (4 / 3), abs=1e-8)


@pytest.mark.parametrize("sign", ["+", "-"])
@pytest.mark.parametrize("eps", [0.0, 0.2])
def test_entropy_pair_derivatives(sign, eps):
    f = burgers_flux(2)
    ep = entropy_pair(sign, 0.25, eps, f)
    z = np.array([-0.8, -0.1, 0.37, 0.9])
    h = 1e-6
    deta = (ep.eta(z + h) - ep.eta(z - h)) / (2 * h)
    assert np.allclose(deta, ep.theta(z), atol=1e-6)
    dq = (ep.q(z + h) - ep.q(z - h)) / (2 * h)
    assert np.allclose(dq, ep.theta(z)[:, None] * z[:, None] * f.direction[None, :], atol=1e-5)
    assert np.allclose(ep.q(np.array([0.25])), 0.0)


def test_sign_maps():
    z = np.array([-1.0, 0.0, 0.05, 1.0])
    assert np.array_equal(sign_plus(0.0)(z), [0, 0, 1, 1])
    assert np.array_equal(sign_minus(0.0)(z), [-1, 0, 0, 0])
    assert np.allclose(sign_plus(0.0, 0.1)(z), [0, 0, 0.5, 1])


def test_p_laplace_flux_growth():
    spec = builtin_problem("p_laplace(3)")
    xi = np.array([[3.0, 4.0], [0.0, 0.0]])
    a = diffusion_flux(spec, xi)
    assert np.allclose(np.linalg.norm(a, axis=1), [25.0, 0.0])


def test_builtin_invariants():
    for name in ["heat", "porous_medium(2)", "p_laplace(3)", "polytropic(2,3)", "burgers_diffusion(0.01)", "burgers_diffusion(0)"]:
        spec = builtin_problem(name)
        inv = spec.check_invariants()
        assert inv["f(0)=0"] and inv["A(0)=0"] and inv["A nondecreasing"]
    assert builtin_problem("burgers_diffusion(0)").degenerate_A
    with pytest.raises(UnknownProblem):
        builtin_problem("navier_stokes")
    with pytest.raises(TypeError):
        builtin_problem("heat", bogus=1)


def test_m_bound_pulse_closed_form():
    spec = builtin_problem(
        "porous_medium(2)",
        source=lambda t, X: np.full(len(X), 0.5 if t < 0.2 else 0.0),
        source_sup=lambda t: 0.5 if t < 0.2 else 0.0,
        source_breakpoints=(0.2,),
    )
    assert spec.m_bound(1.0) == pytest.approx(1.1, rel=1e-8)


def test_linear_flux_normal():
    f = linear_flux(2, [3.0, 4.0])
    nu = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(f.normal(np.array([2.0, 2.0]), nu), [6.0, 8.0])
