"""Problem data and the scalar nonlinearity calculus.

Monotone maps (the diffusion nonlinearity ``A`` and entropy weights
``theta``) are described by a value function, an optional derivative, the
points where the derivative is discontinuous and a list of jumps.  This is
enough to evaluate Stieltjes integrals ``int phi dtheta`` exactly for
polynomial ``phi`` on each smooth piece.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .quadrature import gauss_legendre01


class UnknownProblem(ValueError):
    pass


class QuadratureFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# monotone maps and Stieltjes integrals


@dataclass(frozen=True)
class Jump:
    at: float
    left: float
    right: float


@dataclass(frozen=True)
class MonotoneMap:
    """Nondecreasing, piecewise continuous scalar map.

    ``value`` must return the value *at* jump points (for the sign functions
    that value is 0).  ``derivative`` is the a.e. derivative; without it the
    Stieltjes integral falls back to a fine Riemann-Stieltjes sum.
    """

    value: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray] | None = None
    breakpoints: tuple[float, ...] = ()
    jumps: tuple[Jump, ...] = ()
    name: str = ""
    sup: float | None = None

    def __call__(self, z):
        return self.value(np.asarray(z, dtype=float))

    def knots(self) -> np.ndarray:
        return np.unique(np.array(list(self.breakpoints) + [j.at for j in self.jumps], dtype=float))


def identity_map() -> MonotoneMap:
    return MonotoneMap(lambda z: np.array(z, dtype=float), lambda z: np.ones_like(z), name="Id")


def constant_map(c: float = 1.0) -> MonotoneMap:
    return MonotoneMap(lambda z: np.full_like(np.asarray(z, float), c), lambda z: np.zeros_like(z), name=f"const({c:g})", sup=abs(c))


def zero_map() -> MonotoneMap:
    return MonotoneMap(lambda z: np.zeros_like(np.asarray(z, float)), lambda z: np.zeros_like(z), name="0", sup=0.0)


def linear_map(slope: float) -> MonotoneMap:
    if slope < 0:
        raise ValueError("slope must be nonnegative")
    return MonotoneMap(
        lambda z: slope * np.asarray(z, float), lambda z: np.full_like(z, slope), name=f"{slope:g}*z"
    )


def power_map(m: float) -> MonotoneMap:
    """``z -> |z|^(m-1) z``."""
    if m <= 0:
        raise ValueError("exponent must be positive")

    def val(z):
        z = np.asarray(z, float)
        return np.abs(z) ** (m - 1) * z

    def der(z):
        return m * np.abs(z) ** (m - 1)

    return MonotoneMap(val, der, breakpoints=(0.0,), name=f"|z|^{m - 1:g}z")


def sign_plus(c: float = 0.0, eps: float = 0.0) -> MonotoneMap:
    """``sign^+(z - c)``, or its ramp regularisation of width ``eps``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return MonotoneMap(
            lambda z: (np.asarray(z, float) > c).astype(float),
            lambda z: np.zeros_like(z),
            jumps=(Jump(c, 0.0, 1.0),),
            name=f"sign+(z-{c:g})",
            sup=1.0,
        )
    return MonotoneMap(
        lambda z: np.clip((np.asarray(z, float) - c) / eps, 0.0, 1.0),
        lambda z: ((z > c) & (z < c + eps)).astype(float) / eps,
        breakpoints=(c, c + eps),
        name=f"sign+_{eps:g}(z-{c:g})",
        sup=1.0,
    )


def sign_minus(c: float = 0.0, eps: float = 0.0) -> MonotoneMap:
    """``sign^-(z - c) = -1`` below ``c``, 0 above (ramp of width ``eps``)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0:
        return MonotoneMap(
            lambda z: -(np.asarray(z, float) < c).astype(float),
            lambda z: np.zeros_like(z),
            jumps=(Jump(c, -1.0, 0.0),),
            name=f"sign-(z-{c:g})",
            sup=1.0,
        )
    return MonotoneMap(
        lambda z: -np.clip((c - np.asarray(z, float)) / eps, 0.0, 1.0),
        lambda z: ((z > c - eps) & (z < c)).astype(float) / eps,
        breakpoints=(c - eps, c),
        name=f"sign-_{eps:g}(z-{c:g})",
        sup=1.0,
    )


_GL_N = 8
_GL_SUB = 4


def stieltjes(
    phi: Callable[[np.ndarray], np.ndarray],
    theta: MonotoneMap,
    a,
    b,
    extra_knots: Sequence[float] = (),
    riemann_points: int = 4000,
) -> np.ndarray:
    """``int_a^b phi(s) dtheta(s)`` for arrays of bounds.

    ``phi`` receives ``s`` with shape ``(n, q)`` (row ``i`` belongs to the
    ``i``-th pair of bounds) and must return the same shape.  For ``a > b``
    the orientation is reversed.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    a, b = np.broadcast_arrays(a, b)
    n = a.size
    a, b = a.ravel(), b.ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    sgn = np.sign(b - a)
    out = np.zeros(n)

    if theta.derivative is None:
        t = np.linspace(0.0, 1.0, riemann_points + 1)
        s = lo[:, None] + (hi - lo)[:, None] * t[None, :]
        mid = 0.5 * (s[:, 1:] + s[:, :-1])
        dth = np.diff(theta(s), axis=1)
        out = (phi(mid) * dth).sum(axis=1)
        return (sgn * out).reshape(np.shape(a))

    knots = np.unique(np.concatenate([theta.knots(), np.asarray(extra_knots, float)]))
    edges = np.concatenate([[-np.inf], knots, [np.inf]])
    xg, wg = gauss_legendre01(_GL_N)
    sub = np.arange(_GL_SUB)
    loc = ((sub[:, None] + xg[None, :]) / _GL_SUB).ravel()
    wloc = np.tile(wg / _GL_SUB, _GL_SUB)
    for e0, e1 in zip(edges[:-1], edges[1:]):
        s0 = np.maximum(lo, e0)
        s1 = np.minimum(hi, e1)
        L = np.where(s1 > s0, s1 - s0, 0.0)
        if not np.any(L > 0):
            continue
        s = s0[:, None] + L[:, None] * loc[None, :]
        val = phi(s) * theta.derivative(s)
        out += L * (val * wloc[None, :]).sum(axis=1)
    for j in theta.jumps:
        c = j.at
        vc = float(theta(np.array([c]))[0])
        pc = phi(np.full((n, 1), c))[:, 0]
        inside = (lo < c) & (c < hi)
        at_lo = (lo == c) & (hi > c)
        at_hi = (hi == c) & (lo < c)
        out += np.where(inside, pc * (j.right - j.left), 0.0)
        out += np.where(at_lo, pc * (j.right - vc), 0.0)
        out += np.where(at_hi, pc * (vc - j.left), 0.0)
    return (sgn * out).reshape(np.shape(a))


# ---------------------------------------------------------------------------
# convective flux


@dataclass(frozen=True)
class Flux:
    """Convective flux ``f : R -> R^d``.

    When ``f(u) = phi(u) e`` with a fixed direction ``e`` the scalar profile
    and its critical points make the monotone numerical fluxes exact.
    """

    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    direction: np.ndarray | None = None
    profile: Callable[[np.ndarray], np.ndarray] | None = None
    profile_derivative: Callable[[np.ndarray], np.ndarray] | None = None
    critical_points: tuple[float, ...] = ()
    name: str = ""

    def __call__(self, u) -> np.ndarray:
        return self.evaluate(np.asarray(u, dtype=float))

    @property
    def separable(self) -> bool:
        return self.direction is not None and self.profile is not None

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def normal(self, u: np.ndarray, nu: np.ndarray) -> np.ndarray:
        """``f(u) . nu`` with ``u`` of shape ``(n, ...)`` and ``nu`` of shape ``(n, d)``."""
        u = np.asarray(u, dtype=float)
        if self.separable:
            s = nu @ self.direction
            return self.profile(u) * s.reshape((-1,) + (1,) * (u.ndim - 1))
        F = self(u)
        return np.einsum("n...d,nd->n...", F, nu)


def zero_flux(dim: int) -> Flux:
    e = np.zeros(dim)
    e[0] = 1.0
    return Flux(
        dim,
        lambda u: np.zeros(np.shape(u) + (dim,)),
        direction=e,
        profile=lambda u: np.zeros_like(u),
        profile_derivative=lambda u: np.zeros_like(u),
        name="zero",
    )


def separable_flux(dim: int, direction, profile, derivative=None, critical_points=(), name="") -> Flux:
    e = np.zeros(dim)
    direction = np.asarray(direction, dtype=float)
    e[: len(direction)] = direction
    return Flux(
        dim,
        lambda u: profile(u)[..., None] * e,
        direction=e,
        profile=profile,
        profile_derivative=derivative,
        critical_points=tuple(critical_points),
        name=name,
    )


def burgers_flux(dim: int, direction=(1.0,)) -> Flux:
    return separable_flux(dim, direction, lambda u: 0.5 * u * u, lambda u: u, (0.0,), name="burgers")


def linear_flux(dim: int, velocity) -> Flux:
    v = np.asarray(velocity, dtype=float)
    nv = np.linalg.norm(v)
    e = v / nv if nv > 0 else v
    return separable_flux(dim, e, lambda u: nv * u, lambda u: np.full_like(u, nv), (), name="linear")


# ---------------------------------------------------------------------------
# problem specification


@dataclass(frozen=True)
class ProblemSpec:
    """Continuous data of the convection-diffusion problem.

    ``k`` is radial: ``a(xi) = k(|xi|) xi`` with ``a(0) = 0``.
    Callables take ``(n, d)`` points; ``source`` also takes a time.
    """

    name: str
    dim: int
    f: Flux
    A: MonotoneMap
    k: Callable[[np.ndarray], np.ndarray]
    p: float
    source: Callable[[float, np.ndarray], np.ndarray]
    u0: Callable[[np.ndarray], np.ndarray]
    source_breakpoints: tuple[float, ...] = ()
    exact: Callable[[float, np.ndarray], np.ndarray] | None = None
    u0_sup: float | None = None
    source_sup: Callable[[float], float] | None = None
    A_inverse: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    @property
    def degenerate_A(self) -> bool:
        return self.A.name == "0"

    def a(self, xi: np.ndarray) -> np.ndarray:
        return diffusion_flux(self, xi)

    def m_bound(self, T: float, sample_points: np.ndarray | None = None) -> float:
        """``||u0||_inf + int_0^T ||S(t)||_inf dt``."""
        if self.u0_sup is not None:
            u0s = self.u0_sup
        elif sample_points is not None:
            u0s = float(np.abs(self.u0(sample_points)).max())
        else:
            raise ValueError("need u0_sup or sample points")
        if self.source_sup is not None:
            sup = self.source_sup
        elif sample_points is not None:
            def sup(t):
                return float(np.abs(self.source(t, sample_points)).max())
        else:
            raise ValueError("need source_sup or sample points")
        pts = [b for b in self.source_breakpoints if 0 < b < T]
        val, _ = quad(sup, 0.0, T, points=pts or None, epsabs=1e-8, epsrel=1e-8, limit=200)
        return float(u0s + val)

    def check_invariants(self, M: float = 1.0, n: int = 2001, seed: int = 0) -> dict:
        """Sampled checks of the structural assumptions on ``f``, ``A``, ``k``."""
        z = np.linspace(-M, M, n)
        Az = self.A(z)
        rng = np.random.default_rng(seed)
        r = 10.0 ** rng.uniform(-3, 3, 1000)
        kr = self.k(r)
        ref = r ** (self.p - 2)
        ratio = np.concatenate([kr / ref, ref / kr])
        return {
            "f(0)=0": bool(np.all(self.f(np.zeros(1)) == 0.0)),
            "A(0)=0": bool(self.A(np.zeros(1))[0] == 0.0),
            "A nondecreasing": bool(np.all(np.diff(Az) >= -1e-14 * max(1.0, np.abs(Az).max()))),
            "k growth constant": float(ratio.max()),
            "p": self.p,
        }


def diffusion_flux(spec: ProblemSpec, xi: np.ndarray, delta: float = 0.0) -> np.ndarray:
    """``a(xi) = k(|xi|) xi``; ``k`` is evaluated at ``max(|xi|, delta)``."""
    xi = np.asarray(xi, dtype=float)
    r = np.linalg.norm(xi, axis=-1)
    rr = np.maximum(r, delta) if delta > 0 else r
    with np.errstate(divide="ignore", invalid="ignore"):
        kv = np.where(rr > 0, spec.k(np.where(rr > 0, rr, 1.0)), 0.0)
    return kv[..., None] * xi


def A_theta(theta: MonotoneMap, spec_or_A) -> Callable[[np.ndarray], np.ndarray]:
    """``z -> int_0^z theta dA``."""
    A = spec_or_A.A if isinstance(spec_or_A, ProblemSpec) else spec_or_A
    if A.derivative is None:
        raise QuadratureFailure("A needs a registered derivative")
    integrator = MonotoneMap(A.value, A.derivative, breakpoints=tuple(A.breakpoints) + tuple(theta.knots()))

    def f(z):
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        out = stieltjes(lambda s: theta(s), integrator, np.zeros_like(flat), flat)
        return out.reshape(z.shape)

    return f


def inverse_lookup(A: MonotoneMap, b, lo: float = -1e3, hi: float = 1e3, iters: int = 200) -> np.ndarray:
    """A preimage of ``b`` under ``A``; plateaus resolve to their midpoint."""
    b = np.asarray(b, dtype=float)
    flat = b.ravel()
    Alo, Ahi = float(A(np.array([lo]))[0]), float(A(np.array([hi]))[0])
    if np.any(flat < Alo) or np.any(flat > Ahi):
        raise ValueError("value outside the range of A")
    # smallest z with A(z) >= b
    l1, h1 = np.full_like(flat, lo), np.full_like(flat, hi)
    # largest z with A(z) <= b
    l2, h2 = np.full_like(flat, lo), np.full_like(flat, hi)
    for _ in range(iters):
        m1 = 0.5 * (l1 + h1)
        ge = A(m1) >= flat
        h1 = np.where(ge, m1, h1)
        l1 = np.where(ge, l1, m1)
        m2 = 0.5 * (l2 + h2)
        le = A(m2) <= flat
        l2 = np.where(le, m2, l2)
        h2 = np.where(le, h2, m2)
        if np.all(h1 - l1 < 1e-12) and np.all(h2 - l2 < 1e-12):
            break
    return (0.5 * (h1 + l2)).reshape(b.shape)


def tilde_A_theta(theta: MonotoneMap, spec_or_A, lo: float = -1e3, hi: float = 1e3):
    """``b -> A_theta(z)`` for any ``z`` with ``A(z) = b``."""
    A = spec_or_A.A if isinstance(spec_or_A, ProblemSpec) else spec_or_A
    At = A_theta(theta, A)

    def f(b):
        return At(inverse_lookup(A, b, lo, hi))

    return f


# ---------------------------------------------------------------------------
# semi-Kruzhkov entropy pairs


@dataclass(frozen=True)
class EntropyPair:
    sign: str
    c: float
    eps: float
    theta: MonotoneMap
    eta: Callable[[np.ndarray], np.ndarray]
    q: Callable[[np.ndarray], np.ndarray]


def entropy_pair(sign: str, c: float, eps: float, spec_or_flux) -> EntropyPair:
    """Semi-Kruzhkov pair ``((z-c)^+-, sign^+-(z-c)(f(z)-f(c)))``, optionally regularised."""
    f = spec_or_flux.f if isinstance(spec_or_flux, ProblemSpec) else spec_or_flux
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    th = sign_plus(c, eps) if sign == "+" else sign_minus(c, eps)
    fc = f(np.array([c]))[0]

    if eps == 0:
        def eta(z):
            z = np.asarray(z, float)
            return np.maximum(z - c, 0.0) if sign == "+" else np.maximum(c - z, 0.0)

        def q(z):
            z = np.asarray(z, float)
            return th(z)[..., None] * (f(z) - fc)

        return EntropyPair(sign, c, eps, th, eta, q)

    xg, wg = gauss_legendre01(16)

    def eta(z):
        z = np.asarray(z, float)
        if sign == "+":
            y = np.clip(z - c, 0.0, eps)
            return y * y / (2 * eps) + np.maximum(z - c - eps, 0.0)
        y = np.clip(c - z, 0.0, eps)
        return y * y / (2 * eps) + np.maximum(c - eps - z, 0.0)

    def q(z):
        # q(z) = th(z)(f(z)-f(c)) - int_c^z (f(s)-f(c)) th'(s) ds
        z = np.asarray(z, float)
        flat = z.ravel()
        a0, a1 = (c, c + eps) if sign == "+" else (c - eps, c)
        s0 = np.clip(np.minimum(flat, c), a0, a1) if sign == "-" else np.full_like(flat, a0)
        s1 = np.clip(flat, a0, a1) if sign == "+" else np.full_like(flat, a1)
        L = s1 - s0
        s = s0[:, None] + L[:, None] * xg[None, :]
        Fs = f(s) - fc
        integ = (Fs * (wg[None, :, None] * L[:, None, None])).sum(axis=1) / eps
        # orientation: for '-' the integral runs from c down to z
        if sign == "-":
            integ = -integ
        out = th(flat)[:, None] * (f(flat) - fc) - integ
        return out.reshape(z.shape + (f.dim,))

    return EntropyPair(sign, c, eps, th, eta, q)


# ---------------------------------------------------------------------------
# built-in problems


def _bump(X: np.ndarray) -> np.ndarray:
    r2 = ((X - 0.5) ** 2).sum(axis=-1)
    return np.where(r2 < 0.09, np.cos(np.pi * np.sqrt(r2) / 0.6) ** 2, 0.0)


def _zero_source(t, X):
    return np.zeros(len(X))


def _parse_name(name: str) -> tuple[str, list[float]]:
    m = re.fullmatch(r"\s*([a-z_]+)\s*(?:\((.*)\))?\s*", name)
    if not m:
        raise UnknownProblem(name)
    args = [float(x) for x in m.group(2).split(",")] if m.group(2) else []
    return m.group(1), args


def builtin_problem(name: str, dim: int = 2, **kw) -> ProblemSpec:
    """Named model problem.

    ``name`` is one of ``heat``, ``porous_medium(m)``, ``p_laplace(p)``,
    ``polytropic(m,p)``, ``burgers_diffusion(nu)`` or ``custom``.  Keyword
    overrides: ``u0``, ``source``, ``source_breakpoints``, ``u0_sup``,
    ``source_sup``, ``exact``, ``flux``, ``A``, ``k``, ``p``.
    """
    base, args = _parse_name(name)
    params: dict = {}
    exact = None
    u0 = _bump
    u0_sup = 1.0
    f = zero_flux(dim)

    def k_one(r):
        return np.ones_like(r)

    k, p, A = k_one, 2.0, identity_map()
    Ainv = None
    if base == "heat":
        lam = dim * np.pi**2

        def exact(t, X):
            return np.exp(-lam * t) * np.prod(np.sin(np.pi * X), axis=-1)

        def u0(X):
            return exact(0.0, X)

        Ainv = lambda b: np.asarray(b, float)  # noqa: E731
    elif base == "porous_medium":
        m = args[0] if args else kw.pop("m", 2.0)
        params["m"] = m
        A = power_map(m)
        Ainv = lambda b: np.sign(b) * np.abs(b) ** (1.0 / m)  # noqa: E731
    elif base == "p_laplace":
        p = args[0] if args else kw.pop("p", 3.0)
        params["p"] = p
        k = _radial_power(p)
    elif base == "polytropic":
        m = args[0] if len(args) > 0 else kw.pop("m", 2.0)
        p = args[1] if len(args) > 1 else kw.pop("p", 3.0)
        params.update(m=m, p=p)
        A = power_map(m)
        k = _radial_power(p)
    elif base == "burgers_diffusion":
        nu = args[0] if args else kw.pop("nu", 0.0)
        if nu < 0:
            raise ValueError("viscosity must be nonnegative")
        params["nu"] = nu
        A = zero_map() if nu == 0 else linear_map(nu)
        f = burgers_flux(dim)
        u0 = _bump
    elif base == "custom":
        pass
    else:
        raise UnknownProblem(name)

    f = kw.pop("flux", f)
    A = kw.pop("A", A)
    k = kw.pop("k", k)
    p = kw.pop("p", p)
    source = kw.pop("source", _zero_source)
    source_sup = kw.pop("source_sup", None)
    if source is _zero_source and source_sup is None:
        source_sup = lambda t: 0.0  # noqa: E731
    if "u0" in kw:
        u0 = kw.pop("u0")
        u0_sup = kw.pop("u0_sup", None)
    else:
        u0_sup = kw.pop("u0_sup", u0_sup)
    exact = kw.pop("exact", exact)
    bps = tuple(kw.pop("source_breakpoints", ()))
    if kw:
        raise TypeError(f"unexpected options {sorted(kw)}")
    return ProblemSpec(
        name=name.strip(),
        dim=dim,
        f=f,
        A=A,
        k=k,
        p=float(p),
        source=source,
        u0=u0,
        source_breakpoints=bps,
        exact=exact,
        u0_sup=u0_sup,
        source_sup=source_sup,
        A_inverse=Ainv,
        params=params,
    )


def _radial_power(p: float):
    def k(r):
        return np.asarray(r, float) ** (p - 2)

    return k
