"""Exact and fine-grid reference solutions used as oracles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .physics import Flux, ProblemSpec, diffusion_flux


@dataclass(frozen=True)
class ReferenceSolution:
    """``u*(t, X)`` with a kind tag and the box it is valid on."""

    evaluate: Callable[[float, np.ndarray], np.ndarray]
    kind: str
    domain: tuple[float, ...]
    meta: dict = field(default_factory=dict)

    def __call__(self, t, X) -> np.ndarray:
        return np.asarray(self.evaluate(t, np.asarray(X, float)), dtype=float)

    def grad(self, t, X, g: Callable | None = None, step: float = 1e-5) -> np.ndarray:
        """Central-difference gradient of ``g(u*)`` (``g`` defaults to identity)."""
        X = np.atleast_2d(np.asarray(X, float))
        g = g or (lambda z: z)
        L = _length(self.domain)
        h = step * L
        out = np.empty_like(X)
        for i in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[i] = h
            out[:, i] = (g(self(t, X + e)) - g(self(t, X - e))) / (2 * h)
        return out


def _length(domain) -> float:
    d = np.asarray(domain, float).reshape(-1, 2)
    return float((d[:, 1] - d[:, 0]).max())


def heat_exact(domain_rect=(0.0, 1.0, 0.0, 1.0), modes=None) -> ReferenceSolution:
    """Separable sine mode of the heat equation vanishing on the box boundary."""
    box = np.asarray(domain_rect, float).reshape(-1, 2)
    dim = len(box)
    k = np.ones(dim) if modes is None else np.asarray(modes, float)
    Ls = box[:, 1] - box[:, 0]
    if np.any(Ls <= 0):
        raise ValueError("empty domain")
    lam = float(np.sum((k * np.pi / Ls) ** 2))

    def u(t, X):
        X = np.asarray(X, float)
        s = np.ones(X.shape[:-1])
        for i in range(dim):
            s = s * np.sin(k[i] * np.pi * (X[..., i] - box[i, 0]) / Ls[i])
        return np.exp(-lam * t) * s

    return ReferenceSolution(u, "exact_closed_form", tuple(box.ravel()), {"lambda": lam, "modes": tuple(k)})


# ---------------------------------------------------------------------------
# 1D vanishing viscosity oracle


def _godunov_1d(f: Flux, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    prof = f.profile
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    cand = [prof(a), prof(b)]
    for c in f.critical_points:
        cand.append(np.where((c > lo) & (c < hi), prof(np.clip(c, lo, hi)), prof(a)))
    C = np.stack(cand)
    return np.where(a <= b, C.min(axis=0), C.max(axis=0))


def vanishing_viscosity_1d(
    f: Flux,
    eps_visc: float,
    fine_n: int,
    u0_1d: Callable[[np.ndarray], np.ndarray],
    T: float,
    *,
    interval=(0.0, 1.0),
    cfl: float = 0.9,
    dt: float | None = None,
    snapshots: int = 400,
    M: float | None = None,
) -> ReferenceSolution:
    """Explicit Godunov plus ``eps`` central diffusion on ``fine_n`` cells.

    The flux must be separable (``f(u) = phi(u) e``); its ``e_1`` component
    drives the 1D problem, and the result is extended constantly in the
    transverse directions.  Boundary values are zero.
    """
    if eps_visc <= 0 or fine_n < 2:
        raise ValueError("need eps_visc > 0 and fine_n >= 2")
    if not f.separable:
        raise ValueError("the 1D oracle needs a separable flux")
    e1 = float(f.direction[0])
    x0, x1 = map(float, interval)
    dx = (x1 - x0) / fine_n
    xc = x0 + dx * (np.arange(fine_n) + 0.5)
    u = np.asarray(u0_1d(xc), float).copy()
    if M is None:
        M = float(np.abs(u).max(initial=0.0))
    grid = np.linspace(-M, M, 2001)
    speed = abs(e1) * float(np.abs(np.gradient(f.profile(grid), grid)).max(initial=0.0)) if M > 0 else 0.0
    dt_max = 1.0 / (2 * eps_visc / dx**2 + speed / dx)
    if dt is None:
        dt = cfl * dt_max
    elif dt > dt_max:
        raise ValueError(f"unstable step {dt:.3e} > {dt_max:.3e}")
    nsteps = max(1, int(np.ceil(T / dt - 1e-12)))
    dt = T / nsteps
    every = max(1, nsteps // snapshots)
    times, frames = [0.0], [u.copy()]
    sign = 1.0 if e1 >= 0 else -1.0
    for n in range(1, nsteps + 1):
        ue = np.concatenate([[0.0], u, [0.0]])
        a, b = (ue[:-1], ue[1:]) if sign > 0 else (ue[1:], ue[:-1])
        g = sign * abs(e1) * _godunov_1d(f, a, b)
        diff = eps_visc * (ue[1:] - ue[:-1]) / dx
        F = g - diff
        u = u - dt / dx * (F[1:] - F[:-1])
        if n % every == 0 or n == nsteps:
            times.append(n * dt)
            frames.append(u.copy())
    times = np.asarray(times)
    frames = np.asarray(frames)

    def evaluate(t, X):
        X = np.asarray(X, float)
        x = X[..., 0] if X.ndim else X
        t = float(np.clip(t, 0.0, times[-1]))
        j = int(np.clip(np.searchsorted(times, t) - 1, 0, len(times) - 2))
        s = (t - times[j]) / (times[j + 1] - times[j])
        prof = (1 - s) * frames[j] + s * frames[j + 1]
        xs = np.concatenate([[x0], xc, [x1]])
        ps = np.concatenate([[0.0], prof, [0.0]])
        return np.interp(x, xs, ps)

    meta = {"dt": dt, "dx": dx, "times": times, "frames": frames, "x": xc, "eps_visc": eps_visc}
    return ReferenceSolution(evaluate, "fine_grid_1d", (x0, x1), meta)


def front_position(x: np.ndarray, values: np.ndarray, level: float = 0.5) -> float:
    """Rightmost crossing of ``level`` by a sampled profile (linear interpolation)."""
    x = np.asarray(x, float)
    v = np.asarray(values, float) - level
    idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) <= 0)[0]
    idx = idx[(v[idx] != 0) | (v[idx + 1] != 0)]
    if len(idx) == 0:
        return float("nan")
    i = idx[-1]
    if v[i] == v[i + 1]:
        return float(x[i])
    return float(x[i] - v[i] * (x[i + 1] - x[i]) / (v[i + 1] - v[i]))


# ---------------------------------------------------------------------------
# manufactured solutions


def _d1(g, X, i, h):
    e = np.zeros(X.shape[-1])
    e[i] = h
    D = lambda hh: (g(X + e * hh / h) - g(X - e * hh / h)) / (2 * hh)  # noqa: E731
    return (4 * D(h / 2) - D(h)) / 3


def manufactured(
    spec: ProblemSpec,
    ustar: Callable[[float, np.ndarray], np.ndarray],
    *,
    length: float = 1.0,
    domain=None,
    step: float = 1e-5,
    inner_step: float = 1e-3,
) -> tuple[ReferenceSolution, Callable[[float, np.ndarray], np.ndarray]]:
    """Source ``S = d_t u* + div f(u*) - div a(grad A(u*))`` by nested central differences.

    First derivatives use ``step * length``; the nested diffusion term uses
    ``inner_step * length`` for both levels.  Every difference quotient is
    Richardson-extrapolated once.
    """
    h = step * length
    hi = inner_step * length
    f = spec.f

    def dt_u(t, X):
        D = lambda k: (ustar(t + k, X) - ustar(t - k, X)) / (2 * k)  # noqa: E731
        return (4 * D(h / 2) - D(h)) / 3

    def div_f(t, X):
        if f.is_zero:
            return np.zeros(X.shape[:-1])
        out = np.zeros(X.shape[:-1])
        for i in range(X.shape[-1]):
            out += _d1(lambda Y, i=i: f(ustar(t, Y))[..., i], X, i, h)
        return out

    def flux_a(t, Y):
        gA = np.stack([_d1(lambda Z: spec.A(ustar(t, Z)), Y, j, hi) for j in range(Y.shape[-1])], axis=-1)
        return diffusion_flux(spec, gA)

    def div_a(t, X):
        if spec.degenerate_A:
            return np.zeros(X.shape[:-1])
        out = np.zeros(X.shape[:-1])
        for i in range(X.shape[-1]):
            out += _d1(lambda Y, i=i: flux_a(t, Y)[..., i], X, i, hi)
        return out

    def S(t, X):
        X = np.asarray(X, float)
        return dt_u(t, X) + div_f(t, X) - div_a(t, X)

    dom = tuple(domain) if domain is not None else (0.0, length) * spec.dim
    return ReferenceSolution(ustar, "manufactured", dom, {"source": S}), S
