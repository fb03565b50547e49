"""Command line entry point: ``ddfv {mesh-info,verify,run,convergence}``.

Configuration is an INI-style file (``[section]`` headers, ``key = value``
lines, ``#`` or ``;`` comments).  See ``configs/`` and the README for the
full key list.  The only environment override is ``OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fields
from .files import (
    fmt,
    load_mesh,
    write_function_csv,
    write_key_values,
    write_space_time_csv,
    write_steps_csv,
    write_table,
    write_vtk_dual,
    write_vtk_primal,
)
from .mesh import DdfvMesh, MeshError, build_structured_2d, build_structured_3d, mesh_report
from .physics import (
    ProblemSpec,
    UnknownProblem,
    builtin_problem,
    burgers_flux,
    linear_flux,
    zero_flux,
)
from .solver import NonConvergence, RunResult, SchemeConfig, discrete_entropy_residuals, run

log = logging.getLogger("ddfv")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4


class ConfigError(ValueError):
    """Missing or malformed configuration entry."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Parsed configuration document with typed accessors."""

    parser: configparser.ConfigParser
    source: str = "<defaults>"

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
        if path is not None:
            try:
                with open(path) as fh:
                    cp.read_file(fh, source=str(path))
            except OSError as exc:
                raise ConfigError(f"{path}: {exc.strerror}") from exc
            except configparser.Error as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls(cp, str(path) if path else "<defaults>")

    def has(self, section: str, key: str) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section: str, key: str, default=None, *, required: bool = False) -> str | None:
        if self.has(section, key):
            return self.parser.get(section, key).strip()
        if required:
            raise ConfigError(f"{self.source}: missing [{section}] {key}")
        return default

    def _typed(self, conv, section, key, default, required):
        raw = self.get(section, key, None, required=required)
        if raw is None:
            return default
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} = {raw!r} is not a valid {conv.__name__}") from None

    def float(self, section, key, default=None, required=False) -> float:
        return self._typed(float, section, key, default, required)

    def int(self, section, key, default=None, required=False) -> int:
        return self._typed(int, section, key, default, required)

    def bool(self, section, key, default=False) -> bool:
        raw = self.get(section, key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ConfigError(f"{self.source}: [{section}] {key} = {raw!r} is not a boolean")

    def list(self, section, key, default=(), conv=str) -> list:
        raw = self.get(section, key)
        if raw is None:
            return list(default)
        try:
            return [conv(x) for x in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{self.source}: [{section}] {key} = {raw!r} has a malformed entry") from None


def output_dir(cfg: RunConfig) -> Path:
    d = Path(os.environ.get("OUTPUT_DIR") or cfg.get("output", "dir", "out"))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _formats(cfg: RunConfig) -> set[str]:
    return set(cfg.list("output", "formats", ("csv", "vtk")))


# ---------------------------------------------------------------------------
# builders


def build_mesh(cfg: RunConfig, n: int | None = None) -> DdfvMesh:
    """Mesh from the ``[mesh]`` section; ``n`` overrides the resolution."""
    builder = cfg.get("mesh", "builder", required=True)
    clip = cfg.bool("mesh", "force_clipping")
    if builder == "structured_2d":
        nx = n or cfg.int("mesh", "nx", None) or cfg.int("mesh", "n", 8)
        ny = n or cfg.int("mesh", "ny", None) or nx
        dom = tuple(cfg.list("mesh", "domain", (0.0, 1.0, 0.0, 1.0), float))
        return build_structured_2d(nx, ny, dom, cfg.get("mesh", "pattern", "union_jack"), force_clipping=clip)
    if builder == "structured_3d":
        nx = n or cfg.int("mesh", "nx", None) or cfg.int("mesh", "n", 2)
        ny = n or cfg.int("mesh", "ny", None) or nx
        nz = n or cfg.int("mesh", "nz", None) or nx
        dom = tuple(cfg.list("mesh", "domain", (0.0, 1.0, 0.0, 1.0, 0.0, 1.0), float))
        return build_structured_3d(nx, ny, nz, dom, force_clipping=clip)
    if builder == "file":
        path = cfg.get("mesh", "file", required=True)
        if n is not None:
            raise ConfigError("refinement ladders need a structured builder")
        return load_mesh(path, force_clipping=clip)
    raise ConfigError(f"{cfg.source}: unknown mesh builder {builder!r}")


def _riemann(left: float, right: float, x0: float):
    def u0(X):
        return np.where(np.asarray(X)[:, 0] < x0, left, right).astype(float)

    return u0


def build_problem(cfg: RunConfig, dim: int) -> ProblemSpec:
    name = cfg.get("problem", "name", required=True)
    kw: dict = {}
    init = cfg.get("problem", "u0", "default")
    if init == "riemann":
        left = cfg.float("problem", "riemann_left", 1.0)
        right = cfg.float("problem", "riemann_right", 0.0)
        x0 = cfg.float("problem", "riemann_x", 0.4)
        kw.update(u0=_riemann(left, right, x0), u0_sup=max(abs(left), abs(right)))
    elif init == "constant":
        c = cfg.float("problem", "u0_value", 0.5)
        kw.update(u0=lambda X: np.full(len(X), c), u0_sup=abs(c))
    elif init != "default":
        raise ConfigError(f"{cfg.source}: unknown initial datum {init!r}")
    src = cfg.get("problem", "source", "zero")
    if src == "pulse":
        val = cfg.float("problem", "source_value", 0.5)
        until = cfg.float("problem", "source_until", 0.2)

        def source(t, X):
            return np.full(len(X), val if t < until else 0.0)

        kw.update(source=source, source_sup=lambda t: abs(val) if t < until else 0.0, source_breakpoints=(until,))
    elif src != "zero":
        raise ConfigError(f"{cfg.source}: unknown source {src!r}")
    fl = cfg.get("problem", "flux")
    if fl is not None:
        if fl == "burgers":
            kw["flux"] = burgers_flux(dim)
        elif fl == "zero":
            kw["flux"] = zero_flux(dim)
        elif fl == "linear":
            kw["flux"] = linear_flux(dim, cfg.list("problem", "velocity", [1.0] * dim, float))
        else:
            raise ConfigError(f"{cfg.source}: unknown flux {fl!r}")
    try:
        return builtin_problem(name, dim, **kw)
    except UnknownProblem as exc:
        raise ConfigError(f"{cfg.source}: unknown problem {exc}") from None


def build_scheme(cfg: RunConfig, dt: float | None = None) -> SchemeConfig:
    cont = cfg.get("scheme", "continuation")
    extra = {}
    if cont is not None:
        extra["continuation"] = () if cont.strip() == "none" else tuple(cfg.list("scheme", "continuation", conv=float))
    try:
        return SchemeConfig(
            dt=dt if dt is not None else cfg.float("scheme", "dt", required=True),
            T=cfg.float("scheme", "T", required=True),
            flux=cfg.get("scheme", "flux", "godunov"),
            penalization=cfg.bool("scheme", "penalization", True),
            rho=cfg.float("scheme", "rho", 0.0),
            tol=cfg.float("scheme", "tol", 1e-10),
            max_newton=cfg.int("scheme", "max_newton", 30),
            picard_fallback=cfg.bool("scheme", "picard", True),
            picard_relaxation=cfg.float("scheme", "picard_relaxation", 1.0),
            linear_solver=cfg.get("scheme", "linear_solver", "direct"),
            **extra,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{cfg.source}: [scheme] {exc}") from None


# ---------------------------------------------------------------------------
# report helpers


def emit_block(name: str, items) -> None:
    """Delimited ``key: value`` block on stdout."""
    print(f"===== BEGIN {name} =====")
    rows = items.items() if isinstance(items, dict) else items
    for k, v in rows:
        print(f"{k}: {fmt(v)}")
    print(f"===== END {name} =====")


def _figures(kind: str, out: Path, **kw) -> list[Path]:
    from . import figures

    paths: list[Path] = []
    if kind == "mesh":
        paths.append(figures.plot_mesh(kw["mesh"], out / "mesh.png"))
    elif kind == "run":
        res: RunResult = kw["result"]
        N = res.u.N
        paths.append(figures.plot_fields(res.mesh, res.u.primal[N], res.u.dual[N], out / "solution.png"))
        if res.reports:
            paths.append(figures.plot_history(res.reports, res.per_step, out / "history.png"))
    elif kind == "convergence":
        paths.append(figures.plot_convergence(kw["rows"], kw["keys"], out / "convergence.png"))
    return paths


# ---------------------------------------------------------------------------
# commands


def cmd_mesh_info(cfg: RunConfig, args) -> int:
    mesh = build_mesh(cfg)
    rep = mesh_report(mesh)
    out = output_dir(cfg)
    write_key_values(out / "mesh_report.csv", rep)
    emit_block("mesh-info", rep)
    if "png" in _formats(cfg):
        _figures("mesh", out, mesh=mesh)
    return EXIT_OK


def _verify_meshes(cfg: RunConfig) -> list[DdfvMesh]:
    meshes = [build_mesh(cfg)]
    for extra in cfg.list("verify", "extra_meshes"):
        if extra == "structured_3d":
            meshes.append(build_structured_3d(2, 2, 2))
        elif extra == "structured_2d":
            meshes.append(build_structured_2d(8, 8))
        else:
            meshes.append(load_mesh(extra))
    return meshes


def cmd_verify(cfg: RunConfig, args) -> int:
    from .verify import CHECKS, flipped_divergence, run_suite
    from .operators import divergence

    seed = args.seed if args.seed is not None else cfg.int("verify", "seed", 0)
    inject = cfg.get("verify", "inject", "none")
    if inject not in ("none", "divergence_sign_flip"):
        raise ConfigError(f"{cfg.source}: unknown injection {inject!r}")
    div = flipped_divergence if inject == "divergence_sign_flip" else divergence
    checks = cfg.list("verify", "checks", CHECKS)
    samples = {k: cfg.int("verify", f"samples_{k}") for k in ("duality", "reconstruction", "entropy", "penalization", "evolution", "convection", "triangles")}
    samples = {k: v for k, v in samples.items() if v is not None}
    specs = cfg.list("verify", "specs", ("porous_medium(2)", "p_laplace(3)"))
    try:
        report = run_suite(_verify_meshes(cfg), seed, div=div, spec_names=specs, samples=samples, checks=checks)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = output_dir(cfg)
    write_table(
        out / "verify.csv",
        ["check", "passed", "value", "tolerance", "detail"],
        [(r.name, int(r.passed), r.value, r.tolerance, r.detail) for r in report.results],
    )
    print("===== BEGIN verify =====")
    for r in report.results:
        print(r.line())
    print("===== END verify =====")
    if not report.passed:
        failed = [r.name for r in report.results if not r.passed]
        print(f"verification FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _l2_per_step(res: RunResult) -> np.ndarray:
    from .studies import piece_quadrature

    pq = piece_quadrature(res.mesh, 4)
    d = res.mesh.dim
    errs = np.zeros(res.u.N + 1)
    for n in range(res.u.N + 1):
        comb = res.u.primal[n, pq.K] / d + (d - 1) * res.u.dual[n, pq.V] / d
        ex = np.asarray(res.spec.exact(n * res.cfg.dt, pq.X), float)
        errs[n] = float(np.sqrt(np.dot(pq.W, (comb - ex) ** 2)))
    return errs


def write_run_outputs(cfg: RunConfig, res: RunResult, out: Path, *, partial: bool = False) -> dict:
    forms = _formats(cfg)
    extra = {k: res.per_step[k] for k in ("mass_primal", "mass_dual", "boundary_flux_primal") if k in res.per_step}
    diag = dict(res.diagnostics)
    diag.update(problem=res.spec.name, dt=res.cfg.dt, T=res.cfg.T, flux=res.cfg.flux, penalization=int(res.cfg.penalization), partial=int(partial))
    if res.spec.exact is not None:
        errs = _l2_per_step(res)
        extra["l2_error"] = errs
        diag["final_L2_error"] = float(errs[res.u.N])
    if "csv" in forms:
        write_space_time_csv(out / "solution.csv", res.u)
        write_steps_csv(out / "steps.csv", res.reports, extra)
    if "vtk" in forms:
        N = res.u.N
        write_vtk_primal(out / "solution_primal.vtk", res.mesh, res.u.primal[N])
        write_vtk_dual(out / "solution_dual.vtk", res.mesh, res.u.dual[N])
    if cfg.bool("output", "entropy_residuals") and not partial and res.u.N > 0:
        rows = discrete_entropy_residuals(res)
        write_table(
            out / "entropy_residuals.csv",
            ["kind", "sign", "c", "test", "lhs", "remainder", "slack", "scale", "dissipation"],
            [(r.kind, r.sign, r.c, r.test, r.lhs, r.remainder, r.slack, r.scale, r.dissipation) for r in rows],
        )
        weak = [abs(r.slack) / r.scale for r in rows if r.kind == "weak"]
        ent = [r.slack / r.scale for r in rows if r.kind == "entropy"]
        diag["entropy_weak_max_rel"] = max(weak, default=0.0)
        diag["entropy_ineq_min_rel"] = min(ent, default=0.0)
    write_key_values(out / "diagnostics.csv", diag)
    if "png" in forms:
        _figures("run", out, result=res)
    return diag


def cmd_run(cfg: RunConfig, args) -> int:
    mesh = build_mesh(cfg)
    spec = build_problem(cfg, mesh.dim)
    scheme = build_scheme(cfg)
    out = output_dir(cfg)
    try:
        res = run(spec, mesh, scheme)
    except NonConvergence as exc:
        if exc.partial is not None:
            diag = write_run_outputs(cfg, exc.partial, out, partial=True)
            emit_block("run", diag)
        print(f"solver failed: {exc} (residual {exc.residual:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    emit_block("run", write_run_outputs(cfg, res, out))
    return EXIT_OK


def build_reference(cfg: RunConfig, spec: ProblemSpec, T: float):
    from .reference import heat_exact, vanishing_viscosity_1d

    kind = cfg.get("convergence", "reference", "auto")
    base = spec.name.split("(")[0]
    if kind == "auto":
        if spec.exact is not None and base == "heat":
            kind = "heat_exact"
        elif spec.degenerate_A and cfg.get("problem", "u0") == "riemann" and spec.f.separable:
            kind = "vanishing_viscosity"
        else:
            kind = "none"
    if kind == "none":
        return None
    if kind == "heat_exact":
        return heat_exact()
    if kind == "vanishing_viscosity":
        left = cfg.float("problem", "riemann_left", 1.0)
        right = cfg.float("problem", "riemann_right", 0.0)
        x0 = cfg.float("problem", "riemann_x", 0.4)
        return vanishing_viscosity_1d(
            spec.f,
            cfg.float("convergence", "oracle_eps", 1e-3),
            cfg.int("convergence", "oracle_n", 4096),
            lambda x: np.where(x < x0, left, right).astype(float),
            T,
        )
    raise ConfigError(f"{cfg.source}: unknown reference {kind!r}")


def _ladder_dt(cfg: RunConfig, n: int) -> float:
    rule = cfg.get("convergence", "dt_rule", "h")
    c = cfg.float("convergence", "dt_factor", 1.0)
    if rule == "h":
        return c / n
    if rule == "h2":
        return c / n**2
    if rule == "fixed":
        return cfg.float("scheme", "dt", required=True)
    raise ConfigError(f"{cfg.source}: unknown dt rule {rule!r}")


def cmd_convergence(cfg: RunConfig, args) -> int:
    from .studies import run_ladder, shock_position

    levels = cfg.list("convergence", "levels", (8, 16, 32), int)
    if len(levels) < 2:
        raise ConfigError(f"{cfg.source}: a ladder needs at least two levels")
    probe = build_mesh(cfg, levels[0])
    spec0 = build_problem(cfg, probe.dim)
    T = cfg.float("scheme", "T", required=True)
    ref = build_reference(cfg, spec0, T)
    front = ref is not None and ref.kind == "fine_grid_1d"

    def build(n):
        mesh = probe if n == levels[0] else build_mesh(cfg, n)
        return build_problem(cfg, mesh.dim), mesh, build_scheme(cfg, _ladder_dt(cfg, n))

    def extra(res):
        if not front:
            return {}
        from .reference import front_position

        N = res.u.N
        xs = ref.meta["x"]
        oracle = front_position(xs, ref(N * res.cfg.dt, xs[:, None]), 0.5)
        pos = shock_position(res.u, N)
        return {"shock_position": pos, "oracle_front": oracle, "shock_error": abs(pos - oracle)}

    try:
        table, _ = run_ladder(levels, build, ref, extra=extra)
    except NonConvergence as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    err_keys = [k for k in table.header() if k.startswith(("L", "final_L")) or k in ("Lp_grad_w", "w_gap_L2")]
    rows = table.with_orders(err_keys)
    header = list(rows[0].keys())
    out = output_dir(cfg)
    write_table(out / "convergence.csv", header, [[r[k] for k in header] for r in rows])
    print("===== BEGIN convergence =====")
    print(",".join(header))
    for r in rows:
        print(",".join(fmt(r[k]) for k in header))
    print("===== END convergence =====")
    if "png" in _formats(cfg):
        keys = [k for k in err_keys if k.endswith("combined") or k == "w_gap_L2"]
        _figures("convergence", out, rows=rows, keys=keys)
    return EXIT_OK


COMMANDS = {
    "mesh-info": cmd_mesh_info,
    "verify": cmd_verify,
    "run": cmd_run,
    "convergence": cmd_convergence,
}


def _threads(n: int | None):
    if n is None:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl is not installed; --threads ignored")
        return nullcontext()
    return threadpool_limits(limits=n)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddfv", description="DDFV solver and verification lab")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="INI configuration file")
    ap.add_argument("--seed", type=int, help="override the verify seed")
    ap.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    ap.add_argument("--exact-reductions", action="store_true", help="compensated summation in scalar products")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    previous = fields.set_exact_reductions(args.exact_reductions)
    try:
        cfg = RunConfig.load(args.config)
        with _threads(args.threads):
            return COMMANDS[args.command](cfg, args)
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        fields.set_exact_reductions(previous)


if __name__ == "__main__":
    sys.exit(main())
