"""Mesh files, CSV tables and legacy VTK output.

Mesh text format (``#`` starts a comment, blank lines ignored)::

    d npoints ncells
    id x y [z]            # npoints lines
    id v1 v2 v3 [v4]      # ncells lines, vertex ids as declared above
    boundary nfacets      # optional section
    v1 v2 [v3] mark
"""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .fields import SpaceTimeFunction
from .mesh import DdfvMesh, MeshError, build_from_simplicial


class MeshFileError(MeshError):
    """Malformed mesh file; the message carries ``path:line``."""


def _lines(text: str):
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.split("#", 1)[0].strip()
        if s:
            yield no, s.split()


def read_mesh_file(path) -> tuple[np.ndarray, np.ndarray, list | None]:
    """Parse a mesh file into ``(points, cells, boundary_marks)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshFileError(f"{path}: {exc.strerror}") from exc
    it = _lines(text)

    def need(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFileError(f"{path}: unexpected end of file while reading {what}") from None

    def num(tok, no, kind=float):
        try:
            return kind(tok)
        except ValueError:
            raise MeshFileError(f"{path}:{no}: cannot parse {tok!r}") from None

    no, head = need("header")
    if len(head) != 3:
        raise MeshFileError(f"{path}:{no}: header must be 'd npoints ncells'")
    d, npts, nc = (num(t, no, int) for t in head)
    if d not in (2, 3):
        raise MeshFileError(f"{path}:{no}: dimension must be 2 or 3")
    ids: dict[int, int] = {}
    P = np.empty((npts, d))
    for i in range(npts):
        no, tok = need("points")
        if len(tok) != d + 1:
            raise MeshFileError(f"{path}:{no}: expected id and {d} coordinates")
        vid = num(tok[0], no, int)
        if vid in ids:
            raise MeshFileError(f"{path}:{no}: duplicate vertex id {vid}")
        ids[vid] = i
        P[i] = [num(t, no) for t in tok[1:]]
    C = np.empty((nc, d + 1), dtype=np.int64)
    for j in range(nc):
        no, tok = need("cells")
        if len(tok) != d + 2:
            raise MeshFileError(f"{path}:{no}: expected id and {d + 1} vertex ids")
        for k, t in enumerate(tok[1:]):
            v = num(t, no, int)
            if v not in ids:
                raise MeshFileError(f"{path}:{no}: unknown vertex id {v}")
            C[j, k] = ids[v]
    marks = None
    rest = list(it)
    if rest:
        no, tok = rest[0]
        if tok[0] != "boundary" or len(tok) != 2:
            raise MeshFileError(f"{path}:{no}: expected 'boundary nfacets' or end of file")
        nb = num(tok[1], no, int)
        if len(rest) - 1 != nb:
            raise MeshFileError(f"{path}:{no}: boundary section declares {nb} facets, found {len(rest) - 1}")
        marks = []
        for no, tok in rest[1:]:
            if len(tok) != d + 1:
                raise MeshFileError(f"{path}:{no}: expected {d} vertex ids and a mark")
            vs = tuple(sorted(ids.get(num(t, no, int), -1) for t in tok[:d]))
            if -1 in vs:
                raise MeshFileError(f"{path}:{no}: unknown vertex id")
            marks.append((vs, tok[d]))
    return P, C, marks


def load_mesh(path, **kw) -> DdfvMesh:
    """Read and build a mesh; builder errors are prefixed with the file path."""
    P, C, marks = read_mesh_file(path)
    try:
        return build_from_simplicial(P, C, marks, **kw)
    except MeshError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def write_mesh_file(path, points, cells, boundary_marks=None) -> None:
    points = np.asarray(points, float)
    cells = np.asarray(cells, np.int64)
    d = points.shape[1]
    with open(path, "w") as fh:
        fh.write(f"{d} {len(points)} {len(cells)}\n")
        for i, x in enumerate(points):
            fh.write(f"{i} " + " ".join(repr(float(v)) for v in x) + "\n")
        for j, c in enumerate(cells):
            fh.write(f"{j} " + " ".join(str(int(v)) for v in c) + "\n")
        if boundary_marks:
            fh.write(f"boundary {len(boundary_marks)}\n")
            for vs, mark in boundary_marks:
                fh.write(" ".join(str(int(v)) for v in vs) + f" {mark}\n")


# ---------------------------------------------------------------------------
# CSV


def fmt(x) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _entity_rows(mesh: DdfvMesh, primal: np.ndarray, dual: np.ndarray):
    nK = mesh.n_primal
    for K in range(mesh.n_primal_total):
        yield ("primal" if K < nK else "boundary_primal", K, primal[K])
    bd = np.asarray(mesh.dual_is_boundary)
    for v in range(mesh.n_vertices):
        yield ("boundary_dual" if bd[v] else "dual", v, dual[v])


def space_time_rows(u: SpaceTimeFunction):
    for n in range(u.N + 1):
        t = n * u.dt
        for kind, i, val in _entity_rows(u.mesh, u.primal[n], u.dual[n]):
            yield (n, t, kind, i, val)


def write_space_time_csv(path, u: SpaceTimeFunction) -> None:
    write_table(path, ["n", "t", "entity_kind", "id", "value"], space_time_rows(u))


def read_space_time_csv(path, mesh: DdfvMesh, dt: float, T: float) -> SpaceTimeFunction:
    _, rows = read_table(path)
    N = max(int(r[0]) for r in rows)
    P = np.zeros((N + 1, mesh.n_primal_total))
    D = np.zeros((N + 1, mesh.n_vertices))
    for n, _t, kind, i, val in rows:
        (P if "primal" in kind else D)[int(n), int(i)] = float(val)
    return SpaceTimeFunction(mesh, P, D, dt, T)


def write_function_csv(path, mesh: DdfvMesh, primal, dual) -> None:
    write_table(path, ["entity_kind", "id", "value"], _entity_rows(mesh, primal, dual))


STEP_COLUMNS = ["n", "t", "iterations", "residual", "min_u", "max_u", "strategy"]


def write_steps_csv(path, reports, extra: dict | None = None) -> None:
    """Per-step table; ``extra`` maps column names to arrays indexed by ``n``."""
    extra = extra or {}
    header = STEP_COLUMNS + list(extra)
    rows = []
    for r in reports:
        rows.append(
            [r.n, r.t, r.iterations, r.residual, r.u_min, r.u_max, r.strategy]
            + [extra[k][r.n] for k in extra]
        )
    write_table(path, header, rows)


def write_key_values(path, items: dict) -> None:
    write_table(path, ["key", "value"], sorted(items.items()))


# ---------------------------------------------------------------------------
# legacy VTK


def _vtk(points, cells, ctype, data: dict, title: str) -> str:
    out = _io.StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(title[:255] + "\n")
    out.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {len(points)} double\n")
    for p in points:
        q = list(p) + [0.0] * (3 - len(p))
        out.write(" ".join(repr(float(v)) for v in q) + "\n")
    size = sum(len(c) + 1 for c in cells)
    out.write(f"CELLS {len(cells)} {size}\n")
    for c in cells:
        out.write(f"{len(c)} " + " ".join(str(int(v)) for v in c) + "\n")
    types = np.broadcast_to(np.asarray(ctype), (len(cells),))
    out.write(f"CELL_TYPES {len(cells)}\n")
    out.write("\n".join(str(int(t)) for t in types) + "\n")
    out.write(f"CELL_DATA {len(cells)}\n")
    for name, vals in data.items():
        kind = "int" if np.issubdtype(np.asarray(vals).dtype, np.integer) else "double"
        out.write(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n")
        out.write("\n".join(fmt(v) for v in vals) + "\n")
    return out.getvalue()


def write_vtk_primal(path, mesh: DdfvMesh, values: np.ndarray, name: str = "u") -> None:
    """Primal volumes as their simplices, each carrying its volume's value."""
    ctype = 5 if mesh.dim == 2 else 10
    vol = np.asarray(mesh.cell_cluster)
    text = _vtk(mesh.points, mesh.cells, ctype, {name: np.asarray(values)[vol], "volume": vol}, "primal mesh")
    Path(path).write_text(text)


def _dual_polygons(mesh: DdfvMesh):
    """Each 2D dual cell as one convex polygon, or its pieces if it is not convex."""
    S = np.asarray(mesh.piece_simplices)
    vid = np.asarray(mesh.piece_vertex)
    points, cells, types, owner = [], [], [], []
    n = 0
    for v in range(mesh.n_vertices):
        tri = S[vid == v]
        if len(tri) == 0:
            continue
        pts = tri.reshape(-1, 2)
        _, keep = np.unique(np.round(pts / mesh.tol), axis=0, return_index=True)
        pts = pts[np.sort(keep)]
        hull = ConvexHull(pts)
        if abs(hull.volume - mesh.dual_measure[v]) <= 1e-9 * mesh.dual_measure[v]:
            ring = pts[hull.vertices]
            points.append(ring)
            cells.append(list(range(n, n + len(ring))))
            types.append(7)
            owner.append(v)
            n += len(ring)
        else:
            for t in tri:
                points.append(t)
                cells.append([n, n + 1, n + 2])
                types.append(5)
                owner.append(v)
                n += 3
    return np.concatenate(points), cells, np.array(types), np.array(owner)


def write_vtk_dual(path, mesh: DdfvMesh, values: np.ndarray, name: str = "u") -> None:
    """Dual cells carrying their vertex's value.

    In 2D each cell is a polygon; in 3D it is written as the tetrahedra of
    its pieces since legacy VTK has no plain polyhedron cell.
    """
    if mesh.dim == 2:
        pts, cells, ctype, vid = _dual_polygons(mesh)
    else:
        S = np.asarray(mesh.piece_simplices)
        pts = S.reshape(-1, 3)
        cells = np.arange(len(pts)).reshape(len(S), 4)
        ctype = 10
        vid = np.asarray(mesh.piece_vertex)
    text = _vtk(pts, cells, ctype, {name: np.asarray(values)[vid], "vertex": vid}, "dual mesh")
    Path(path).write_text(text)
