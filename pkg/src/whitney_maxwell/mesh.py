"""Tetrahedral meshes: structured box generation, text I/O and topology.

Orientation conventions used by every other module:

* cells are stored with a positive signed volume,
* an edge ``(a, b)`` always has ``a < b`` and points from ``a`` to ``b``,
* a face ``(a, b, c)`` always has ``a < b < c`` and is oriented by the
  right-hand normal ``(x_b - x_a) x (x_c - x_a)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# local vertex pairs of the six edges and the local vertex triples of the
# four faces (face k is opposite local vertex k)
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

DEGENERACY_CUTOFF = 1e-14


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MeshFormatError(MeshError):
    """Malformed mesh file; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Topology(NamedTuple):
    edges: np.ndarray  # (E, 2), lexicographically sorted
    faces: np.ndarray  # (F, 3), lexicographically sorted
    cell_edges: np.ndarray  # (C, 6), global edge of each LOCAL_EDGES pair
    cell_faces: np.ndarray  # (C, 4), global face opposite each local vertex
    face_cells: np.ndarray  # (F, 2), second entry -1 on the boundary
    boundary_faces: np.ndarray
    boundary_edges: np.ndarray
    boundary_vertices: np.ndarray


def _encode(rows: np.ndarray, base: int) -> np.ndarray:
    key = np.zeros(rows.shape[0], dtype=np.int64)
    for j in range(rows.shape[1]):
        key = key * base + rows[:, j]
    return key


def build_topology(cells, vertex_count: int) -> Topology:
    """Derive edges, faces, adjacency and boundary flags from cell connectivity.

    The result depends only on ``cells`` and ``vertex_count``; edges and
    faces come out sorted lexicographically by their ascending vertex tuples.
    """
    cells = np.asarray(cells, dtype=np.int64)
    if cells.ndim != 2 or cells.shape[1] != 4:
        raise MeshError(f"cells must have shape (C, 4), got {cells.shape}")
    if cells.size and (cells.min() < 0 or cells.max() >= vertex_count):
        raise MeshError("vertex index out of range in cell list")
    srt = np.sort(cells, axis=1)
    if np.any(srt[:, 1:] == srt[:, :-1]):
        bad = int(np.nonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))[0][0])
        raise MeshError(f"cell {bad} repeats a vertex")
    ckeys = _encode(srt, vertex_count)
    uniq, counts = np.unique(ckeys, return_counts=True)
    if np.any(counts > 1):
        dup = int(np.nonzero(ckeys == uniq[counts > 1][0])[0][1])
        raise MeshError(f"cell {dup} duplicates an earlier cell")

    n_cells = cells.shape[0]
    local_e = np.sort(cells[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
    edges, e_inv = np.unique(local_e, axis=0, return_inverse=True)
    cell_edges = e_inv.reshape(n_cells, 6)

    local_f = np.sort(cells[:, LOCAL_FACES], axis=2).reshape(-1, 3)
    faces, f_inv = np.unique(local_f, axis=0, return_inverse=True)
    cell_faces = f_inv.reshape(n_cells, 4)

    n_faces = faces.shape[0]
    incident = np.bincount(cell_faces.ravel(), minlength=n_faces)
    if np.any(incident > 2):
        raise MeshError("non-manifold mesh: a face is shared by more than two cells")
    face_cells = np.full((n_faces, 2), -1, dtype=np.int64)
    order = np.argsort(cell_faces.ravel(), kind="stable")
    owners = order // 4
    starts = np.concatenate(([0], np.cumsum(incident)[:-1]))
    face_cells[:, 0] = owners[starts]
    two = incident == 2
    face_cells[two, 1] = owners[starts[two] + 1]

    boundary_faces = incident == 1
    boundary_vertices = np.zeros(vertex_count, dtype=bool)
    boundary_vertices[faces[boundary_faces].ravel()] = True
    bf = faces[boundary_faces]
    bedges = np.unique(np.sort(bf[:, [[0, 1], [0, 2], [1, 2]]], axis=2).reshape(-1, 2), axis=0)
    boundary_edges = np.zeros(edges.shape[0], dtype=bool)
    if bedges.size:
        boundary_edges[np.searchsorted(_encode(edges, vertex_count), _encode(bedges, vertex_count))] = True

    return Topology(edges, faces, cell_edges, cell_faces, face_cells,
                    boundary_faces, boundary_edges, boundary_vertices)


def signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    v = vertices[cells]
    return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Immutable tetrahedral mesh with derived topology.

    Use :meth:`from_cells` rather than the constructor; it reorients cells,
    rejects degenerate ones and builds the topology.
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    cell_edges: np.ndarray
    cell_faces: np.ndarray
    face_cells: np.ndarray
    boundary_faces: np.ndarray
    boundary_edges: np.ndarray
    boundary_vertices: np.ndarray
    volumes: np.ndarray

    @classmethod
    def from_cells(cls, vertices, cells) -> "TetMesh":
        vertices = np.array(vertices, dtype=float).reshape(-1, 3)
        cells = np.array(cells, dtype=np.int64).reshape(-1, 4)
        if not np.all(np.isfinite(vertices)):
            raise MeshError("vertex coordinates must be finite")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("vertex index out of range in cell list")
        vol = signed_volumes(vertices, cells)
        flip = vol < 0
        cells[flip] = cells[flip][:, [0, 1, 3, 2]]
        vol = np.abs(vol)
        topo = build_topology(cells, len(vertices))
        h = _max_diameter(vertices, cells)
        bad = vol <= DEGENERACY_CUTOFF * h**3
        if np.any(bad):
            raise MeshError(f"cell {int(np.nonzero(bad)[0][0])} is degenerate (zero volume)")

        for arr in (vertices, cells, vol, *topo):
            arr.setflags(write=False)
        return cls(vertices, cells, topo.edges, topo.faces, topo.cell_edges,
                   topo.cell_faces, topo.face_cells, topo.boundary_faces,
                   topo.boundary_edges, topo.boundary_vertices, vol)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces - self.n_cells

    @property
    def h(self) -> float:
        return mesh_size(self)

    def summary(self) -> dict:
        return {"V": self.n_vertices, "E": self.n_edges, "F": self.n_faces,
                "C": self.n_cells, "h": self.h, "euler": self.euler_characteristic}


def _max_diameter(vertices, cells) -> float:
    if len(cells) == 0:
        return 0.0
    v = vertices[cells]
    d = v[:, LOCAL_EDGES[:, 1]] - v[:, LOCAL_EDGES[:, 0]]
    return float(np.sqrt(np.max(np.einsum("cki,cki->ck", d, d))))


def mesh_size(mesh: TetMesh) -> float:
    """Largest cell diameter (longest edge over all cells)."""
    return _max_diameter(mesh.vertices, mesh.cells)


# the six monotone lattice paths from (0,0,0) to (1,1,1)
_KUHN_PATHS = []
for perm in itertools.permutations(range(3)):
    corner = np.zeros(3, dtype=np.int64)
    path = [corner.copy()]
    for axis in perm:
        corner[axis] += 1
        path.append(corner.copy())
    _KUHN_PATHS.append(np.array(path))
_KUHN_PATHS = np.array(_KUHN_PATHS)  # (6, 4, 3)


def generate_box_mesh(n: int, box=((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))) -> TetMesh:
    """Structured mesh of an axis-aligned box: n^3 sub-cubes, six Kuhn tets each.

    Every sub-cube is cut along the same body diagonal, so the subdivision is
    conforming and the mesh size is the sub-cube diagonal.
    """
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ValueError(f"subdivisions per axis must be an integer >= 1, got {n!r}")
    n = int(n)
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise ValueError("box must be a pair of finite 3-vectors")
    if np.any(hi - lo <= 0):
        raise ValueError("box extents must be positive")

    ticks = [np.linspace(lo[d], hi[d], n + 1) for d in range(3)]
    gx, gy, gz = np.meshgrid(*ticks, indexing="ij")
    vertices = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def vid(ijk):
        return (ijk[..., 0] * (n + 1) + ijk[..., 1]) * (n + 1) + ijk[..., 2]

    base = np.stack(np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij"), axis=-1).reshape(-1, 1, 1, 3)
    cells = vid(base + _KUHN_PATHS[None]).reshape(-1, 4)
    return TetMesh.from_cells(vertices, cells)


def write_mesh(mesh: TetMesh) -> str:
    """Serialize to the ``tetmesh 1`` text format (17 significant digits)."""
    lines = ["tetmesh 1", f"vertices {mesh.n_vertices}"]
    lines += ["%.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += ["%d %d %d %d" % tuple(c) for c in mesh.cells]
    return "\n".join(lines) + "\n"


def read_mesh(text: str) -> TetMesh:
    """Parse the ``tetmesh 1`` text format; topology is rebuilt, never read."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        rows.append((lineno, s.split()))
    it = iter(rows)

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file, expected {what}",
                                  rows[-1][0] if rows else 1) from None

    lineno, tok = take("header")
    if tok != ["tetmesh", "1"]:
        raise MeshFormatError("expected header 'tetmesh 1'", lineno)

    def count(keyword):
        lineno, tok = take(f"'{keyword} N'")
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} N'", lineno)
        try:
            k = int(tok[1])
        except ValueError:
            raise MeshFormatError(f"invalid {keyword} count {tok[1]!r}", lineno) from None
        if k < 0:
            raise MeshFormatError(f"negative {keyword} count", lineno)
        return k

    nv = count("vertices")
    vertices = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = take("vertex coordinates")
        if len(tok) != 3:
            raise MeshFormatError("vertex line needs exactly 3 coordinates", lineno)
        try:
            vertices[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshFormatError(f"invalid coordinate in {' '.join(tok)!r}", lineno) from None
        if not np.all(np.isfinite(vertices[i])):
            raise MeshFormatError("non-finite coordinate", lineno)

    nc = count("cells")
    cells = np.empty((nc, 4), dtype=np.int64)
    for i in range(nc):
        lineno, tok = take("cell indices")
        if len(tok) != 4:
            raise MeshFormatError("cell line needs exactly 4 vertex indices", lineno)
        try:
            cells[i] = [int(t) for t in tok]
        except ValueError:
            raise MeshFormatError(f"invalid vertex index in {' '.join(tok)!r}", lineno) from None
        if cells[i].min() < 0 or cells[i].max() >= nv:
            raise MeshFormatError(f"vertex index out of range (have {nv} vertices)", lineno)

    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError("unexpected content after cell list", extra[0])
    return TetMesh.from_cells(vertices, cells)
