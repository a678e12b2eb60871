"""Lowest-order discrete de Rham complex P1 -> N0 -> RT0 -> Q0 on a TetMesh.

The coordinate maps of grad, curl and div are the signed incidence matrices
``G`` (edges x vertices), ``C`` (faces x edges) and ``D`` (cells x faces).
Basis functions are the Whitney forms written in the global orientation of
each entity, so no per-cell sign tables are needed when gluing:

    edge (a, b):     w = l_a grad l_b - l_b grad l_a
    face (a, b, c):  w = 2 (l_a grad l_b x grad l_c + cyclic)

with ``l_i`` the barycentric coordinates of the cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .mesh import LOCAL_EDGES, LOCAL_FACES, TetMesh
from .quadrature import TRI_DEGREE4, gauss_legendre_segment


@dataclass(frozen=True, eq=False)
class DeRhamComplex:
    mesh: TetMesh
    G: sps.csr_matrix  # int64, n_edge x n_vertex
    C: sps.csr_matrix  # int64, n_face x n_edge
    D: sps.csr_matrix  # int64, n_cell x n_face
    interior_edges: np.ndarray  # global ids of edges off the boundary
    edge_to_interior: np.ndarray  # global edge -> interior index, -1 on boundary
    boundary_vertex_ids: np.ndarray
    grad_lambda: np.ndarray  # (C, 4, 3)
    edge_local: np.ndarray  # (C, 6, 2) local (a, b) in global edge orientation
    face_local: np.ndarray  # (C, 4, 3) local (a, b, c) in global face orientation
    face_sign: np.ndarray  # (C, 4) = D entries
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertex(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_edge(self) -> int:
        return self.mesh.n_edges

    @property
    def n_face(self) -> int:
        return self.mesh.n_faces

    @property
    def n_cell(self) -> int:
        return self.mesh.n_cells

    @property
    def n_interior_edge(self) -> int:
        return self.interior_edges.shape[0]

    @property
    def C_interior(self) -> sps.csr_matrix:
        """Float curl incidence restricted to interior-edge columns (face x N_h^0)."""
        if "C_int" not in self._cache:
            self._cache["C_int"] = self.C[:, self.interior_edges].astype(float).tocsr()
        return self._cache["C_int"]

    @property
    def D_float(self) -> sps.csr_matrix:
        if "D_f" not in self._cache:
            self._cache["D_f"] = self.D.astype(float).tocsr()
        return self._cache["D_f"]

    def counts(self) -> dict:
        return {"vertices": self.n_vertex, "edges": self.n_edge, "faces": self.n_face,
                "cells": self.n_cell, "interior_edges": self.n_interior_edge,
                "boundary_edges": self.n_edge - self.n_interior_edge,
                "boundary_faces": int(self.mesh.boundary_faces.sum()),
                "boundary_vertices": int(self.boundary_vertex_ids.size)}

    def cell_points(self, bary: np.ndarray) -> np.ndarray:
        """Physical coordinates (C, nq, 3) of barycentric points in every cell."""
        return np.einsum("qi,cij->cqj", bary, self.mesh.vertices[self.mesh.cells])


def _incidence(rows, cols, vals, shape) -> sps.csr_matrix:
    A = sps.csr_matrix((np.asarray(vals, dtype=np.int64), (rows, cols)), shape=shape)
    A.sum_duplicates()
    A.sort_indices()
    return A


def _parity3(keys: np.ndarray) -> np.ndarray:
    """+1/-1 parity of the permutation sorting each row of a (.., 3) array."""
    inv = ((keys[..., 0] > keys[..., 1]).astype(int) + (keys[..., 0] > keys[..., 2])
           + (keys[..., 1] > keys[..., 2]))
    return 1 - 2 * (inv % 2)


def build_complex(mesh: TetMesh) -> DeRhamComplex:
    V, E, F, K = mesh.n_vertices, mesh.n_edges, mesh.n_faces, mesh.n_cells
    e, f, cells = mesh.edges, mesh.faces, mesh.cells

    G = _incidence(np.repeat(np.arange(E), 2), e.ravel(), np.tile([-1, 1], E), (E, V))

    # boundary of face (a, b, c) is (a, b) + (b, c) - (a, c)
    key = e[:, 0] * V + e[:, 1]

    def eid(a, b):
        return np.searchsorted(key, a * V + b)

    fe = np.stack([eid(f[:, 0], f[:, 1]), eid(f[:, 1], f[:, 2]), eid(f[:, 0], f[:, 2])], axis=1)
    C = _incidence(np.repeat(np.arange(F), 3), fe.ravel(), np.tile([1, 1, -1], F), (F, E))

    # induced orientation of face k of a positive cell is (-1)^k (v0..^vk..v3)
    gl = cells[:, LOCAL_FACES]  # (K, 4, 3) global ids in induced order
    face_sign = np.array([1, -1, 1, -1])[None, :] * _parity3(gl)
    D = _incidence(np.repeat(np.arange(K), 4), mesh.cell_faces.ravel(), face_sign.ravel(), (K, F))

    loc_e = np.broadcast_to(LOCAL_EDGES, (K, 6, 2))
    swap = cells[:, LOCAL_EDGES[:, 0]] > cells[:, LOCAL_EDGES[:, 1]]
    edge_local = np.where(swap[..., None], loc_e[..., ::-1], loc_e).copy()
    order = np.argsort(gl, axis=2)
    face_local = np.take_along_axis(np.broadcast_to(LOCAL_FACES, (K, 4, 3)), order, axis=2).copy()

    x = mesh.vertices[cells]
    T = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))  # columns x_i - x_0
    g123 = np.linalg.inv(T)  # row i-1 is grad l_i
    grad_lambda = np.concatenate([-g123.sum(axis=1, keepdims=True), g123], axis=1)

    interior = np.nonzero(~mesh.boundary_edges)[0]
    to_int = np.full(E, -1, dtype=np.int64)
    to_int[interior] = np.arange(interior.size)
    arrays = (interior, to_int, grad_lambda, edge_local, face_local, face_sign)
    for arr in arrays:
        arr.setflags(write=False)
    return DeRhamComplex(mesh, G, C, D, interior, to_int, np.nonzero(mesh.boundary_vertices)[0],
                         grad_lambda, edge_local, face_local, face_sign)


# --- Whitney basis on all cells at once ------------------------------------

def _take(arr, idx):
    """arr (C, 4, ...) indexed by local ids idx (C, m) -> (C, m, ...)."""
    return np.take_along_axis(arr, idx.reshape(idx.shape + (1,) * (arr.ndim - 2)), axis=1)


def edge_basis(cx: DeRhamComplex, bary: np.ndarray) -> np.ndarray:
    """N0 basis values, shape (C, nq, 6, 3), for barycentric points (nq, 4)."""
    a, b = cx.edge_local[..., 0], cx.edge_local[..., 1]
    ga, gb = _take(cx.grad_lambda, a), _take(cx.grad_lambda, b)  # (C, 6, 3)
    la = bary[:, a].transpose(1, 0, 2)  # (C, nq, 6)
    lb = bary[:, b].transpose(1, 0, 2)
    return la[..., None] * gb[:, None] - lb[..., None] * ga[:, None]


def edge_curls(cx: DeRhamComplex) -> np.ndarray:
    """Cellwise-constant curls 2 grad l_a x grad l_b, shape (C, 6, 3)."""
    if "edge_curls" not in cx._cache:
        a, b = cx.edge_local[..., 0], cx.edge_local[..., 1]
        cx._cache["edge_curls"] = 2.0 * np.cross(_take(cx.grad_lambda, a), _take(cx.grad_lambda, b))
    return cx._cache["edge_curls"]


def face_basis(cx: DeRhamComplex, bary: np.ndarray) -> np.ndarray:
    """RT0 basis values, shape (C, nq, 4, 3)."""
    a, b, c = (cx.face_local[..., i] for i in range(3))
    ga, gb, gc = (_take(cx.grad_lambda, i) for i in (a, b, c))
    la, lb, lc = (bary[:, i].transpose(1, 0, 2)[..., None] for i in (a, b, c))
    return 2.0 * (la * np.cross(gb, gc)[:, None] + lb * np.cross(gc, ga)[:, None]
                  + lc * np.cross(ga, gb)[:, None])


def face_divs(cx: DeRhamComplex) -> np.ndarray:
    """Cellwise-constant divergences of the RT0 basis, shape (C, 4)."""
    a, b, c = (cx.face_local[..., i] for i in range(3))
    ga, gb, gc = (_take(cx.grad_lambda, i) for i in (a, b, c))
    return 6.0 * np.einsum("cki,cki->ck", ga, np.cross(gb, gc))


# --- single-point evaluation --------------------------------------------------

def barycentric(cx: DeRhamComplex, cell: int, point) -> np.ndarray:
    x0 = cx.mesh.vertices[cx.mesh.cells[cell, 0]]
    rest = cx.grad_lambda[cell, 1:] @ (np.asarray(point, dtype=float) - x0)
    return np.concatenate([[1.0 - rest.sum()], rest])


def _bary_inside(cx, cell, point, tol=1e-12):
    if not 0 <= cell < cx.n_cell:
        raise ValueError(f"cell index {cell} out of range")
    lam = barycentric(cx, cell, point)
    if np.any(lam < -tol) or np.any(lam > 1 + tol):
        raise ValueError(f"point {tuple(point)} lies outside cell {cell}")
    return lam


def whitney_edge_eval(cx: DeRhamComplex, cell: int, local_edge: int, point) -> np.ndarray:
    """Value of the global-orientation N0 basis of a cell's local edge at a point."""
    lam = _bary_inside(cx, cell, point)
    a, b = cx.edge_local[cell, local_edge]
    g = cx.grad_lambda[cell]
    return lam[a] * g[b] - lam[b] * g[a]


def whitney_face_eval(cx: DeRhamComplex, cell: int, local_face: int, point) -> np.ndarray:
    """Value of the global-orientation RT0 basis of a cell's local face at a point."""
    lam = _bary_inside(cx, cell, point)
    a, b, c = cx.face_local[cell, local_face]
    g = cx.grad_lambda[cell]
    return 2.0 * (lam[a] * np.cross(g[b], g[c]) + lam[b] * np.cross(g[c], g[a])
                  + lam[c] * np.cross(g[a], g[b]))


def curl_in_rt_coordinates(cx: DeRhamComplex, alpha) -> np.ndarray:
    """RT0 coefficients of curl of the N0 field with all-edge coefficients alpha."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (cx.n_edge,):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({cx.n_edge},)")
    return cx.C @ alpha


def extend_interior(cx: DeRhamComplex, alpha_int) -> np.ndarray:
    """Scatter interior-edge coefficients into an all-edge vector (zeros on the boundary)."""
    full = np.zeros(cx.n_edge)
    full[cx.interior_edges] = alpha_int
    return full


# --- exact-arithmetic curl ----------------------------------------------------

def dyadic_quantum(bound: float, spare_bits: int = 4) -> float:
    """Power of two q such that multiples of q up to ``bound`` (times 2^spare_bits)
    stay exactly representable with 53-bit mantissas."""
    if not np.isfinite(bound) or bound <= 0:
        return 0.0
    return float(2.0 ** (np.ceil(np.log2(bound)) + spare_bits - 52))


def quantize(x, q: float) -> np.ndarray:
    """Round to the nearest multiple of the power-of-two ``q`` (identity for q = 0)."""
    x = np.asarray(x, dtype=float)
    if q == 0.0:
        return x.copy()
    return np.round(x / q) * q


def exact_curl(cx: DeRhamComplex, a_int, quantum: float | None = None):
    """Curl of an N_h^0 field with integer-exact divergence in floating point.

    The interior-edge coefficients are rounded to a dyadic grid fine enough
    to be harmless (about 2^-48 relative) but coarse enough that every
    partial sum in ``C a`` and ``D C a`` is exact, so ``D @ beta`` is
    identically zero. Returns ``(a_rounded, beta, quantum)``.
    """
    a_int = np.asarray(a_int, dtype=float)
    if quantum is None:
        quantum = dyadic_quantum(12.0 * np.max(np.abs(a_int), initial=0.0), spare_bits=0)
    a_q = quantize(a_int, quantum)
    return a_q, cx.C_interior @ a_q, quantum


# --- interpolation and discrete fields -----------------------------------------

def interpolate_edges(cx: DeRhamComplex, u, npts: int = 4) -> np.ndarray:
    """Edge circulations of ``u`` over all edges (Gauss-Legendre along each edge)."""
    rule = gauss_legendre_segment(npts)
    v = cx.mesh.vertices
    p0, p1 = v[cx.mesh.edges[:, 0]], v[cx.mesh.edges[:, 1]]
    pts = rule.points[:, :1, None] * p0[None] + rule.points[:, 1:, None] * p1[None]  # (nq, E, 3)
    vals = np.asarray(u(pts))
    return np.einsum("q,qei,ei->e", rule.weights, vals, p1 - p0)


def interpolate_faces(cx: DeRhamComplex, u) -> np.ndarray:
    """Face fluxes of ``u`` in the global face orientation (degree-4 rule)."""
    rule = TRI_DEGREE4
    v = cx.mesh.vertices
    xa, xb, xc = (v[cx.mesh.faces[:, i]] for i in range(3))
    pts = (rule.points[:, 0, None, None] * xa + rule.points[:, 1, None, None] * xb
           + rule.points[:, 2, None, None] * xc)
    area_normal = 0.5 * np.cross(xb - xa, xc - xa)
    vals = np.asarray(u(pts))
    return np.einsum("q,qfi,fi->f", rule.weights, vals, area_normal)


class DiscreteField:
    """A finite element field given by coefficients, usable wherever an
    analytic field is expected (it evaluates cell by cell)."""

    def __init__(self, cx: DeRhamComplex, coefficients, space: str):
        space = space.upper()
        coefficients = np.asarray(coefficients, dtype=float)
        if space == "N0":
            if coefficients.shape == (cx.n_interior_edge,):
                coefficients = extend_interior(cx, coefficients)
            elif coefficients.shape != (cx.n_edge,):
                raise ValueError("N0 coefficients must cover interior or all edges")
        elif space == "RT0":
            if coefficients.shape != (cx.n_face,):
                raise ValueError("RT0 coefficients must cover all faces")
        else:
            raise ValueError(f"unknown space {space!r}")
        self.cx, self.coefficients, self.space = cx, coefficients, space

    def _local(self):
        m = self.cx.mesh
        ids = m.cell_edges if self.space == "N0" else m.cell_faces
        return self.coefficients[ids]

    def on_cells(self, bary: np.ndarray) -> np.ndarray:
        basis = edge_basis(self.cx, bary) if self.space == "N0" else face_basis(self.cx, bary)
        return np.einsum("cqki,ck->cqi", basis, self._local())

    def curl(self) -> "DiscreteField":
        if self.space != "N0":
            raise ValueError("curl is defined for N0 fields")
        return DiscreteField(self.cx, self.cx.C @ self.coefficients, "RT0")

    def curl_on_cells(self, bary: np.ndarray) -> np.ndarray:
        return self.curl().on_cells(bary)

    def divergence(self) -> np.ndarray:
        """Cellwise-constant divergence (RT0 only)."""
        if self.space != "RT0":
            raise ValueError("divergence is defined for RT0 fields")
        return (self.cx.D_float @ self.coefficients) / self.cx.mesh.volumes


def face_jumps(cx: DeRhamComplex, coefficients, space: str) -> float:
    """Largest jump of the conforming trace across interior faces.

    Tangential component for N0, normal component for RT0, sampled at the
    degree-4 triangle points of every interior face.
    """
    fld = DiscreteField(cx, coefficients, space)
    m = cx.mesh
    inner = np.nonzero(m.face_cells[:, 1] >= 0)[0]
    if inner.size == 0:
        return 0.0
    worst = 0.0
    xa, xb, xc = (m.vertices[m.faces[inner, i]] for i in range(3))
    normal = np.cross(xb - xa, xc - xa)
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    vals = []
    for side in (0, 1):
        cells = m.face_cells[inner, side]
        lam = np.zeros((inner.size, TRI_DEGREE4.size, 4))
        for q in range(TRI_DEGREE4.size):
            p = (TRI_DEGREE4.points[q, 0] * xa + TRI_DEGREE4.points[q, 1] * xb
                 + TRI_DEGREE4.points[q, 2] * xc)
            x0 = m.vertices[m.cells[cells, 0]]
            rest = np.einsum("fij,fj->fi", cx.grad_lambda[cells, 1:], p - x0)
            lam[:, q] = np.concatenate([1 - rest.sum(axis=1, keepdims=True), rest], axis=1)
        local = fld._local()[cells]
        if space.upper() == "N0":
            a, b = cx.edge_local[cells, :, 0], cx.edge_local[cells, :, 1]
            g = cx.grad_lambda[cells]
            ga, gb = _take(g, a), _take(g, b)
            la = np.take_along_axis(lam, a[:, None, :], axis=2)
            lb = np.take_along_axis(lam, b[:, None, :], axis=2)
            w = la[..., None] * gb[:, None] - lb[..., None] * ga[:, None]
        else:
            a, b, c = (cx.face_local[cells, :, i] for i in range(3))
            g = cx.grad_lambda[cells]
            ga, gb, gc = _take(g, a), _take(g, b), _take(g, c)
            la, lb, lc = (np.take_along_axis(lam, i[:, None, :], axis=2)[..., None] for i in (a, b, c))
            w = 2.0 * (la * np.cross(gb, gc)[:, None] + lb * np.cross(gc, ga)[:, None]
                       + lc * np.cross(ga, gb)[:, None])
        vals.append(np.einsum("fqki,fk->fqi", w, local))
    jump = vals[0] - vals[1]
    if space.upper() == "N0":
        t = jump - np.einsum("fqi,fi->fq", jump, normal)[..., None] * normal[:, None]
        worst = float(np.max(np.linalg.norm(t, axis=2)))
    else:
        worst = float(np.max(np.abs(np.einsum("fqi,fi->fq", jump, normal))))
    return worst
