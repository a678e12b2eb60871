"""Assembly of the weighted mass matrices, curl coupling and load vectors.

Mass matrices use the 4-point degree-2 rule, which is exact for products
of lowest-order basis fields with cellwise-constant coefficients. Error
norms and right-hand sides of projections use the 14-point rule.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps

from .derham import DeRhamComplex, DiscreteField, edge_basis, edge_curls, face_basis
from .fields import CoefficientError, SourceField, TensorField
from .quadrature import TET_DEGREE2, TET_DEGREE5, QuadratureRule
from .sparse import triplets_to_csr


def sample(u, cx: DeRhamComplex, quad: QuadratureRule) -> np.ndarray:
    """Values of a vector field at the quadrature points of every cell, (C, nq, 3)."""
    if hasattr(u, "on_cells"):
        vals = u.on_cells(quad.points)
    else:
        vals = np.asarray(u(cx.cell_points(quad.points)), dtype=float)
    if vals.shape != (cx.n_cell, quad.size, 3):
        raise ValueError(f"field returned shape {vals.shape}, expected {(cx.n_cell, quad.size, 3)}")
    if not np.all(np.isfinite(vals)):
        raise CoefficientError("field has non-finite values at quadrature points")
    return vals


def _weights(cx, quad):
    return cx.mesh.volumes[:, None] * quad.weights[None, :]  # (C, nq)


def _local_mass(cx, basis, coef: TensorField, quad, kind):
    pts = cx.cell_points(quad.points)
    coef.check(pts, kind)
    A = coef.at(pts)
    loc = np.einsum("cq,cqid,cqde,cqje->cij", _weights(cx, quad), basis, A, basis)
    return 0.5 * (loc + np.swapaxes(loc, 1, 2))


def _scatter(local, row_dofs, col_dofs, shape):
    nr, nc = local.shape[1:]
    rows = np.broadcast_to(row_dofs[:, :, None], local.shape)
    cols = np.broadcast_to(col_dofs[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    return triplets_to_csr(rows[keep], cols[keep], local[keep], shape)


def _edge_dofs(cx):
    return cx.edge_to_interior[cx.mesh.cell_edges]


def local_mass_nedelec(cx, coef: TensorField, quad=TET_DEGREE2, kind="spd"):
    return _local_mass(cx, edge_basis(cx, quad.points), coef, quad, kind)


def local_mass_rt(cx, coef: TensorField, quad=TET_DEGREE2):
    return _local_mass(cx, face_basis(cx, quad.points), coef, quad, "spd")


def assemble_mass_nedelec(cx: DeRhamComplex, eps: TensorField | None = None,
                          quad: QuadratureRule = TET_DEGREE2) -> sps.csr_matrix:
    """[M_E]_ij = (eps psi_i, psi_j) over interior edges."""
    eps = TensorField.identity() if eps is None else eps
    n = cx.n_interior_edge
    loc = local_mass_nedelec(cx, eps, quad, "spd")
    return _scatter(loc, _edge_dofs(cx), _edge_dofs(cx), (n, n))


def assemble_mass_sigma(cx: DeRhamComplex, sigma: TensorField | None = None,
                        quad: QuadratureRule = TET_DEGREE2) -> sps.csr_matrix:
    """[K_E]_ij = (sigma psi_i, psi_j) over interior edges; sigma may be semi-definite."""
    n = cx.n_interior_edge
    if sigma is None or sigma.is_zero:
        return sps.csr_matrix((n, n))
    loc = local_mass_nedelec(cx, sigma, quad, "psd")
    return _scatter(loc, _edge_dofs(cx), _edge_dofs(cx), (n, n))


def assemble_mass_rt(cx: DeRhamComplex, mu_inv: TensorField | None = None,
                     quad: QuadratureRule = TET_DEGREE2) -> sps.csr_matrix:
    """(mu^{-1} phi_i, phi_j) over all faces."""
    mu_inv = TensorField.identity() if mu_inv is None else mu_inv
    F = cx.n_face
    loc = local_mass_rt(cx, mu_inv, quad)
    return _scatter(loc, cx.mesh.cell_faces, cx.mesh.cell_faces, (F, F))


def assemble_curl_coupling(cx: DeRhamComplex, mu_inv: TensorField | None = None,
                           M_B: sps.csr_matrix | None = None) -> sps.csr_matrix:
    """Cpl_jf = (mu^{-1} phi_f, curl psi_j), interior edges x faces.

    Formed as ``C_int^T M_B``: curl psi_j has RT0 coordinates equal to the
    j-th incidence column, so the product is exact up to rounding.
    """
    if M_B is None:
        M_B = assemble_mass_rt(cx, mu_inv)
    out = (cx.C_interior.T @ M_B).tocsr()
    out.sort_indices()
    return out


def assemble_curl_coupling_quadrature(cx: DeRhamComplex, mu_inv: TensorField | None = None,
                                      quad: QuadratureRule = TET_DEGREE2) -> sps.csr_matrix:
    """Same matrix as :func:`assemble_curl_coupling` by direct quadrature (test oracle)."""
    mu_inv = TensorField.identity() if mu_inv is None else mu_inv
    pts = cx.cell_points(quad.points)
    A = mu_inv.at(pts)
    phi = face_basis(cx, quad.points)
    curls = edge_curls(cx)
    loc = np.einsum("cq,cid,cqde,cqje->cij", _weights(cx, quad), curls, A, phi)
    return _scatter(loc, _edge_dofs(cx), cx.mesh.cell_faces, (cx.n_interior_edge, cx.n_face))


def assemble_curl_curl(cx: DeRhamComplex, mu_inv: TensorField | None = None,
                       M_B: sps.csr_matrix | None = None) -> sps.csr_matrix:
    """(mu^{-1} curl psi_i, curl psi_j) via the incidence factorization."""
    if M_B is None:
        M_B = assemble_mass_rt(cx, mu_inv)
    C = cx.C_interior
    return (C.T @ M_B @ C).tocsr()


def rhs_nedelec(cx: DeRhamComplex, u, quad: QuadratureRule = TET_DEGREE5) -> np.ndarray:
    """(u, psi_j) for interior edges j."""
    vals = sample(u, cx, quad)
    loc = np.einsum("cq,cqi,cqki->ck", _weights(cx, quad), vals, edge_basis(cx, quad.points))
    dofs = _edge_dofs(cx)
    keep = dofs >= 0
    out = np.zeros(cx.n_interior_edge)
    np.add.at(out, dofs[keep], loc[keep])
    return out


def rhs_rt(cx: DeRhamComplex, u, quad: QuadratureRule = TET_DEGREE5) -> np.ndarray:
    """(u, phi_f) for all faces f."""
    vals = sample(u, cx, quad)
    loc = np.einsum("cq,cqi,cqki->ck", _weights(cx, quad), vals, face_basis(cx, quad.points))
    out = np.zeros(cx.n_face)
    np.add.at(out, cx.mesh.cell_faces.ravel(), loc.ravel())
    return out


def rhs_curl(cx: DeRhamComplex, curl_u, quad: QuadratureRule = TET_DEGREE5) -> np.ndarray:
    """(curl_u, curl psi_j) for interior edges j; curl_u is supplied analytically."""
    vals = sample(curl_u, cx, quad)
    mean = np.einsum("cq,cqi->ci", _weights(cx, quad), vals)
    loc = np.einsum("ci,cki->ck", mean, edge_curls(cx))
    dofs = _edge_dofs(cx)
    keep = dofs >= 0
    out = np.zeros(cx.n_interior_edge)
    np.add.at(out, dofs[keep], loc[keep])
    return out


def assemble_load(cx: DeRhamComplex, f: SourceField, t: float,
                  quad: QuadratureRule = TET_DEGREE2) -> np.ndarray:
    """F(t)_j = (f(., t), psi_j) over interior edges."""
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    if f is None or f.is_zero:
        return np.zeros(cx.n_interior_edge)
    return rhs_nedelec(cx, lambda x: f(x, t), quad)


def source_norm_sq(cx: DeRhamComplex, f: SourceField, t: float,
                   quad: QuadratureRule = TET_DEGREE2) -> float:
    """||f(., t)||^2 in L2."""
    if f is None or f.is_zero:
        return 0.0
    vals = sample(lambda x: f(x, t), cx, quad)
    return float(np.einsum("cq,cqi,cqi->", _weights(cx, quad), vals, vals))


def l2_norm(cx: DeRhamComplex, u, quad: QuadratureRule = TET_DEGREE5) -> float:
    vals = sample(u, cx, quad)
    return float(np.sqrt(np.einsum("cq,cqi,cqi->", _weights(cx, quad), vals, vals)))


def l2_error_field(cx: DeRhamComplex, coefficients, space: str, exact,
                   quad: QuadratureRule = TET_DEGREE5) -> float:
    """sqrt(int |u_h - u|^2) for an N0 or RT0 coefficient vector against a field."""
    if quad.degree < 2:
        raise ValueError("error quadrature must be at least degree 2")
    uh = DiscreteField(cx, coefficients, space).on_cells(quad.points)
    diff = uh - sample(exact, cx, quad)
    return float(np.sqrt(np.einsum("cq,cqi,cqi->", _weights(cx, quad), diff, diff)))


def hcurl_error(cx: DeRhamComplex, coefficients, exact, curl_exact,
                quad: QuadratureRule = TET_DEGREE5) -> float:
    """H(curl) error of an N0 field; the exact curl is supplied analytically."""
    field = DiscreteField(cx, coefficients, "N0")
    e0 = l2_error_field(cx, field.coefficients, "N0", exact, quad)
    e1 = l2_error_field(cx, field.curl().coefficients, "RT0", curl_exact, quad)
    return float(np.hypot(e0, e1))
