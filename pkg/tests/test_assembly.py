import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from whitney_maxwell import assembly
from whitney_maxwell.derham import (DiscreteField, build_complex, interpolate_faces, whitney_edge_eval,
                                    whitney_face_eval)
from whitney_maxwell.fields import CoefficientError, SourceField, TensorField
from whitney_maxwell.mesh import TetMesh
from whitney_maxwell.quadrature import (TET_DEGREE2, TET_DEGREE5, TRI_DEGREE4, gauss_legendre_segment,
                                        monomial_integral, verify_rule)

from conftest import box_complex

REGULAR_TET = [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]


def const_field(c):
    c = np.asarray(c, dtype=float)
    return lambda x: np.broadcast_to(c, np.shape(x)).copy()


def physical_points(cx, cell, rule):
    return rule.points @ cx.mesh.vertices[cx.mesh.cells[cell]]


def oracle_rt_mass(cx, cell, rule=TET_DEGREE5):
    """Local RT mass from pointwise basis evaluation at physical points."""
    pts = physical_points(cx, cell, rule)
    vals = np.array([[whitney_face_eval(cx, cell, k, x) for k in range(4)] for x in pts])
    return cx.mesh.volumes[cell] * np.einsum("q,qki,qli->kl", rule.weights, vals, vals)


def oracle_ned_mass(cx, cell, rule=TET_DEGREE5):
    pts = physical_points(cx, cell, rule)
    vals = np.array([[whitney_edge_eval(cx, cell, k, x) for k in range(6)] for x in pts])
    return cx.mesh.volumes[cell] * np.einsum("q,qki,qli->kl", rule.weights, vals, vals)


# --- quadrature ------------------------------------------------------------------

@pytest.mark.parametrize("rule,degree,size", [(TET_DEGREE2, 2, 4), (TET_DEGREE5, 5, 14), (TRI_DEGREE4, 4, 6)])
def test_rule_exactness(rule, degree, size):
    assert rule.size == size and rule.degree == degree
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    verify_rule(rule)


def test_degree2_rule_on_all_quadratic_monomials():
    for i in range(4):
        for j in range(4):
            k = np.zeros(4, dtype=int)
            k[i] += 1
            k[j] += 1
            approx = TET_DEGREE2.weights @ np.prod(TET_DEGREE2.points ** k, axis=1)
            assert approx == pytest.approx(monomial_integral(k), rel=1e-15)


def test_degree2_rule_fails_on_cubic():
    k = (3, 0, 0, 0)
    approx = TET_DEGREE2.weights @ TET_DEGREE2.points[:, 0] ** 3
    assert abs(approx - monomial_integral(k)) > 1e-6


@pytest.mark.parametrize("npts", [1, 2, 4])
def test_gauss_legendre_segment(npts):
    rule = gauss_legendre_segment(npts)
    for k in range(2 * npts):
        assert rule.weights @ rule.points[:, 1] ** k == pytest.approx(1 / (k + 1), rel=1e-14)


# --- coefficients ----------------------------------------------------------------

def test_asymmetric_tensor_rejected():
    cx = box_complex(1)
    bad = TensorField(constant=[[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])
    with pytest.raises(CoefficientError, match="symmetric"):
        assembly.assemble_mass_nedelec(cx, bad)


def test_indefinite_eps_rejected():
    cx = box_complex(1)
    with pytest.raises(CoefficientError):
        assembly.assemble_mass_nedelec(cx, TensorField.scalar(-1.0))
    with pytest.raises(CoefficientError):
        assembly.assemble_mass_rt(cx, TensorField.zero())


def test_negative_sigma_rejected():
    cx = box_complex(1)
    with pytest.raises(CoefficientError, match="semi-definite"):
        assembly.assemble_mass_sigma(cx, TensorField(constant=np.diag([1.0, -0.1, 1.0])))


def test_nonfinite_coefficient_rejected():
    cx = box_complex(1)
    with pytest.raises(CoefficientError):
        assembly.assemble_mass_nedelec(cx, TensorField.analytic(lambda x: np.full(x.shape[:-1] + (3, 3), np.nan)))


def test_per_cell_length_mismatch():
    with pytest.raises(CoefficientError):
        assembly.assemble_mass_rt(box_complex(1), TensorField.cellwise(np.ones(5)))


def test_source_shape_checked():
    f = SourceField(lambda x, t: x[..., :2])
    with pytest.raises(CoefficientError):
        assembly.assemble_load(box_complex(1), f, 0.0)


# --- mass matrices -----------------------------------------------------------------

def test_single_tet_blocks(single_tet):
    cx = build_complex(single_tet)
    assert assembly.assemble_mass_nedelec(cx).shape == (0, 0)
    assert assembly.assemble_curl_coupling(cx).shape == (0, 4)
    M = assembly.assemble_mass_rt(cx).toarray()
    assert M.shape == (4, 4)
    f = cx.mesh.cell_faces[0]
    assert np.allclose(M[np.ix_(f, f)], oracle_rt_mass(cx, 0), atol=1e-13)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    # faces through the right-angle vertex are images of each other under axis permutations
    f_axes = [f for f in range(4) if 0 in cx.mesh.faces[f]]
    vals = [M[f, f] for f in f_axes]
    assert max(vals) - min(vals) <= 1e-13


def test_regular_tet_mass_has_equal_diagonal():
    cx = build_complex(TetMesh.from_cells(REGULAR_TET, [[0, 1, 2, 3]]))
    d = np.diag(assembly.assemble_mass_rt(cx).toarray())
    assert d.max() - d.min() <= 1e-13 * d.max()


def test_mass_rt_reproduces_constant_pairings():
    cx = box_complex(2)
    c = np.array([1.0, 0.0, 0.0])
    coeffs = interpolate_faces(cx, const_field(c))
    M = assembly.assemble_mass_rt(cx)
    pairing = np.zeros(cx.n_face)
    for cell in range(cx.n_cell):
        pts = physical_points(cx, cell, TET_DEGREE5)
        for k in range(4):
            vals = np.array([whitney_face_eval(cx, cell, k, x) for x in pts])
            pairing[cx.mesh.cell_faces[cell, k]] += cx.mesh.volumes[cell] * TET_DEGREE5.weights @ (vals @ c)
    assert np.allclose(M @ coeffs, pairing, atol=1e-13)


@pytest.mark.parametrize("n", [1, 2])
def test_mass_matrices_against_pointwise_oracle(n):
    cx = box_complex(n)
    ME = assembly.assemble_mass_nedelec(cx).toarray()
    MB = assembly.assemble_mass_rt(cx).toarray()
    refE = np.zeros((cx.n_edge, cx.n_edge))
    refB = np.zeros((cx.n_face, cx.n_face))
    for cell in range(cx.n_cell):
        e, f = cx.mesh.cell_edges[cell], cx.mesh.cell_faces[cell]
        refE[np.ix_(e, e)] += oracle_ned_mass(cx, cell)
        refB[np.ix_(f, f)] += oracle_rt_mass(cx, cell)
    refE = refE[np.ix_(cx.interior_edges, cx.interior_edges)]
    assert np.abs(ME - refE).max() <= 1e-13
    assert np.abs(MB - refB).max() <= 1e-13


def test_mass_symmetric_and_spd(rng):
    cx = box_complex(2)
    for M in (assembly.assemble_mass_nedelec(cx), assembly.assemble_mass_rt(cx)):
        assert abs(M - M.T).max() <= 1e-14
        X = rng.standard_normal((M.shape[0], 50))
        assert np.all(np.einsum("ij,ij->j", X, M @ X) > 0)


def test_box_n1_mass_positive():
    M = assembly.assemble_mass_nedelec(box_complex(1))
    assert M.shape == (1, 1) and M[0, 0] > 0


def test_eps_doubling_is_exact():
    cx = box_complex(2)
    M1 = assembly.assemble_mass_nedelec(cx)
    M2 = assembly.assemble_mass_nedelec(cx, TensorField.scalar(2.0))
    assert (M2 - 2 * M1).count_nonzero() == 0


@settings(max_examples=20, deadline=None)
@given(c=st.floats(1e-3, 1e3))
def test_bilinearity_property(c):
    cx = box_complex(1)
    for fn in (assembly.assemble_mass_rt, assembly.assemble_mass_nedelec):
        M1 = fn(cx)
        Mc = fn(cx, TensorField.identity() * c)
        # exact up to rounding; power-of-two factors are bit-exact (see below)
        ref = c * M1.toarray()
        assert np.abs(Mc.toarray() - ref).max() <= 1e-15 * np.abs(ref).max()


def test_mu_inv_scaled_by_three():
    cx = box_complex(2)
    M1, M3 = assembly.assemble_mass_rt(cx), assembly.assemble_mass_rt(cx, TensorField.scalar(3.0))
    ref = 3 * M1.toarray()
    assert np.abs(M3.toarray() - ref).max() <= 1e-15 * np.abs(ref).max()


def test_sigma_cases(rng):
    cx = box_complex(2)
    assert assembly.assemble_mass_sigma(cx, TensorField.zero()).nnz == 0
    assert assembly.assemble_mass_sigma(cx, None).nnz == 0
    K = assembly.assemble_mass_sigma(cx, TensorField.identity())
    assert (K - assembly.assemble_mass_nedelec(cx)).count_nonzero() == 0
    Ks = assembly.assemble_mass_sigma(cx, TensorField.cellwise(rng.integers(0, 2, cx.n_cell).astype(float)))
    X = rng.standard_normal((Ks.shape[0], 50))
    q = np.einsum("ij,ij->j", X, Ks @ X)
    assert np.all(q >= -1e-12 * np.einsum("ij,ij->j", X, X))


def test_anisotropic_cellwise_mass_against_oracle(rng):
    cx = box_complex(1)
    L = rng.standard_normal((cx.n_cell, 3, 3))
    A = L @ np.swapaxes(L, 1, 2) + np.eye(3)
    M = assembly.assemble_mass_rt(cx, TensorField.cellwise(A)).toarray()
    ref = np.zeros_like(M)
    for cell in range(cx.n_cell):
        pts = physical_points(cx, cell, TET_DEGREE5)
        vals = np.array([[whitney_face_eval(cx, cell, k, x) for k in range(4)] for x in pts])
        loc = cx.mesh.volumes[cell] * np.einsum("q,qki,ij,qlj->kl", TET_DEGREE5.weights, vals, A[cell], vals)
        f = cx.mesh.cell_faces[cell]
        ref[np.ix_(f, f)] += loc
    assert np.abs(M - ref).max() <= 1e-12


# --- coupling --------------------------------------------------------------------

def test_coupling_dual_path():
    cx = box_complex(2)
    P = assembly.assemble_curl_coupling(cx)
    Q = assembly.assemble_curl_coupling_quadrature(cx)
    assert P.shape == (cx.n_interior_edge, cx.n_face)
    assert abs(P - Q).max() <= 1e-12


def test_coupling_dual_path_weighted(rng):
    cx = box_complex(2)
    mu_inv = TensorField.cellwise(rng.uniform(0.5, 2.0, cx.n_cell))
    assert abs(assembly.assemble_curl_coupling(cx, mu_inv) - assembly.assemble_curl_coupling_quadrature(cx, mu_inv)).max() <= 1e-12


def test_coupling_annihilates_discrete_gradients(rng):
    cx = box_complex(3)
    q = rng.standard_normal(cx.n_vertex)
    q[cx.boundary_vertex_ids] = 0.0
    alpha = (cx.G @ q)[cx.interior_edges]
    # boundary edges of a grad with q|boundary = 0 vanish, so alpha is the full gradient
    assert np.allclose(cx.G @ q, np.bincount(cx.interior_edges, alpha, cx.n_edge))
    Cpl = assembly.assemble_curl_coupling(cx)
    assert np.abs(Cpl.T @ alpha).max() <= 1e-14


# --- loads and norms -------------------------------------------------------------

def test_load_zero():
    cx = box_complex(2)
    assert not assembly.assemble_load(cx, SourceField.zero(), 0.3).any()


def test_load_constant_matches_high_order():
    cx = box_complex(1)
    c = np.array([0.5, -2.0, 1.5])
    f = SourceField(lambda x, t: np.broadcast_to(c, x.shape).copy())
    F = assembly.assemble_load(cx, f, 0.0)
    ref = assembly.rhs_nedelec(cx, const_field(c), TET_DEGREE5)
    assert np.allclose(F, ref, atol=1e-15)
    # independent: c . int psi_j from the pointwise basis
    e = cx.interior_edges[0]
    total = 0.0
    for cell in range(cx.n_cell):
        local = np.nonzero(cx.mesh.cell_edges[cell] == e)[0]
        if local.size:
            pts = physical_points(cx, cell, TET_DEGREE5)
            vals = np.array([whitney_edge_eval(cx, cell, local[0], x) for x in pts])
            total += cx.mesh.volumes[cell] * TET_DEGREE5.weights @ (vals @ c)
    assert F[0] == pytest.approx(total, abs=1e-15)


def test_load_linearity():
    cx = box_complex(2)
    f1 = SourceField(lambda x, t: np.sin(x + t))
    f2 = SourceField(lambda x, t: x**2 * t)
    f12 = SourceField(lambda x, t: np.sin(x + t) + x**2 * t)
    t = 0.7
    lhs = assembly.assemble_load(cx, f12, t)
    rhs = assembly.assemble_load(cx, f1, t) + assembly.assemble_load(cx, f2, t)
    assert np.abs(lhs - rhs).max() <= 1e-14


def test_load_rejects_nonfinite_values():
    with pytest.raises(CoefficientError):
        assembly.assemble_load(box_complex(1), SourceField(lambda x, t: np.full_like(x, np.inf)), 0.0)


def test_l2_error_examples():
    cx = box_complex(2)
    zero = const_field([0.0, 0.0, 0.0])
    assert assembly.l2_error_field(cx, np.zeros(cx.n_face), "RT0", zero) == 0.0
    assert assembly.l2_error_field(cx, np.zeros(cx.n_face), "RT0", const_field([1.0, 0, 0])) == pytest.approx(1.0, rel=1e-14)
    c = const_field([1.0, -2.0, 0.5])
    assert assembly.l2_error_field(cx, interpolate_faces(cx, c), "RT0", c) <= 1e-13
    with pytest.raises(ValueError):
        assembly.l2_error_field(cx, np.zeros(cx.n_face), "RT0", zero, TET_DEGREE2.__class__(
            TET_DEGREE2.points[:1], np.ones(1), 1))


def test_hcurl_error_of_exact_discrete_field(rng):
    cx = box_complex(2)
    fld = DiscreteField(cx, rng.standard_normal(cx.n_interior_edge), "N0")
    assert assembly.hcurl_error(cx, fld.coefficients, fld, fld.curl()) <= 1e-13


@pytest.mark.parametrize("n", [1, 2])
def test_degree2_matches_degree5_oracle(n):
    cx = box_complex(n)
    for A in (TensorField.identity(), TensorField(constant=[[2, 0.5, 0], [0.5, 1, 0.2], [0, 0.2, 3]])):
        for fn in (assembly.assemble_mass_nedelec, assembly.assemble_mass_rt):
            d = fn(cx, A) - fn(cx, A, quad=TET_DEGREE5)
            assert (abs(d).max() if d.nnz else 0.0) <= 1e-12
