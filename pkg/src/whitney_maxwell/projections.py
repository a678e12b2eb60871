"""Projections onto the discrete spaces and the two magnetic initializations.

* ``l2_project_rt``        L2-orthogonal projector onto RT_h
* ``l2_project_nedelec``   L2-orthogonal projector onto N_h^0
* ``riesz_project_nedelec`` orthogonal projector onto N_h^0 in the inner
  product ``(u, v) + (curl u, curl v)``
* ``constrained_project_rt`` L2 projection onto the discretely
  divergence-free subspace of RT_h, through its saddle-point system
* ``potential_init_rt``    curl of the Riesz projection of a vector potential
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import assembly
from .derham import DeRhamComplex, exact_curl
from .sparse import cg_solve, schur_solve


@dataclass
class ProjectionReport:
    coefficients: np.ndarray
    space: str
    residuals: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)
    l2_error: float | None = None
    hcurl_error: float | None = None
    div_residual: float | None = None
    multiplier: np.ndarray | None = None
    quantum: float | None = None
    potential: np.ndarray | None = None

    def to_json(self) -> dict:
        return {"dofs": int(self.coefficients.size), "space": self.space,
                "residuals": self.residuals, "iterations": self.iterations,
                "l2_error": self.l2_error, "hcurl_error": self.hcurl_error,
                "div_residual": self.div_residual}


def _mass_rt(cx):
    if "M_rt_id" not in cx._cache:
        cx._cache["M_rt_id"] = assembly.assemble_mass_rt(cx)
    return cx._cache["M_rt_id"]


def _mass_n(cx):
    if "M_n_id" not in cx._cache:
        cx._cache["M_n_id"] = assembly.assemble_mass_nedelec(cx)
    return cx._cache["M_n_id"]


def _div_residual(cx, beta) -> float:
    return float(np.max(np.abs(cx.D_float @ beta), initial=0.0))


def l2_project_rt(cx: DeRhamComplex, u, tol: float = 1e-13, with_error: bool = True) -> ProjectionReport:
    """P_h u: solve M_RT c = ((u, phi_i))_i."""
    res = cg_solve(_mass_rt(cx), assembly.rhs_rt(cx, u), tol)
    rep = ProjectionReport(res.x, "RT0", {"cg": res.residual}, {"cg": res.iterations})
    if with_error:
        rep.l2_error = assembly.l2_error_field(cx, res.x, "RT0", u)
    rep.div_residual = _div_residual(cx, res.x)
    return rep


def l2_project_nedelec(cx: DeRhamComplex, u, tol: float = 1e-13, with_error: bool = True) -> ProjectionReport:
    """Q_h^N u on interior-edge DOFs (tangential trace forced to zero)."""
    res = cg_solve(_mass_n(cx), assembly.rhs_nedelec(cx, u), tol)
    rep = ProjectionReport(res.x, "N0", {"cg": res.residual}, {"cg": res.iterations})
    if with_error:
        rep.l2_error = assembly.l2_error_field(cx, res.x, "N0", u)
    return rep


def riesz_matrix(cx: DeRhamComplex):
    if "riesz" not in cx._cache:
        cx._cache["riesz"] = (_mass_n(cx) + assembly.assemble_curl_curl(cx, M_B=_mass_rt(cx))).tocsr()
    return cx._cache["riesz"]


def riesz_project_nedelec(cx: DeRhamComplex, u, curl_u, tol: float = 1e-13,
                          with_error: bool = True) -> ProjectionReport:
    """R_h u: solve (M_N + K_curl) c = (u, psi) + (curl u, curl psi).

    ``curl_u`` must be given analytically; it is never differenced.
    """
    rhs = assembly.rhs_nedelec(cx, u) + assembly.rhs_curl(cx, curl_u)
    res = cg_solve(riesz_matrix(cx), rhs, tol)
    rep = ProjectionReport(res.x, "N0", {"cg": res.residual}, {"cg": res.iterations})
    if with_error:
        rep.l2_error = assembly.l2_error_field(cx, res.x, "N0", u)
        rep.hcurl_error = assembly.hcurl_error(cx, res.x, u, curl_u)
    return rep


def constrained_project_rt(cx: DeRhamComplex, B0, tol: float = 1e-11,
                           with_error: bool = True) -> ProjectionReport:
    """L2 projection of B0 onto {v in RT_h : div v = 0 in Q_h} via its KKT system.

    The constraint rows are ``int_K div phi_f = D[K, f]``, so the
    saddle-point matrix is ``[[M_RT, D^T], [D, 0]]``.
    """
    b = assembly.rhs_rt(cx, B0)
    sol = schur_solve(_mass_rt(cx), cx.D_float.T.tocsr(), b, np.zeros(cx.n_cell), tol)
    rep = ProjectionReport(sol.x, "RT0",
                           {"primal": sol.primal_residual, "constraint": sol.constraint_residual},
                           {"outer": sol.outer_iterations, "inner": sol.inner_iterations},
                           multiplier=sol.p)
    rep.div_residual = _div_residual(cx, sol.x)
    if with_error:
        rep.l2_error = assembly.l2_error_field(cx, sol.x, "RT0", B0)
    return rep


def potential_init_rt(cx: DeRhamComplex, A0, curl_A0, tol: float = 1e-13,
                      quantum: float | None = None, with_error: bool = True) -> ProjectionReport:
    """B_h(0) = curl(R_h A0), with exactly zero discrete divergence.

    A0 must have vanishing tangential trace (not checked). The Riesz
    coefficients are rounded to a dyadic grid before applying the incidence
    matrix so that ``D @ beta`` vanishes in floating point as well.
    """
    r = riesz_project_nedelec(cx, A0, curl_A0, tol, with_error=False)
    a_q, beta, q = exact_curl(cx, r.coefficients, quantum)
    rep = ProjectionReport(beta, "RT0", dict(r.residuals), dict(r.iterations),
                           quantum=q, potential=a_q)
    rep.div_residual = _div_residual(cx, beta)
    if with_error:
        rep.l2_error = assembly.l2_error_field(cx, beta, "RT0", curl_A0)
        rep.hcurl_error = assembly.hcurl_error(cx, a_q, A0, curl_A0)
    return rep
