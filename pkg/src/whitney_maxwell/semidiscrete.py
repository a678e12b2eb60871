"""Semi-discrete Maxwell system on N_h^0 x RT_h and its time integration.

With ``alpha`` the interior-edge coefficients of E_h and ``beta`` the face
coefficients of B_h, the scheme reads

    M_E alpha' + K_E alpha - Cpl beta = F(t)
    beta' + C_int alpha = 0

where ``Cpl = C_int^T M_B``. The second line is Faraday's law tested with
all of RT_h; since curl N_h^0 lies in RT_h it holds strongly in coefficient
form, and ``D @ C_int = 0`` makes ``D @ beta`` an invariant of any stepper
that updates beta along ``range(C_int)``.

The Faraday update is carried out on a dyadic fixed-point grid (see
:func:`whitney_maxwell.derham.exact_curl`), so the invariant also holds
bit-for-bit in floating point.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sps

from . import assembly
from .derham import DeRhamComplex, dyadic_quantum, exact_curl, quantize
from .fields import CoefficientError, SourceField, TensorField
from .projections import constrained_project_rt, l2_project_nedelec, potential_init_rt
from .sparse import SolverError, cg_solve

logger = logging.getLogger(__name__)

# extra bits of range above the a-priori bound on |beta|
_SPARE_BITS = 4


@dataclass(frozen=True, eq=False)
class SystemMatrices:
    cx: DeRhamComplex
    M_E: sps.csr_matrix
    K_E: sps.csr_matrix
    Cpl: sps.csr_matrix
    M_B: sps.csr_matrix
    C_int: sps.csr_matrix
    D: sps.csr_matrix
    eps_min: float
    mu_inv_min_local: float  # smallest eigenvalue over the local RT mass blocks
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_alpha(self) -> int:
        return self.M_E.shape[0]

    @property
    def n_beta(self) -> int:
        return self.M_B.shape[0]

    def dimensions(self) -> dict:
        return {"alpha": self.n_alpha, "beta": self.n_beta, "cells": self.D.shape[0],
                "M_E": self.M_E.shape, "K_E": self.K_E.shape, "Cpl": self.Cpl.shape,
                "M_B": self.M_B.shape}

    @property
    def curl_curl(self) -> sps.csr_matrix:
        if "Kc" not in self._cache:
            self._cache["Kc"] = (self.Cpl @ self.C_int).tocsr()
        return self._cache["Kc"]

    def load(self, f: SourceField | None, t: float) -> np.ndarray:
        if f is None or f.is_zero:
            return np.zeros(self.n_alpha)
        return assembly.assemble_load(self.cx, f, t)

    def factorization_residual(self) -> float:
        """max |Cpl - C_int^T M_B| (zero by construction)."""
        diff = self.Cpl - (self.C_int.T @ self.M_B)
        return float(abs(diff).max()) if diff.nnz else 0.0


def build_system(cx: DeRhamComplex, eps: TensorField | None = None,
                 mu_inv: TensorField | None = None,
                 sigma: TensorField | None = None) -> SystemMatrices:
    eps = TensorField.identity() if eps is None else eps
    mu_inv = TensorField.identity() if mu_inv is None else mu_inv
    M_E = assembly.assemble_mass_nedelec(cx, eps)
    K_E = assembly.assemble_mass_sigma(cx, sigma)
    loc_B = assembly.local_mass_rt(cx, mu_inv)
    M_B = assembly.assemble_mass_rt(cx, mu_inv)
    Cpl = assembly.assemble_curl_coupling(cx, M_B=M_B)
    pts = cx.cell_points(assembly.TET_DEGREE2.points)
    eps_min = eps.check(pts, "spd")
    lam_B = float(np.linalg.eigvalsh(loc_B).min()) if loc_B.size else 1.0
    return SystemMatrices(cx, M_E, K_E, Cpl, M_B, cx.C_interior, cx.D_float, eps_min, lam_B)


@dataclass(frozen=True)
class SimState:
    t: float
    alpha: np.ndarray
    beta: np.ndarray
    quantum: float = 0.0  # dyadic grid that beta lies on (0: no exactness)

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"state {name} has non-finite entries")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class StepRecord:
    t: float
    energy: float
    dissipation: float  # integral of (sigma E_h, E_h) over the step
    work: float  # integral of (f, E_h) over the step
    gauss_residual: float  # max |D beta|
    energy_identity_residual: float
    gauss_drift: float = 0.0  # max |D beta^{n+1} - D beta^n|
    step_residual: float = 0.0  # energy balance defect of this step alone
    iterations: int = 0

    CSV_HEADER = ("t", "energy", "dissipation", "work", "gauss_residual",
                  "energy_identity_residual")

    def csv_row(self) -> list[str]:
        return ["%.17g" % getattr(self, k) for k in self.CSV_HEADER]


def energy(sys: SystemMatrices, state: SimState) -> float:
    """1/2 (alpha^T M_E alpha + beta^T M_B beta)."""
    a, b = state.alpha, state.beta
    if a.shape != (sys.n_alpha,) or b.shape != (sys.n_beta,):
        raise ValueError("state dimensions do not match the system")
    return 0.5 * float(a @ (sys.M_E @ a) + b @ (sys.M_B @ b))


def gauss_residual(sys: SystemMatrices, beta) -> float:
    return float(np.max(np.abs(sys.D @ beta), initial=0.0))


def beta_bound(sys: SystemMatrices, energy_value: float) -> float:
    """A-priori bound on max |beta_f| for states of at most the given energy."""
    return math.sqrt(2.0 * max(energy_value, 0.0) / sys.mu_inv_min_local)


def energy_bound(E0: float, T: float, eps_min: float, forcing_sq_integral: float) -> float:
    """Gronwall bound e^T E(0) + e^T / (2 eps_min) int_0^T ||f||^2."""
    if forcing_sq_integral == 0.0:
        return E0
    return math.exp(T) * (E0 + forcing_sq_integral / (2.0 * eps_min))


def _grid_for(sys, E_max, floor=0.0):
    q = dyadic_quantum(beta_bound(sys, E_max), _SPARE_BITS)
    return max(q, floor)


def initial_state(sys: SystemMatrices, E0=None, B0=None, *, A0=None, b_init: str = "constrained",
                  t0: float = 0.0, tol: float = 1e-13, schur_tol: float = 1e-11) -> SimState:
    """E_h(0) = Q_h^N E0 and a discretely divergence-free B_h(0).

    ``b_init="potential"`` uses curl(R_h A0) with ``curl A0 = B0`` and gives
    ``D beta = 0`` exactly; ``"constrained"`` projects B0 onto the discrete
    divergence-free subspace.
    """
    cx = sys.cx
    alpha = np.zeros(sys.n_alpha) if E0 is None else l2_project_nedelec(cx, E0, tol, with_error=False).coefficients
    if b_init == "potential":
        if A0 is None:
            if B0 is not None:
                raise ValueError("potential initialization needs the vector potential A0")
            beta, a_q = np.zeros(sys.n_beta), np.zeros(sys.n_alpha)
        else:
            rep = potential_init_rt(cx, A0, B0, tol, with_error=False)
            beta, a_q = rep.coefficients, rep.potential
        E = 0.5 * float(alpha @ (sys.M_E @ alpha) + beta @ (sys.M_B @ beta))
        # a coarser grid is always safe; it must also hold C a exactly
        q = _grid_for(sys, E, dyadic_quantum(12.0 * np.max(np.abs(a_q), initial=0.0), 0))
        if q > 0 and A0 is not None:
            _, beta, _ = exact_curl(cx, a_q, q)
        return SimState(t0, alpha, beta, q)
    if b_init == "constrained":
        beta = np.zeros(sys.n_beta) if B0 is None else constrained_project_rt(cx, B0, schur_tol, with_error=False).coefficients
        E = 0.5 * float(alpha @ (sys.M_E @ alpha) + beta @ (sys.M_B @ beta))
        q = _grid_for(sys, E)
        return SimState(t0, alpha, quantize(beta, q), q)
    raise ValueError(f"unknown b_init {b_init!r} (expected 'potential' or 'constrained')")


def _operator(sys: SystemMatrices, scheme: str, dt: float) -> sps.csr_matrix:
    key = (scheme, float(dt))
    if key not in sys._cache:
        if scheme == "cn":
            S = sys.M_E + (0.5 * dt) * sys.K_E + (0.25 * dt * dt) * sys.curl_curl
        else:
            S = sys.M_E + dt * sys.K_E + (dt * dt) * sys.curl_curl
        sys._cache[key] = S.tocsr()
    return sys._cache[key]


def _faraday(sys, beta, v, q):
    """beta - C_int v on the grid q; exact when everything fits in 53 bits."""
    if q > 0:
        v = quantize(v, q)
        limit = 2.0**51 * q
        if 3.0 * np.max(np.abs(v), initial=0.0) > 4 * limit or np.max(np.abs(beta), initial=0.0) > limit:
            q_new = dyadic_quantum(4.0 * max(np.max(np.abs(beta)), 3.0 * np.max(np.abs(v))), _SPARE_BITS)
            logger.warning("state outgrew its exact-arithmetic grid; regridding %.3g -> %.3g "
                           "(Gauss law now preserved to rounding only at this step)", q, q_new)
            q = q_new
            beta, v = quantize(beta, q), quantize(v, q)
    return beta - sys.C_int @ v, q


def _step(sys, state, dt, f, scheme, tol, F0=None, F1=None):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    a0, b0 = state.alpha, state.beta
    t1 = state.t + dt
    if F1 is None:
        F1 = sys.load(f, t1)
    S = _operator(sys, scheme, dt)
    if scheme == "cn":
        if F0 is None:
            F0 = sys.load(f, state.t)
        Fm = 0.5 * (F0 + F1)
        rhs = (sys.M_E @ a0 - (0.5 * dt) * (sys.K_E @ a0) - (0.25 * dt * dt) * (sys.curl_curl @ a0)
               + dt * (sys.Cpl @ b0) + dt * Fm)
        res = cg_solve(S, rhs, tol, x0=a0)
        a1 = res.x
        a_eff = 0.5 * (a0 + a1)
        F_eff = Fm
    elif scheme == "be":
        rhs = sys.M_E @ a0 + dt * (sys.Cpl @ b0) + dt * F1
        res = cg_solve(S, rhs, tol, x0=a0)
        a1 = res.x
        a_eff = a1
        F_eff = F1
    else:
        raise ValueError(f"unknown stepper {scheme!r}")
    b1, q = _faraday(sys, b0, dt * a_eff, state.quantum)
    new = SimState(t1, a1, b1, q)
    E0, E1 = energy(sys, state), energy(sys, new)
    diss = dt * float(a_eff @ (sys.K_E @ a_eff))
    work = dt * float(a_eff @ F_eff)
    step_res = E1 - E0 + diss - work
    d0, d1 = sys.D @ b0, sys.D @ b1
    rec = StepRecord(t1, E1, diss, work, float(np.max(np.abs(d1), initial=0.0)), step_res,
                     float(np.max(np.abs(d1 - d0), initial=0.0)), step_res, res.iterations)
    return new, rec, F1


def step_crank_nicolson(sys: SystemMatrices, state: SimState, dt: float,
                        f: SourceField | None = None, tol: float = 1e-12):
    """One trapezoidal step; returns ``(new_state, StepRecord)``.

    Eliminating beta leaves one SPD solve with
    ``M_E + dt/2 K_E + dt^2/4 C_int^T M_B C_int`` for alpha^{n+1}.
    """
    new, rec, _ = _step(sys, state, dt, f, "cn", tol)
    return new, rec


def step_backward_euler(sys: SystemMatrices, state: SimState, dt: float,
                        f: SourceField | None = None, tol: float = 1e-12):
    """One implicit Euler step; dissipative even without conductivity."""
    new, rec, _ = _step(sys, state, dt, f, "be", tol)
    return new, rec


class RunError(RuntimeError):
    """A step failed; ``records`` and ``state`` hold the partial run."""

    def __init__(self, message, records, state):
        super().__init__(message)
        self.records = records
        self.state = state


@dataclass
class RunResult:
    records: list
    state: SimState
    states: list | None = None

    def max(self, attr: str) -> float:
        return max(abs(getattr(r, attr)) for r in self.records)


def n_steps(T: float, dt: float) -> int:
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    k = round(T / dt)
    if k < 1 or abs(k * dt - T) > 1e-12 * max(1.0, T):
        raise ValueError(f"dt = {dt!r} does not divide T = {T!r}")
    return k


def run(sys: SystemMatrices, state0: SimState, T: float, dt: float,
        f: SourceField | None = None, stepper: str = "cn", tol: float = 1e-12,
        keep_states: bool = False, callback=None) -> RunResult:
    """Integrate over (t0, t0 + T); one record for the initial state, then one per step.

    ``energy_identity_residual`` is cumulative:
    ``E(t_n) - E(t_0) + sum(dissipation) - sum(work)``.
    """
    stepper = {"crank-nicolson": "cn", "backward-euler": "be"}.get(stepper, stepper)
    if stepper not in ("cn", "be"):
        raise ValueError(f"unknown stepper {stepper!r}")
    k = n_steps(T, dt)
    state = state0
    E_init = energy(sys, state)
    if f is not None and not f.is_zero and state.quantum > 0:
        times = state0.t + dt * np.arange(k + 1)
        try:
            norms = np.array([assembly.source_norm_sq(sys.cx, f, t) for t in times])
        except CoefficientError:
            norms = None  # the offending step reports it with the partial records
        q = 0.0
        if norms is not None:
            f2 = float(dt * (norms.sum() - 0.5 * (norms[0] + norms[-1])))
            q = _grid_for(sys, energy_bound(E_init, T, sys.eps_min, f2))
        if q > state.quantum:
            # beta must move to the coarser grid once, before stepping
            state = replace(state, beta=quantize(state.beta, q), quantum=q)
            E_init = energy(sys, state)
    g0 = gauss_residual(sys, state.beta)
    records = [StepRecord(state.t, E_init, 0.0, 0.0, g0, 0.0)]
    states = [state] if keep_states else None
    cum_diss = cum_work = 0.0
    try:
        F_prev = sys.load(f, state.t) if stepper == "cn" else None
    except ValueError as exc:
        raise RunError(f"load at t = {state.t} failed: {exc}", records, state) from exc
    for n in range(k):
        t_next = state0.t + (n + 1) * dt
        try:
            new, rec, F_prev = _step(sys, state, t_next - state.t, f, stepper, tol, F0=F_prev)
        except (SolverError, ValueError) as exc:
            raise RunError(f"step {n + 1} failed: {exc}", records, state) from exc
        cum_diss += rec.dissipation
        cum_work += rec.work
        rec = replace(rec, energy_identity_residual=rec.energy - E_init + cum_diss - cum_work)
        records.append(rec)
        state = new
        if keep_states:
            states.append(state)
        if callback is not None:
            callback(state, rec)
    return RunResult(records, state, states)


def write_csv(records, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(StepRecord.CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
