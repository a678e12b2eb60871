import io
import logging

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings, strategies as st

from whitney_maxwell import assembly
from whitney_maxwell import semidiscrete as sd
from whitney_maxwell.derham import build_complex, dyadic_quantum, exact_curl, quantize
from whitney_maxwell.experiments import CAVITY, PHASE_SHIFT
from whitney_maxwell.fields import SourceField, TensorField

from conftest import box_complex

E0, B0, A0 = CAVITY.at(PHASE_SHIFT)


@pytest.fixture(scope="module")
def sys2():
    return sd.build_system(box_complex(2))


@pytest.fixture(scope="module")
def damped2():
    return sd.build_system(box_complex(2), sigma=TensorField.identity())


def tiny_system(m=2.0, mb=3.0, c=1.0, k=0.0):
    """One E-dof, one B-dof: m a' + k a - c mb b = 0, b' + c a = 0."""
    csr = lambda v: sps.csr_matrix(np.array([[v]], dtype=float))
    return sd.SystemMatrices(None, csr(m), csr(k), csr(c * mb), csr(mb), csr(c),
                             sps.csr_matrix((0, 1)), 1.0, mb)


def test_tiny_system_crank_nicolson_is_a_rotation():
    sys_ = tiny_system()
    st0 = sd.SimState(0.0, np.array([1.0]), np.array([0.5]))
    e0 = sd.energy(sys_, st0)
    state = st0
    for _ in range(100):
        state, rec = sd.step_crank_nicolson(sys_, state, 0.3)
    assert sd.energy(sys_, state) == pytest.approx(e0, rel=1e-13)
    # closed form of the trapezoidal map for this 2x2 system
    m, mb, c, dt = 2.0, 3.0, 1.0, 0.3
    L = np.array([[0.0, c * mb / m], [-c, 0.0]])
    R = np.linalg.solve(np.eye(2) - dt / 2 * L, np.eye(2) + dt / 2 * L)
    ref = np.linalg.matrix_power(R, 100) @ np.array([1.0, 0.5])
    assert np.allclose([state.alpha[0], state.beta[0]], ref, atol=1e-12)


def test_tiny_system_backward_euler_dissipates():
    sys_ = tiny_system()
    state = sd.SimState(0.0, np.array([1.0]), np.array([0.5]))
    energies = [sd.energy(sys_, state)]
    for _ in range(20):
        state, _ = sd.step_backward_euler(sys_, state, 0.3)
        energies.append(sd.energy(sys_, state))
    assert np.all(np.diff(energies) < 0)


def test_build_system_single_tet(single_tet):
    s = sd.build_system(build_complex(single_tet))
    assert s.M_E.shape == (0, 0) and s.K_E.shape == (0, 0) and s.Cpl.shape == (0, 4)
    assert s.M_B.shape == (4, 4)


def test_build_system_blocks(sys2):
    assert sys2.K_E.nnz == 0
    assert sys2.factorization_residual() <= 1e-12
    d = sys2.dimensions()
    assert d["alpha"] == box_complex(2).n_interior_edge and d["beta"] == box_complex(2).n_face


def test_skew_structure(sys2, rng):
    for _ in range(5):
        a, b = rng.standard_normal(sys2.n_alpha), rng.standard_normal(sys2.n_beta)
        lhs = a @ (sys2.Cpl @ b)
        rhs = b @ (sys2.M_B @ (sys2.C_int @ a))
        assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))


def test_energy_examples(sys2, rng):
    zero = sd.SimState(0.0, np.zeros(sys2.n_alpha), np.zeros(sys2.n_beta))
    assert sd.energy(sys2, zero) == 0.0
    s = sd.SimState(0.0, rng.standard_normal(sys2.n_alpha), rng.standard_normal(sys2.n_beta))
    s2 = sd.SimState(0.0, 2 * s.alpha, 2 * s.beta)
    assert sd.energy(sys2, s2) == 4 * sd.energy(sys2, s)
    eps2 = sd.build_system(box_complex(2), eps=TensorField.scalar(2.0))
    a_only = sd.SimState(0.0, s.alpha, np.zeros(sys2.n_beta))
    assert sd.energy(eps2, a_only) == 2 * sd.energy(sys2, a_only)
    with pytest.raises(ValueError):
        sd.energy(sys2, sd.SimState(0.0, np.zeros(3), np.zeros(sys2.n_beta)))


def test_state_rejects_nonfinite():
    with pytest.raises(ValueError):
        sd.SimState(0.0, np.array([np.nan]), np.zeros(1))


def test_zero_initial_state(sys2):
    zero = lambda x: np.zeros_like(x)
    for mode in ("potential", "constrained"):
        st0 = sd.initial_state(sys2, zero, zero, A0=zero, b_init=mode)
        assert not st0.alpha.any() and not st0.beta.any()


def test_initial_state_cavity_t0_is_exact(sys2):
    E, B, A = CAVITY.at(0.0)
    st0 = sd.initial_state(sys2, E, B, A0=A, b_init="potential")
    assert sd.gauss_residual(sys2, st0.beta) == 0.0
    assert not st0.beta.any()


def test_initial_state_errors():
    with pytest.raises(ValueError):
        sd.initial_state(sd.build_system(box_complex(1)), E0, B0, b_init="other")
    with pytest.raises(ValueError):
        sd.initial_state(sd.build_system(box_complex(1)), E0, B0, b_init="potential")


@pytest.mark.parametrize("mode", ["potential", "constrained"])
def test_initial_error_decreases(mode):
    errs = []
    for n in (2, 4, 8):
        cx = box_complex(n)
        st0 = sd.initial_state(sd.build_system(cx), E0, B0, A0=A0, b_init=mode, t0=PHASE_SHIFT)
        errs.append((assembly.l2_error_field(cx, st0.alpha, "N0", E0),
                     assembly.l2_error_field(cx, st0.beta, "RT0", B0)))
        assert sd.gauss_residual(sd.build_system(cx), st0.beta) <= (0.0 if mode == "potential" else 1e-10)
    assert errs[0][0] > errs[1][0] > errs[2][0]
    assert errs[0][1] > errs[1][1] > errs[2][1]


def test_cn_step_conserves_energy_and_gauss(sys2):
    state = sd.initial_state(sys2, E0, B0, b_init="constrained", t0=PHASE_SHIFT)
    e0 = sd.energy(sys2, state)
    new, rec = sd.step_crank_nicolson(sys2, state, 1 / 64)
    assert abs(rec.energy - e0) <= 1e-12 * e0
    assert np.abs(sys2.D @ new.beta - sys2.D @ state.beta).max() <= 1e-13
    assert rec.t == pytest.approx(PHASE_SHIFT + 1 / 64)


def test_cn_damped_monotone(damped2):
    state = sd.initial_state(damped2, E0, B0, A0=A0, b_init="potential", t0=PHASE_SHIFT)
    e_start = sd.energy(damped2, state)
    for _ in range(20):
        new, rec = sd.step_crank_nicolson(damped2, state, 1 / 32)
        assert rec.energy <= sd.energy(damped2, state) + 1e-12 * e_start
        assert rec.dissipation >= 0
        state = new


def test_step_rejects_bad_dt(sys2):
    st0 = sd.initial_state(sys2, E0, B0, b_init="constrained")
    with pytest.raises(ValueError):
        sd.step_crank_nicolson(sys2, st0, 0.0)
    with pytest.raises(ValueError):
        sd.step_backward_euler(sys2, st0, -1.0)


def test_backward_euler_properties(sys2):
    state = sd.initial_state(sys2, E0, B0, b_init="constrained", t0=PHASE_SHIFT)
    for _ in range(10):
        new, rec = sd.step_backward_euler(sys2, state, 1 / 32)
        assert rec.energy <= sd.energy(sys2, state)
        assert rec.gauss_drift <= 1e-13
        state = new


def test_backward_euler_energy_loss_is_first_order(sys2):
    # the loss over a fixed horizon is O(dt); one step alone loses O(dt^2)
    state = sd.initial_state(sys2, E0, B0, A0=A0, b_init="potential", t0=PHASE_SHIFT)
    e0 = sd.energy(sys2, state)
    loss = []
    for dt in (1 / 64, 1 / 128, 1 / 256):
        res = sd.run(sys2, state, 0.25, dt, stepper="be")
        loss.append(e0 - res.records[-1].energy)
    r1, r2 = loss[0] / loss[1], loss[1] / loss[2]
    assert 1.7 <= r1 <= 2.3 and 1.8 <= r2 <= 2.2


@pytest.mark.parametrize("mode,gauss_tol", [("potential", 0.0), ("constrained", 1e-10)])
def test_run_cavity(sys2, mode, gauss_tol):
    st0 = sd.initial_state(sys2, E0, B0, A0=A0, b_init=mode, t0=PHASE_SHIFT)
    res = sd.run(sys2, st0, 1.0, 1 / 64)
    assert len(res.records) == 65
    e0 = res.records[0].energy
    assert max(abs(r.energy - e0) for r in res.records) <= 1e-10 * e0
    assert res.max("gauss_residual") <= gauss_tol
    assert res.max("energy_identity_residual") <= 1e-10 * max(e0, 1)


def test_run_forced_energy_identity(damped2):
    st0 = sd.initial_state(damped2, E0, B0, b_init="constrained", t0=PHASE_SHIFT)
    res = sd.run(damped2, st0, 0.5, 1 / 32, CAVITY.forcing())
    assert res.max("step_residual") <= 1e-10
    assert res.max("energy_identity_residual") <= 1e-10
    assert any(r.work != 0 for r in res.records[1:])
    assert res.max("gauss_drift") <= 1e-12


def test_forced_cavity_tracks_exact_energy(damped2):
    # with sigma = I and f = E the cavity mode is still a solution: energy stays near 1/8
    E, B, A = CAVITY.at(0.0)
    st0 = sd.initial_state(damped2, E, B, A0=A, b_init="potential")
    res = sd.run(damped2, st0, 0.5, 1 / 32, CAVITY.forcing())
    e = [r.energy for r in res.records]
    assert max(e) - min(e) <= 0.1 * CAVITY.energy()


def test_stability_bound(damped2):
    st0 = sd.initial_state(damped2, E0, B0, b_init="constrained", t0=PHASE_SHIFT)
    f = SourceField(lambda x, t: 3.0 * np.cos(5 * t) * CAVITY.E(x, 0.0))
    for dt in (1 / 8, 1 / 32):
        res = sd.run(damped2, st0, 1.0, dt, f)
        t = np.array([r.t for r in res.records])
        f2 = np.array([assembly.source_norm_sq(damped2.cx, f, s) for s in t])
        bound = sd.energy_bound(res.records[0].energy, 1.0, damped2.eps_min, float(np.trapezoid(f2, t)))
        assert max(r.energy for r in res.records) <= bound


@pytest.mark.parametrize("T,dt", [(1.0, 0.3), (0.0, 0.1), (1.0, 0.0), (-1.0, 0.1)])
def test_run_rejects_bad_time_grid(sys2, T, dt):
    st0 = sd.initial_state(sys2, None, None)
    with pytest.raises(ValueError):
        sd.run(sys2, st0, T, dt)


def test_run_failure_returns_partial_records(sys2):
    def bad(x, t):
        return np.full_like(x, np.nan if t > 0.1 else 0.0)

    st0 = sd.initial_state(sys2, E0, B0, b_init="constrained")
    with pytest.raises(sd.RunError) as err:
        sd.run(sys2, st0, 0.5, 1 / 32, SourceField(bad))
    recs = err.value.records
    assert 1 < len(recs) < 17
    assert recs[-1].t <= 0.1 + 1e-12


def test_csv_format(sys2):
    st0 = sd.initial_state(sys2, E0, B0, A0=A0, b_init="potential", t0=PHASE_SHIFT)
    res = sd.run(sys2, st0, 0.125, 1 / 64)
    buf = io.StringIO()
    sd.write_csv(res.records, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,energy,dissipation,work,gauss_residual,energy_identity_residual"
    assert len(lines) == 10
    for line, rec in zip(lines[1:], res.records):
        vals = [float(v) for v in line.split(",")]
        assert vals[1] == rec.energy  # 17 digits round-trip exactly


def test_regridding_when_state_outgrows_grid(sys2, caplog):
    st0 = sd.initial_state(sys2, E0, B0, b_init="constrained", t0=PHASE_SHIFT)
    tiny = dyadic_quantum(1e-12, 0)
    cramped = sd.SimState(st0.t, st0.alpha, quantize(st0.beta, tiny), tiny)
    with caplog.at_level(logging.WARNING):
        new, rec = sd.step_crank_nicolson(sys2, cramped, 1 / 64)
    assert "regridding" in caplog.text
    assert new.quantum > tiny


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dt=st.floats(1e-3, 0.5), n=st.sampled_from([1, 2]))
def test_cn_invariants_property(seed, dt, n):
    sys_ = sd.build_system(box_complex(n))
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(sys_.n_alpha)
    _, beta, _ = exact_curl(sys_.cx, rng.standard_normal(sys_.n_alpha))
    e = 0.5 * (a @ (sys_.M_E @ a) + beta @ (sys_.M_B @ beta))
    q = dyadic_quantum(sd.beta_bound(sys_, e), 4)
    st0 = sd.SimState(0.0, a, quantize(beta, q), q)
    g0 = sys_.D @ st0.beta
    e0 = sd.energy(sys_, st0)
    state = st0
    for _ in range(5):
        state, rec = sd.step_crank_nicolson(sys_, state, dt)
        assert np.array_equal(sys_.D @ state.beta, g0)
        assert abs(rec.energy - e0) <= 1e-11 * e0
