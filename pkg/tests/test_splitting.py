import numpy as np
import pytest
from scipy import integrate
from scipy.linalg import null_space

from conftest import make_config
from stochfsi.assembly import assemble_structure, lagrange_1d
from stochfsi.energetics import quad
from stochfsi.geometry import build_meshes
from stochfsi.noise import BrownianPath, sample_path
from stochfsi.splitting import (PressureSignal, Problem, SplitState, Stage, StageError,
                                average_pressure, fluid_step, full_step, run_path,
                                stochastic_step, structure_step)


def _zero_state(lay, stage=Stage.WHOLE):
    return SplitState(np.zeros(lay.n_vel), np.zeros(lay.n_pressure), np.zeros(lay.n_interface),
                      np.zeros(lay.n_interface), stage)


# -- pressure averages -------------------------------------------------------

def test_average_constant():
    sig = PressureSignal.constant(5.0)
    assert all(average_pressure(sig, n, 0.1) == 5.0 for n in range(10))


def test_average_linear_and_tabulated():
    ramp = PressureSignal("tabulated", times=[0.0, 1.0], values=[0.0, 1.0])
    assert average_pressure(ramp, 0, 0.5) == pytest.approx(0.25, abs=1e-15)
    ramp2 = PressureSignal("tabulated", times=[0.0, 1.0], values=[0.0, 2.0])
    assert average_pressure(ramp2, 1, 0.5) == pytest.approx(1.5, abs=1e-15)
    # kinked table and constant extension past the last sample
    tab = PressureSignal("tabulated", times=[0.0, 0.3, 1.0], values=[1.0, 4.0, 0.0])
    ref = (0.5 * (1 + 4) * 0.3 + 0.5 * (4 + 4 * (1 - 0.2 / 0.7)) * 0.2) / 0.5
    assert average_pressure(tab, 0, 0.5) == pytest.approx(ref, rel=1e-14)
    assert average_pressure(tab, 2, 0.5) == pytest.approx(0.0, abs=1e-15)


def test_average_presets_closed_form():
    sig = PressureSignal("sine", mean=1.0, amplitude=2.0, period=0.7)
    a, b = 0.2, 0.45
    w = 2 * np.pi / 0.7
    ref = 1.0 + 2.0 * (np.cos(w * a) - np.cos(w * b)) / (w * (b - a))
    assert sig.interval_average(a, b) == pytest.approx(ref, rel=1e-12)
    pulse = PressureSignal("pulse", peak=3.0, duration=0.3)
    # interval straddles the end of the pulse
    F = lambda t: 1.5 * (t - 0.3 / (2 * np.pi) * np.sin(2 * np.pi * t / 0.3))
    assert pulse.interval_average(0.2, 0.4) == pytest.approx((F(0.3) - F(0.2)) / 0.2, rel=1e-12)


def test_pressure_validation():
    with pytest.raises(ValueError):
        PressureSignal("bogus")
    with pytest.raises(ValueError):
        PressureSignal("constant")
    with pytest.raises(ValueError):
        PressureSignal("tabulated", times=[0, 0], values=[1, 2])
    sig = PressureSignal.from_dict({"kind": "constant", "value": 2.0})
    assert sig(0.3) == 2.0 and sig.to_dict() == {"kind": "constant", "value": 2.0}


# -- the three sub-steps -----------------------------------------------------

def test_structure_step_single_hat():
    _, im = build_meshes(2, 2, 1.0, 1.0)
    M, K, _ = assemble_structure(im, degree=1)
    s = SplitState(np.zeros(1), np.zeros(1), np.zeros(3), np.array([0.0, 1.0, 0.0]))
    out = structure_step(s, 0.1, M, K)
    assert out.stage == Stage.STRUCTURE
    assert out.eta[1] == pytest.approx((1 / 30) / (1 / 3 + 0.04), rel=1e-13)
    assert out.eta[1] == pytest.approx(0.0892857, abs=1e-7)
    assert out.v[1] == pytest.approx(0.892857, abs=1e-6)
    assert out.eta[0] == out.eta[2] == 0.0
    assert out.u is s.u


def test_structure_step_needs_mass_rows_for_free_endpoints():
    _, im = build_meshes(2, 2, 1.0, 1.0)
    M, K, _ = assemble_structure(im, degree=1)
    s = SplitState(np.zeros(1), np.zeros(1), np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        structure_step(s, 0.1, M, K)


def test_zero_steps(small_problem):
    lay = small_problem.layout
    sch = small_problem.scheme(8)
    s1 = sch.structure_step(_zero_state(lay))
    assert not np.any(s1.eta) and not np.any(s1.v)
    s2 = sch.stochastic_step(s1, 0.0)
    assert np.array_equal(s2.v, s1.v)
    s3 = sch.fluid_step(s2, 0.0, 0.0)
    assert not np.any(s3.u) and not np.any(s3.p) and s3.step_index == 1


def test_stochastic_kick_covers_endpoints(small_problem):
    lay = small_problem.layout
    s = stochastic_step(_zero_state(lay, Stage.STRUCTURE), 0.5)
    assert np.all(s.v_free == 0.5) and s.stage == Stage.STOCHASTIC


def test_stage_order_enforced(small_problem):
    lay, sch = small_problem.layout, small_problem.scheme(8)
    with pytest.raises(StageError):
        sch.stochastic_step(_zero_state(lay), 0.1)
    with pytest.raises(StageError):
        sch.fluid_step(_zero_state(lay, Stage.STRUCTURE), 0.0, 0.0)
    with pytest.raises(StageError):
        sch.structure_step(_zero_state(lay, Stage.STOCHASTIC))


def test_full_step_is_the_composition(small_problem):
    pb = small_problem
    sch = pb.scheme(8)
    s0 = pb.initial_state()
    new, (s1, s2, s3) = full_step(s0, sch, 0.3, 1.0, 0.5)
    a = structure_step(s0, sch.dt, pb.ops.M_s, pb.ops.K_s, M_sv=pb.ops.M_gamma_int)
    b = stochastic_step(a, 0.3)
    c = fluid_step(b, sch.dt, 1.0, 0.5, pb.ops, pb.layout)
    for x, y in ((s1, a), (s2, b), (s3, c)):
        for f in ("u", "p", "eta", "v"):
            assert np.array_equal(getattr(x, f), getattr(y, f))
    assert new is s3


def test_semidiscrete_weak_form(small_problem, rng):
    """Whole-step update tested against discretely divergence-free pairs (q, trace q)."""
    pb = small_problem
    ops, lay = pb.ops, pb.layout
    free = lay.vel_free
    Z = null_space(ops.B_div[:, free].toarray())
    tr = pb.run_path(sample_path(4, 0, 8, 1.0))
    dt = tr.dt
    for n in (0, 3, 7):
        u0, u1 = tr.u[n], tr.u[n + 1]
        v0, v1 = tr.v[n], tr.v[n + 1]
        eta1 = tr.eta[n + 1]
        for _ in range(20):
            q = np.zeros(lay.n_vel)
            q[free] = Z @ rng.standard_normal(Z.shape[1])
            psi = np.zeros(lay.n_interface)
            psi[1:-1] = q[lay.trace_dofs]
            lhs = (q @ (ops.M_f @ (u1 - u0)) / dt + q @ (ops.A_visc @ u1)
                   + psi @ (ops.M_gamma @ (v1 - v0)) / dt + psi @ (ops.K_gamma @ eta1))
            rhs = (q @ (tr.p_in[n] * ops.b_in - tr.p_out[n] * ops.b_out)
                   + tr.dW[n] / dt * (ops.ones_gamma @ psi))
            scale = max(abs(rhs), abs(q @ (ops.A_visc @ u1)), 1.0)
            assert abs(lhs - rhs) <= 1e-9 * scale


def test_adaptedness(small_problem):
    pb = small_problem
    a = sample_path(9, 0, 8, 1.0).increments
    b = a.copy()
    b[4:] = sample_path(9, 1, 8, 1.0).increments[4:]
    ta, tb = pb.run(a), pb.run(b)
    assert np.array_equal(ta.v13[:5], tb.v13[:5])
    assert np.array_equal(ta.eta[:6], tb.eta[:6])
    assert np.array_equal(ta.u[:5], tb.u[:5])
    assert not np.array_equal(ta.v23[4], tb.v23[4])


def test_kinematic_condition_and_clamping(small_problem):
    tr = small_problem.run_path(sample_path(1, 0, 8, 1.0))
    lay = small_problem.layout
    assert np.array_equal(tr.u[1:, lay.trace_dofs], tr.v[1:, 1:-1])
    assert not np.any(tr.v[1:, [0, -1]])
    assert not np.any(tr.eta[:, [0, -1]])


def test_zero_everything_is_zero():
    pb = Problem(make_config())
    tr = run_path(pb.config, BrownianPath.zero(8, 1.0))
    for f in ("u", "p", "eta", "v", "v13", "v23"):
        assert not np.any(getattr(tr, f))
    assert tr.ledger.is_trivially_zero()


def test_energy_decays_without_forcing():
    pb = Problem(make_config(initial={"kind": "random", "seed": 3}))
    tr = pb.run(np.zeros(8))
    E = tr.ledger.whole_energies
    assert np.all(np.diff(E) <= 1e-12)
    assert E[-1] < E[0]


def test_superposition(small_problem):
    pb = small_problem
    w1, w2 = sample_path(1, 0, 8, 1.0), sample_path(1, 1, 8, 1.0)
    t0 = pb.run_path(BrownianPath.zero(8, 1.0))
    t1, t2, t12 = pb.run_path(w1), pb.run_path(w2), pb.run_path(w1 + w2)
    for f in ("u", "v", "eta", "v13", "v23"):
        d = getattr(t12, f) - getattr(t1, f) - getattr(t2, f) + getattr(t0, f)
        assert np.abs(d).max() <= 1e-9


def test_batch_matches_single_paths(small_problem):
    pb = small_problem
    incs = np.stack([sample_path(2, k, 8, 1.0).increments for k in range(3)], axis=1)
    batch = pb.run(incs)
    for k in range(3):
        single = pb.run(incs[:, k])
        np.testing.assert_allclose(batch.u[..., k], single.u, rtol=1e-12, atol=1e-14)
        col = batch.column(k)
        np.testing.assert_allclose(col.ledger.E, single.ledger.E, rtol=1e-12, atol=1e-14)


def test_trajectory_stage_views(small_problem):
    tr = small_problem.run_path(sample_path(1, 0, 8, 1.0))
    stages = tr.stages()
    assert len(stages) == 3 * 8 + 1
    assert [s.time_label for s in stages[:4]] == ["0", "0+1/3", "0+2/3", "1"]
    s = tr.state(2, Stage.STOCHASTIC)
    assert np.array_equal(s.v, tr.v23[2]) and np.array_equal(s.eta, tr.eta[3])


def test_path_config_mismatch(small_problem):
    with pytest.raises(ValueError):
        run_path(small_problem.config, sample_path(0, 0, 16, 1.0))
    with pytest.raises(ValueError):
        small_problem.run_path(sample_path(0, 0, 8, 2.0))


# -- initial data ------------------------------------------------------------

def test_projection_is_identity_on_discrete_data(small_problem, rng):
    pb = small_problem
    lay = pb.layout
    u = np.zeros(lay.n_vel)
    u[lay.vel_free] = rng.standard_normal(lay.vel_free.size)
    np.testing.assert_allclose(pb.project_velocity(u), u, atol=1e-12)
    v = rng.standard_normal(lay.n_interface)
    np.testing.assert_allclose(pb.project_interface(v, clamped=False), v, atol=1e-12)


def _basis_loads(imesh, func):
    """int func * phi_i by adaptive quadrature, element by element."""
    out = np.zeros(imesh.n_nodes)
    h = imesh.h
    for e, conn in enumerate(imesh.elements):
        z0 = imesh.vertices[e]
        for a, node in enumerate(conn):
            phi = lambda z, a=a: lagrange_1d(np.array([(z - z0) / h]), 2)[0][0, a]
            out[node] += integrate.quad(lambda z: func(z) * phi(z), z0, z0 + h,
                                        epsabs=1e-14, epsrel=1e-14)[0]
    return out


def test_bump_initial_data(small_problem):
    pb = small_problem
    ops = pb.ops
    d = pb.initial_data()
    z = pb.imesh.nodes
    np.testing.assert_allclose(d.eta, 0.1 * np.sin(np.pi * z), atol=5e-4)
    assert d.eta[0] == d.eta[-1] == 0.0
    # Galerkin orthogonality of the L2 projections (clamped and free), up to
    # the 3-point Gauss error on the non-polynomial load
    load_v = _basis_loads(pb.imesh, lambda x: 0.2 * np.sin(np.pi * x))
    np.testing.assert_allclose(ops.M_gamma @ d.v, load_v, atol=1e-5)
    load_e = _basis_loads(pb.imesh, lambda x: 0.1 * np.sin(np.pi * x))
    np.testing.assert_allclose((ops.M_gamma @ d.eta)[1:-1], load_e[1:-1], atol=1e-5)
    r = pb.fmesh.nodes[:, 1]
    nn = pb.fmesh.n_nodes
    np.testing.assert_allclose(d.u[:nn], 0.3 * (1 - r ** 2), atol=1e-12)
    assert not np.any(d.u[nn:])


def test_file_initial_data(tmp_path, small_problem):
    pb = small_problem
    d = pb.initial_data()
    np.savez(tmp_path / "init.npz", u=d.u, eta=d.eta, v=d.v)
    cfg = pb.config.replace(initial={"kind": "file", "path": str(tmp_path / "init.npz")})
    e = Problem(cfg).initial_data()
    for f in ("u", "eta", "v"):
        np.testing.assert_allclose(getattr(e, f), getattr(d, f), atol=1e-12)
    np.savez(tmp_path / "bad.npz", u=d.u[:-1], eta=d.eta, v=d.v)
    with pytest.raises(ValueError):
        Problem(cfg.replace(initial={"kind": "file", "path": str(tmp_path / "bad.npz")})).initial_data()


def test_initial_data_rejects_unknown_keys():
    with pytest.raises(ValueError):
        Problem(make_config(initial={"kind": "bump", "height": 1.0})).initial_data()
