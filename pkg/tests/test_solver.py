import numpy as np
import pytest

from vansfem.drag import DragField
from vansfem.errors import AssemblyError, ConfigurationError, NonConvergenceError
from vansfem.fem import build_box_mesh, fe_space, stiffness_matrix
from vansfem.mms import get_case, make_problem, momentum_source, mass_source
from vansfem.solver import (LinearSolverSettings, VansConfig, VansProblem, advance_time_step,
                            assemble, initial_state, linear_solve, newton_solve, strong_residual,
                            tau_u)
from vansfem.state import BoundaryCondition


def test_tau_examples():
    assert tau_u(False, None, 1.0, 2.0, 2.0, 0.0) == pytest.approx(1.0)
    assert tau_u(False, None, 1.0, 0.1, 0.1, 0.01) == pytest.approx(544 ** -0.5, rel=1e-12)
    assert abs(544 ** -0.5 - 0.042875) < 1e-6
    assert tau_u(True, 0.5, 1.0, 0.1, 0.1, 0.01) < tau_u(False, None, 1.0, 0.1, 0.1, 0.01)
    with pytest.raises(AssemblyError):
        tau_u(False, None, 1.0, 0.0, 0.1, 0.01)


@pytest.mark.parametrize("form", ["A", "B"])
@pytest.mark.parametrize("case_id", [1, 2, 3])
def test_strong_residual_vanishes_on_exact_fields(form, case_id):
    case = get_case(case_id)
    x = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    t = 0.3
    fd = case.fields(x, t)
    sr = strong_residual(form, fd.u, fd.grad_u, fd.lap_u, fd.grad_p, fd.eps, fd.u_t, 0.0,
                         mass_source(case, x, t), 0.7, source=momentum_source(case, form, x, t, 0.7))
    np.testing.assert_allclose(sr, 0.0, atol=1e-11)


def _random_transient_problem(form, degree, pressure_degree, supg=True, pspg=True, graddiv=True):
    problem = make_problem(3, form, 3, degree, pressure_degree, nu=0.3, dt=0.1, bdf_order=2,
                           supg=supg, pspg=pspg, graddiv=graddiv)
    rng = np.random.default_rng(7)
    state = initial_state(problem, get_case(3).velocity, get_case(3).pressure, 0.2)
    state.u_prev1 = state.u + 0.1 * rng.normal(size=state.u.size)
    state.u_prev2 = state.u + 0.1 * rng.normal(size=state.u.size)
    state.eps_prev1 = problem.eps_nodal(0.1)
    state.eps_prev2 = problem.eps_nodal(0.0)
    state.t = 0.2
    state.u = state.u + 0.2 * rng.normal(size=state.u.size)
    state.p = state.p + 0.2 * rng.normal(size=state.p.size)
    # particle drag held fixed: random per-cell coefficients
    problem.drag = DragField(beta=rng.uniform(0, 2, problem.mesh.n_cells),
                             up_avg=0.1 * rng.normal(size=(problem.mesh.n_cells, 2)))
    return problem, state


@pytest.mark.parametrize("form,k,m", [("A", 1, 1), ("B", 1, 1), ("A", 2, 2), ("B", 2, 1)])
def test_jacobian_matches_finite_differences(form, k, m):
    problem, state = _random_transient_problem(form, k, m)
    frozen = problem.fields_at_qp(state, 2)["U"]
    system = assemble(problem, state, order=2, frozen_u=frozen, constrain=False)
    J = system.matrix.toarray()
    x0 = np.concatenate([state.u, state.p])
    h = 1e-6
    fd = np.empty_like(J)
    for j in range(x0.size):
        for sign in (1, -1):
            x = x0.copy()
            x[j] += sign * h
            state.u, state.p = problem.split(x)
            r = assemble(problem, state, order=2, frozen_u=frozen, with_matrix=False, constrain=False).residual
            fd[:, j] = r if sign == 1 else (fd[:, j] - r) / (2 * h)
    scale = np.abs(J).max()
    assert np.abs(fd - J).max() <= 1e-5 * scale


def test_forms_coincide_at_unit_void_fraction():
    mesh = build_box_mesh([0, 0], [1, 1], [3, 3])
    bcs = [BoundaryCondition("x-min", "dirichlet", lambda x, t: np.tile([1.0, 0.0], (len(x), 1)))]
    rng = np.random.default_rng(2)
    out = []
    for form in ("A", "B"):
        pb = VansProblem(mesh, VansConfig(form=form, nu=0.05), bcs, velocity_degree=2)
        st = initial_state(pb)
        st.u = np.random.default_rng(3).normal(size=st.u.size)
        st.p = np.random.default_rng(4).normal(size=st.p.size)
        out.append(assemble(pb, st))
    np.testing.assert_allclose(out[0].residual, out[1].residual, atol=1e-12)
    assert abs(out[0].matrix - out[1].matrix).max() < 1e-12
    del rng


def test_galerkin_blocks_reduce_to_plain_stokes_operators():
    mesh = build_box_mesh([0, 0], [1, 2], [3, 4])
    cfg = VansConfig(form="B", nu=0.37, supg=False, pspg=False, graddiv=False)
    pb = VansProblem(mesh, cfg, [], velocity_degree=2, pressure_degree=1)
    st = initial_state(pb)
    J = assemble(pb, st, constrain=False).matrix.toarray()
    n = pb.V.n_dofs
    K = stiffness_matrix(pb.V).toarray()
    np.testing.assert_allclose(J[:n, :n], 0.37 * K, atol=1e-12)
    np.testing.assert_allclose(J[n:2 * n, n:2 * n], 0.37 * K, atol=1e-12)
    np.testing.assert_allclose(J[:n, n:2 * n], 0.0, atol=1e-12)
    nu_ = pb.n_u
    np.testing.assert_allclose(J[:nu_, nu_:], -J[nu_:, :nu_].T, atol=1e-12)
    np.testing.assert_allclose(J[nu_:, nu_:], 0.0, atol=1e-14)


def test_newton_converges_quadratically_in_stokes_regime():
    pb = make_problem(1, "B", 8, 2, nu=10.0, tolerance=1e-11)
    st = initial_state(pb)
    report = newton_solve(pb, st)
    r = np.array(report.residuals)
    assert report.converged
    # last informative step: log-ratio close to two
    k = np.flatnonzero(r > 1e-9)[-1]
    assert np.log(r[k + 1]) / np.log(r[k]) > 1.6 or r[k + 1] < 1e-11


def test_nonconvergence_carries_history():
    pb = make_problem(1, "B", 4, 1, nu=1.0, max_iterations=1, tolerance=1e-14)
    with pytest.raises(NonConvergenceError) as info:
        newton_solve(pb, initial_state(pb))
    assert len(info.value.history) == 2


def test_gmres_and_direct_agree():
    pb = make_problem(1, "A", 6, 1, nu=1.0)
    st = initial_state(pb)
    system = assemble(pb, st)
    from vansfem.state import apply_dirichlet

    A, b = apply_dirichlet(system.matrix, -system.residual, system.constrained_dofs,
                           -system.residual[system.constrained_dofs])
    x1 = linear_solve(A, b, LinearSolverSettings("direct"))
    x2 = linear_solve(A, b, LinearSolverSettings("gmres", relative_residual=1e-12, min_residual=0.0))
    np.testing.assert_allclose(x2, x1, atol=1e-8 * np.abs(x1).max())


def test_bad_settings_and_data():
    with pytest.raises(ConfigurationError):
        LinearSolverSettings("cg")
    with pytest.raises(ConfigurationError):
        VansConfig(form="C")
    with pytest.raises(ConfigurationError):
        VansConfig(nu=0.0)
    mesh = build_box_mesh([0, 0], [1, 1], [2, 2])
    with pytest.raises(ConfigurationError):
        VansProblem(mesh, VansConfig(), [], velocity_degree=1, pressure_degree=2)
    pb = VansProblem(mesh, VansConfig(), [], void_fraction=lambda x, t: np.zeros(len(x)))
    with pytest.raises(AssemblyError):
        assemble(pb, initial_state(pb))
    with pytest.raises(ConfigurationError):
        advance_time_step(pb, initial_state(pb))


def test_transient_step_keeps_exact_steady_solution():
    # a steady exact solution marched in time stays within discretization error
    pb = make_problem(1, "B", 8, 2, nu=1.0, dt=0.05)
    st = initial_state(pb, get_case(1).velocity, get_case(1).pressure)
    from vansfem.mms import error_l2

    before = error_l2(pb, st, 1)[0]
    for _ in range(3):
        advance_time_step(pb, st)
    after = error_l2(pb, st, 1)[0]
    assert after < 3 * before + 1e-3
    assert st.steps_taken == 3 and abs(st.t - 0.15) < 1e-14
