import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vansfem.drag import (CellDragContext, DragModelKind, build_drag_field, cd_difelice, cd_rong,
                          cell_drag_force, interpolate_fluid_at_particles, particle_drag_factors,
                          particle_reynolds)
from vansfem.errors import AssemblyError, ConfigurationError, DomainError
from vansfem.fem import build_box_mesh, fe_space
from vansfem.voidfraction import ParticleSet

re_values = st.floats(min_value=1e-6, max_value=1e5)
eps_values = st.floats(min_value=0.05, max_value=1.0)


def base_cd(re):
    return (0.63 + 4.8 / math.sqrt(re)) ** 2


def test_particle_reynolds_examples():
    assert abs(particle_reynolds(1.0, [0.1, 0, 0], 1e-3, 1e-5) - 10.0) < 1e-12
    assert particle_reynolds(1.0, [0.0, 0.0, 0.0], 1e-3, 1e-5) == 0.0
    assert abs(particle_reynolds(1.0, [0.5, 0, 0], 1e-3, 1e-5) - 50.0) < 1e-12


# Hand values carry four to five significant figures.
def test_difelice_hand_value():
    # exp term is exactly 1 at log10(Re) = 1.5, so chi = 3.05
    assert cd_difelice(10**1.5, 0.8) == pytest.approx(2.7824, rel=2e-4)
    assert base_cd(10**1.5) == pytest.approx(2.2011, rel=1e-4)


def test_rong_hand_value():
    assert cd_rong(10**1.5, 0.8) == pytest.approx(2.8580, rel=2e-4)


def test_independent_formula_evaluation_at_re_100():
    re, eps = 100.0, 0.4
    bell = math.exp(-((1.5 - 2.0) ** 2) / 2)
    difelice = base_cd(re) * eps ** (2 - (3.7 - 0.65 * bell))
    rong = base_cd(re) * eps ** (2 - (2.65 * (eps + 1) - (5.3 - 3.5 * eps) * eps**2 * bell))
    assert abs(cd_difelice(re, eps) - difelice) < 1e-12 * difelice
    assert abs(cd_rong(re, eps) - rong) < 1e-12 * rong


@settings(max_examples=200)
@given(re=re_values)
def test_models_coincide_at_unit_void_fraction(re):
    a, b = cd_difelice(re, 1.0), cd_rong(re, 1.0)
    assert a == pytest.approx(base_cd(re), rel=1e-14)
    assert abs(a - b) <= 1e-14 * a


def test_domain_errors():
    with pytest.raises(DomainError):
        cd_difelice(0.0, 0.5)
    with pytest.raises(DomainError):
        cd_rong(1.0, 0.0)
    with pytest.raises(DomainError):
        cd_rong(1.0, 1.2)


@pytest.mark.parametrize("cd", [cd_difelice, cd_rong])
def test_cd_continuous_across_decades(cd):
    re = np.logspace(-3, 5, 20001)
    vals = cd(re, 0.6)
    jumps = np.abs(np.diff(np.log(vals)))
    assert jumps.max() < 5e-3


def test_model_parse():
    assert DragModelKind.parse("Rong") is DragModelKind.RONG
    with pytest.raises(ConfigurationError):
        DragModelKind.parse("gidaspow")


def test_zero_relative_velocity_gives_zero_factor():
    f = particle_drag_factors("difelice", 1.0, 1e-5, [5e-4], [[0.1, 0, 0]], [[0.1, 0, 0]], [0.5])
    assert f[0] == 0.0
    assert particle_drag_factors("none", 1.0, 1e-5, [5e-4], [[0.1, 0, 0]], [[0, 0, 0]], [0.5])[0] == 0.0


def test_single_particle_force_form_a():
    r, V_K = 5e-4, 1e-6
    slip = np.array([[0.1, 0.0, 0.0]])
    f = particle_drag_factors("difelice", 1.0, 1e-5, [r], slip, np.zeros((1, 3)), [0.9],
                              reynolds="interstitial")
    ctx = CellDragContext(factor_sum=f[0], up_avg=np.zeros(3), volume=V_K, n_particles=1)
    force, jac = cell_drag_force(ctx, [0.1, 0.0, 0.0], "A", 0.9)
    expected = 0.5 * cd_difelice(10.0, 0.9) * math.pi * r**2 * 0.1 * 0.1 / V_K
    assert force[0] == pytest.approx(expected, rel=1e-14)
    assert force[1] == 0.0 and force[2] == 0.0
    np.testing.assert_allclose(jac, expected / 0.1 * np.eye(3), rtol=1e-14)


def test_superficial_reynolds_scales_by_void_fraction():
    args = ("difelice", 1.0, 1e-5, [5e-4], [[0.2, 0, 0]], [[0, 0, 0]], [0.5])
    sup = particle_drag_factors(*args, reynolds="superficial")[0]
    inter = particle_drag_factors(*args[:-1], [0.5], reynolds="interstitial")[0]
    cd_sup = cd_difelice(10.0, 0.5)
    assert sup == pytest.approx(0.5 * cd_sup * math.pi * 2.5e-7 * 0.2, rel=1e-14)
    assert inter != sup
    with pytest.raises(ConfigurationError):
        particle_drag_factors(*args, reynolds="bulk")


@settings(max_examples=100)
@given(factor=st.floats(1e-9, 1e-3), eps=eps_values,
       u=st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_form_conversion(factor, eps, u):
    ctx = CellDragContext(factor_sum=factor, up_avg=np.array([0.01, 0.0, -0.02]), volume=2e-9)
    fa, _ = cell_drag_force(ctx, u, "A", eps)
    fb, _ = cell_drag_force(ctx, u, "B", eps)
    np.testing.assert_allclose(fb * eps, fa, rtol=1e-14, atol=1e-14 * np.abs(fa).max())


def test_drag_jacobian_matches_central_differences():
    ctx = CellDragContext(factor_sum=3e-7, up_avg=np.array([0.0, 0.01, 0.0]), volume=1e-9)
    u = np.array([0.2, -0.1, 0.05])
    _, jac = cell_drag_force(ctx, u, "B", 0.45)
    h = 1e-6
    fd = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd[:, j] = (cell_drag_force(ctx, u + e, "B", 0.45)[0] - cell_drag_force(ctx, u - e, "B", 0.45)[0]) / (2 * h)
    np.testing.assert_allclose(fd, jac, rtol=1e-6, atol=1e-6 * np.abs(jac).max())


def test_empty_cell_and_bad_void_fraction():
    ctx = CellDragContext.empty(1e-9)
    force, jac = cell_drag_force(ctx, [1.0, 2.0, 3.0], "B", 0.5)
    assert not force.any() and not jac.any()
    with pytest.raises(AssemblyError, match="cell 7"):
        cell_drag_force(ctx, [1.0, 0, 0], "B", 0.0, cell=7)


def test_interpolation_at_particles():
    mesh = build_box_mesh([0, 0, 0], [1, 1, 1], [2, 2, 2])
    V = fe_space(mesh, 1)
    pts = np.random.default_rng(5).random((10, 3))
    particles = ParticleSet(positions=pts, radii=0.01, velocities=None)
    n = V.n_dofs
    x = V.support_points
    u = np.concatenate([np.full(n, 0.3), 2 * x[:, 0] - x[:, 2], 1 + x[:, 1]])
    vals = interpolate_fluid_at_particles(V, u, particles)
    np.testing.assert_allclose(vals[:, 0], 0.3)
    np.testing.assert_allclose(vals[:, 1], 2 * pts[:, 0] - pts[:, 2], atol=1e-13)
    np.testing.assert_allclose(vals[:, 2], 1 + pts[:, 1], atol=1e-13)


def test_interpolation_of_smooth_field_converges():
    pts = np.random.default_rng(6).uniform(-1, 1, (10, 2))
    particles = ParticleSet(positions=pts, radii=0.01, velocities=None)
    errs = []
    for n in (8, 16):
        V = fe_space(build_box_mesh([-1, -1], [1, 1], [n, n]), 2)
        x = V.support_points
        u = np.concatenate([np.sin(np.pi * x[:, 0]) * np.cos(x[:, 1]), x[:, 0] * 0])
        vals = interpolate_fluid_at_particles(V, u, particles)
        errs.append(np.abs(vals[:, 0] - np.sin(np.pi * pts[:, 0]) * np.cos(pts[:, 1])).max())
    assert errs[1] < errs[0] / 6  # third order interpolation


def test_drag_field_sums_per_cell():
    mesh = build_box_mesh([0, 0, 0], [2, 1, 1], [2, 1, 1])
    V = fe_space(mesh, 1)
    n = V.n_dofs
    u = np.concatenate([np.full(n, 0.1), np.zeros(n), np.zeros(n)])
    particles = ParticleSet(positions=[[0.5, 0.5, 0.5], [0.6, 0.5, 0.5], [1.5, 0.5, 0.5]],
                            radii=1e-3, velocities=[[0, 0, 0], [0.02, 0, 0], [0, 0, 0]])
    fld = build_drag_field(mesh, V, u, V, np.full(n, 0.8), particles, "rong", 1.0, 1e-5)
    single = particle_drag_factors("rong", 1.0, 1e-5, [1e-3], [[0.1, 0, 0]], [[0, 0, 0]], [0.8])[0]
    assert fld.beta[1] == pytest.approx(single / 1.0, rel=1e-13)
    np.testing.assert_allclose(fld.up_avg[0], [0.01, 0, 0])
