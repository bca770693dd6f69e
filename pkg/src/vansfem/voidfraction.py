"""Void fraction from particles: centroid binning, smoothed projection, bounding."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import ConfigurationError, NonConvergenceError, UnsupportedConfigurationError
from .fem import FeSpace, Mesh, cell_values, gauss_rule, mass_matrix, stiffness_matrix

log = logging.getLogger(__name__)

EPS_MIN_DEFAULT = 0.36
EPS_MAX_DEFAULT = 1.0
CSV_HEADER = ("x", "y", "z", "r", "vx", "vy", "vz")


@dataclass
class ParticleSet:
    positions: np.ndarray  # (n, 3)
    radii: np.ndarray
    velocities: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        n = self.positions.shape[0]
        if self.positions.shape[1] == 2:
            self.positions = np.hstack([self.positions, np.zeros((n, 1))])
        self.radii = np.broadcast_to(np.asarray(self.radii, dtype=float), (n,)).copy()
        vel = np.zeros((n, 3)) if self.velocities is None else np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if vel.shape[1] == 2:
            vel = np.hstack([vel, np.zeros((n, 1))])
        self.velocities = np.broadcast_to(vel, (n, 3)).copy()
        if np.any(self.radii <= 0):
            raise ConfigurationError("particle radii must be positive")

    @property
    def count(self):
        return self.positions.shape[0]

    def volumes(self, dim=3):
        """Sphere volumes in 3D, disk areas in 2D."""
        if dim == 3:
            return 4.0 / 3.0 * np.pi * self.radii**3
        return np.pi * self.radii**2


def read_particles(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"particle file {path} lacks columns {sorted(missing)}")
        rows = np.array([[float(r[k]) for k in CSV_HEADER] for r in reader]).reshape(-1, 7)
    return ParticleSet(positions=rows[:, :3], radii=rows[:, 3], velocities=rows[:, 4:])


def write_particles(particles, path):
    data = np.hstack([particles.positions, particles.radii[:, None], particles.velocities])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def locate_particles(mesh: Mesh, particles: ParticleSet):
    cells, ref = mesh.locate(particles.positions[:, : mesh.dim])
    return cells, ref


def pcm_cell_values(mesh: Mesh, particles: ParticleSet):
    """Cellwise void fraction with each particle's volume lumped at its centroid."""
    cells, _ = locate_particles(mesh, particles)
    outside = int(np.count_nonzero(cells < 0))
    if outside:
        log.warning("%d particle centroid(s) outside the mesh were ignored", outside)
    inside = cells >= 0
    solid = np.bincount(cells[inside], weights=particles.volumes(mesh.dim)[inside], minlength=mesh.n_cells)
    values = (mesh.cell_measures - solid) / mesh.cell_measures
    over = values < 0
    if np.any(over):
        log.warning("%d cell(s) hold more particle volume than their own; clamped to 0 "
                    "(cells too small relative to particles)", int(over.sum()))
    return np.maximum(values, 0.0)


def _projection_system(mesh, space, cell_vals, L):
    if L < 0:
        raise ConfigurationError("smoothing length must be nonnegative")
    cell_vals = np.asarray(cell_vals, dtype=float)
    if cell_vals.shape != (mesh.n_cells,) or not np.all(np.isfinite(cell_vals)):
        raise ConfigurationError("cell values must be finite, one per cell")
    rule = gauss_rule(space.degree + 1, mesh.dim)
    M = mass_matrix(space, rule)
    A = M + L**2 * stiffness_matrix(space, rule) if L > 0 else M
    cv = cell_values(space, rule)
    local = np.einsum("cq,qa,c->ca", cv.jxw, cv.values, cell_vals)
    b = np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)
    return sparse.csc_matrix(A), b


def l2_project(mesh: Mesh, space: FeSpace, cell_vals, L=0.0):
    """Continuous nodal field minimizing the L2 misfit plus L^2 |grad|^2 smoothing."""
    A, b = _projection_system(mesh, space, cell_vals, L)
    x = spla.splu(A).solve(b)
    return x


def bound_active_set(mesh, space, cell_vals, L=0.0, eps_min=EPS_MIN_DEFAULT, eps_max=EPS_MAX_DEFAULT,
                     max_iterations=50, return_multiplier=False):
    """Box-constrained projection by a primal-dual active set iteration.

    The multiplier is ``lam = A x - b``: nonnegative where the lower bound is
    active, nonpositive at the upper bound, zero elsewhere. The mass matrix is
    not an M-matrix, so the full active-set update can cycle; when a set
    repeats, the iteration falls back to moving the single worst KKT
    violator per step, which terminates.
    """
    if space.degree != 1:
        raise UnsupportedConfigurationError("bounded projection requires bi/tri-linear elements")
    if not eps_min < eps_max:
        raise ConfigurationError("eps_min must be below eps_max")
    A, b = _projection_system(mesh, space, cell_vals, L)
    A = A.tocsr()
    n = b.size
    c = float(A.diagonal().mean())

    x = spla.splu(A.tocsc()).solve(b)
    lam = np.zeros(n)
    lower = np.zeros(n, dtype=bool)
    upper = np.zeros(n, dtype=bool)
    seen = set()
    single = False  # one index per step once the full update starts cycling
    settled = False
    for it in range(1, max_iterations + 10 * n + 1):
        if single:
            viol = np.zeros(n)
            free = ~(lower | upper)
            viol[free] = np.maximum(eps_min - x[free], x[free] - eps_max)
            viol[lower] = -lam[lower]
            viol[upper] = lam[upper]
            i = int(np.argmax(viol))
            if viol[i] <= 1e-14 * max(1.0, np.abs(b).max()):
                settled = True
                break
            if lower[i] or upper[i]:
                lower[i] = upper[i] = False
            elif x[i] < eps_min:
                lower[i] = True
            else:
                upper[i] = True
        else:
            if it > max_iterations:
                break
            new_lower = lam + c * (eps_min - x) > 0
            new_upper = lam + c * (eps_max - x) < 0
            if it > 1 and np.array_equal(new_lower, lower) and np.array_equal(new_upper, upper):
                settled = True
                break
            key = (new_lower.tobytes(), new_upper.tobytes())
            if key in seen:
                log.debug("active set cycles after %d iterations; switching to single updates", it)
                single = True
                continue
            seen.add(key)
            lower, upper = new_lower, new_upper
        active = lower | upper
        x = np.where(lower, eps_min, np.where(upper, eps_max, 0.0))
        free = ~active
        if np.any(free):
            Aff = A[free][:, free]
            rhs = b[free] - A[free][:, active] @ x[active]
            x[free] = spla.splu(sparse.csc_matrix(Aff)).solve(rhs)
        lam = A @ x - b
        lam[free] = 0.0
    if not settled:
        raise NonConvergenceError(
            f"active set did not settle in {max_iterations} iterations "
            f"(last active-set size {int((lower | upper).sum())})"
        )
    if return_multiplier:
        return x, lam, it
    return x


def step_void_fraction(x):
    """Unit void fraction outside |x| <= 0.5, one half inside."""
    x0 = np.asarray(x, dtype=float)[..., 0]
    return np.where((x0 < -0.5) | (x0 > 0.5), 1.0, 0.5)


def analytic_void_fraction(case, x, t=0.0):
    """Closed-form void fraction for an MMS case (id or object) or ``"step"``."""
    if isinstance(case, str):
        if case != "step":
            raise ConfigurationError(f"unknown void fraction profile {case!r}")
        return step_void_fraction(x)
    from .mms import get_case

    if isinstance(case, (int, np.integer)):
        case = get_case(int(case))
    return case.eps(np.asarray(x, dtype=float), t)


@dataclass
class VoidFractionField:
    cell_values: np.ndarray
    nodal_values: np.ndarray
    smoothing_length: float = 0.0
    bounds: tuple = (EPS_MIN_DEFAULT, EPS_MAX_DEFAULT)
    bounded: bool = False
    unbounded_max: Optional[float] = None


def void_fraction_from_particles(mesh, space, particles, L=0.0, bound=False,
                                 eps_min=EPS_MIN_DEFAULT, eps_max=EPS_MAX_DEFAULT):
    """Centroid binning followed by (optionally bounded) smoothed projection."""
    f = pcm_cell_values(mesh, particles)
    nodal = l2_project(mesh, space, f, L)
    umax = float(nodal.max())
    if bound:
        nodal = bound_active_set(mesh, space, f, L, eps_min, eps_max)
    return VoidFractionField(cell_values=f, nodal_values=nodal, smoothing_length=L,
                             bounds=(eps_min, eps_max), bounded=bound, unbounded_max=umax)


def projected_integral(space, nodal):
    """Integral of the FE function over the domain."""
    rule = gauss_rule(space.degree + 1, space.mesh.dim)
    cv = cell_values(space, rule)
    return float(np.einsum("cq,qa,ca->", cv.jxw, cv.values, nodal[space.cell_dofs]))
