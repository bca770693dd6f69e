"""Packed-bed validation: synthetic packing, reference correlations and the sweep.

A rectangular duct with slip side walls holds a fixed bed of spheres between
two z-planes. Gas enters through the bottom face at a prescribed superficial
velocity and leaves through the top face. For each inlet velocity the VANS
system is marched in time until the pressure drop across the bed settles; the
result is compared with the Ergun correlation.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, NonConvergenceError, SolverError
from .fem import build_box_mesh, gauss_rule
from .solver import (LinearSolverSettings, VansConfig, VansProblem, advance_time_step,
                     continuity_cell_integrals, initial_state)
from .state import BoundaryCondition
from .voidfraction import ParticleSet, void_fraction_from_particles

log = logging.getLogger(__name__)

GRAVITY = 9.81
REPORT_HEADER = ("u_in", "re_bed", "dp_sim", "dp_ergun", "mass_global", "mass_local_max")
SIMPLE_CUBIC_EPS = 1.0 - math.pi / 6.0


@dataclass
class BedConfig:
    """Desk-scale bed in SI units; defaults follow the gas/particle properties of the study."""

    lower: tuple = (0.0, 0.0, 0.0)
    upper: tuple = (0.01, 0.01, 0.06)
    cells: tuple = (5, 5, 30)
    d_p: float = 1e-3
    rho_p: float = 2500.0
    eps_target: float = 0.5
    pack_z: tuple = (0.01, 0.05)
    velocities: tuple = (0.05, 0.1, 0.2, 0.3)
    rho_f: float = 1.0
    mu_f: float = 1e-5
    seed: int = 42
    form: str = "B"
    drag_model: str = "difelice"
    velocity_degree: int = 1
    smoothing_factor: float = 5.0  # L^2 = smoothing_factor * d_p^2
    bound_void_fraction: bool = False
    eps_bounds: tuple = (0.36, 1.0)
    dt: float = 0.01
    t_end: float = 1.0
    steady_tolerance: float = 1e-5
    newton_tolerance: float = 1e-8
    newton_max_iterations: int = 10
    linear: LinearSolverSettings = field(default_factory=LinearSolverSettings)
    ergun_inertial: str = "quadratic"  # or "linear"

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
            raise ConfigurationError("duct extents must be three increasing (lower, upper) pairs")
        if not lo[2] <= self.pack_z[0] < self.pack_z[1] <= hi[2]:
            raise ConfigurationError("packing region must lie inside the duct")
        if not 0.0 < self.eps_target < 1.0:
            raise ConfigurationError("target void fraction must lie in (0, 1)")
        if self.d_p <= 0 or self.mu_f <= 0 or self.rho_f <= 0 or self.dt <= 0:
            raise ConfigurationError("d_p, mu_f, rho_f and dt must be positive")
        if self.rho_p <= self.rho_f:
            raise ConfigurationError("particles must be denser than the gas")
        if any(u < 0 for u in self.velocities):
            raise ConfigurationError("inlet velocities must be nonnegative")
        if self.ergun_inertial not in ("quadratic", "linear"):
            raise ConfigurationError("ergun_inertial must be quadratic or linear")
        umf, _ = wen_yu_umf(self.rho_f, self.rho_p, self.d_p, self.mu_f)
        fast = [u for u in self.velocities if u >= umf]
        if fast:
            log.warning("inlet velocities %s reach the minimum fluidization velocity %.3f m/s; "
                        "the fixed-bed assumption no longer holds", fast, umf)
        h = float(np.min((hi - lo) / np.asarray(self.cells)))
        if self.d_p > h / 3.0:
            log.warning("particle diameter %.3g m exceeds a third of the cell size %.3g m", self.d_p, h)

    @property
    def duct_area(self):
        return (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])

    @property
    def pack_volume(self):
        return self.duct_area * (self.pack_z[1] - self.pack_z[0])

    @property
    def particle_volume(self):
        return math.pi * self.d_p**3 / 6.0

    @property
    def width(self):
        return self.upper[0] - self.lower[0]


@dataclass
class BedRow:
    u_in: float
    re_bed: float
    dp_sim: float
    dp_ergun: float
    mass_global: float
    mass_local_max: float
    converged: bool = True
    steps: int = 0
    seconds: float = 0.0
    message: str = ""


@dataclass
class BedReport:
    rows: list = field(default_factory=list)
    form: str = "B"
    drag_model: str = "difelice"
    eps_achieved: float = float("nan")
    bed_height: float = float("nan")
    n_particles: int = 0

    @property
    def monotone(self):
        dp = [r.dp_sim for r in sorted(self.rows, key=lambda r: r.u_in) if r.converged]
        return all(b >= a for a, b in zip(dp, dp[1:]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for r in self.rows:
                w.writerow([repr(float(v)) for v in (r.u_in, r.re_bed, r.dp_sim, r.dp_ergun,
                                                     r.mass_global, r.mass_local_max)])


# ---------------------------------------------------------------------------
# correlations


def ergun_pressure_drop(eps, u_sup, mu, rho, height, d_p, inertial="quadratic"):
    """Ergun pressure drop (Pa) across a bed of height ``height``.

    ``inertial="linear"`` keeps the velocity to the first power in the
    inertial term, for comparison with that variant of the correlation.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ConfigurationError("void fraction must lie in (0, 1]")
    if u_sup < 0:
        raise ConfigurationError("superficial velocity must be nonnegative")
    viscous = 150.0 * (1 - eps) ** 2 * u_sup * mu * height / (eps**3 * d_p**2)
    u_term = u_sup**2 if inertial == "quadratic" else u_sup
    inertia = 1.75 * (1 - eps) * rho * u_term * height / (eps**3 * d_p)
    return viscous + inertia


def archimedes_number(rho_f, rho_p, d_p, mu, g=GRAVITY):
    return g * rho_f * (rho_p - rho_f) * d_p**3 / mu**2


def wen_yu_umf(rho_f, rho_p, d_p, mu, g=GRAVITY):
    """Minimum fluidization velocity (m/s) and the Archimedes number."""
    if mu <= 0:
        raise ConfigurationError("viscosity must be positive")
    if rho_p < rho_f:
        raise ConfigurationError("particle density must not be below the fluid density")
    ar = archimedes_number(rho_f, rho_p, d_p, mu, g)
    umf = (math.sqrt(33.7**2 + 0.0408 * ar) - 33.7) * mu / (rho_f * d_p)
    return umf, ar


def bed_reynolds(rho_f, u, width, mu):
    return rho_f * u * width / mu


def bed_height(n_particles, d_p, eps, area):
    """Height of a bed of ``n_particles`` spheres at void fraction ``eps``."""
    if n_particles == 0:
        return 0.0
    return n_particles * (math.pi * d_p**3 / 6.0) / ((1.0 - eps) * area)


# ---------------------------------------------------------------------------
# packing


def particle_count(config):
    return int(round((1.0 - config.eps_target) * config.pack_volume / config.particle_volume))


def achieved_void_fraction(config, n_particles):
    return 1.0 - n_particles * config.particle_volume / config.pack_volume


def generate_packing(config):
    """Jittered simple-cubic packing filling the packing region at the target void fraction.

    The particle count follows from volume bookkeeping. Lateral lattice
    spacing is the densest that fits whole spheres across the duct; the
    number of layers is the fewest that hold every particle, which sets the
    vertical spacing. Sites are drawn without replacement from the lattice
    and each particle is displaced by a uniform jitter bounded by 20% of the
    spacing and by the gap between neighbours, so spheres never overlap.
    """
    d = config.d_p
    if config.eps_target < SIMPLE_CUBIC_EPS - 1e-9:
        raise ConfigurationError(
            f"target void fraction {config.eps_target} is below the simple cubic limit "
            f"{SIMPLE_CUBIC_EPS:.4f}")
    n_p = particle_count(config)
    lx = config.upper[0] - config.lower[0]
    ly = config.upper[1] - config.lower[1]
    lz = config.pack_z[1] - config.pack_z[0]
    nx, ny = int(math.floor(lx / d + 1e-9)), int(math.floor(ly / d + 1e-9))
    if nx < 1 or ny < 1:
        raise ConfigurationError("duct is narrower than one particle")
    nz = int(math.ceil(n_p / (nx * ny)))
    ax, ay, az = lx / nx, ly / ny, lz / nz
    if az < d * (1 - 1e-9):
        raise ConfigurationError(
            f"{n_p} particles do not fit the packing region without overlap; raise the target void fraction")
    rng = np.random.default_rng(config.seed)
    site = np.sort(rng.choice(nx * ny * nz, size=n_p, replace=False))
    k, rem = np.divmod(site, nx * ny)
    j, i = np.divmod(rem, nx)
    centers = np.stack([config.lower[0] + (i + 0.5) * ax,
                        config.lower[1] + (j + 0.5) * ay,
                        config.pack_z[0] + (k + 0.5) * az], axis=1)
    spacing = np.array([ax, ay, az])
    room = np.minimum(0.2 * spacing, np.maximum(spacing - d, 0.0) / 2.0)
    jitter = rng.uniform(-1.0, 1.0, size=(n_p, 3)) * room
    return ParticleSet(positions=centers + jitter, radii=np.full(n_p, d / 2), velocities=np.zeros((n_p, 3)))


# ---------------------------------------------------------------------------
# simulation


def plane_average(problem, p, z):
    """Area average of the pressure field on the plane ``z = const``."""
    mesh = problem.mesh
    if not mesh.lower[2] <= z <= mesh.upper[2]:
        raise ConfigurationError(f"sampling plane z={z} lies outside the mesh")
    rule = gauss_rule(problem.Q.degree + 2, 2)
    nx, ny = mesh.shape[0], mesh.shape[1]
    hx = (mesh.upper[0] - mesh.lower[0]) / nx
    hy = (mesh.upper[1] - mesh.lower[1]) / ny
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    lo = np.stack([mesh.lower[0] + I.ravel() * hx, mesh.lower[1] + J.ravel() * hy], axis=1)
    pts2 = (lo[:, None, :] + rule.points[None] * np.array([hx, hy])).reshape(-1, 2)
    w = np.tile(rule.weights * hx * hy, lo.shape[0])
    pts = np.column_stack([pts2, np.full(len(pts2), z)])
    vals = problem.Q.evaluate(p, pts)
    area = (mesh.upper[0] - mesh.lower[0]) * (mesh.upper[1] - mesh.lower[1])
    return float(np.dot(w, vals) / area)


def measure_pressure_drop(problem, state, z_lo, z_hi, rho_f=1.0):
    """Physical pressure difference (Pa) between the planes ``z_lo`` and ``z_hi``."""
    return rho_f * (plane_average(problem, state.p, z_lo) - plane_average(problem, state.p, z_hi))


def build_bed_problem(config, particles, u_in, form=None, drag_model=None, bound=None):
    """Discretized duct with the projected void fraction and frozen-bed drag."""
    form = config.form if form is None else form
    drag_model = config.drag_model if drag_model is None else drag_model
    bound = config.bound_void_fraction if bound is None else bound
    mesh = build_box_mesh(config.lower, config.upper, config.cells)
    vcfg = VansConfig(form=form, nu=config.mu_f / config.rho_f, rho=config.rho_f, dt=config.dt,
                      bdf_order=1, newton_tolerance=config.newton_tolerance,
                      newton_max_iterations=config.newton_max_iterations, linear=config.linear,
                      drag_model=drag_model)
    inlet = np.array([0.0, 0.0, float(u_in)])
    bcs = [BoundaryCondition("z-min", "dirichlet", lambda x, t: np.broadcast_to(inlet, (len(x), 3))),
           BoundaryCondition("z-max", "outflow")]
    bcs += [BoundaryCondition(tag, "slip") for tag in ("x-min", "x-max", "y-min", "y-max")]
    problem = VansProblem(mesh, vcfg, bcs, velocity_degree=config.velocity_degree, particles=particles)
    L = math.sqrt(config.smoothing_factor) * config.d_p
    field_ = void_fraction_from_particles(mesh, problem.E, particles, L=L, bound=bound,
                                          eps_min=config.eps_bounds[0], eps_max=config.eps_bounds[1])
    problem.void_fraction = field_.nodal_values
    problem.void_fraction_field = field_
    return problem


def run_bed_case(config, particles, u_in, form=None, drag_model=None, bound=None, sample=None):
    """March one inlet velocity to steady state and report the bed diagnostics."""
    start = time.perf_counter()
    problem = build_bed_problem(config, particles, u_in, form, drag_model, bound)
    z_lo, z_hi = sample or sampling_planes(config)
    n_p = particles.count
    eps_a = achieved_void_fraction(config, n_p)
    height = bed_height(n_p, config.d_p, eps_a, config.duct_area)
    dp_ergun = ergun_pressure_drop(eps_a, u_in, config.mu_f, config.rho_f, height, config.d_p,
                                   config.ergun_inertial)
    re = bed_reynolds(config.rho_f, u_in, config.width, config.mu_f)
    inlet = np.zeros(3)
    state = initial_state(problem, u0=lambda x, t: np.broadcast_to(inlet + [0, 0, u_in], (len(x), 3)))
    dp_old = None
    dp = 0.0
    steps = 0
    n_steps = int(round(config.t_end / config.dt))
    try:
        for steps in range(1, n_steps + 1):
            advance_time_step(problem, state)
            dp = measure_pressure_drop(problem, state, z_lo, z_hi, config.rho_f)
            if dp_old is not None and abs(dp - dp_old) <= config.steady_tolerance * max(abs(dp), 1e-300):
                break
            if u_in == 0 and dp_old is not None and dp == dp_old:
                break
            dp_old = dp
        else:
            log.warning("u_in=%g: pressure drop still changing after t_end=%g", u_in, config.t_end)
    except (SolverError, NonConvergenceError) as exc:
        log.error("u_in=%g failed: %s", u_in, exc)
        return BedRow(u_in, re, float("nan"), dp_ergun, float("nan"), float("nan"), False, steps,
                      time.perf_counter() - start, str(exc))
    integrals = continuity_cell_integrals(problem, state)
    scale = u_in if u_in > 0 else 1.0
    row = BedRow(u_in=u_in, re_bed=re, dp_sim=dp, dp_ergun=dp_ergun,
                 mass_global=abs(float(integrals.sum())) / scale,
                 mass_local_max=float(np.abs(integrals).max()) / scale,
                 steps=steps, seconds=time.perf_counter() - start)
    row.problem, row.state = problem, state
    log.info("u_in=%g Re=%.1f dp=%.4g Pa (Ergun %.4g) in %d steps", u_in, re, dp, dp_ergun, steps)
    return row


def sampling_planes(config):
    """Planes halfway between the packing region and the duct ends."""
    z0, z1 = config.lower[2], config.upper[2]
    return 0.5 * (z0 + config.pack_z[0]), 0.5 * (config.pack_z[1] + z1)


def run_bed_sweep(config, particles=None, form=None, drag_model=None, bound=None, keep_fields=False):
    """One steady solve per inlet velocity; failing rows are flagged and the sweep continues."""
    particles = generate_packing(config) if particles is None else particles
    eps_a = achieved_void_fraction(config, particles.count)
    report = BedReport(form=(form or config.form).upper(), drag_model=drag_model or config.drag_model,
                       eps_achieved=eps_a,
                       bed_height=bed_height(particles.count, config.d_p, eps_a, config.duct_area),
                       n_particles=particles.count)
    for u in config.velocities:
        row = run_bed_case(config, particles, u, form, drag_model, bound)
        if not keep_fields and hasattr(row, "problem"):
            del row.problem, row.state
        report.rows.append(row)
    return report
