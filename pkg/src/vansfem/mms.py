"""Manufactured solutions on [-1, 1]^2, error norms and convergence studies.

Each case provides velocity, pressure and void fraction together with their
hand-derived first/second derivatives. Sources are the solved operator
applied to those closed forms:

    m   = d(eps)/dt + eps div(u) + u . grad(eps)
    G_B = eps du/dt + eps (u . grad) u + m u + grad p - nu lap(u)
    G_A = eps du/dt + eps (u . grad) u + m u + eps grad p - eps nu lap(u)

(kinematic units, no particles, no body force).
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError, NonConvergenceError
from .fem import build_box_mesh, cell_values, gauss_rule
from .solver import (LinearSolverSettings, VansConfig, VansProblem, advance_time_step,
                     continuity_cell_integrals, initial_state, solve_steady)
from .state import BoundaryCondition

log = logging.getLogger(__name__)

PI = np.pi
# Steady studies run at a moderate Reynolds number (about 400 on the unit
# velocity scale and domain length 2). At unit viscosity the pressure error is
# dominated by its viscous part, which only converges at the velocity-gradient
# rate.
MMS_VISCOSITY = 0.005
# The transient case decays viscously at rate about 2 pi^2 nu. At nu = 1 the
# studied steps (dt = 0.1 to 0.025) have rate * dt between 0.5 and 2, outside
# the asymptotic range, and BDF2 shows orders near 2.7. At nu = 0.1 the
# product stays below 0.2.
TRANSIENT_VISCOSITY = 0.1
E1 = np.e


@dataclass(frozen=True)
class FieldData:
    """Closed-form fields and derivatives at a batch of points."""

    u: np.ndarray  # (N, 2)
    grad_u: np.ndarray  # (N, 2, 2), [i, j] = d u_i / d x_j
    lap_u: np.ndarray  # (N, 2)
    u_t: np.ndarray  # (N, 2)
    p: np.ndarray
    grad_p: np.ndarray
    eps: np.ndarray
    grad_eps: np.ndarray
    eps_t: np.ndarray


def _xy(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, 0], x[:, 1]


def _case1_fields(x, t, constant_eps=None):
    X, Y = _xy(x)
    sx, cx, sy, cy = np.sin(PI * X), np.cos(PI * X), np.sin(PI * Y), np.cos(PI * Y)
    s2x, c2x, s2y, c2y = np.sin(2 * PI * X), np.cos(2 * PI * X), np.sin(2 * PI * Y), np.cos(2 * PI * Y)
    u = np.stack([-sx**2 * s2y, s2x * sy**2], axis=-1)
    grad_u = np.empty((X.size, 2, 2))
    grad_u[:, 0, 0] = -PI * s2x * s2y
    grad_u[:, 0, 1] = -2 * PI * sx**2 * c2y
    grad_u[:, 1, 0] = 2 * PI * c2x * sy**2
    grad_u[:, 1, 1] = PI * s2x * s2y
    lap_u = np.stack([
        -2 * PI**2 * c2x * s2y + 4 * PI**2 * sx**2 * s2y,
        -4 * PI**2 * s2x * sy**2 + 2 * PI**2 * s2x * c2y,
    ], axis=-1)
    p = sx * sy
    grad_p = np.stack([PI * cx * sy, PI * sx * cy], axis=-1)
    if constant_eps is None:
        eps = 0.5 + 0.25 * sx * sy
        grad_eps = 0.25 * grad_p
    else:
        eps = np.full(X.size, constant_eps)
        grad_eps = np.zeros((X.size, 2))
    zero = np.zeros(X.size)
    return FieldData(u, grad_u, lap_u, np.zeros_like(u), p, grad_p, eps, grad_eps, zero)


def _case2_fields(x, t):
    X, Y = _xy(x)
    sx, cx, sy, cy = np.sin(PI * X), np.cos(PI * X), np.sin(PI * Y), np.cos(PI * Y)
    S = sx * sy
    gS = np.stack([PI * cx * sy, PI * sx * cy], axis=-1)
    lapS = -2 * PI**2 * S
    a = np.exp(S - 1.0)
    u = np.stack([a, a], axis=-1)
    grad_u = np.stack([a[:, None] * gS, a[:, None] * gS], axis=1)
    lap = a * (np.sum(gS**2, axis=-1) + lapS)
    lap_u = np.stack([lap, lap], axis=-1)
    p = 0.5 + 0.5 * S
    grad_p = 0.5 * gS
    eps = np.exp(-S - 1.0)
    grad_eps = -eps[:, None] * gS
    zero = np.zeros(X.size)
    return FieldData(u, grad_u, lap_u, np.zeros_like(u), p, grad_p, eps, grad_eps, zero)


def _case3_fields(x, t):
    X, Y = _xy(x)
    sx, cx, sy, cy = np.sin(PI * X), np.cos(PI * X), np.sin(PI * Y), np.cos(PI * Y)
    ct, st = np.cos(2 * PI * t), np.sin(2 * PI * t)
    a = ct * cx * cy
    u = np.stack([a, a], axis=-1)
    g = ct * np.stack([-PI * sx * cy, -PI * cx * sy], axis=-1)
    grad_u = np.stack([g, g], axis=1)
    lap_u = np.stack([-2 * PI**2 * a, -2 * PI**2 * a], axis=-1)
    ut = -2 * PI * st * cx * cy
    u_t = np.stack([ut, ut], axis=-1)
    p = np.zeros(X.size)
    grad_p = np.zeros((X.size, 2))
    S = sx * sy
    gS = np.stack([PI * cx * sy, PI * sx * cy], axis=-1)
    eS = np.exp(-S)
    eps = (1.0 - 0.1 * ct * eS) / E1
    grad_eps = (0.1 * ct * eS / E1)[:, None] * gS
    eps_t = 0.2 * PI * st * eS / E1
    return FieldData(u, grad_u, lap_u, u_t, p, grad_p, eps, grad_eps, eps_t)


@dataclass(frozen=True)
class MmsCase:
    id: int
    fields: Callable
    transient: bool
    description: str = ""

    def velocity(self, x, t=0.0):
        return self.fields(x, t).u

    def pressure(self, x, t=0.0):
        return self.fields(x, t).p

    def eps(self, x, t=0.0):
        return self.fields(x, t).eps

    def eps_rate(self, x, t=0.0):
        return self.fields(x, t).eps_t


CASES = {
    0: MmsCase(0, lambda x, t: _case1_fields(x, t, constant_eps=0.5), False,
               "constant void fraction, steady divergence-free velocity"),
    1: MmsCase(1, _case1_fields, False, "varying void fraction, steady divergence-free velocity"),
    2: MmsCase(2, _case2_fields, False, "steady, velocity not divergence-free"),
    3: MmsCase(3, _case3_fields, True, "unsteady velocity and void fraction"),
}


def get_case(case_id):
    if isinstance(case_id, MmsCase):
        return case_id
    try:
        return CASES[int(case_id)]
    except (KeyError, ValueError, TypeError):
        raise ConfigurationError(f"unknown MMS case {case_id!r}; valid cases: {sorted(CASES)}") from None


def mass_source(case, x, t=0.0):
    """d(eps)/dt + div(eps u) from the closed forms (1/s)."""
    f = get_case(case).fields(x, t)
    div = f.grad_u[:, 0, 0] + f.grad_u[:, 1, 1]
    return f.eps_t + f.eps * div + np.einsum("ni,ni->n", f.u, f.grad_eps)


def momentum_source(case, form, x, t=0.0, nu=1.0):
    """Momentum source making the closed-form fields an exact solution."""
    form = str(form).upper()
    if form not in ("A", "B"):
        raise ConfigurationError(f"model form must be A or B, got {form!r}")
    f = get_case(case).fields(x, t)
    m = mass_source(case, x, t)
    e = f.eps[:, None]
    conv = np.einsum("nj,nij->ni", f.u, f.grad_u)
    g = e * f.u_t + e * conv + m[:, None] * f.u
    if form == "B":
        return g + f.grad_p - nu * f.lap_u
    return g + e * f.grad_p - e * nu * f.lap_u


# ---------------------------------------------------------------------------
# problems and errors


def make_problem(case, form="B", n_cells=16, velocity_degree=1, pressure_degree=None, nu=1.0,
                 dt=None, bdf_order=1, tolerance=1e-8, max_iterations=10, linear=None,
                 supg=True, pspg=True, graddiv=True):
    """All-Dirichlet problem on [-1,1]^2 with the case's sources injected."""
    case = get_case(case)
    if case.transient and dt is None:
        raise ConfigurationError(f"case {case.id} is transient and needs a time step")
    mesh = build_box_mesh([-1.0, -1.0], [1.0, 1.0], [n_cells, n_cells])
    cfg = VansConfig(form=form, nu=nu, dt=dt, bdf_order=bdf_order, newton_tolerance=tolerance,
                     newton_max_iterations=max_iterations, supg=supg, pspg=pspg, graddiv=graddiv,
                     linear=linear or LinearSolverSettings())
    bcs = [BoundaryCondition(tag, "dirichlet", case.velocity) for tag in ("x-min", "x-max", "y-min", "y-max")]
    problem = VansProblem(
        mesh, cfg, bcs, velocity_degree=velocity_degree, pressure_degree=pressure_degree,
        void_fraction=case.eps,
        void_fraction_rate=case.eps_rate if case.transient else None,
        momentum_source=lambda x, t: momentum_source(case, form, x, t, nu),
        mass_source=lambda x, t: mass_source(case, x, t),
    )
    # pressure gauge: pin the corner DoF at (-1, -1) to the exact value
    corner = problem.Q.support_points[0]
    problem.pressure_pin = (0, lambda t: float(case.pressure(corner[None, :], t)[0]))
    problem.case = case
    return problem


def error_l2(problem, state, case, t=None):
    """L2 norms of velocity and pressure errors, quadrature exact to 2k+3."""
    case = get_case(case)
    t = state.t if t is None else t
    k = max(problem.V.degree, problem.Q.degree)
    rule = gauss_rule(k + 2, problem.dim)
    cv = cell_values(problem.V, rule)
    nV = problem.V.n_dofs
    uh = np.einsum("qa,ica->cqi", cv.values, state.u.reshape(problem.dim, nV)[:, problem.V.cell_dofs])
    cvp = cv if problem.Q is problem.V else cell_values(problem.Q, rule)
    ph = np.einsum("qa,ca->cq", cvp.values, state.p[problem.Q.cell_dofs])
    pts = cv.points.reshape(-1, problem.dim)
    exact = case.fields(pts, t)
    C, Q = cv.jxw.shape
    eu = uh - exact.u.reshape(C, Q, -1)
    ep = ph - exact.p.reshape(C, Q)
    return (float(np.sqrt(np.einsum("cq,cqi,cqi->", cv.jxw, eu, eu))),
            float(np.sqrt(np.einsum("cq,cq,cq->", cv.jxw, ep, ep))))


def l2_norm_of_function(mesh, func, n_points=4):
    """Quadrature L2 norm of a pointwise function over the mesh."""
    rule = gauss_rule(n_points, mesh.dim)
    pts = mesh.cell_lower[:, None, :] + rule.points[None] * mesh.cell_extent[:, None, :]
    vals = np.asarray(func(pts.reshape(-1, mesh.dim)), dtype=float).reshape(mesh.n_cells, rule.n_points, -1)
    jxw = mesh.cell_measures[:, None] * rule.weights[None, :]
    return float(np.sqrt(np.einsum("cq,cqi,cqi->", jxw, vals, vals)))


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceTable:
    kind: str  # "spatial" or "temporal"
    rows: list = field(default_factory=list)  # (h or dt, dofs, err_u, err_p)
    mass: list = field(default_factory=list)  # (global, local max) per row
    seconds: list = field(default_factory=list)

    def add(self, size, dofs, err_u, err_p):
        if self.rows and size >= self.rows[-1][0]:
            raise ConfigurationError("mesh size / time step must strictly decrease down the table")
        self.rows.append((float(size), int(dofs), float(err_u), float(err_p)))

    @property
    def sizes(self):
        return np.array([r[0] for r in self.rows])

    @property
    def errors_u(self):
        return np.array([r[2] for r in self.rows])

    @property
    def errors_p(self):
        return np.array([r[3] for r in self.rows])

    def write_csv(self, path):
        orders = fit_order(self) if len(self.rows) >= 3 else (float("nan"), float("nan"))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.kind == "spatial":
                w.writerow(["h", "dofs", "err_u_l2", "err_p_l2"])
                for h, dofs, eu, ep in self.rows:
                    w.writerow([repr(h), dofs, repr(eu), repr(ep)])
            else:
                w.writerow(["dt", "err_u_l2", "err_p_l2"])
                for dt, _, eu, ep in self.rows:
                    w.writerow([repr(dt), repr(eu), repr(ep)])
            fh.write(f"# order,{orders[0]!r},{orders[1]!r}\n")
        return orders


def _slope(sizes, errors):
    if np.any(np.asarray(errors) <= 0) or np.any(np.asarray(sizes) <= 0):
        raise DomainError("errors and sizes must be positive to fit an order")
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


def fit_order(table):
    """Least-squares slopes of log(error) against log(size) for (velocity, pressure)."""
    if len(table.rows) < 3:
        raise ConfigurationError("fitting an order needs at least three rows")
    eu, ep = table.errors_u, table.errors_p
    vel = _slope(table.sizes, eu)
    pres = _slope(table.sizes, ep) if np.all(ep > 0) else float("nan")
    return vel, pres


def run_transient(problem, case, t_end, callback=None):
    """March from exact data at t=0 to ``t_end``; returns final state and reports."""
    state = initial_state(problem, case.velocity, case.pressure, 0.0)
    dt = problem.config.dt
    n_steps = int(round(t_end / dt))
    reports = []
    for _ in range(n_steps):
        reports.append(advance_time_step(problem, state))
        if callback is not None:
            callback(state)
    return state, reports


def viscosity_ladder(nu, start=1.0, factor=10.0 ** 0.5):
    """Decreasing viscosities from ``start`` down to ``nu`` for continuation."""
    ladder = []
    v = start
    while v > nu * factor * (1 + 1e-12):
        ladder.append(v)
        v /= factor
    ladder.append(nu)
    return ladder


def solve_steady_case(case, form, n_cells, velocity_degree, pressure_degree=None, nu=MMS_VISCOSITY,
                      tolerance=1e-8, max_iterations=30, linear=None, **stabilization):
    """Steady solve reached by continuation in the viscosity from a zero start.

    Newton from rest does not converge at the lower viscosities, so each
    solve starts from the converged field of the previous, more viscous one.
    """
    state = None
    for v in viscosity_ladder(nu):
        problem = make_problem(case, form, n_cells, velocity_degree, pressure_degree, nu=v,
                               tolerance=tolerance, max_iterations=max_iterations, linear=linear,
                               **stabilization)
        if state is None:
            state = initial_state(problem)
        report = solve_steady(problem, state)
    return problem, state, report


def run_convergence_study(case, form="B", velocity_degree=1, pressure_degree=None, meshes=(16, 32, 64),
                          dts=None, bdf_order=1, nu=None, t_end=1.0, temporal_mesh=48, tolerance=None,
                          max_iterations=None, linear=None, **stabilization):
    """Spatial study over ``meshes`` or, if ``dts`` is given, a temporal one.

    Newton converges only linearly at the low steady viscosity (the
    stabilization parameters are frozen in the Jacobian), so steady solves
    get 30 iterations by default and time steps 10.
    """
    case = get_case(case)
    kind = "temporal" if dts is not None else "spatial"
    table = ConvergenceTable(kind)
    if kind == "spatial":
        if case.transient:
            raise ConfigurationError("spatial studies of the transient case are not supported")
        for n in meshes:
            start = time.perf_counter()
            try:
                problem, state, _ = solve_steady_case(
                    case, form, n, velocity_degree, pressure_degree,
                    nu=MMS_VISCOSITY if nu is None else nu, tolerance=tolerance or 1e-8,
                    max_iterations=max_iterations or 30, linear=linear, **stabilization)
            except NonConvergenceError as exc:
                exc.table = table
                raise
            eu, ep = error_l2(problem, state, case)
            table.add(2.0 / n, problem.n_total, eu, ep)
            integrals = continuity_cell_integrals(problem, state)
            table.mass.append((abs(integrals.sum()), float(np.abs(integrals).max())))
            table.seconds.append(time.perf_counter() - start)
            log.info("case %d form %s Q%d n=%d: eu=%.3e ep=%.3e", case.id, form, velocity_degree, n, eu, ep)
    else:
        if not case.transient:
            raise ConfigurationError("temporal studies need the transient case")
        for dt in dts:
            start = time.perf_counter()
            problem = make_problem(case, form, temporal_mesh, velocity_degree, pressure_degree,
                                   nu=TRANSIENT_VISCOSITY if nu is None else nu,
                                   dt=dt, bdf_order=bdf_order, tolerance=tolerance or 1e-10,
                                   max_iterations=max_iterations or 10, linear=linear, **stabilization)
            try:
                state, _ = run_transient(problem, case, t_end)
            except NonConvergenceError as exc:
                exc.table = table
                raise
            eu, ep = error_l2(problem, state, case)
            table.add(dt, problem.n_total, eu, ep)
            table.seconds.append(time.perf_counter() - start)
            log.info("case %d BDF%d dt=%g: eu=%.3e", case.id, bdf_order, dt, eu)
    return table


def mass_conservation_report(problem, states):
    """(global, max local) continuity-residual integrals for each converged state."""
    out = []
    for st in states:
        order = min(problem.config.bdf_order, max(st.steps_taken, 1))
        integrals = continuity_cell_integrals(problem, st, order)
        out.append((abs(float(integrals.sum())), float(np.abs(integrals).max())))
    return out
