"""Stabilized assembly and Newton solution of the volume-averaged Navier–Stokes equations.

Unknowns are the interstitial velocity ``u`` and the kinematic pressure
``p / rho_f``. Both model forms share the continuity equation

    d(eps)/dt + eps div(u) + u . grad(eps) = m / rho_f

and differ in whether the void fraction multiplies the pressure gradient and
viscous term (form A) or not (form B). Galerkin terms are augmented with
SUPG, PSPG and a grad-div penalty built on the continuity residual.

Assembly is vectorized over all cells. Per quadrature point the momentum
residual is written as ``Fv . v + Fg : grad(v)`` and the continuity residual
as ``C q + tau SR . grad(q)``; the Jacobian is the exact derivative of those
expressions with ``tau``, ``gamma`` and the drag coefficient held fixed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .drag import DragField, DragModelKind, build_drag_field
from .errors import (AssemblyError, ConfigurationError, DivergenceError, NonConvergenceError,
                     SolverError)
from .fem import cell_values, fe_space, gauss_rule
from .state import BdfScheme, SolutionState, apply_dirichlet, bdf_time_derivative, velocity_constraints

log = logging.getLogger(__name__)


@dataclass
class LinearSolverSettings:
    method: str = "direct"  # direct | gmres
    max_iterations: int = 5000
    min_residual: float = 1e-11
    relative_residual: float = 1e-3
    ilu_fill: int = 1
    restart: int = 200

    def __post_init__(self):
        if self.method not in ("direct", "gmres"):
            raise ConfigurationError(f"linear.method must be direct or gmres, got {self.method!r}")


@dataclass
class VansConfig:
    form: str = "B"
    nu: float = 1.0
    rho: float = 1.0
    body_force: tuple = (0.0, 0.0, 0.0)
    supg: bool = True
    pspg: bool = True
    graddiv: bool = True
    bdf_order: int = 1
    dt: Optional[float] = None  # None: stationary
    newton_tolerance: float = 1e-8
    newton_max_iterations: int = 10
    relaxation: float = 1.0
    linear: LinearSolverSettings = field(default_factory=LinearSolverSettings)
    drag_model: str = "none"
    drag_reynolds: str = "superficial"

    def __post_init__(self):
        self.form = str(self.form).upper()
        if self.form not in ("A", "B"):
            raise ConfigurationError(f"model form must be A or B, got {self.form!r}")
        if self.nu <= 0:
            raise ConfigurationError("kinematic viscosity must be positive")
        if self.newton_tolerance <= 0:
            raise ConfigurationError("nonlinear tolerance must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError("time step must be positive")
        DragModelKind.parse(self.drag_model)
        BdfScheme(self.bdf_order)

    @property
    def transient(self):
        return self.dt is not None


def tau_u(transient, dt, u_norm, h_conv, h_diff, nu):
    """Stabilization time scale combining transient, convective and diffusive limits."""
    h_conv = np.asarray(h_conv, dtype=float)
    h_diff = np.asarray(h_diff, dtype=float)
    if np.any(h_conv <= 0) or np.any(h_diff <= 0):
        raise AssemblyError("element sizes must be positive")
    inv2 = (2.0 * np.asarray(u_norm) / h_conv) ** 2 + 9.0 * (4.0 * nu / h_diff**2) ** 2
    if transient:
        inv2 = inv2 + (1.0 / dt) ** 2
    return 1.0 / np.sqrt(inv2)


def strong_residual(form, u, grad_u, lap_u, grad_p, eps, du_dt, drag, mass_source, nu,
                    body_force=None, source=None):
    """Pointwise strong momentum residual (kinematic units, m/s^2).

    Shapes: ``u``, ``lap_u``, ``grad_p``, ``du_dt``, ``drag`` are (..., dim);
    ``grad_u`` is (..., dim, dim) with ``grad_u[..., i, j] = d u_i / d x_j``;
    ``eps`` and ``mass_source`` broadcast as (...). ``drag`` is the drag force
    density already divided by rho_f.
    """
    u = np.asarray(u, dtype=float)
    eps = np.asarray(eps, dtype=float)[..., None]
    conv = np.einsum("...j,...ij->...i", u, grad_u)
    pfac = eps if str(form).upper() == "A" else 1.0
    sr = (eps * du_dt + eps * conv + np.asarray(mass_source)[..., None] * u
          + pfac * grad_p - pfac * nu * lap_u + drag)
    if body_force is not None:
        sr = sr - eps * np.asarray(body_force)[: u.shape[-1]]
    if source is not None:
        sr = sr - source
    return sr


@dataclass
class AssembledSystem:
    matrix: sparse.csr_matrix
    residual: np.ndarray
    constrained_dofs: np.ndarray
    constrained_values: np.ndarray


class VansProblem:
    """Discretization, data and boundary conditions for one simulation.

    ``void_fraction`` is either a callable ``eps(x, t)`` interpolated each
    step or a fixed nodal vector on the void-fraction space. ``void_fraction_rate``
    optionally supplies ``d eps / dt`` in closed form; otherwise it is taken
    from a BDF difference of the stored nodal levels.

    ``momentum_source(x, t)`` and ``mass_source(x, t)`` are kinematic
    (already divided by rho_f).
    """

    def __init__(self, mesh, config, bcs, velocity_degree=1, pressure_degree=None, eps_degree=None,
                 void_fraction=None, void_fraction_rate=None, momentum_source=None, mass_source=None,
                 pressure_pin=None, particles=None, quadrature_points=None):
        self.mesh = mesh
        self.config = config
        self.bcs = list(bcs)
        self.dim = mesh.dim
        kp = velocity_degree if pressure_degree is None else pressure_degree
        if kp > velocity_degree:
            raise ConfigurationError("pressure degree may not exceed velocity degree")
        ke = velocity_degree if eps_degree is None else eps_degree
        self.V = fe_space(mesh, velocity_degree)
        self.Q = fe_space(mesh, kp)
        self.E = self.V if ke == velocity_degree else fe_space(mesh, ke)
        nq = quadrature_points or (max(velocity_degree, kp, ke) + 1)
        self.rule = gauss_rule(nq, mesh.dim)
        self.cv_u = cell_values(self.V, self.rule)
        self.cv_p = self.cv_u if self.Q is self.V else cell_values(self.Q, self.rule)
        self.cv_e = self.cv_u if self.E is self.V else cell_values(self.E, self.rule)
        self.void_fraction = void_fraction if void_fraction is not None else (lambda x, t: np.ones(len(x)))
        self.void_fraction_rate = void_fraction_rate
        self.momentum_source = momentum_source
        self.mass_source = mass_source
        self.pressure_pin = pressure_pin  # (pressure dof, callable t -> value)
        self.particles = particles
        self.drag = DragField.zero(mesh)
        # element size used by tau and gamma
        self.h = mesh.cell_measures ** (1.0 / mesh.dim) / velocity_degree
        self._build_pattern()
        self._qp_cache = {}

    # -- sizes and dof maps -------------------------------------------------

    @property
    def n_u(self):
        return self.dim * self.V.n_dofs

    @property
    def n_total(self):
        return self.n_u + self.Q.n_dofs

    def _build_pattern(self):
        nV = self.V.n_dofs
        parts = [self.V.cell_dofs + c * nV for c in range(self.dim)]
        parts.append(self.Q.cell_dofs + self.dim * nV)
        self.local_dofs = np.concatenate(parts, axis=1)
        n_loc = self.local_dofs.shape[1]
        rows = np.repeat(self.local_dofs, n_loc, axis=1).ravel()
        cols = np.tile(self.local_dofs, (1, n_loc)).ravel()
        N = self.n_total
        keys = rows.astype(np.int64) * N + cols
        uniq, inverse = np.unique(keys, return_inverse=True)
        self._scatter_index = inverse
        self._pattern_rows = (uniq // N).astype(np.int64)
        self._pattern_cols = (uniq % N).astype(np.int64)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(self._pattern_rows, minlength=N))])

    def split(self, x):
        return x[: self.n_u], x[self.n_u:]

    # -- data at quadrature points -----------------------------------------

    def eps_nodal(self, t):
        if callable(self.void_fraction):
            return np.asarray(self.void_fraction(self.E.support_points, t), dtype=float)
        return np.asarray(self.void_fraction, dtype=float)

    def eps_rate_nodal(self, state, order):
        if self.void_fraction_rate is not None:
            return np.asarray(self.void_fraction_rate(self.E.support_points, state.t), dtype=float)
        if not self.config.transient or state.eps_prev1 is None:
            return np.zeros(self.E.n_dofs)
        scheme = BdfScheme(order)
        return bdf_time_derivative(scheme, state.eps, state.eps_prev1, state.eps_prev2, self.config.dt)

    def _source_at_qp(self, t):
        key = ("src", t)
        if key not in self._qp_cache:
            pts = self.cv_u.points.reshape(-1, self.dim)
            C, Q = self.cv_u.jxw.shape
            G = (np.zeros((C, Q, self.dim)) if self.momentum_source is None
                 else np.asarray(self.momentum_source(pts, t), dtype=float).reshape(C, Q, self.dim))
            M = (np.zeros((C, Q)) if self.mass_source is None
                 else np.asarray(self.mass_source(pts, t), dtype=float).reshape(C, Q))
            self._qp_cache = {key: (G, M)}
        return self._qp_cache[key]

    def fields_at_qp(self, state, order=1):
        """Interpolate everything the residual needs to quadrature points."""
        cfg = self.config
        nV = self.V.n_dofs
        dim = self.dim
        u_loc = state.u.reshape(dim, nV)[:, self.V.cell_dofs]  # (dim, C, n)
        cu, cp, ce = self.cv_u, self.cv_p, self.cv_e
        U = np.einsum("qa,ica->cqi", cu.values, u_loc)
        GU = np.einsum("cqaj,ica->cqij", cu.grads, u_loc)
        LU = np.einsum("cqa,ica->cqi", cu.laplacians, u_loc)
        p_loc = state.p[self.Q.cell_dofs]
        P = np.einsum("qa,ca->cq", cp.values, p_loc)
        GP = np.einsum("cqaj,ca->cqj", cp.grads, p_loc)
        e_loc = state.eps[self.E.cell_dofs]
        E = np.einsum("qa,ca->cq", ce.values, e_loc)
        GE = np.einsum("cqaj,ca->cqj", ce.grads, e_loc)
        et_loc = self.eps_rate_nodal(state, order)[self.E.cell_dofs]
        ET = np.einsum("qa,ca->cq", ce.values, et_loc)
        if cfg.transient:
            ut = bdf_time_derivative(BdfScheme(order), state.u, state.u_prev1, state.u_prev2, cfg.dt)
            UT = np.einsum("qa,ica->cqi", cu.values, ut.reshape(dim, nV)[:, self.V.cell_dofs])
            alpha0 = BdfScheme(order).coefficients(cfg.dt)[0]
        else:
            UT = np.zeros_like(U)
            alpha0 = 0.0
        G, M = self._source_at_qp(state.t)
        return dict(U=U, GU=GU, LU=LU, P=P, GP=GP, E=E, GE=GE, ET=ET, UT=UT, G=G, M=M, alpha0=alpha0)

    def continuity_density(self, f):
        """Pointwise continuity residual d(eps)/dt + div(eps u) - m."""
        div = np.einsum("cqii->cq", f["GU"])
        return f["ET"] + f["E"] * div + np.einsum("cqi,cqi->cq", f["U"], f["GE"]) - f["M"]


def _assemble_local(problem, state, order, frozen_u=None, with_matrix=True):
    cfg = problem.config
    f = problem.fields_at_qp(state, order)
    U, GU, LU, P, GP, E, GE, ET, UT, G, M = (f[k] for k in ("U", "GU", "LU", "P", "GP", "E", "GE",
                                                           "ET", "UT", "G", "M"))
    if np.any(E <= 0):
        bad = int(np.flatnonzero((E <= 0).any(axis=1))[0])
        raise AssemblyError(f"nonpositive void fraction at a quadrature point of cell {bad}")
    dim = problem.dim
    nu = cfg.nu
    form_a = cfg.form == "A"
    cu, cp = problem.cv_u, problem.cv_p
    phi, dphi, lphi = cu.values, cu.grads, cu.laplacians
    psi, dpsi = cp.values, cp.grads
    w = cu.jxw

    Uf = U if frozen_u is None else frozen_u
    unorm = np.linalg.norm(Uf, axis=-1)
    h = problem.h[:, None]
    tau = tau_u(cfg.transient, cfg.dt, unorm, h, h, nu)
    gamma = nu + unorm * h if cfg.graddiv else np.zeros_like(unorm)

    beta = problem.drag.beta[:, None] / cfg.rho * np.ones_like(E)
    if not form_a:
        beta = beta / E
    drag = beta[..., None] * (U - problem.drag.up_avg[:, None, :dim])
    body = np.asarray(cfg.body_force, dtype=float)[:dim]

    pfac = E if form_a else np.ones_like(E)
    nufac = nu * E if form_a else nu * np.ones_like(E)
    conv = np.einsum("cqj,cqij->cqi", U, GU)
    SR = strong_residual(cfg.form, U, GU, LU, GP, E, UT, drag, M, nu, body, G)
    C = problem.continuity_density(f)

    Fv = E[..., None] * UT + E[..., None] * conv + M[..., None] * U + drag - E[..., None] * body - G
    if form_a:
        Fv = Fv + nu * np.einsum("cqij,cqj->cqi", GU, GE) - P[..., None] * GE
    eye = np.eye(dim)
    Fg = nufac[..., None, None] * GU - (pfac * P)[..., None, None] * eye
    if cfg.supg:
        Fg = Fg + tau[..., None, None] * SR[..., :, None] * U[..., None, :]
    if cfg.graddiv:
        Fg = Fg + (gamma * C)[..., None, None] * eye

    Ru = (np.einsum("cq,cqi,qa->cia", w, Fv, phi) + np.einsum("cq,cqij,cqaj->cia", w, Fg, dphi))
    Rp = np.einsum("cq,cq,qb->cb", w, C, psi)
    if cfg.pspg:
        Rp = Rp + np.einsum("cq,cq,cqj,cqbj->cb", w, tau, SR, dpsi, optimize=True)
    n_cells = w.shape[0]
    local_res = np.concatenate([Ru.reshape(n_cells, -1), Rp], axis=1)
    if not with_matrix:
        return local_res, None

    nu_ = phi.shape[1]
    np_ = psi.shape[1]
    s = E * f["alpha0"] + M + beta
    Uphi = np.einsum("cqj,cqaj->cqa", U, dphi)
    S = s[..., None] * phi + E[..., None] * Uphi - nufac[..., None] * lphi
    T = s[..., None] * phi + E[..., None] * Uphi
    if form_a:
        T = T + nu * np.einsum("cqj,cqaj->cqa", GE, dphi)
    D = E[..., None, None] * dphi + GE[:, :, None, :] * phi[None, :, :, None]  # (c,q,a,k)

    # velocity-velocity
    diag = np.einsum("cq,qa,cqb->cab", w, phi, T)
    diag += np.einsum("cq,cq,cqaj,cqbj->cab", w, nufac, dphi, dphi, optimize=True)
    wt = w * tau
    if cfg.supg:
        diag += np.einsum("cq,cqa,cqb->cab", wt, Uphi, S)
    Juu = np.zeros((n_cells, dim, nu_, dim, nu_))
    for i in range(dim):
        Juu[:, i, :, i, :] += diag
    base = phi[None] if not cfg.supg else phi[None] + tau[..., None] * Uphi
    # E dU_i/dx_k (phi_a + tau u.grad(phi_a)) phi_c
    Juu += np.einsum("cq,cqik,cqa,qb->ciakb", w * E, GU, base * np.ones((n_cells, 1, 1)), phi,
                     optimize=True)
    if cfg.supg:
        Juu += np.einsum("cq,cqi,cqak,qb->ciakb", wt, SR, dphi, phi, optimize=True)
    if cfg.graddiv:
        Juu += np.einsum("cq,cqai,cqbk->ciakb", w * gamma, dphi, D, optimize=True)

    # velocity-pressure
    Jup = -np.einsum("cq,cqai,qd->ciad", w * pfac, dphi, psi, optimize=True)
    if form_a:
        Jup -= np.einsum("cq,qa,cqi,qd->ciad", w, phi, GE, psi, optimize=True)
    if cfg.supg:
        Jup += np.einsum("cq,cqa,cqdi->ciad", wt * pfac, Uphi, dpsi, optimize=True)

    # pressure-velocity and pressure-pressure
    Jpu = np.einsum("cq,qb,cqak->cbka", w, psi, D, optimize=True)
    Jpp = np.zeros((n_cells, np_, np_))
    if cfg.pspg:
        Jpu += np.einsum("cq,cqbk,cqa->cbka", wt, dpsi, S, optimize=True)
        Jpu += np.einsum("cq,cqbi,cqik,qa->cbka", wt * E, dpsi, GU, phi, optimize=True)
        Jpp += np.einsum("cq,cqbj,cqdj->cbd", wt * pfac, dpsi, dpsi, optimize=True)

    nuu = dim * nu_
    n_loc = nuu + np_
    K = np.empty((n_cells, n_loc, n_loc))
    K[:, :nuu, :nuu] = Juu.reshape(n_cells, nuu, nuu)
    K[:, :nuu, nuu:] = Jup.reshape(n_cells, nuu, np_)
    K[:, nuu:, :nuu] = Jpu.reshape(n_cells, np_, nuu)
    K[:, nuu:, nuu:] = Jpp
    return local_res, K


def constraints(problem, t):
    dofs, vals = velocity_constraints(problem.V, problem.bcs, t)
    if problem.pressure_pin is not None:
        pdof, pval = problem.pressure_pin
        dofs = np.append(dofs, problem.n_u + pdof)
        vals = np.append(vals, pval(t) if callable(pval) else pval)
    return dofs, vals


def assemble(problem, state, order=1, frozen_u=None, with_matrix=True, constrain=True):
    """Global residual and Jacobian for the current iterate.

    Constrained rows carry ``x - g`` in the residual and identity rows in the
    matrix, so a Newton update restores the prescribed values.
    """
    local_res, K = _assemble_local(problem, state, order, frozen_u, with_matrix)
    N = problem.n_total
    res = np.bincount(problem.local_dofs.ravel(), weights=local_res.ravel(), minlength=N)
    mat = None
    if with_matrix:
        data = np.bincount(problem._scatter_index, weights=K.ravel(), minlength=problem._pattern_rows.size)
        mat = sparse.csr_matrix((data, problem._pattern_cols, problem._indptr), shape=(N, N))
    dofs, vals = constraints(problem, state.t)
    if constrain and dofs.size:
        x = np.concatenate([state.u, state.p])
        res[dofs] = x[dofs] - vals
    if not np.all(np.isfinite(res)):
        raise DivergenceError("residual is not finite")
    return AssembledSystem(matrix=mat, residual=res, constrained_dofs=dofs, constrained_values=vals)


def linear_solve(matrix, rhs, settings=None):
    """Solve ``matrix @ x = rhs`` by sparse LU or ILU-preconditioned GMRES."""
    settings = settings or LinearSolverSettings()
    A = sparse.csc_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    if settings.method == "direct":
        return spla.splu(A).solve(b)
    try:
        ilu = spla.spilu(A, fill_factor=1.0 + settings.ilu_fill, drop_tol=1e-14)
    except RuntimeError as exc:
        raise SolverError(f"ILU factorization failed ({exc}); try linear.method = direct") from exc
    prec = spla.LinearOperator(A.shape, ilu.solve)
    bnorm = np.linalg.norm(b)
    atol = max(settings.min_residual, 0.0)
    x, info = spla.gmres(A, b, M=prec, rtol=settings.relative_residual, atol=atol,
                         restart=settings.restart, maxiter=settings.max_iterations)
    if info != 0:
        raise SolverError(f"GMRES stopped after {info} iterations without reaching the tolerance "
                          f"(|b|={bnorm:.3e}); try linear.method = direct")
    return x


@dataclass
class NewtonReport:
    residuals: list
    iterations: int
    converged: bool
    seconds: float = 0.0


def newton_solve(problem, state, order=1, tolerance=None, max_iterations=None):
    """Undamped (or fixed-relaxation) Newton iteration on the assembled system.

    Modifies ``state.u`` and ``state.p`` in place and returns the report.
    """
    cfg = problem.config
    tol = cfg.newton_tolerance if tolerance is None else tolerance
    max_it = cfg.newton_max_iterations if max_iterations is None else max_iterations
    start = time.perf_counter()
    dofs, vals = constraints(problem, state.t)
    x = np.concatenate([state.u, state.p])
    x[dofs] = vals
    state.u, state.p = problem.split(x)
    state.u, state.p = state.u.copy(), state.p.copy()
    history = []
    for it in range(max_it + 1):
        system = assemble(problem, state, order)
        rnorm = float(np.linalg.norm(system.residual))
        history.append(rnorm)
        log.debug("newton %d: |R| = %.3e", it, rnorm)
        if not np.isfinite(rnorm):
            raise DivergenceError("Newton residual is not finite", history)
        if rnorm < tol:
            return NewtonReport(history, it, True, time.perf_counter() - start)
        if it == max_it:
            break
        A, b = apply_dirichlet(system.matrix, -system.residual, system.constrained_dofs,
                               -system.residual[system.constrained_dofs])
        dx = linear_solve(A, b, cfg.linear)
        x = np.concatenate([state.u, state.p]) + cfg.relaxation * dx
        state.u, state.p = problem.split(x.copy())
        state.u, state.p = state.u.copy(), state.p.copy()
    raise NonConvergenceError(
        f"Newton did not reach {tol:.1e} in {max_it} iterations (last |R| = {history[-1]:.3e})", history)


def update_drag(problem, state):
    cfg = problem.config
    if problem.particles is None or DragModelKind.parse(cfg.drag_model) is DragModelKind.NONE:
        return
    problem.drag = build_drag_field(problem.mesh, problem.V, state.u, problem.E, state.eps,
                                    problem.particles, cfg.drag_model, cfg.rho, cfg.rho * cfg.nu,
                                    cfg.drag_reynolds)


def initial_state(problem, u0=None, p0=None, t0=0.0):
    """State with interpolated initial data (zero where not given)."""
    from .state import interpolate_field

    u = np.zeros(problem.n_u) if u0 is None else interpolate_field(problem.V, u0, t0)
    p = np.zeros(problem.Q.n_dofs) if p0 is None else interpolate_field(problem.Q, p0, t0)
    eps = problem.eps_nodal(t0)
    return SolutionState(u=u, p=p, eps=eps, t=t0, dt=problem.config.dt or 0.0)


def solve_steady(problem, state):
    update_drag(problem, state)
    return newton_solve(problem, state, order=1)


def advance_time_step(problem, state):
    """One implicit BDF step; BDF2 starts with a BDF1 step."""
    cfg = problem.config
    if not cfg.transient:
        raise ConfigurationError("advance_time_step needs a time step (config.dt)")
    update_drag(problem, state)
    order = min(cfg.bdf_order, state.steps_taken + 1)
    state.rotate()
    state.t = state.t + cfg.dt
    state.dt = cfg.dt
    state.eps = problem.eps_nodal(state.t)
    report = newton_solve(problem, state, order=order)
    state.steps_taken += 1
    return report


def continuity_cell_integrals(problem, state, order=1):
    """Integral of the continuity residual over every cell."""
    f = problem.fields_at_qp(state, order)
    C = problem.continuity_density(f)
    return np.einsum("cq,cq->c", problem.cv_u.jxw, C)


def continuity_l2_norm(problem, state, order=1):
    f = problem.fields_at_qp(state, order)
    C = problem.continuity_density(f)
    return float(np.sqrt(np.einsum("cq,cq->", problem.cv_u.jxw, C**2)))
