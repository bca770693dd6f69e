"""Flow through a step change of void fraction, with and without grad-div.

The void fraction drops from 1 to 0.5 on |x| <= 0.5 in the square [-1, 1]^2.
Mass balance in one dimension gives an interstitial velocity of u_in / eps = 2
inside the step; velocities above that are overshoot caused by the sharp
gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError
from .fem import build_box_mesh
from .solver import (LinearSolverSettings, VansConfig, VansProblem, continuity_l2_norm,
                     initial_state, solve_steady)
from .state import BoundaryCondition
from .voidfraction import step_void_fraction

log = logging.getLogger(__name__)


@dataclass
class StepResult:
    graddiv: bool
    converged: bool
    continuity_l2: float
    overshoot: float  # max(u_x) - u_in / eps_step inside the step, clipped at 0
    u_max: float
    problem: object = None
    state: object = None
    message: str = ""


def step_problem(n_cells=32, graddiv=True, nu=0.01, form="B", u_in=1.0, uniform=False,
                 degree=1, tolerance=1e-8, max_iterations=30, relaxation=1.0):
    mesh = build_box_mesh([-1.0, -1.0], [1.0, 1.0], [n_cells, n_cells])
    cfg = VansConfig(form=form, nu=nu, graddiv=graddiv, newton_tolerance=tolerance,
                     newton_max_iterations=max_iterations, relaxation=relaxation,
                     linear=LinearSolverSettings())
    inlet = np.array([u_in, 0.0])
    bcs = [BoundaryCondition("x-min", "dirichlet", lambda x, t: np.broadcast_to(inlet, (len(x), 2))),
           BoundaryCondition("x-max", "outflow"),
           BoundaryCondition("y-min", "slip"), BoundaryCondition("y-max", "slip")]
    problem = VansProblem(mesh, cfg, bcs, velocity_degree=degree)
    if uniform:
        problem.void_fraction = np.ones(problem.E.n_dofs)
    else:
        problem.void_fraction = step_void_fraction(problem.E.support_points)
    return problem


def run_step_case(graddiv=True, eps_step=0.5, u_in=1.0, **kwargs):
    """Steady solve from a uniform start; nonconvergence is reported, not raised."""
    problem = step_problem(graddiv=graddiv, u_in=u_in, **kwargs)
    state = initial_state(problem, u0=lambda x, t: np.tile([u_in, 0.0], (len(x), 1)))
    try:
        solve_steady(problem, state)
        converged, message = True, ""
    except NonConvergenceError as exc:
        converged, message = False, str(exc)
        log.warning("step demo (graddiv=%s) did not converge: %s", graddiv, exc)
    nV = problem.V.n_dofs
    ux = state.u[:nV]
    x = problem.V.support_points
    inside = np.abs(x[:, 0]) < 0.5 - 1e-12
    u_max = float(ux[inside].max()) if np.any(inside) else float(ux.max())
    limit = u_in / eps_step
    return StepResult(graddiv=graddiv, converged=converged,
                      continuity_l2=continuity_l2_norm(problem, state),
                      overshoot=max(u_max - limit, 0.0), u_max=u_max,
                      problem=problem, state=state, message=message)


def compare_graddiv(**kwargs):
    """Run the step case without and with grad-div; returns (without, with)."""
    return run_step_case(graddiv=False, **kwargs), run_step_case(graddiv=True, **kwargs)
