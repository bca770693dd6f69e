"""Solution storage, BDF coefficients and boundary-condition bookkeeping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .errors import ConfigurationError, StateError
from .fem import FACE_TAGS, FeSpace

log = logging.getLogger(__name__)


@dataclass
class SolutionState:
    """Coefficient vectors at the current and two previous time levels.

    Velocity is stored component-major: ``u[c * n + i]`` is component ``c`` at
    velocity DoF ``i``. Pressure is kinematic (p / rho_f).
    """

    u: np.ndarray
    p: np.ndarray
    eps: np.ndarray
    u_prev1: Optional[np.ndarray] = None
    u_prev2: Optional[np.ndarray] = None
    eps_prev1: Optional[np.ndarray] = None
    eps_prev2: Optional[np.ndarray] = None
    t: float = 0.0
    dt: float = 0.0
    steps_taken: int = 0

    def copy(self):
        def c(a):
            return None if a is None else a.copy()

        return SolutionState(
            u=self.u.copy(), p=self.p.copy(), eps=self.eps.copy(),
            u_prev1=c(self.u_prev1), u_prev2=c(self.u_prev2),
            eps_prev1=c(self.eps_prev1), eps_prev2=c(self.eps_prev2),
            t=self.t, dt=self.dt, steps_taken=self.steps_taken,
        )

    def rotate(self):
        """Shift current levels into history before solving a new step."""
        self.u_prev2, self.u_prev1 = self.u_prev1, self.u.copy()
        self.eps_prev2, self.eps_prev1 = self.eps_prev1, self.eps.copy()


@dataclass(frozen=True)
class BdfScheme:
    order: int = 1

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ConfigurationError(f"BDF order must be 1 or 2, got {self.order}")

    def coefficients(self, dt):
        """Weights on (current, prev1[, prev2]), already divided by dt."""
        if self.order == 1:
            c = np.array([1.0, -1.0])
        else:
            c = np.array([1.5, -2.0, 0.5])
        return c / dt


def bdf_time_derivative(scheme, current, prev1, prev2=None, dt=None):
    """Backward-difference time derivative of a field sampled at equal steps."""
    if dt is None or dt <= 0:
        raise StateError("time step must be positive")
    if prev1 is None or (scheme.order == 2 and prev2 is None):
        raise StateError(f"BDF{scheme.order} needs {scheme.order} previous level(s)")
    c = scheme.coefficients(dt)
    out = c[0] * np.asarray(current) + c[1] * np.asarray(prev1)
    if scheme.order == 2:
        out = out + c[2] * np.asarray(prev2)
    return out


def interpolate_field(space: FeSpace, f, t=0.0):
    """Nodal interpolant; vector-valued ``f`` comes back component-major."""
    vals = np.asarray(f(space.support_points, t), dtype=float)
    if vals.ndim == 0:
        return np.full(space.n_dofs, float(vals))
    if vals.ndim == 2:
        return vals.T.ravel()
    return vals


KINDS = ("dirichlet", "slip", "outflow")


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition on one tagged face.

    ``function(x, t)`` returns an (N, dim) array of prescribed velocities for
    ``dirichlet``; slip fixes the face-normal component to zero.
    """

    tag: str
    kind: str
    function: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}; valid: {KINDS}")
        if self.tag not in FACE_TAGS:
            raise ConfigurationError(f"unknown boundary tag {self.tag!r}")
        if self.kind == "dirichlet" and self.function is None:
            raise ConfigurationError(f"dirichlet condition on {self.tag} needs a function")


def velocity_constraints(space: FeSpace, bcs, t):
    """Constrained velocity DoFs (component-major indices) and their values.

    Dirichlet wins over slip where both touch a DoF (edges and corners).
    """
    n = space.n_dofs
    dim = space.mesh.dim
    values = {}
    slip = {}
    for bc in bcs:
        if bc.kind == "outflow":
            continue
        dofs = space.boundary_dofs(bc.tag)
        if bc.kind == "dirichlet":
            g = np.asarray(bc.function(space.support_points[dofs], t), dtype=float)
            g = np.broadcast_to(g, (dofs.size, dim))
            for c in range(dim):
                for i, v in zip(c * n + dofs, g[:, c]):
                    values[int(i)] = float(v)
        else:
            c = FACE_TAGS.index(bc.tag) // 2
            for i in c * n + dofs:
                slip[int(i)] = 0.0
    conflicts = [i for i in slip if i in values]
    if conflicts:
        log.debug("%d DoFs carry both slip and dirichlet; dirichlet kept", len(conflicts))
    for i, v in slip.items():
        values.setdefault(i, v)
    if not values:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    idx = np.fromiter(values.keys(), dtype=np.int64)
    order = np.argsort(idx)
    return idx[order], np.fromiter(values.values(), dtype=float)[order]


def apply_dirichlet(matrix, rhs, dofs, values):
    """Replace constrained rows by identity rows with the prescribed values.

    Applying the same constraints twice gives the same system.
    """
    A = sparse.csr_matrix(matrix, copy=True)
    b = np.array(rhs, dtype=float, copy=True)
    dofs = np.asarray(dofs, dtype=np.int64)
    if dofs.size == 0:
        return A, b
    mask = np.zeros(A.shape[0], dtype=bool)
    mask[dofs] = True
    row_of_entry = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    hit = mask[row_of_entry]
    A.data[hit] = 0.0
    A.data[hit & (A.indices == row_of_entry)] = 1.0
    # rows whose diagonal is not in the sparsity pattern
    diag = A.diagonal()
    missing = dofs[diag[dofs] != 1.0]
    if missing.size:
        A = A + sparse.csr_matrix((np.ones(missing.size), (missing, missing)), shape=A.shape)
    A.eliminate_zeros()
    b[dofs] = values
    return A, b
