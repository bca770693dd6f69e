"""Drag closures and the semi-implicit cell drag force.

The momentum exchange written per particle is

    F = 1/2 rho C_D A_ref |u_fp - u_p| (u_fq - u_pavg)

where ``u_fp`` is the fluid velocity at the particle from the previous step
and ``u_fq`` the unknown velocity at a quadrature point. Everything except
``u_fq`` is frozen, so the force is linear in the unknown and its Jacobian is
a scalar multiple of the identity.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ConfigurationError, DomainError

log = logging.getLogger(__name__)

RE_FLOOR = 1e-12


class DragModelKind(enum.Enum):
    DIFELICE = "difelice"
    RONG = "rong"
    NONE = "none"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ConfigurationError(f"unknown drag model {name!r}; valid: difelice, rong, none") from None


def particle_reynolds(rho, u_rel, d_p, mu):
    """rho |u_rel| d_p / mu; ``u_rel`` may be a single vector or an (n, dim) array."""
    return rho * np.linalg.norm(np.asarray(u_rel, dtype=float), axis=-1) * d_p / mu


def _base_cd(re):
    return (0.63 + 4.8 / np.sqrt(re)) ** 2


def _bell(re):
    return np.exp(-((1.5 - np.log10(re)) ** 2) / 2.0)


def _check(re, eps):
    re = np.asarray(re, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if np.any(re <= 0):
        raise DomainError("particle Reynolds number must be positive")
    if np.any((eps <= 0) | (eps > 1)):
        raise DomainError("void fraction must lie in (0, 1]")
    return re, eps


def cd_difelice(re, eps):
    re, eps = _check(re, eps)
    chi = 3.7 - 0.65 * _bell(re)
    return _base_cd(re) * eps ** (2.0 - chi)


def cd_rong(re, eps):
    re, eps = _check(re, eps)
    chi = 2.65 * (eps + 1.0) - (5.3 - 3.5 * eps) * eps**2 * _bell(re)
    return _base_cd(re) * eps ** (2.0 - chi)


_CD = {DragModelKind.DIFELICE: cd_difelice, DragModelKind.RONG: cd_rong}


def particle_drag_factors(model, rho, mu, radii, u_fp, u_p, eps_p, reynolds="superficial"):
    """Per-particle 1/2 rho C_D A_ref |u_fp - u_p| (kg/s), frozen for the step.

    ``reynolds="superficial"`` evaluates Re_p on eps * |u_fp - u_p|;
    ``"interstitial"`` on |u_fp - u_p| directly.
    """
    model = DragModelKind.parse(model)
    radii = np.asarray(radii, dtype=float)
    out = np.zeros(radii.shape)
    if model is DragModelKind.NONE or radii.size == 0:
        return out
    slip = np.linalg.norm(np.asarray(u_fp) - np.asarray(u_p), axis=-1)
    eps_p = np.clip(np.asarray(eps_p, dtype=float), 1e-12, 1.0)
    if reynolds == "superficial":
        re = rho * eps_p * slip * 2 * radii / mu
    elif reynolds == "interstitial":
        re = rho * slip * 2 * radii / mu
    else:
        raise ConfigurationError(f"unknown Reynolds velocity convention {reynolds!r}")
    moving = re > RE_FLOOR
    cd = _CD[model](re[moving], eps_p[moving])
    out[moving] = 0.5 * rho * cd * np.pi * radii[moving] ** 2 * slip[moving]
    return out


@dataclass
class CellDragContext:
    """Frozen drag data for one cell; an empty cell has zero factor."""

    factor_sum: float  # sum of per-particle factors, kg/s
    up_avg: np.ndarray
    volume: float
    n_particles: int = 0

    @classmethod
    def empty(cls, volume, dim=3):
        return cls(factor_sum=0.0, up_avg=np.zeros(dim), volume=volume, n_particles=0)


def cell_drag_force(ctx, u_fq, form="B", eps=1.0, cell=None):
    """Drag force density (N/m^3) at a point and its Jacobian w.r.t. ``u_fq``."""
    u_fq = np.asarray(u_fq, dtype=float)
    if np.any(np.asarray(eps) <= 0):
        where = f" in cell {cell}" if cell is not None else ""
        raise AssemblyError(f"nonpositive void fraction{where}")
    beta = ctx.factor_sum / ctx.volume
    if str(form).upper() == "B":
        beta = beta / eps
    dim = u_fq.shape[-1]
    force = beta * (u_fq - ctx.up_avg[:dim])
    return force, beta * np.eye(dim)


def interpolate_fluid_at_particles(space, u, particles):
    """Previous-step FE velocity at each particle, (n, dim); NaN rows are outside."""
    dim = space.mesh.dim
    n = space.n_dofs
    comps = np.asarray(u).reshape(dim, n).T
    vals = space.evaluate(comps, particles.positions[:, :dim])
    bad = np.isnan(vals).any(axis=1)
    if np.any(bad):
        log.warning("%d particle(s) outside the mesh excluded from drag", int(bad.sum()))
    return vals


@dataclass
class DragField:
    """Vectorized per-cell drag data used by assembly."""

    beta: np.ndarray  # (C,) factor_sum / V_K, Form-A convention, kg/(m^3 s)
    up_avg: np.ndarray  # (C, dim)

    @classmethod
    def zero(cls, mesh):
        return cls(beta=np.zeros(mesh.n_cells), up_avg=np.zeros((mesh.n_cells, mesh.dim)))

    def context(self, cell, volume):
        return CellDragContext(factor_sum=float(self.beta[cell] * volume), up_avg=self.up_avg[cell],
                               volume=volume)


def build_drag_field(mesh, space, u_prev, eps_space, eps_nodal, particles, model, rho, mu,
                     reynolds="superficial"):
    """Per-cell frozen drag coefficients from the previous-step velocity."""
    model = DragModelKind.parse(model)
    if model is DragModelKind.NONE or particles is None or particles.count == 0:
        return DragField.zero(mesh)
    dim = mesh.dim
    cells, _ = mesh.locate(particles.positions[:, :dim])
    u_fp = interpolate_fluid_at_particles(space, u_prev, particles)
    ok = (cells >= 0) & ~np.isnan(u_fp).any(axis=1)
    eps_p = eps_space.evaluate(eps_nodal, particles.positions[ok, :dim])
    factors = particle_drag_factors(model, rho, mu, particles.radii[ok], u_fp[ok],
                                    particles.velocities[ok, :dim], eps_p, reynolds)
    c = cells[ok]
    beta = np.bincount(c, weights=factors, minlength=mesh.n_cells) / mesh.cell_measures
    counts = np.bincount(c, minlength=mesh.n_cells)
    up_sum = np.stack([np.bincount(c, weights=particles.velocities[ok, d], minlength=mesh.n_cells)
                       for d in range(dim)], axis=1)
    up_avg = np.divide(up_sum, counts[:, None], out=np.zeros_like(up_sum), where=counts[:, None] > 0)
    return DragField(beta=beta, up_avg=up_avg)
