"""Structured box meshes, tensor-product Lagrange bases and Gauss quadrature.

Everything here is geometry-and-basis plumbing for the assembly code in
:mod:`vansfem.solver`. Cells are axis-aligned boxes, so the reference-to-
physical map is a diagonal scaling and all derivatives transform by the
cell extents alone.

Local orderings are lexicographic with x running fastest, both for cell
vertices and for the (k+1)^dim nodal DoFs of a degree-k cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError

MAX_DEGREE = 4

FACE_TAGS = ("x-min", "x-max", "y-min", "y-max", "z-min", "z-max")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform tensor grid of axis-aligned boxes."""

    dim: int
    lower: np.ndarray
    upper: np.ndarray
    shape: tuple
    node_coords: np.ndarray
    cells: np.ndarray
    boundary_facets: np.ndarray  # rows of (cell, local face)
    boundary_tags: tuple
    cell_measures: np.ndarray
    cell_lower: np.ndarray
    cell_extent: np.ndarray

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def n_nodes(self):
        return self.node_coords.shape[0]

    @property
    def spacing(self):
        return (self.upper - self.lower) / np.asarray(self.shape)

    @property
    def measure(self):
        return float(np.prod(self.upper - self.lower))

    def cell_index(self, ijk):
        """Flat index of the cell with integer coordinates ``ijk`` (..., dim)."""
        ijk = np.asarray(ijk)
        idx = np.zeros(ijk.shape[:-1], dtype=np.int64)
        stride = 1
        for d in range(self.dim):
            idx = idx + ijk[..., d] * stride
            stride *= self.shape[d]
        return idx

    def cell_multi_index(self):
        """Integer (i, j[, k]) coordinates of every cell."""
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=-1)

    def facets_with_tag(self, tag):
        sel = [i for i, t in enumerate(self.boundary_tags) if t == tag]
        return self.boundary_facets[sel]

    def locate(self, points):
        """Owning cell and reference coordinates for each point.

        Cells own the half-open interval [lo, hi) on every axis; the upper
        domain face belongs to the last cell. Points outside get cell -1.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.spacing
        rel = (points - self.lower) / h
        ijk = np.floor(rel).astype(np.int64)
        n = np.asarray(self.shape)
        on_top = np.isclose(points, self.upper, rtol=0.0, atol=1e-12 * h) & (ijk == n)
        ijk = np.where(on_top, n - 1, ijk)
        inside = np.all((ijk >= 0) & (ijk < n), axis=1)
        ijk_safe = np.clip(ijk, 0, n - 1)
        cells = np.where(inside, self.cell_index(ijk_safe), -1)
        ref = np.clip(rel - ijk_safe, 0.0, 1.0)
        return cells, ref


def build_box_mesh(lower, upper, subdivisions):
    """Uniform box mesh of ``subdivisions`` cells per axis over [lower, upper]."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    subdivisions = tuple(int(s) for s in np.atleast_1d(subdivisions))
    dim = lower.size
    if dim not in (2, 3) or upper.size != dim or len(subdivisions) != dim:
        raise ConfigurationError("mesh must be 2D or 3D with matching bounds and subdivisions")
    if np.any(upper <= lower):
        raise ConfigurationError(f"upper {upper} must exceed lower {lower} on every axis")
    if min(subdivisions) < 1:
        raise ConfigurationError(f"subdivisions must be >= 1, got {subdivisions}")

    axes = [np.linspace(lower[d], upper[d], subdivisions[d] + 1) for d in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    node_coords = np.stack([g.ravel(order="F") for g in grids], axis=-1)

    nn = [s + 1 for s in subdivisions]
    cgrid = np.meshgrid(*[np.arange(s) for s in subdivisions], indexing="ij")
    cijk = np.stack([g.ravel(order="F") for g in cgrid], axis=-1)
    corners = np.array(list(itertools.product((0, 1), repeat=dim)))[:, ::-1]
    node_strides = np.cumprod([1] + nn[:-1])
    cells = ((cijk[:, None, :] + corners[None, :, :]) * node_strides).sum(axis=-1)

    h = (upper - lower) / np.asarray(subdivisions)
    n_cells = cells.shape[0]
    cell_lower = lower + cijk * h
    cell_extent = np.broadcast_to(h, (n_cells, dim)).copy()
    cell_measures = np.prod(cell_extent, axis=1)

    facets, tags = [], []
    for d in range(dim):
        for side in (0, 1):
            target = 0 if side == 0 else subdivisions[d] - 1
            for c in np.flatnonzero(cijk[:, d] == target):
                facets.append((c, 2 * d + side))
                tags.append(FACE_TAGS[2 * d + side])
    return Mesh(
        dim=dim,
        lower=lower,
        upper=upper,
        shape=subdivisions,
        node_coords=node_coords,
        cells=cells,
        boundary_facets=np.array(facets, dtype=np.int64).reshape(-1, 2),
        boundary_tags=tuple(tags),
        cell_measures=cell_measures,
        cell_lower=cell_lower,
        cell_extent=cell_extent,
    )


# ---------------------------------------------------------------------------
# reference Lagrange basis


@lru_cache(maxsize=None)
def _lagrange_1d_coeffs(k):
    nodes = np.linspace(0.0, 1.0, k + 1)
    vander = np.vander(nodes, k + 1, increasing=True)
    # column j holds the monomial coefficients of the j-th cardinal polynomial
    return np.linalg.solve(vander, np.eye(k + 1))


def _lagrange_1d(k, x):
    """Values, first and second derivatives of the 1D cardinal basis at x."""
    coeffs = _lagrange_1d_coeffs(k)
    x = np.asarray(x, dtype=float)
    out = []
    for deriv in range(3):
        c = np.polynomial.polynomial.polyder(coeffs, deriv, axis=0) if deriv else coeffs
        if c.shape[0] == 0:
            out.append(np.zeros(x.shape + (k + 1,)))
        else:
            out.append(np.polynomial.polynomial.polyval(x, c).T if x.ndim else np.polynomial.polynomial.polyval(x, c))
    return out


def _check_degree(k):
    if not 1 <= int(k) <= MAX_DEGREE:
        raise ConfigurationError(f"Lagrange degree must be in 1..{MAX_DEGREE}, got {k}")


def tabulate(k, ref_points):
    """Tabulate the tensor Lagrange basis of degree ``k`` at reference points.

    Returns ``(values, grads, second)`` with shapes ``(P, n)``, ``(P, n, dim)``
    and ``(P, n, dim)``; ``second[..., d]`` is the pure second derivative
    along axis ``d`` (the only ones needed for a Laplacian on boxes).
    """
    _check_degree(k)
    pts = np.atleast_2d(np.asarray(ref_points, dtype=float))
    n_pts, dim = pts.shape
    per_axis = []
    for d in range(dim):
        v, dv, d2v = _lagrange_1d(k, pts[:, d])
        per_axis.append((np.atleast_2d(v), np.atleast_2d(dv), np.atleast_2d(d2v)))
    # lexicographic, x fastest: index = i + (k+1) j + (k+1)^2 l
    idx = np.array(list(itertools.product(range(k + 1), repeat=dim)))[:, ::-1]
    nb = idx.shape[0]
    values = np.ones((n_pts, nb))
    grads = np.ones((n_pts, nb, dim))
    second = np.ones((n_pts, nb, dim))
    for d in range(dim):
        v, dv, d2v = (arr[:, idx[:, d]] for arr in per_axis[d])
        values *= v
        for e in range(dim):
            grads[:, :, e] *= dv if e == d else v
            second[:, :, e] *= d2v if e == d else v
    return values, grads, second


def lagrange_eval(k, ref_point):
    """Values and reference gradients of every degree-``k`` basis function."""
    p = np.asarray(ref_point, dtype=float)
    if np.any(p < -1e-14) or np.any(p > 1 + 1e-14):
        raise DomainError(f"reference point {p} outside [0,1]^{p.size}")
    values, grads, _ = tabulate(k, p[None, :])
    return values[0], grads[0]


def reference_nodes(k, dim):
    """Equispaced reference support points in the local DoF order."""
    nodes = np.linspace(0.0, 1.0, k + 1)
    idx = np.array(list(itertools.product(range(k + 1), repeat=dim)))[:, ::-1]
    return nodes[idx]


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int = field(default=1)

    @property
    def n_points(self):
        return self.weights.size


def gauss_rule(n_points_per_axis, dim=2):
    """Tensor Gauss–Legendre rule on [0,1]^dim, exact to degree 2n-1 per axis."""
    n = int(n_points_per_axis)
    if n < 1:
        raise ConfigurationError("quadrature needs at least one point per axis")
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    idx = np.array(list(itertools.product(range(n), repeat=dim)))[:, ::-1]
    points = x[idx]
    weights = np.prod(w[idx], axis=1)
    return QuadratureRule(points=points, weights=weights, degree=2 * n - 1)


# ---------------------------------------------------------------------------
# finite element space


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Continuous scalar Q_k space on a box mesh."""

    mesh: Mesh
    degree: int
    n_dofs: int
    cell_dofs: np.ndarray
    support_points: np.ndarray
    grid_shape: tuple

    @property
    def dofs_per_cell(self):
        return self.cell_dofs.shape[1]

    def boundary_dofs(self, tag):
        """Sorted DoF indices lying on the face with the given tag."""
        d = FACE_TAGS.index(tag) // 2
        side = FACE_TAGS.index(tag) % 2
        ijk = self.dof_multi_index()
        target = 0 if side == 0 else self.grid_shape[d] - 1
        return np.flatnonzero(ijk[:, d] == target)

    def dof_multi_index(self):
        grids = np.meshgrid(*[np.arange(n) for n in self.grid_shape], indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=-1)

    def interpolate(self, f):
        return np.asarray(f(self.support_points), dtype=float)

    def evaluate(self, coeffs, points):
        """Evaluate the FE function(s) at physical points.

        ``coeffs`` may be ``(n_dofs,)`` or ``(n_dofs, m)``. Points outside the
        mesh produce NaN.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        cells, ref = self.mesh.locate(points)
        inside = cells >= 0
        out_shape = (cells.size,) + coeffs.shape[1:]
        out = np.full(out_shape, np.nan)
        if np.any(inside):
            vals, _, _ = tabulate(self.degree, ref[inside])
            local = coeffs[self.cell_dofs[cells[inside]]]
            out[inside] = np.einsum("pn,pn...->p...", vals, local)
        return out

    def evaluate_gradient(self, coeffs, points):
        coeffs = np.asarray(coeffs, dtype=float)
        cells, ref = self.mesh.locate(points)
        inside = cells >= 0
        dim = self.mesh.dim
        out = np.full((cells.size, dim), np.nan)
        if np.any(inside):
            _, grads, _ = tabulate(self.degree, ref[inside])
            grads = grads / self.mesh.cell_extent[cells[inside]][:, None, :]
            local = coeffs[self.cell_dofs[cells[inside]]]
            out[inside] = np.einsum("pnd,pn->pd", grads, local)
        return out


def fe_space(mesh, degree):
    """Build the continuous degree-``degree`` Lagrange space on ``mesh``."""
    _check_degree(degree)
    k = int(degree)
    dim = mesh.dim
    grid_shape = tuple(k * s + 1 for s in mesh.shape)
    axes = [np.linspace(mesh.lower[d], mesh.upper[d], grid_shape[d]) for d in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    support = np.stack([g.ravel(order="F") for g in grids], axis=-1)

    strides = np.cumprod([1] + list(grid_shape[:-1]))
    local = np.array(list(itertools.product(range(k + 1), repeat=dim)))[:, ::-1]
    cijk = mesh.cell_multi_index()
    cell_dofs = ((k * cijk[:, None, :] + local[None, :, :]) * strides).sum(axis=-1)
    return FeSpace(
        mesh=mesh,
        degree=k,
        n_dofs=int(np.prod(grid_shape)),
        cell_dofs=cell_dofs,
        support_points=support,
        grid_shape=grid_shape,
    )


@dataclass(frozen=True, eq=False)
class CellValues:
    """Basis data mapped to every cell at a fixed quadrature rule.

    ``jxw`` is (C, Q); ``values`` is (Q, n) and shared by all cells;
    ``grads`` and ``laplacians`` are (C, Q, n, dim) and (C, Q, n).
    """

    values: np.ndarray
    grads: np.ndarray
    laplacians: np.ndarray
    jxw: np.ndarray
    points: np.ndarray


def cell_values(space, rule):
    mesh = space.mesh
    vals, grads, second = tabulate(space.degree, rule.points)
    inv_h = 1.0 / mesh.cell_extent  # (C, dim)
    pgrads = grads[None, :, :, :] * inv_h[:, None, None, :]
    lap = np.einsum("qnd,cd->cqn", second, inv_h**2)
    jxw = mesh.cell_measures[:, None] * rule.weights[None, :]
    points = mesh.cell_lower[:, None, :] + rule.points[None, :, :] * mesh.cell_extent[:, None, :]
    return CellValues(values=vals, grads=pgrads, laplacians=lap, jxw=jxw, points=points)


def mass_matrix(space, rule=None):
    """Consistent mass matrix (CSR)."""
    from scipy import sparse

    rule = rule or gauss_rule(space.degree + 1, space.mesh.dim)
    cv = cell_values(space, rule)
    local = np.einsum("cq,qa,qb->cab", cv.jxw, cv.values, cv.values)
    return _scatter(space, local)


def stiffness_matrix(space, rule=None):
    """Laplace stiffness matrix (CSR)."""
    rule = rule or gauss_rule(space.degree + 1, space.mesh.dim)
    cv = cell_values(space, rule)
    local = np.einsum("cq,cqad,cqbd->cab", cv.jxw, cv.grads, cv.grads)
    return _scatter(space, local)


def _scatter(space, local):
    from scipy import sparse

    dofs = space.cell_dofs
    n = dofs.shape[1]
    rows = np.repeat(dofs, n, axis=1).ravel()
    cols = np.tile(dofs, (1, n)).ravel()
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs))
    return mat.tocsr()
