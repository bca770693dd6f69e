"""Legacy ASCII VTK writer and a small reader used to check round trips."""

from __future__ import annotations

import numpy as np

# lexicographic vertex order (x fastest) -> VTK counter-clockwise order
_VTK_ORDER = {2: [0, 1, 3, 2], 3: [0, 1, 3, 2, 4, 5, 7, 6]}
_VTK_TYPE = {2: 9, 3: 12}  # VTK_QUAD, VTK_HEXAHEDRON


def write_vtk(mesh, fields, path, title="vansfem output"):
    """Write an unstructured grid with point data.

    ``fields`` maps names to per-vertex arrays: shape (n_nodes,) for scalars
    or (n_nodes, dim) for vectors (padded to three components). An empty
    mapping gives a file with geometry only.
    """
    pts = np.asarray(mesh.node_coords, dtype=float)
    n, dim = pts.shape
    cells = np.asarray(mesh.cells)[:, _VTK_ORDER[dim]]
    pts3 = np.hstack([pts, np.zeros((n, 3 - dim))])
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n} double"]
    lines += [" ".join(repr(float(v)) for v in p) for p in pts3]
    k = cells.shape[1]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines += [f"{k} " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(_VTK_TYPE[dim])] * len(cells)
    if fields:
        lines.append(f"POINT_DATA {n}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape[0] != n:
                raise ValueError(f"field {name!r} has {values.shape[0]} values for {n} points")
            if values.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(float(v)) for v in values]
            else:
                vec = np.hstack([values, np.zeros((n, 3 - values.shape[1]))])
                lines.append(f"VECTORS {name} double")
                lines += [" ".join(repr(float(v)) for v in row) for row in vec]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path):
    """Parse a file written by :func:`write_vtk` into points, cells and point data."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(tokens[4:])
    out = {"points": None, "cells": None, "cell_types": None, "point_data": {}}
    n_points = 0
    for line in it:
        head = line.split()
        if not head:
            continue
        if head[0] == "POINTS":
            n_points = int(head[1])
            out["points"] = np.array([[float(v) for v in next(it).split()] for _ in range(n_points)])
        elif head[0] == "CELLS":
            n = int(head[1])
            rows = [[int(v) for v in next(it).split()] for _ in range(n)]
            out["cells"] = np.array([r[1:] for r in rows])
        elif head[0] == "CELL_TYPES":
            out["cell_types"] = np.array([int(next(it)) for _ in range(int(head[1]))])
        elif head[0] == "SCALARS":
            next(it)  # lookup table
            out["point_data"][head[1]] = np.array([float(next(it)) for _ in range(n_points)])
        elif head[0] == "VECTORS":
            out["point_data"][head[1]] = np.array([[float(v) for v in next(it).split()]
                                                   for _ in range(n_points)])
    return out


def solution_point_fields(problem, state):
    """Velocity, pressure and void fraction evaluated at the mesh vertices."""
    pts = problem.mesh.node_coords
    dim = problem.dim
    nV = problem.V.n_dofs
    u = problem.V.evaluate(state.u.reshape(dim, nV).T, pts)
    p = problem.Q.evaluate(state.p, pts)
    eps = problem.E.evaluate(state.eps, pts)
    return {"velocity": u, "pressure": p, "void_fraction": eps}
