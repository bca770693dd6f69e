"""Stabilized high-order finite elements for the volume-averaged Navier–Stokes equations.

Submodules: ``fem`` (meshes, Lagrange spaces, quadrature), ``state``,
``voidfraction``, ``drag``, ``solver``, ``mms``, ``packedbed``, ``stepdemo``,
``output`` and ``cli``.
"""

__version__ = "0.1.0"
