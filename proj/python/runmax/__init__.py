"""Joint law of a diffusion and the running maximum of its first coordinate.

Thin wrapper over the compiled extension: model construction, series and
fixed-point density solvers, bridge-corrected path simulation, and the
first-passage functionals derived from the boundary trace.
"""

from ._core import (
    DensityField,
    DiffusionModel,
    WedgeGrid,
    assemble_p0,
    build_grid,
    density_from_config,
    h_function,
    hitting_density,
    simulate,
    solve_volterra,
    wedge_kernel,
)

__all__ = [
    "DensityField",
    "DiffusionModel",
    "WedgeGrid",
    "assemble_p0",
    "build_grid",
    "density_from_config",
    "h_function",
    "hitting_density",
    "simulate",
    "solve_volterra",
    "wedge_kernel",
]
