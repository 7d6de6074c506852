"""Multicontinuum homogenization for diffusion in perforated channel domains."""

__version__ = "0.1.0"

from .geometry import build_mesh, build_structure, oversample_region  # noqa: E402
from .reference import solve_reference  # noqa: E402
from .cell_problems import solve_cell_problems  # noqa: E402
from .upscaling import upscale  # noqa: E402
from .macro import assemble_macro, solve_macro  # noqa: E402
from .experiments import ExperimentConfig, relative_error, run_case, sweep  # noqa: E402

__all__ = [
    "build_mesh", "build_structure", "oversample_region", "solve_reference",
    "solve_cell_problems", "upscale", "assemble_macro", "solve_macro",
    "ExperimentConfig", "relative_error", "run_case", "sweep",
]
