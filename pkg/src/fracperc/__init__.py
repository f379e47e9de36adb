"""Mandelbrot fractal percolation: seeded simulation and finite-level analysis."""

__version__ = "0.1.0"

from .construction import (  # noqa: E402
    BatchGenerator,
    CellIndex,
    FractalProcess,
    LevelConfiguration,
    ProcessParams,
    ResourceBudgetError,
    cell_box,
    generate_level,
    generate_levels,
    retain_decision,
    subprocess_view,
)
from .connectivity import label_components, left_right_crossing, rectangle_crossing, shell_crossing  # noqa: E402
from .curves import (  # noqa: E402
    AnnulusSpec,
    Curve,
    InterfaceSet,
    frechet_distance,
    lowest_crossing,
    trace_interfaces,
)
from .dimension import box_count_series, fit_box_dimension, theoretical_dimension  # noqa: E402
from .montecarlo import ExperimentPlan, run_plan  # noqa: E402
