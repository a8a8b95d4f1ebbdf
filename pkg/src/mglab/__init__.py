"""mglab: a multigrid laboratory for 2D variable-coefficient diffusion.

Classical two-grid/V/W multigrid with operator-dependent (Black-Box)
prolongation, a trainable prolongation network optimized through a block
Fourier surrogate of the two-grid error propagation norm, and the
experiment harness reproducing the reference convergence studies.
"""

from .problem import (
    BoundarySpec,
    DiffusionField,
    ProblemDistribution,
    StencilOperator,
    discretize,
    mask_disk,
    sample_field,
    tile_block_periodic,
)
from .prolong import (
    LocalStencilPatch,
    ProlongationMap,
    blackbox_weights,
    build_prolongation,
    complete_corners,
    extract_patch,
    normalize_rows,
)
from .mg_core import (
    CycleConfig,
    GridHierarchy,
    apply,
    asymptotic_factor,
    build_hierarchy,
    dense_error_propagation,
    galerkin,
    gauss_seidel,
    solve_cycle,
    spectral_radius,
)
from .fourier import FourierModeSet, ModeSymbols, frobenius_loss

__version__ = "0.1.0"
