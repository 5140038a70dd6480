"""Arbitrage-free call-option surface recovery from sparse market quotes.

The surface is written as a sparse combination of basis functions, fitted
to quotes inside a tolerance band, and kept free of butterfly, calendar
and vertical-spread arbitrage by a linear inequality system; the whole
problem is a weighted-l1 minimisation solved as a linear program.
"""

from .analytics import AuditReport, SurfaceDiagnostics, audit, compute_diagnostics, implied_vol, local_vol
from .analytics import density
from .constraints import ConstraintSystem, ToleranceSpec, assemble
from .errors import (
    CallSurfError,
    ConsistencyError,
    GridError,
    InfeasibleError,
    NoSolutionError,
    ParseError,
    RankError,
    SolverStateError,
    ValidationError,
)
from .lp_core import LpProblem, LpSolution, SolverOptions, recover_x, solve, to_lp
from .market_data import (
    Curve,
    IngestionOptions,
    MarketStructure,
    Quote,
    QuoteKind,
    QuoteSet,
    build_fine_grid,
    discount,
    forward,
    load_curves,
    load_quotes,
)
from .poly_basis import BasisMatrix, OrthonormalFamily, fit_submatrix, orthonormal_family, tensor_matrix
from .recovery import (
    RecoveredSurface,
    RecoveryConfig,
    recover,
    recover_fx,
    recover_tensor,
    weights_tensor,
)
from .shape_basis import Mollifier, ShapeFunction, mollifier_eval, mollify, shape_basis_matrix

__version__ = "0.1.0"
