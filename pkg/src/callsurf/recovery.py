"""End-to-end surface recovery pipelines.

Two modes share the same constraint and LP machinery and differ only in
the basis and objective weights:

* tensor mode: one orthonormal tensor-polynomial basis for the whole
  surface, with weight (maturity order + strike order) per column so that
  high-degree, oscillation-prone columns are penalised more;
* per-slice mode: each slice carries its own mollified bid/mid quote
  curves plus a few low-order polynomials, with unit weights and the fit
  held inside the bid-ask band.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import analytics
from .constraints import ToleranceSpec, assemble
from .errors import InfeasibleError, SolverStateError, ValidationError
from .lp_core import LpSolution, SolverOptions, recover_x, solve, to_lp
from .market_data import build_fine_grid
from .poly_basis import dedup_nodes, orthonormal_family, tensor_matrix
from .shape_basis import shape_basis_matrix

SPARSITY_RTOL = 1e-8


def weights_tensor(n_t, n_k):
    """Objective weight per tensor column: maturity order + strike order.

    Column i = (y-1)*n_k + z (orders y in 1..n_t, z in 1..n_k, both equal
    to degree + 1) gets weight y + z; the constant column weighs 2.
    """
    if n_t < 1 or n_k < 1:
        raise ValidationError("polynomial order counts must be at least 1")
    y = np.arange(1, n_t + 1)
    z = np.arange(1, n_k + 1)
    return (y[:, None] + z[None, :]).reshape(-1).astype(float)


@dataclass(frozen=True)
class RecoveryConfig:
    """Everything one recovery run needs besides the quotes."""

    mode: str = "tensor_wl1"            # "tensor_wl1" | "fx_per_slice"
    m_t: int = 11
    m_k: int = 104
    n_t: int = 7                         # tensor mode
    n_k: int = 14
    alphas: tuple | None = None          # per-slice mode; None = auto ladder
    poly_orders: int = 3
    tolerance: ToleranceSpec = field(default_factory=ToleranceSpec)
    strike_extension: float = 0.15
    maturity_extension: float | None = None
    enforce_extended: bool = True
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.mode not in ("tensor_wl1", "fx_per_slice"):
            raise ValidationError(f"unknown recovery mode {self.mode!r}")
        if self.mode == "tensor_wl1" and self.n_t * self.n_k > self.m_t * self.m_k:
            raise ValidationError("basis larger than the grid: need n_t*n_k <= m_t*m_k")


@dataclass(frozen=True)
class SparsityReport:
    n_active: int
    n_total: int
    threshold: float


@dataclass(frozen=True)
class RecoveredSurface:
    coefficients: np.ndarray
    prices: np.ndarray                  # (M_T, M_K)
    grid: object                        # MarketStructure
    basis: object                       # BasisMatrix
    residuals: np.ndarray               # fitted minus target, per quote
    sparsity: SparsityReport
    audit: analytics.AuditReport
    solution: LpSolution

    def diagnostics(self, paper_orientation=False):
        return analytics.compute_diagnostics(self.prices, self.grid, paper_orientation)


def _run_lp(system, weights, cfg, mode_name):
    lp = to_lp(system, weights)
    sol = solve(lp, cfg.solver)
    if sol.status == "infeasible":
        families = _family_violations(system, sol)
        worst = max(families, key=families.get) if families else None
        raise InfeasibleError(
            f"{mode_name} recovery is infeasible; worst violation in family {worst!r} "
            f"(widen the tolerance or check the quotes for arbitrage)",
            family_violations=families,
            worst_family=worst,
        )
    if sol.status != "optimal":
        raise SolverStateError(f"solver stopped with status {sol.status!r} after {sol.iterations} iterations")
    return sol


def _family_violations(system, sol):
    """Worst violation per constraint family at the least-infeasible point."""
    x = sol.u - sol.v
    out = {}
    fit = np.abs(system.A @ x - system.c_target) - system.epsilon
    if fit.size:
        out["fit"] = float(np.max(fit))
    resid = system.L @ x - system.J
    for name, (start, stop) in system.blocks.items():
        if stop > start:
            out[name] = float(np.max(resid[start:stop]))
    return {k: v for k, v in out.items() if v > 0.0} or out


def _finish(quote_set, cfg, grid, basis, system, sol):
    x = recover_x(sol)
    prices = (basis.values @ x).reshape(grid.n_slices, grid.n_strikes)
    residuals = system.A @ x - system.c_target
    band = system.epsilon + 1e-9
    if np.any(np.abs(residuals) > band):
        worst = float(np.max(np.abs(residuals) - system.epsilon))
        raise SolverStateError(f"fit residuals exceed the tolerance band by {worst:.3e}")
    threshold = SPARSITY_RTOL * float(np.max(np.abs(x), initial=0.0))
    report = analytics.audit(prices, grid)
    report = replace(
        report,
        solver_status=sol.status,
        solver_objective=sol.objective,
        solver_iterations=sol.iterations,
    )
    return RecoveredSurface(
        coefficients=x,
        prices=prices,
        grid=grid,
        basis=basis,
        residuals=residuals,
        sparsity=SparsityReport(
            n_active=int(np.sum(np.abs(x) > threshold)),
            n_total=x.size,
            threshold=threshold,
        ),
        audit=report,
        solution=sol,
    )


def recover_tensor(quote_set, cfg):
    """Whole-surface recovery on the tensor-polynomial basis."""
    if cfg.mode != "tensor_wl1":
        raise ValidationError("config mode must be 'tensor_wl1'")
    grid = build_fine_grid(
        quote_set, cfg.m_k, cfg.m_t,
        strike_extension=cfg.strike_extension,
        maturity_extension=cfg.maturity_extension,
    )
    fam_t = orthonormal_family(grid.maturities, cfg.n_t)
    fam_k = orthonormal_family(dedup_nodes(grid.strikes.ravel()), cfg.n_k)
    basis = tensor_matrix(fam_t, fam_k, grid)
    system = assemble(grid, basis, quote_set, cfg.tolerance, cfg.enforce_extended)
    sol = _run_lp(system, basis.column_weights, cfg, "tensor")
    return _finish(quote_set, cfg, grid, basis, system, sol)


def recover_fx(quote_set, cfg):
    """Per-slice recovery on the mollified-quote basis, fit inside bid-ask."""
    if cfg.mode != "fx_per_slice":
        raise ValidationError("config mode must be 'fx_per_slice'")
    tol = cfg.tolerance if cfg.tolerance.mode == "bidask" else ToleranceSpec(mode="bidask")
    grid = build_fine_grid(
        quote_set, cfg.m_k, cfg.m_t,
        strike_extension=cfg.strike_extension,
        maturity_extension=cfg.maturity_extension,
    )
    basis, _ = shape_basis_matrix(quote_set, grid, cfg.alphas, cfg.poly_orders)
    system = assemble(grid, basis, quote_set, tol, cfg.enforce_extended)
    sol = _run_lp(system, basis.column_weights, cfg, "per-slice")
    return _finish(quote_set, cfg, grid, basis, system, sol)


def recover(quote_set, cfg):
    """Dispatch on the configured mode."""
    if cfg.mode == "tensor_wl1":
        return recover_tensor(quote_set, cfg)
    return recover_fx(quote_set, cfg)
