"""Post-recovery diagnostics: implied vol, density, local vol, audit.

The audit recomputes every no-arbitrage condition directly from the price
grid.  It never looks at the constraint matrices, so it cross-validates
the assembled system: a recovered surface passes the audit exactly when
its prices satisfy the same conditions the LP enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .black_scholes import call_price, vega
from .errors import NoSolutionError, ValidationError

AUDIT_TOL = -1e-8

#: implied-vol search bracket
IV_MIN, IV_MAX = 1e-6, 5.0


# ---------------------------------------------------------------------------
# implied volatility
# ---------------------------------------------------------------------------

def implied_vol(price, spot, strike, maturity, rate=0.0, dividend=0.0):
    """Invert the call price for sigma by bisection plus Newton polish.

    The price must lie strictly between the discounted intrinsic value
    D*(F-K)^+ and the discounted forward D*F, otherwise no volatility
    reproduces it and a NoSolutionError names the violated bound.
    """
    if not maturity > 0.0:
        raise ValidationError("maturity must be positive")
    fwd = spot * math.exp((rate - dividend) * maturity)
    disc = math.exp(-rate * maturity)
    lower = disc * max(fwd - strike, 0.0)
    upper = disc * fwd
    if price <= lower:
        raise NoSolutionError(f"price {price} at or below the intrinsic lower bound {lower}")
    if price >= upper:
        raise NoSolutionError(f"price {price} at or above the upper bound {upper} (discounted forward)")

    lo, hi = IV_MIN, IV_MAX
    f_lo = call_price(spot, strike, maturity, rate, dividend, lo) - price
    f_hi = call_price(spot, strike, maturity, rate, dividend, hi) - price
    if f_lo > 0.0:
        raise NoSolutionError(f"price {price} below the sigma={IV_MIN} price; effectively at the lower bound")
    if f_hi < 0.0:
        raise NoSolutionError(f"price {price} above the sigma={IV_MAX} price; effectively at the upper bound")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if call_price(spot, strike, maturity, rate, dividend, mid) > price:
            hi = mid
        else:
            lo = mid
    sigma = 0.5 * (lo + hi)
    for _ in range(2):
        v = vega(spot, strike, maturity, rate, dividend, sigma)
        if v <= 0.0:
            break
        step = (call_price(spot, strike, maturity, rate, dividend, sigma) - price) / v
        sigma = min(max(sigma - step, IV_MIN), IV_MAX)
    return sigma


def implied_vol_grid(prices, grid):
    """Vectorised inversion on the fine grid; NaN where no solution exists."""
    prices = np.asarray(prices, dtype=float)
    out = np.full(prices.shape, np.nan)
    for m, T in enumerate(grid.maturities):
        r = grid.rate_curve(T)
        q = grid.dividend_curve(T)
        K = grid.strikes[m]
        fwd = grid.forwards[m]
        disc = grid.discounts[m]
        P = prices[m]
        ok = (P > disc * np.maximum(fwd - K, 0.0)) & (P < disc * fwd)
        if not np.any(ok):
            continue
        lo = np.full(K.shape, IV_MIN)
        hi = np.full(K.shape, IV_MAX)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            above = call_price(grid.spot, K, T, r, q, mid) > P
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        sigma = 0.5 * (lo + hi)
        below = call_price(grid.spot, K, T, r, q, np.full(K.shape, IV_MIN)) > P
        above = call_price(grid.spot, K, T, r, q, np.full(K.shape, IV_MAX)) < P
        ok &= ~(below | above)
        out[m, ok] = sigma[ok]
    return out


# ---------------------------------------------------------------------------
# finite-difference surfaces
# ---------------------------------------------------------------------------

def density_grid(prices, strikes):
    """d2C/dK2 by nonuniform central differences; end columns copy their
    adjacent interior value."""
    prices = np.asarray(prices, dtype=float)
    strikes = np.asarray(strikes, dtype=float)
    out = np.empty_like(prices)
    dl = strikes[:, 1:-1] - strikes[:, :-2]
    dr = strikes[:, 2:] - strikes[:, 1:-1]
    out[:, 1:-1] = 2.0 * (
        prices[:, :-2] / (dl * (dl + dr))
        - prices[:, 1:-1] / (dl * dr)
        + prices[:, 2:] / (dr * (dl + dr))
    )
    out[:, 0] = out[:, 1]
    out[:, -1] = out[:, -2]
    return out


def density(surface):
    """State-price density of a recovered surface (per strike unit)."""
    return density_grid(surface.prices, surface.grid.strikes)


def dcdt_grid(prices, maturities):
    """dC/dT along the calendar direction (fixed strike index): forward
    differences, backward on the final slice."""
    prices = np.asarray(prices, dtype=float)
    T = np.asarray(maturities, dtype=float)
    out = np.empty_like(prices)
    dt = np.diff(T)[:, None]
    out[:-1] = (prices[1:] - prices[:-1]) / dt
    out[-1] = (prices[-1] - prices[-2]) / dt[-1]
    return out


def local_vol(surface, paper_orientation=False):
    """Local-volatility grid sigma(K, T) = (1/K) sqrt(2 dC/dT / d2C/dK2).

    Requires zero rates and dividends (the formula drops carry terms).
    Nodes where the density or the calendar derivative is not strictly
    positive are returned as NaN markers rather than clamped numbers.
    With `paper_orientation` the quotient is flipped to d2C/dK2 over
    dC/dT for side-by-side comparison; the default orientation is the one
    consistent with a constant-volatility surface.
    """
    grid = surface.grid
    for T in grid.maturities:
        if abs(grid.rate_curve(T)) > 1e-12 or abs(grid.dividend_curve(T)) > 1e-12:
            raise ValidationError("local volatility requires zero rates and dividends")
    dens = density_grid(surface.prices, grid.strikes)
    dcdt = dcdt_grid(surface.prices, grid.maturities)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dens / dcdt if paper_orientation else dcdt / dens
        out = np.sqrt(2.0 * ratio) / grid.strikes
    out[(dens <= 0.0) | (dcdt <= 0.0)] = np.nan
    return out


# ---------------------------------------------------------------------------
# arbitrage audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FamilySlack:
    worst: float
    maturity: float
    strike: float

    def to_dict(self):
        return {"worst_slack": self.worst, "maturity": self.maturity, "strike": self.strike}


@dataclass(frozen=True)
class AuditReport:
    families: dict
    informational: dict = field(default_factory=dict)
    tolerance: float = AUDIT_TOL
    solver_status: str | None = None
    solver_objective: float | None = None
    solver_iterations: int | None = None

    @property
    def passed(self):
        return all(f.worst >= self.tolerance for f in self.families.values())

    @property
    def worst(self):
        name = min(self.families, key=lambda k: self.families[k].worst)
        return name, self.families[name]

    def to_dict(self):
        name, fam = self.worst
        out = {
            "pass": bool(self.passed),
            "tolerance": self.tolerance,
            "worst": {"family": name, **fam.to_dict()},
            "families": {k: v.to_dict() for k, v in self.families.items()},
            "informational": {k: (v.to_dict() if isinstance(v, FamilySlack) else v) for k, v in self.informational.items()},
        }
        if self.solver_status is not None:
            out["solver"] = {
                "status": self.solver_status,
                "objective": self.solver_objective,
                "iterations": self.solver_iterations,
            }
        return out


def _worst(slacks, maturities, strikes):
    """FamilySlack for the minimum entry of a (M_T, n) slack array."""
    idx = np.unravel_index(np.argmin(slacks), slacks.shape)
    return FamilySlack(
        worst=float(slacks[idx]),
        maturity=float(maturities[idx[0]]),
        strike=float(strikes[idx]),
    )


def audit(prices, grid, tolerance=AUDIT_TOL):
    """Recompute all no-arbitrage slacks from the price grid itself.

    Families mirror the assembled constraint blocks: butterfly (convexity
    with the strike-zero and infinite-strike closures), calendar, vertical
    (monotone decreasing with the low-strike cap, plus the slope lower
    bound and nonnegativity), and the single payoff bound row.  Slacks are
    nonnegative when the condition holds; `pass` requires every family's
    worst slack >= tolerance.
    """
    C = np.asarray(prices, dtype=float).reshape(grid.n_slices, grid.n_strikes)
    K = grid.strikes
    T = grid.maturities
    df = grid.discounts * grid.forwards

    # butterfly: one slack per node
    bf = np.empty_like(C)
    d0 = K[:, 1] - K[:, 0]
    bf[:, 0] = grid.spot * df - (K[:, 1] / d0) * C[:, 0] + (K[:, 0] / d0) * C[:, 1]
    dl = K[:, 1:-1] - K[:, :-2]
    dr = K[:, 2:] - K[:, 1:-1]
    bf[:, 1:-1] = C[:, :-2] - ((dl + dr) / dr) * C[:, 1:-1] + (dl / dr) * C[:, 2:]
    bf[:, -1] = C[:, -2] - C[:, -1]
    butterfly = _worst(bf, T, K)

    # calendar: C(T_{j+1}) - ratio * C(T_j) >= 0 at aligned strike indices
    if grid.n_slices > 1:
        ratio = (df[1:] / df[:-1])[:, None]
        cal = C[1:] - ratio * C[:-1]
        calendar = _worst(cal, T[1:], K[1:])
    else:
        calendar = FamilySlack(np.inf, float(T[0]), float(K[0, 0]))

    # vertical: decreasing in strike with cap, plus slope lower bound
    vert = np.empty((grid.n_slices, 2 * grid.n_strikes))
    vert[:, 0] = grid.spot * df - C[:, 0]
    vert[:, 1:grid.n_strikes] = C[:, :-1] - C[:, 1:]
    vert[:, grid.n_strikes] = C[:, 0]
    vert[:, grid.n_strikes + 1:] = (C[:, 1:] - C[:, :-1]) + grid.discounts[:, None] * np.diff(K, axis=1)
    vertical = _worst(vert, T, np.hstack([K, K]))

    bound_slack = float(C[0, -1] - max(grid.forwards[0] - K[0, -1], 0.0))
    bound = FamilySlack(bound_slack, float(T[0]), float(K[0, -1]))

    # informational: the tighter upper cap D*F (discounted forward) and an
    # explicit view of the slope lower-bound half of the vertical family
    cap = df[:, None] - C
    slope = vert[:, grid.n_strikes + 1:]
    informational = {
        "discounted_forward_cap": _worst(cap, T, K),
        "slope_lower_bound": _worst(slope, T, K[:, 1:]),
    }

    return AuditReport(
        families={
            "butterfly": butterfly,
            "calendar": calendar,
            "vertical": vertical,
            "bound": bound,
        },
        informational=informational,
        tolerance=tolerance,
    )


# ---------------------------------------------------------------------------
# bundled diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceDiagnostics:
    implied_vol: np.ndarray
    density: np.ndarray
    dcdt: np.ndarray
    local_vol: np.ndarray          # NaN where undefined
    audit: AuditReport
    density_edge: np.ndarray       # True on the copied end columns
    notes: tuple = ()


def compute_diagnostics(prices, grid, paper_orientation=False):
    """All diagnostic grids plus the audit for one price surface."""
    prices = np.asarray(prices, dtype=float).reshape(grid.n_slices, grid.n_strikes)
    iv = implied_vol_grid(prices, grid)
    dens = density_grid(prices, grid.strikes)
    dct = dcdt_grid(prices, grid.maturities)
    notes = []
    zero_carry = all(
        abs(grid.rate_curve(T)) <= 1e-12 and abs(grid.dividend_curve(T)) <= 1e-12
        for T in grid.maturities
    )
    if zero_carry:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = dens / dct if paper_orientation else dct / dens
            lv = np.sqrt(2.0 * ratio) / grid.strikes
        lv[(dens <= 0.0) | (dct <= 0.0)] = np.nan
    else:
        lv = np.full(prices.shape, np.nan)
        notes.append("local_vol skipped: rates/dividends are not zero")
    edge = np.zeros(prices.shape, dtype=bool)
    edge[:, 0] = edge[:, -1] = True
    return SurfaceDiagnostics(
        implied_vol=iv,
        density=dens,
        dcdt=dct,
        local_vol=lv,
        audit=audit(prices, grid),
        density_edge=edge,
        notes=tuple(notes),
    )


def diagnostics_rows(prices, grid, diag):
    """One row per grid node for CSV export: per-node slack columns use the
    convexity, calendar and monotonicity slacks where defined."""
    C = np.asarray(prices, dtype=float).reshape(grid.n_slices, grid.n_strikes)
    K = grid.strikes
    df = grid.discounts * grid.forwards
    bf = np.full(C.shape, np.nan)
    dl = K[:, 1:-1] - K[:, :-2]
    dr = K[:, 2:] - K[:, 1:-1]
    bf[:, 1:-1] = C[:, :-2] - ((dl + dr) / dr) * C[:, 1:-1] + (dl / dr) * C[:, 2:]
    cal = np.full(C.shape, np.nan)
    if grid.n_slices > 1:
        cal[1:] = C[1:] - (df[1:] / df[:-1])[:, None] * C[:-1]
    mono = np.full(C.shape, np.nan)
    mono[:, 1:] = C[:, :-1] - C[:, 1:]
    rows = []
    for m in range(grid.n_slices):
        for k in range(grid.n_strikes):
            rows.append((
                grid.maturities[m], K[m, k], C[m, k],
                diag.implied_vol[m, k], diag.density[m, k], diag.dcdt[m, k],
                diag.local_vol[m, k], bf[m, k], cal[m, k], mono[m, k],
            ))
    return rows


DIAGNOSTICS_HEADER = (
    "maturity,strike,price,implied_vol,density,dcdt,local_vol,"
    "butterfly_slack,calendar_slack,vertical_slack"
)
