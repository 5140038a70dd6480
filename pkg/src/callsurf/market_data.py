"""Quote ingestion, term structures and the aligned fine recovery grid.

The recovery operates on one strike grid per maturity slice, with every
slice's strikes equal to the first slice's strikes scaled by the forward
ratio F(T_i)/F(T_1).  Quoted points are inserted into the grid exactly
(quotes are never snapped to nearby nodes).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .black_scholes import call_price
from .errors import GridError, ParseError, ValidationError

#: relative tolerance used when matching grid nodes against quoted points
NODE_MATCH_RTOL = 1e-12


class QuoteKind(enum.Enum):
    CALL_PRICE = "call_price"
    IMPLIED_VOL = "implied_vol"


@dataclass(frozen=True)
class Quote:
    """One market quote; prices are call prices after loading."""

    maturity: float
    strike: float
    bid: float
    mid: float
    ask: float


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear curve in maturity with flat extrapolation."""

    maturities: tuple
    values: tuple

    def __post_init__(self):
        if len(self.maturities) != len(self.values) or not self.maturities:
            raise ValidationError("curve needs matching, nonempty node/value lists")
        ts = np.asarray(self.maturities, dtype=float)
        if np.any(np.diff(ts) <= 0.0):
            raise ValidationError("curve maturities must be strictly increasing")

    def __call__(self, T):
        return float(np.interp(T, self.maturities, self.values))

    @staticmethod
    def flat(value):
        return Curve(maturities=(1.0,), values=(float(value),))


@dataclass(frozen=True)
class QuoteSet:
    """Raw market quotes plus the spot and rate/dividend term structures."""

    spot: float
    maturities: tuple
    rate_curve: Curve
    dividend_curve: Curve
    quotes: tuple
    quote_kind: QuoteKind = QuoteKind.CALL_PRICE

    def __post_init__(self):
        if not self.spot > 0.0:
            raise ValidationError("spot must be positive")
        ts = np.asarray(self.maturities, dtype=float)
        if ts.size == 0 or np.any(ts <= 0.0) or np.any(np.diff(ts) <= 0.0):
            raise ValidationError("maturities must be strictly increasing and positive")
        seen = set()
        for q in self.quotes:
            key = (q.maturity, q.strike)
            if key in seen:
                raise ValidationError(f"duplicate quote at maturity={q.maturity}, strike={q.strike}")
            seen.add(key)
            if not (q.bid <= q.mid <= q.ask):
                raise ValidationError(f"crossed quote at maturity={q.maturity}, strike={q.strike}: bid <= mid <= ask required")
            if min(q.bid, q.mid, q.ask) < 0.0:
                raise ValidationError(f"negative price at maturity={q.maturity}, strike={q.strike}")

    def quotes_for(self, maturity):
        """Quotes of one slice, sorted by strike."""
        qs = [q for q in self.quotes if math.isclose(q.maturity, maturity, rel_tol=NODE_MATCH_RTOL, abs_tol=0.0)]
        return sorted(qs, key=lambda q: q.strike)


@dataclass(frozen=True)
class MarketStructure:
    """Fine recovery grid with forwards/discounts at its maturities.

    strikes[m, k] is the k-th strike of maturity slice m; alignment
    strikes[m, k] = strikes[0, k] * forwards[m] / forwards[0] holds by
    construction.
    """

    spot: float
    rate_curve: Curve
    dividend_curve: Curve
    maturities: np.ndarray          # (M_T,)
    strikes: np.ndarray             # (M_T, M_K)
    forwards: np.ndarray            # (M_T,)
    discounts: np.ndarray           # (M_T,)
    extension_info: dict = field(default_factory=dict)

    @property
    def n_slices(self):
        return self.maturities.size

    @property
    def n_strikes(self):
        return self.strikes.shape[1]

    @property
    def n_nodes(self):
        return self.maturities.size * self.strikes.shape[1]

    def forward(self, T):
        return forward_value(self.spot, self.rate_curve, self.dividend_curve, T)

    def discount(self, T):
        return discount_value(self.rate_curve, T)

    def maturity_index(self, T):
        hits = np.flatnonzero(np.isclose(self.maturities, T, rtol=NODE_MATCH_RTOL, atol=0.0))
        if hits.size == 0:
            raise GridError(f"maturity {T} is not a grid node")
        return int(hits[0])

    def node_index(self, T, K):
        """Slice-major row index of the grid node at (T, K)."""
        m = self.maturity_index(T)
        row = self.strikes[m]
        hits = np.flatnonzero(np.isclose(row, K, rtol=NODE_MATCH_RTOL, atol=0.0))
        if hits.size == 0:
            raise GridError(f"strike {K} is not a node of the slice at T={T}")
        return m * self.n_strikes + int(hits[0])


def forward_value(spot, rate_curve, dividend_curve, T):
    """F(T) = S * exp((r_T - q_T) * T)."""
    if not T > 0.0:
        raise ValidationError("maturity must be positive")
    return spot * math.exp((rate_curve(T) - dividend_curve(T)) * T)


def discount_value(rate_curve, T):
    """D(T) = exp(-r_T * T)."""
    if not T > 0.0:
        raise ValidationError("maturity must be positive")
    return math.exp(-rate_curve(T) * T)


def forward(quote_set, T):
    return forward_value(quote_set.spot, quote_set.rate_curve, quote_set.dividend_curve, T)


def discount(quote_set, T):
    return discount_value(quote_set.rate_curve, T)


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IngestionOptions:
    """How to interpret a quote file."""

    spot: float
    rate_curve: Curve = Curve.flat(0.0)
    dividend_curve: Curve = Curve.flat(0.0)
    quote_kind: QuoteKind = QuoteKind.CALL_PRICE


def load_curves(path):
    """Read `maturity,rate,dividend` CSV into a (rate, dividend) curve pair."""
    ts, rates, divs = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"maturity", "rate", "dividend"}
        if reader.fieldnames is None or not need.issubset(set(reader.fieldnames)):
            raise ParseError(f"{path}: curve header must contain {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts.append(float(row["maturity"]))
                rates.append(float(row["rate"]))
                divs.append(float(row["dividend"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: malformed curve row {lineno}: {exc}") from exc
    order = np.argsort(ts)
    ts = tuple(np.asarray(ts)[order])
    return (
        Curve(ts, tuple(np.asarray(rates)[order])),
        Curve(ts, tuple(np.asarray(divs)[order])),
    )


def load_quotes(path, options):
    """Read a `maturity,strike,bid,ask[,mid]` CSV into a QuoteSet.

    Missing mid defaults to (bid+ask)/2.  Implied-vol quote files are
    converted to call prices on load, using the options' curves, so the
    rest of the pipeline only ever sees prices.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"maturity", "strike", "bid", "ask"}
        if reader.fieldnames is None or not need.issubset(set(reader.fieldnames)):
            raise ParseError(f"{path}: quote header must contain {sorted(need)}")
        has_mid = "mid" in reader.fieldnames
        for lineno, row in enumerate(reader, start=2):
            try:
                T = float(row["maturity"])
                K = float(row["strike"])
                bid = float(row["bid"])
                ask = float(row["ask"])
                mid = float(row["mid"]) if has_mid and row["mid"] not in (None, "") else 0.5 * (bid + ask)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: malformed quote row {lineno}: {exc}") from exc
            if bid > ask:
                raise ValidationError(f"{path}: row {lineno}: bid {bid} exceeds ask {ask}")
            rows.append((T, K, bid, mid, ask))

    if not rows:
        raise ParseError(f"{path}: no quotes found")

    if options.quote_kind is QuoteKind.IMPLIED_VOL:
        conv = []
        for T, K, bid, mid, ask in rows:
            r = options.rate_curve(T)
            q = options.dividend_curve(T)
            conv.append((
                T, K,
                call_price(options.spot, K, T, r, q, bid),
                call_price(options.spot, K, T, r, q, mid),
                call_price(options.spot, K, T, r, q, ask),
            ))
        rows = conv

    maturities = tuple(sorted({T for T, *_ in rows}))
    quotes = tuple(Quote(T, K, bid, mid, ask) for T, K, bid, mid, ask in sorted(rows))
    return QuoteSet(
        spot=options.spot,
        maturities=maturities,
        rate_curve=options.rate_curve,
        dividend_curve=options.dividend_curve,
        quotes=quotes,
        quote_kind=options.quote_kind,
    )


# ---------------------------------------------------------------------------
# fine grid construction
# ---------------------------------------------------------------------------

def _insert_exact(base, targets, what):
    """Replace, for each target, the nearest free node of `base` by the target.

    Keeps the node count fixed while guaranteeing the targets appear exactly.
    """
    grid = np.array(base, dtype=float)
    taken = np.zeros(grid.size, dtype=bool)
    for t in sorted(targets):
        order = np.argsort(np.abs(grid - t) + np.where(taken, np.inf, 0.0))
        idx = int(order[0])
        if taken[idx]:
            raise GridError(f"cannot place all quoted {what} on the grid")
        grid[idx] = t
        taken[idx] = True
    grid.sort()
    if np.any(np.diff(grid) <= 0.0):
        raise GridError(f"quoted {what} collide with grid nodes; increase the grid size")
    return grid


def build_fine_grid(quote_set, n_strikes, n_maturities, strike_extension=0.15, maturity_extension=None):
    """Build the aligned fine grid the surface is recovered on.

    First-slice strikes span [(1-e_K)*K_min, (1+e_K)*K_max] around the quoted
    strikes (deflated to the first slice by forward ratios), equidistant
    except where quoted strikes are inserted as exact nodes.  Other slices
    are the first slice scaled by F(T_i)/F(T_1).  Fine maturities contain
    every quoted maturity exactly and extend beyond the last quoted one by
    `maturity_extension` as a fraction of the quoted span (None = one grid
    step).
    """
    quoted_T = np.asarray(quote_set.maturities, dtype=float)
    if n_maturities < quoted_T.size:
        raise GridError(f"need at least {quoted_T.size} fine maturities, got {n_maturities}")

    t_lo, t_hi_quoted = float(quoted_T[0]), float(quoted_T[-1])
    span = t_hi_quoted - t_lo
    if n_maturities == quoted_T.size:
        fine_T = quoted_T.copy()
        ext_T = 0.0
    else:
        if maturity_extension is None:
            # one fine-grid step beyond the last quoted maturity
            ext_T = span / (n_maturities - 2) if (n_maturities > 2 and span > 0.0) else (0.1 * max(t_hi_quoted, 1e-6))
        else:
            ext_T = maturity_extension * span if span > 0.0 else maturity_extension * t_hi_quoted
        base_T = np.linspace(t_lo, t_hi_quoted + ext_T, n_maturities)
        fine_T = _insert_exact(base_T, quoted_T, "maturities")

    fwd = np.array([forward(quote_set, T) for T in fine_T])
    disc = np.array([discount(quote_set, T) for T in fine_T])
    f1 = fwd[0]  # fine_T[0] == first quoted maturity by construction

    # deflate all quoted strikes to the first slice so that re-scaling by the
    # forward ratio reproduces the quoted strike exactly on its own slice
    deflated = []
    for q in quote_set.quotes:
        deflated.append(q.strike * f1 / forward(quote_set, q.maturity))
    deflated = _dedup_sorted(np.sort(np.asarray(deflated)))

    if n_strikes < deflated.size:
        raise GridError(f"need at least {deflated.size} fine strikes, got {n_strikes}")

    k_lo = (1.0 - strike_extension) * float(deflated[0])
    k_hi = (1.0 + strike_extension) * float(deflated[-1])
    if not k_lo > 0.0:
        raise GridError("strike extension reaches zero or negative strikes")
    base_K = np.linspace(k_lo, k_hi, n_strikes)
    slice1 = _insert_exact(base_K, deflated, "strikes")

    strikes = np.outer(fwd / f1, slice1)

    structure = MarketStructure(
        spot=quote_set.spot,
        rate_curve=quote_set.rate_curve,
        dividend_curve=quote_set.dividend_curve,
        maturities=fine_T,
        strikes=strikes,
        forwards=fwd,
        discounts=disc,
        extension_info={
            "strike_extension": strike_extension,
            "maturity_extension_years": ext_T,
            "quoted_strike_range": (float(deflated[0]), float(deflated[-1])),
            "quoted_maturity_range": (t_lo, t_hi_quoted),
            "grid_strike_range": (k_lo, k_hi),
            "grid_maturity_range": (float(fine_T[0]), float(fine_T[-1])),
        },
    )
    _check_quotes_on_grid(structure, quote_set)
    return structure


def _dedup_sorted(values, rtol=1e-10):
    """Collapse sorted values that coincide within relative tolerance."""
    if values.size == 0:
        return values
    keep = [values[0]]
    for v in values[1:]:
        if v - keep[-1] > rtol * max(abs(v), abs(keep[-1])):
            keep.append(v)
    return np.asarray(keep)


def _check_quotes_on_grid(structure, quote_set):
    for q in quote_set.quotes:
        try:
            structure.node_index(q.maturity, q.strike)
        except GridError as exc:
            raise GridError(
                f"quoted point (T={q.maturity}, K={q.strike}) does not coincide with a grid node"
            ) from exc


def structure_from_grid(maturities, strikes, spot, rate_curve, dividend_curve, alignment_rtol=1e-9):
    """Wrap an externally supplied grid, verifying forward-ratio alignment."""
    maturities = np.asarray(maturities, dtype=float)
    strikes = np.asarray(strikes, dtype=float)
    if strikes.ndim != 2 or strikes.shape[0] != maturities.size:
        raise GridError("strikes must be one row per maturity")
    fwd = np.array([forward_value(spot, rate_curve, dividend_curve, T) for T in maturities])
    disc = np.array([discount_value(rate_curve, T) for T in maturities])
    expected = np.outer(fwd / fwd[0], strikes[0])
    if not np.allclose(strikes, expected, rtol=alignment_rtol, atol=0.0):
        raise GridError("strike grids are not aligned by forward ratios")
    return MarketStructure(
        spot=spot,
        rate_curve=rate_curve,
        dividend_curve=dividend_curve,
        maturities=maturities,
        strikes=strikes,
        forwards=fwd,
        discounts=disc,
        extension_info={"source": "external"},
    )
