"""Per-slice basis built from mollified bid/mid quote interpolations.

For markets where a global polynomial basis fails to give a sparse fit,
each maturity slice gets its own columns: smooth mollifications of the
piecewise-linear bid and mid quote curves (one per smoothing width), plus
a few low-order polynomials.  The resulting basis matrix is block
diagonal across slices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GridError, ValidationError
from .poly_basis import BasisMatrix, orthonormal_family

#: quadrature points per kernel support for the convolution integral
_QUAD_POINTS = 400


def _bump(u):
    """Unnormalised smooth bump exp(1/(u^2-1)) on (-1, 1), zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 / (ui * ui - 1.0))
    return out


def _bump_normalisation():
    # Gauss-Legendre on [-1, 1]; the integrand is smooth and flat at the ends,
    # so a few hundred nodes reach machine precision.
    x, w = np.polynomial.legendre.leggauss(400)
    return 1.0 / float(w @ _bump(x))


@dataclass(frozen=True)
class Mollifier:
    """Compactly supported smooth kernel integrating to one on [-1, 1]."""

    normalization: float
    support: tuple = (-1.0, 1.0)

    def __call__(self, x):
        return self.normalization * _bump(x)

    def scaled(self, x, alpha):
        """phi^alpha(x) = phi(x/alpha) / alpha."""
        return self(np.asarray(x, dtype=float) / alpha) / alpha


STANDARD_MOLLIFIER = Mollifier(normalization=_bump_normalisation())


def mollifier_eval(x, alpha):
    """Value of the width-`alpha` kernel at x; zero for |x| >= alpha."""
    if not alpha > 0.0:
        raise ValidationError("mollifier width must be positive")
    return STANDARD_MOLLIFIER.scaled(x, alpha)


class ShapeSource(enum.Enum):
    BID_INTERP = "bid_interp"
    MID_INTERP = "mid_interp"


@dataclass(frozen=True)
class ShapeFunction:
    """One mollified quote-interpolation column, evaluated on a slice grid."""

    slice_index: int
    source: ShapeSource
    alpha: float
    values: np.ndarray


def mollify(knot_x, knot_y, alpha, eval_points):
    """Convolve a piecewise-linear function with the width-`alpha` kernel.

    The function is given by its knots and extended by constants outside
    the knot range before the convolution, so the result is defined on all
    requested points.  Composite trapezoid quadrature on a symmetric grid
    around each evaluation point; the shared offsets make the scheme an
    exact positive combination of shifts, which preserves convexity of the
    input everywhere the constant extension is not felt.
    """
    if not alpha > 0.0:
        raise ValidationError("mollifier width must be positive")
    knot_x = np.asarray(knot_x, dtype=float)
    knot_y = np.asarray(knot_y, dtype=float)
    if knot_x.size < 2 or knot_x.size != knot_y.size:
        raise ValidationError("need at least two knots with matching values")
    if np.any(np.diff(knot_x) <= 0.0):
        raise ValidationError("knots must be strictly increasing")
    eval_points = np.atleast_1d(np.asarray(eval_points, dtype=float))

    offsets = np.linspace(-alpha, alpha, _QUAD_POINTS + 1)
    step = offsets[1] - offsets[0]
    kernel = mollifier_eval(offsets, alpha)           # even; zero at the ends
    weights = np.full(offsets.size, step)
    weights[0] *= 0.5
    weights[-1] *= 0.5

    y = eval_points[:, None] - offsets[None, :]
    f = np.interp(y, knot_x, knot_y)                  # constant extrapolation
    return f @ (kernel * weights)


DEFAULT_ALPHA_MULTIPLES = (1.0, 2.0, 4.0, 8.0)


def default_alphas(quoted_strikes):
    """Geometric width ladder from the median quoted strike spacing."""
    gaps = np.diff(np.sort(np.asarray(quoted_strikes, dtype=float)))
    step = float(np.median(gaps))
    return [m * step for m in DEFAULT_ALPHA_MULTIPLES]


def extrapolated_knots(knot_x, knot_y, lo, hi):
    """Extend quote-interpolation knots to [lo, hi] by continuing the end
    slopes, clamping at zero where the continuation would go negative.

    Keeps a decreasing convex quote curve decreasing and convex over the
    whole recovery range: the in-the-money wing keeps its slope, the
    out-of-the-money wing decays to zero and stays there.
    """
    kx = list(np.asarray(knot_x, dtype=float))
    ky = list(np.asarray(knot_y, dtype=float))
    eps = 1e-9 * (abs(hi - lo) + 1.0)
    if lo < kx[0] - eps:
        slope = (ky[1] - ky[0]) / (kx[1] - kx[0])
        y_lo = ky[0] + slope * (lo - kx[0])
        x_zero = kx[0] - ky[0] / slope if slope > 1e-300 else lo
        if y_lo < 0.0 and lo + eps < x_zero < kx[0] - eps:
            kx = [lo, x_zero] + kx
            ky = [0.0, 0.0] + ky
        else:
            kx = [lo] + kx
            ky = [max(y_lo, 0.0)] + ky
    if hi > kx[-1] + eps:
        slope = (ky[-1] - ky[-2]) / (kx[-1] - kx[-2])
        y_hi = ky[-1] + slope * (hi - kx[-1])
        x_zero = kx[-1] - ky[-1] / slope if slope < -1e-300 else hi
        if y_hi < 0.0 and kx[-1] + eps < x_zero < hi - eps:
            kx = kx + [x_zero, hi]
            ky = ky + [0.0, 0.0]
        else:
            kx = kx + [hi]
            ky = ky + [max(y_hi, 0.0)]
    return np.asarray(kx), np.asarray(ky)


def shape_basis_matrix(quote_set, grid, alphas=None, poly_orders=3):
    """Block-diagonal basis: per slice, mollified bid and mid curves for each
    width in `alphas` plus `poly_orders` orthonormal polynomial columns.

    `alphas=None` derives a per-slice geometric ladder from the median
    quoted strike spacing.  Columns per block: [bid(alpha_1..),
    mid(alpha_1..), poly_0..]; total N_K = 2*n_alphas + poly_orders.
    Objective weights are all one.
    """
    if alphas is not None:
        alphas = [float(a) for a in alphas]
        if not alphas or any(a <= 0.0 for a in alphas):
            raise ValidationError("need a nonempty list of positive mollification widths")
    n_alphas = len(alphas) if alphas is not None else len(DEFAULT_ALPHA_MULTIPLES)

    n_cols_per = 2 * n_alphas + poly_orders
    n_rows = grid.n_nodes
    values = np.zeros((n_rows, grid.n_slices * n_cols_per))
    labels = []
    shape_functions = []

    for m, T in enumerate(grid.maturities):
        slice_quotes = _nearest_slice_quotes(quote_set, grid, m)
        if len(slice_quotes) < 2:
            raise GridError(f"slice at T={T} has fewer than 2 quotes; cannot build shape basis")
        kx = np.array([q.strike for q in slice_quotes])
        bid = np.array([q.bid for q in slice_quotes])
        mid = np.array([q.mid for q in slice_quotes])
        strikes = grid.strikes[m]
        r0 = m * grid.n_strikes
        c0 = m * n_cols_per
        slice_alphas = alphas if alphas is not None else default_alphas(kx)

        pad = 2.0 * max(slice_alphas)
        col = c0
        for source, ys in ((ShapeSource.BID_INTERP, bid), (ShapeSource.MID_INTERP, mid)):
            ex, ey = extrapolated_knots(kx, ys, strikes[0] - pad, strikes[-1] + pad)
            for a in slice_alphas:
                vals = mollify(ex, ey, a, strikes)
                values[r0:r0 + grid.n_strikes, col] = vals
                labels.append(f"slice{m}:{source.value}:a={a:g}")
                shape_functions.append(ShapeFunction(m, source, a, vals))
                col += 1
        if poly_orders > 0:
            fam = orthonormal_family(strikes, poly_orders)
            values[r0:r0 + grid.n_strikes, col:col + poly_orders] = fam.evaluate(strikes)
            labels.extend(f"slice{m}:poly_deg{d}" for d in range(poly_orders))

    basis = BasisMatrix(
        values=values,
        column_weights=np.ones(values.shape[1]),
        kind="per_slice_shape",
        column_labels=tuple(labels),
    )
    return basis, shape_functions


def _nearest_slice_quotes(quote_set, grid, slice_index):
    """Quotes whose maturity equals the grid slice's maturity."""
    T = grid.maturities[slice_index]
    out = [q for q in quote_set.quotes if math.isclose(q.maturity, T, rel_tol=1e-12, abs_tol=0.0)]
    return sorted(out, key=lambda q: q.strike)
