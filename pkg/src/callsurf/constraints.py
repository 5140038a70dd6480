"""Linear no-arbitrage constraints on the fine grid, merged into L x <= J.

Working in price space keeps every static no-arbitrage condition linear in
the surface values C = Qx:

* butterfly: convexity of C in strike, with the strike-zero call (worth
  S*D(T)*F(T) in the convention used here) closing the first stencil and a
  plain monotone pair closing the last;
* calendar: C non-decreasing along forward-scaled strikes across slices;
* vertical: C non-increasing in strike with a cap on the lowest strike,
  plus the companion lower bound -D(T) <= dC/dK and C >= 0;
* bound: a single row pinning the surface's lowest point above its payoff.

Blocks are built per family and merged in <= orientation.  The merged
system has M_K*(4*M_T - 1) + 1 rows: butterfly and the two vertical halves
contribute M_K*M_T each, the calendar block M_K*(M_T - 1), the bound one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConsistencyError, GridError
from .poly_basis import fit_submatrix

FAMILIES = ("butterfly", "calendar", "vertical", "bound")


@dataclass(frozen=True)
class ToleranceSpec:
    """Fit-band semantics: relative/absolute band around mid, or bid-ask."""

    mode: str = "relative"      # "relative" | "absolute" | "bidask"
    value: float = 5e-4

    def __post_init__(self):
        if self.mode not in ("relative", "absolute", "bidask"):
            raise ValueError(f"unknown tolerance mode {self.mode!r}")
        if self.mode != "bidask" and self.value < 0.0:
            raise ValueError("tolerance must be nonnegative")


@dataclass(frozen=True)
class ConstraintSystem:
    """Everything the LP needs: fit rows and the merged no-arbitrage rows."""

    L: np.ndarray               # (n_rows, n_cols) inequality matrix, <= J
    J: np.ndarray
    A: np.ndarray               # (n_quotes, n_cols) fit rows of Q
    c_target: np.ndarray        # quote targets (mid prices)
    epsilon: np.ndarray         # per-quote half band; fit is c±eps
    blocks: dict = field(default_factory=dict)   # family -> (start, stop)

    @property
    def fit_lo(self):
        return self.c_target - self.epsilon

    @property
    def fit_hi(self):
        return self.c_target + self.epsilon

    def family_of_row(self, row):
        for name, (start, stop) in self.blocks.items():
            if start <= row < stop:
                return name
        raise KeyError(f"row {row} outside all blocks")


def butterfly_block(grid):
    """Convexity stencils per slice: B_f C >= R.

    Interior row j uses strikes (K_{j-1}, K_j, K_{j+1}) with coefficients
    (1, -(K_{j+1}-K_{j-1})/(K_{j+1}-K_j), (K_j-K_{j-1})/(K_{j+1}-K_j)); the
    first row replaces the left leg by a strike-zero call whose value
    S*D*F lands on the right-hand side; the last row keeps C(K_{M_K-1})
    >= C(K_{M_K}).
    """
    m_t, m_k = grid.strikes.shape
    if m_k < 3:
        raise GridError("butterfly block needs at least 3 strikes per slice")
    rows, cols, vals = [], [], []
    rhs = np.zeros(m_t * m_k)
    for m in range(m_t):
        K = grid.strikes[m]
        if np.any(np.diff(K) <= 0.0):
            raise GridError(f"slice {m} strikes are not strictly increasing")
        base = m * m_k
        # strike-zero stencil; the known call value moves to the RHS
        d0 = K[1] - K[0]
        rows += [base, base]
        cols += [base, base + 1]
        vals += [-K[1] / d0, K[0] / d0]
        rhs[base] = -grid.spot * grid.discounts[m] * grid.forwards[m]
        # interior three-point convexity stencils
        for j in range(1, m_k - 1):
            dj = K[j + 1] - K[j]
            rows += [base + j] * 3
            cols += [base + j - 1, base + j, base + j + 1]
            vals += [1.0, -(K[j + 1] - K[j - 1]) / dj, (K[j] - K[j - 1]) / dj]
        # infinite-strike stencil degenerates to a monotone pair
        rows += [base + m_k - 1, base + m_k - 1]
        cols += [base + m_k - 2, base + m_k - 1]
        vals += [1.0, -1.0]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m_t * m_k, m_t * m_k))
    return mat, rhs


def calendar_block(grid):
    """Calendar monotonicity across forward-aligned strikes: G C <= 0.

    Row (j-1)*M_K + i carries +D(T_{j+1})F(T_{j+1})/(D(T_j)F(T_j)) at node
    (j, i) and -1 at node (j+1, i).
    """
    m_t, m_k = grid.strikes.shape
    expected = np.outer(grid.forwards / grid.forwards[0], grid.strikes[0])
    if not np.allclose(grid.strikes, expected, rtol=1e-9, atol=0.0):
        raise GridError("calendar block needs forward-aligned strike slices")
    rows, cols, vals = [], [], []
    for j in range(m_t - 1):
        ratio = (grid.discounts[j + 1] * grid.forwards[j + 1]) / (grid.discounts[j] * grid.forwards[j])
        for i in range(m_k):
            r = j * m_k + i
            rows += [r, r]
            cols += [j * m_k + i, (j + 1) * m_k + i]
            vals += [ratio, -1.0]
    return sp.csr_matrix((vals, (rows, cols)), shape=((m_t - 1) * m_k, m_t * m_k))


def vertical_block(grid):
    """Monotone-decreasing-in-strike rows: H C <= U_b.

    Slice-initial rows cap the lowest-strike call at D(T)F(T)*S; every
    other row enforces C(K_j) - C(K_{j-1}) <= 0.
    """
    m_t, m_k = grid.strikes.shape
    rows, cols, vals = [], [], []
    rhs = np.zeros(m_t * m_k)
    for m in range(m_t):
        base = m * m_k
        rows.append(base)
        cols.append(base)
        vals.append(1.0)
        rhs[base] = grid.discounts[m] * grid.forwards[m] * grid.spot
        for j in range(1, m_k):
            rows += [base + j, base + j]
            cols += [base + j, base + j - 1]
            vals += [1.0, -1.0]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m_t * m_k, m_t * m_k))
    return mat, rhs


def slope_lower_block(grid):
    """Companion lower bound on the strike slope: -H C <= V_b.

    Non-initial rows bound C(K_{j-1}) - C(K_j) <= D(T)*(K_j - K_{j-1}),
    the discretised -D(T) <= dC/dK; slice-initial rows keep C(K_1) >= 0.
    """
    m_t, m_k = grid.strikes.shape
    rows, cols, vals = [], [], []
    rhs = np.zeros(m_t * m_k)
    for m in range(m_t):
        K = grid.strikes[m]
        base = m * m_k
        rows.append(base)
        cols.append(base)
        vals.append(-1.0)
        rhs[base] = 0.0
        for j in range(1, m_k):
            rows += [base + j, base + j]
            cols += [base + j, base + j - 1]
            vals += [-1.0, 1.0]
            rhs[base + j] = grid.discounts[m] * (K[j] - K[j - 1])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m_t * m_k, m_t * m_k))
    return mat, rhs


def bound_block(grid):
    """One row keeping the surface's lowest point above its payoff:
    C(K_max, T_1) >= (F(T_1) - K_max)^+.
    """
    m_t, m_k = grid.strikes.shape
    row = np.zeros(m_t * m_k)
    row[m_k - 1] = 1.0
    rhs = max(grid.forwards[0] - grid.strikes[0, -1], 0.0)
    return row, rhs


def _quoted_domain_mask(grid, quote_set):
    """Per-node flag: strike inside the quoted hull of its slice and
    maturity inside the quoted maturity range."""
    info = grid.extension_info
    k_lo, k_hi = info.get("quoted_strike_range", (-np.inf, np.inf))
    t_lo, t_hi = info.get("quoted_maturity_range", (-np.inf, np.inf))
    scale = grid.forwards / grid.forwards[0]
    tol = 1e-12
    mask = np.zeros(grid.strikes.shape, dtype=bool)
    for m in range(grid.n_slices):
        in_t = (t_lo - tol) <= grid.maturities[m] <= (t_hi + tol)
        lo, hi = k_lo * scale[m], k_hi * scale[m]
        mask[m] = in_t & (grid.strikes[m] >= lo * (1 - 1e-12)) & (grid.strikes[m] <= hi * (1 + 1e-12))
    return mask.ravel()


def assemble(grid, basis, quote_set, tol=ToleranceSpec(), enforce_extended=True):
    """Merge all no-arbitrage blocks with the fit rows into one system.

    With `enforce_extended` the no-arbitrage rows cover the whole fine grid
    (extension included), giving the full M_K*(4*M_T-1)+1 rows; otherwise
    rows touching any node outside the quoted domain are dropped.
    """
    if basis.values.shape[0] != grid.n_nodes:
        raise ConsistencyError("basis matrix does not match the grid")
    Q = basis.values

    bf, r_bf = butterfly_block(grid)
    g = calendar_block(grid)
    h, u_b = vertical_block(grid)
    lo, v_b = slope_lower_block(grid)
    b_row, b_rhs = bound_block(grid)

    parts = [
        ("butterfly", -(bf @ Q), -r_bf, bf),
        ("calendar", g @ Q, np.zeros(g.shape[0]), g),
        ("vertical", np.vstack([h @ Q, lo @ Q]), np.concatenate([u_b, v_b]), sp.vstack([h, lo]).tocsr()),
        ("bound", -(b_row @ Q)[None, :], np.array([-b_rhs]), sp.csr_matrix(-b_row[None, :])),
    ]

    if not enforce_extended:
        node_ok = _quoted_domain_mask(grid, quote_set)
        pruned = []
        for name, mat, rhs, block in parts:
            if name == "bound":
                pruned.append((name, mat, rhs, block))
                continue
            keep = np.array([
                node_ok[block.indices[block.indptr[i]:block.indptr[i + 1]]].all()
                for i in range(block.shape[0])
            ])
            pruned.append((name, mat[keep], rhs[keep], block))
        parts = pruned

    blocks = {}
    start = 0
    l_parts, j_parts = [], []
    for name, mat, rhs, _ in parts:
        blocks[name] = (start, start + mat.shape[0])
        start += mat.shape[0]
        l_parts.append(mat)
        j_parts.append(rhs)
    L = np.vstack(l_parts)
    J = np.concatenate(j_parts)

    A, c_mid = fit_submatrix(basis, grid, quote_set)
    if tol.mode == "relative":
        eps = tol.value * np.abs(c_mid)
    elif tol.mode == "absolute":
        eps = np.full(c_mid.shape, tol.value)
    else:  # bidask
        bid = np.array([q.bid for q in quote_set.quotes])
        ask = np.array([q.ask for q in quote_set.quotes])
        c_mid = 0.5 * (bid + ask)
        eps = 0.5 * (ask - bid)

    return ConstraintSystem(L=L, J=J, A=A, c_target=c_mid, epsilon=eps, blocks=blocks)
