"""Discrete orthonormal polynomials and the tensor evaluation matrix.

Families are orthonormal under the unweighted counting measure on their
node set:  sum_t P_i(t) P_j(t) = delta_ij.  Construction uses the
Stieltjes three-term recurrence on nodes affinely rescaled to [-1, 1],
followed by one modified Gram-Schmidt pass to push the Gram residual to
machine precision.  The Gram-Schmidt correction is stored as a triangular
coefficient transform so the polynomials can be evaluated anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, RankError

GRAM_TOL = 1e-8


def dedup_nodes(values, rtol=1e-10):
    """Sorted nodes with entries equal within relative tolerance collapsed."""
    values = np.sort(np.asarray(values, dtype=float).ravel())
    if values.size == 0:
        return values
    keep = [values[0]]
    for v in values[1:]:
        if v - keep[-1] > rtol * max(abs(v), abs(keep[-1]), 1e-300):
            keep.append(v)
    return np.asarray(keep)


@dataclass(frozen=True)
class OrthonormalFamily:
    """Polynomials of orders 1..N (degrees 0..N-1) on a discrete node set."""

    nodes: np.ndarray             # deduplicated support, sorted
    degree_count: int             # N
    shift: float                  # affine map x -> (x - shift) / scale
    scale: float
    alphas: np.ndarray            # recurrence centres, length N
    betas: np.ndarray             # recurrence norms, length N (betas[0] unused)
    transform: np.ndarray         # (N, N) upper-triangular re-orthonormalisation
    evaluation_cache: np.ndarray  # (len(nodes), N) values at the nodes

    def evaluate(self, points):
        """Evaluate all N polynomials at arbitrary points -> (len(points), N)."""
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        raw = _recurrence_eval(pts, self.shift, self.scale, self.alphas, self.betas)
        return raw @ self.transform

    def gram_residual(self):
        g = self.evaluation_cache.T @ self.evaluation_cache
        return float(np.max(np.abs(g - np.eye(self.degree_count))))


def _recurrence_eval(points, shift, scale, alphas, betas):
    t = (points - shift) / scale
    n = alphas.size
    out = np.empty((points.size, n))
    out[:, 0] = 1.0 / betas[0] if betas[0] != 0.0 else 1.0
    # betas[0] stores the norm of the constant, so column 0 is already unit
    prev = np.zeros(points.size)
    for k in range(1, n):
        out[:, k] = ((t - alphas[k]) * out[:, k - 1] - (betas[k - 1] if k >= 2 else 0.0) * prev) / betas[k]
        prev = out[:, k - 1]
    return out


def orthonormal_family(nodes, degree_count):
    """Build the orthonormal family of the first `degree_count` polynomials.

    Raises RankError when the node set cannot support the request (fewer
    distinct nodes than polynomials, or no spread at all for degree >= 1).
    """
    nodes = dedup_nodes(nodes)
    n = int(degree_count)
    if n < 1:
        raise RankError("degree_count must be at least 1")
    if nodes.size < n:
        raise RankError(f"{n} polynomials need at least {n} distinct nodes, got {nodes.size}")
    spread = float(nodes[-1] - nodes[0])
    if n > 1 and spread <= 0.0:
        raise RankError("nodes have no spread; only the constant polynomial exists")

    shift = float(0.5 * (nodes[0] + nodes[-1]))
    scale = 0.5 * spread if spread > 0.0 else 1.0
    t = (nodes - shift) / scale

    alphas = np.zeros(n)
    betas = np.zeros(n)
    vals = np.empty((nodes.size, n))

    betas[0] = np.sqrt(float(nodes.size))
    vals[:, 0] = 1.0 / betas[0]
    for k in range(1, n):
        alphas[k] = float(t @ (vals[:, k - 1] ** 2))
        q = (t - alphas[k]) * vals[:, k - 1]
        if k >= 2:
            q -= betas[k - 1] * vals[:, k - 2]
        norm = float(np.linalg.norm(q))
        if norm <= 1e-12 * np.sqrt(nodes.size):
            raise RankError(f"node set degenerates at degree {k}; cannot orthonormalise")
        betas[k] = norm
        vals[:, k] = q / norm

    # one modified Gram-Schmidt pass, accumulated as a coefficient transform
    transform = np.eye(n)
    for j in range(n):
        col = vals[:, j].copy()
        tcol = transform[:, j].copy()
        for i in range(j):
            r = float(vals[:, i] @ col)
            col -= r * vals[:, i]
            tcol -= r * transform[:, i]
        norm = float(np.linalg.norm(col))
        if norm <= 1e-12:
            raise RankError(f"re-orthonormalisation failed at degree {j}")
        vals[:, j] = col / norm
        transform[:, j] = tcol / norm

    fam = OrthonormalFamily(
        nodes=nodes,
        degree_count=n,
        shift=shift,
        scale=scale,
        alphas=alphas,
        betas=betas,
        transform=transform,
        evaluation_cache=vals,
    )
    resid = fam.gram_residual()
    if resid > GRAM_TOL:
        raise RankError(f"Gram residual {resid:.2e} exceeds {GRAM_TOL:.0e}; nodes too ill-conditioned")
    return fam


@dataclass(frozen=True)
class BasisMatrix:
    """Evaluation matrix of the decomposition basis on the fine grid.

    Rows are slice-major grid nodes: row m*M_K + k is maturity slice m,
    strike k.  `column_weights` carries the l1 objective weight attached to
    each column; `column_labels` is presentation metadata.
    """

    values: np.ndarray
    column_weights: np.ndarray
    kind: str                      # "tensor_poly" | "per_slice_shape"
    column_labels: tuple = ()

    @property
    def n_columns(self):
        return self.values.shape[1]


def tensor_matrix(family_T, family_K, grid):
    """Tensor-product matrix Q: column (n-1)*N_K + j is P_T^n * P_K^j.

    family_T must live on the grid's fine maturities and family_K on the
    pooled (deduplicated) fine strikes of all slices.
    """
    if not _same_nodes(family_T.nodes, grid.maturities):
        raise ConsistencyError("maturity family nodes do not match the grid maturities")
    pooled = dedup_nodes(grid.strikes.ravel())
    if not _same_nodes(family_K.nodes, pooled):
        raise ConsistencyError("strike family nodes do not match the pooled grid strikes")

    n_t = family_T.degree_count
    n_k = family_K.degree_count
    pt = family_T.evaluate(grid.maturities)             # (M_T, N_T)
    rows = []
    for m in range(grid.n_slices):
        pk = family_K.evaluate(grid.strikes[m])         # (M_K, N_K)
        # block row m: columns ordered maturity-major, strike-minor
        rows.append(np.einsum("n,kj->knj", pt[m], pk).reshape(grid.n_strikes, n_t * n_k))
    values = np.vstack(rows)

    weights = np.empty(n_t * n_k)
    labels = []
    for y in range(1, n_t + 1):
        for z in range(1, n_k + 1):
            weights[(y - 1) * n_k + (z - 1)] = y + z
            labels.append(f"T^{y - 1}*K^{z - 1}")
    return BasisMatrix(values=values, column_weights=weights, kind="tensor_poly", column_labels=tuple(labels))


def _same_nodes(a, b, rtol=1e-9):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a.shape == b.shape and np.allclose(a, b, rtol=rtol, atol=0.0)


def fit_submatrix(basis, grid, quote_set):
    """Rows of Q at the quoted grid nodes, plus the mid-price targets.

    Returns (A, c_mid) with one row per quote, in the quote set's order.
    """
    if basis.values.shape[0] != grid.n_nodes:
        raise ConsistencyError("basis matrix rows do not match the grid")
    idx = [grid.node_index(q.maturity, q.strike) for q in quote_set.quotes]
    A = basis.values[idx, :]
    c_mid = np.array([q.mid for q in quote_set.quotes], dtype=float)
    return A, c_mid
