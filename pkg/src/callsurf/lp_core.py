"""Linear programming layer: weighted-l1 recovery as an LP, plus a solver.

The recovery problem  min sum_i w_i |x_i|  subject to  |Ax - c| <= eps and
L x <= J  becomes a plain LP through the split x = u - v with u, v >= 0 and
objective sum_i w_i (u_i + v_i).

The bundled solver is a dense revised simplex (Phase I / Phase II, explicit
basis inverse, largest-coefficient pricing with Bland's rule engaged on
stalling and a two-pass ratio test for pivot quality).  Large systems are
handled by deterministic row activation: solve with a working subset of
inequality rows, add the most violated rows, and continue from the same
basis (the basis inverse extends by a block-triangular identity).  The
final point is optimal for the full problem because the working problem is
a relaxation of it and no remaining row is violated.

External solvers can be plugged in through `solve(..., adapter=...)`; an
adapter receives `(costs, G, h)` for  min costs.z : G z <= h, z >= 0  and
returns `(status, z, iterations)` with status in {"optimal", "infeasible",
"unbounded", "iteration_limit"}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverStateError, ValidationError

_PIVOT_TOL = 1e-10
_PIVOT_ACCEPT = 1e-7

# basis entry kinds
_STRUCT, _SLACK, _ART = 0, 1, 2


@dataclass(frozen=True)
class SolverOptions:
    feasibility_tol: float = 1e-8
    optimality_tol: float = 1e-9
    max_iterations: int | None = None      # default 50 * (rows + cols)
    row_generation: bool = True
    row_batch: int = 300
    stall_window: int = 50
    refactor_every: int = 150


@dataclass(frozen=True)
class LpProblem:
    """min costs.z subject to inequalities.z <= rhs, z >= 0."""

    costs: np.ndarray
    inequalities: np.ndarray
    rhs: np.ndarray
    row_labels: tuple = ()
    split: int | None = None   # z = (u, v) with u = z[:split] when set

    def __post_init__(self):
        if not np.all(np.isfinite(self.costs)):
            raise ValidationError("LP costs must be finite")
        if not (np.all(np.isfinite(self.inequalities)) and np.all(np.isfinite(self.rhs))):
            raise ValidationError("LP constraint data must be finite")

    @property
    def n_variables(self):
        return self.costs.size

    @property
    def n_constraints(self):
        return self.rhs.size


@dataclass(frozen=True)
class LpSolution:
    status: str                 # optimal | infeasible | unbounded | iteration_limit
    z: np.ndarray
    objective: float
    iterations: int
    max_violation: float
    split: int | None = None
    certificate_row: int | None = None
    certificate_label: tuple | None = None

    @property
    def u(self):
        return self.z[: self.split] if self.split is not None else self.z

    @property
    def v(self):
        return self.z[self.split:] if self.split is not None else np.zeros_like(self.z)

    @property
    def complementarity(self):
        """max_i min(u_i, v_i); near zero at an optimum with positive weights."""
        if self.split is None:
            return 0.0
        return float(np.max(np.minimum(self.u, self.v), initial=0.0))


def to_lp(system, weights):
    """Recast a ConstraintSystem as the split-variable LP.

    Fit band rows with infinite half-width are dropped (they constrain
    nothing); every kept row records its provenance label.
    """
    weights = np.asarray(weights, dtype=float)
    n = system.A.shape[1]
    if weights.size != n:
        raise ValidationError("one weight per basis column required")
    if np.any(weights <= 0.0):
        raise ValidationError("objective weights must be strictly positive")

    hi = system.fit_hi
    lo = system.fit_lo
    keep_hi = np.isfinite(hi)
    keep_lo = np.isfinite(lo)

    g_parts = [
        np.hstack([system.A[keep_hi], -system.A[keep_hi]]),
        np.hstack([-system.A[keep_lo], system.A[keep_lo]]),
        np.hstack([system.L, -system.L]),
    ]
    h_parts = [hi[keep_hi], -lo[keep_lo], system.J]
    labels = (
        [("fit_upper", int(i)) for i in np.flatnonzero(keep_hi)]
        + [("fit_lower", int(i)) for i in np.flatnonzero(keep_lo)]
        + [(system.family_of_row(r), r) for r in range(system.L.shape[0])]
    )
    return LpProblem(
        costs=np.concatenate([weights, weights]),
        inequalities=np.vstack(g_parts),
        rhs=np.concatenate(h_parts),
        row_labels=tuple(labels),
        split=n,
    )


def recover_x(solution):
    """Coefficient vector x = u - v from an optimal split solution."""
    if solution.status != "optimal":
        raise SolverStateError(f"cannot recover coefficients from status {solution.status!r}")
    if solution.split is None:
        raise SolverStateError("solution does not carry a split-variable layout")
    return solution.u - solution.v


# ---------------------------------------------------------------------------
# dense revised simplex with extendable row set
# ---------------------------------------------------------------------------

class _Simplex:
    """Revised simplex on  min c.z : G z <= h, z >= 0.

    Slack and artificial columns are unit vectors and never materialised.
    The basis is stored as (kind, ref) pairs - structural column index, or
    the local row of a slack/artificial - so the row set can grow without
    invalidating it: `extend` appends rows, gives each new row its slack
    (or an artificial when the current point violates it) and updates the
    basis inverse through the block-triangular formula.
    """

    def __init__(self, costs, G, h, opts):
        self.opts = opts
        self.n = costs.size
        self.costs = np.asarray(costs, dtype=float)
        self.G = np.zeros((0, self.n))
        self.h = np.zeros(0)
        self.m = 0
        self.iterations = 0
        self.kind = np.zeros(0, dtype=np.int8)
        self.ref = np.zeros(0, dtype=np.int64)
        self.x_B = np.zeros(0)
        self.B_inv = np.zeros((0, 0))
        if h.size:
            self.extend(G, h)

    # -- basis bookkeeping --------------------------------------------------

    def _column_struct(self, j):
        return self.G[:, j]

    def _column_of(self, kind, ref):
        if kind == _STRUCT:
            return self.G[:, ref]
        col = np.zeros(self.m)
        col[ref] = 1.0 if kind == _SLACK else -1.0
        return col

    def _basis_matrix(self):
        B = np.empty((self.m, self.m))
        for i in range(self.m):
            B[:, i] = self._column_of(self.kind[i], self.ref[i])
        return B

    def _refactor(self):
        B = self._basis_matrix()
        try:
            self.B_inv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            # near-dependent basis from accumulated roundoff; the pseudo
            # inverse keeps the walk alive and later pivots repair it
            self.B_inv = np.linalg.pinv(B)
        self.x_B = self.B_inv @ self.h

    def structural(self):
        z = np.zeros(self.n)
        sel = self.kind == _STRUCT
        z[self.ref[sel]] = np.maximum(self.x_B[sel], 0.0)
        return z

    def extend(self, G_new, h_new):
        """Append rows, keeping the current basis; violated rows get a basic
        artificial so the extended basis stays feasible for Phase I."""
        G_new = np.asarray(G_new, dtype=float).reshape(-1, self.n)
        scale = np.maximum(np.max(np.abs(G_new), axis=1, initial=0.0), 1e-10)
        G_new = G_new / scale[:, None]
        h_new = np.asarray(h_new, dtype=float) / scale
        k = h_new.size
        if k == 0:
            return
        z = self.structural() if self.m else np.zeros(self.n)
        resid = h_new - G_new @ z

        C = np.zeros((k, self.m))
        struct_sel = np.flatnonzero(self.kind == _STRUCT)
        if struct_sel.size:
            C[:, struct_sel] = G_new[:, self.ref[struct_sel]]

        m_old = self.m
        self.G = np.vstack([self.G, G_new])
        self.h = np.concatenate([self.h, h_new])
        self.m += k

        new_kind = np.where(resid >= 0.0, _SLACK, _ART).astype(np.int8)
        new_ref = np.arange(m_old, self.m, dtype=np.int64)
        self.kind = np.concatenate([self.kind, new_kind])
        self.ref = np.concatenate([self.ref, new_ref])
        self.x_B = np.concatenate([self.x_B, np.abs(resid)])

        d_sign = np.where(resid >= 0.0, 1.0, -1.0)
        B_inv = np.zeros((self.m, self.m))
        if m_old:
            B_inv[:m_old, :m_old] = self.B_inv
            B_inv[m_old:, :m_old] = -(C @ self.B_inv) * d_sign[:, None]
        B_inv[m_old:, m_old:] = np.diag(d_sign)
        self.B_inv = B_inv

    # -- order keys for deterministic/Bland tie-breaking ---------------------

    def _basis_order_keys(self):
        return np.where(
            self.kind == _STRUCT, self.ref,
            np.where(self.kind == _SLACK, self.n + self.ref, self.n + self.m + self.ref),
        )

    # -- main loops ----------------------------------------------------------

    def has_infeasibility(self):
        return bool(np.any((self.kind == _ART) & (self.x_B > 1e-9)))

    def infeasibility(self):
        sel = self.kind == _ART
        return float(np.sum(np.maximum(self.x_B[sel], 0.0)))

    def run(self, max_iterations):
        if self.m == 0:
            neg = np.flatnonzero(self.costs < -self.opts.optimality_tol)
            if neg.size:
                ray = np.zeros(self.n)
                ray[neg[0]] = 1.0
                return "unbounded", ray
            return "optimal", None

        if self.has_infeasibility():
            status, ray = self._loop(phase=1, max_iterations=max_iterations)
            if status == "iteration_limit":
                return status, None
            if self.infeasibility() > 1e-7:
                return "infeasible", None
        status, ray = self._loop(phase=2, max_iterations=max_iterations)
        if status == "optimal":
            self._refactor()  # tighten the final point
        return status, ray

    def _loop(self, phase, max_iterations):
        opt_tol = self.opts.optimality_tol
        c_struct = self.costs if phase == 2 else np.zeros(self.n)
        c_art = 1.0 if phase == 1 else 0.0

        bland = False
        since_improve = 0
        best_obj = np.inf
        pivots_since_refactor = 0

        while True:
            if self.iterations >= max_iterations:
                return "iteration_limit", None

            c_B = np.zeros(self.m)
            sel = self.kind == _STRUCT
            c_B[sel] = c_struct[self.ref[sel]]
            c_B[self.kind == _ART] = c_art
            obj = float(c_B @ self.x_B)
            if obj < best_obj - 1e-12:
                best_obj = obj
                since_improve = 0
                bland = False
            else:
                since_improve += 1
                if since_improve >= self.opts.stall_window:
                    bland = True

            y = c_B @ self.B_inv
            reduced = np.concatenate([c_struct - y @ self.G, -y])
            in_basis = np.zeros(self.n + self.m, dtype=bool)
            sel = self.kind == _STRUCT
            in_basis[self.ref[sel]] = True
            sel = self.kind == _SLACK
            in_basis[self.n + self.ref[sel]] = True
            candidates = np.flatnonzero((reduced < -opt_tol) & ~in_basis)
            if candidates.size == 0:
                return "optimal", None
            if not bland:
                candidates = candidates[np.argsort(reduced[candidates], kind="stable")]

            order_keys = self._basis_order_keys()
            art_zero = (self.kind == _ART) & (self.x_B < 1e-9)

            # entering columns whose best available pivot is numerically tiny
            # would wreck the basis; skip them for this pricing round
            picked = None
            for q in candidates:
                q = int(q)
                col = self.G[:, q] if q < self.n else None
                d = self.B_inv @ col if col is not None else self.B_inv[:, q - self.n].copy()
                ratios = np.full(self.m, np.inf)
                pos = d > _PIVOT_TOL
                ratios[pos] = np.maximum(self.x_B[pos], 0.0) / d[pos]
                # a basic artificial already at zero must not grow back, so a
                # negative step coefficient there forces a degenerate pivot
                # (positive-valued artificials in Phase I are unrestricted)
                guard = art_zero & (d < -_PIVOT_ACCEPT)
                ratios[guard] = 0.0
                if not np.any(np.isfinite(ratios)):
                    ray = np.zeros(self.n)
                    if q < self.n:
                        ray[q] = 1.0
                    sel = self.kind == _STRUCT
                    np.add.at(ray, self.ref[sel], -d[sel])
                    return "unbounded", ray
                theta_min = float(np.min(ratios))
                if bland:
                    ties = np.flatnonzero(ratios <= theta_min * (1.0 + 1e-12) + 1e-300)
                    leave = int(ties[np.argmin(order_keys[ties])])
                else:
                    # two-pass rule: allow a hair of slack on the ratio bound
                    # and take the largest pivot inside it, which keeps the
                    # basis well conditioned through degenerate stretches
                    relaxed = np.full(self.m, np.inf)
                    relaxed[pos] = (np.maximum(self.x_B[pos], 0.0) + 1e-9) / d[pos]
                    relaxed[guard] = 0.0
                    window = min(float(np.min(relaxed)), theta_min + 1e-9)
                    eligible = np.flatnonzero(np.isfinite(ratios) & (ratios <= window))
                    leave = int(eligible[np.argmax(np.abs(d[eligible]))])
                if abs(d[leave]) >= _PIVOT_ACCEPT:
                    picked = (q, d, leave, ratios)
                    break
            if picked is None:
                if pivots_since_refactor > 0:
                    self._refactor()
                    pivots_since_refactor = 0
                    continue
                return "optimal", None
            q, d, leave, ratios = picked
            theta = max(float(ratios[leave]), 0.0)

            self.x_B = self.x_B - theta * d
            self.x_B[leave] = theta
            if q < self.n:
                self.kind[leave] = _STRUCT
                self.ref[leave] = q
            else:
                self.kind[leave] = _SLACK
                self.ref[leave] = q - self.n

            piv = d[leave]
            row = self.B_inv[leave] / piv
            self.B_inv -= np.outer(d, row)
            self.B_inv[leave] = row
            self.x_B[(self.x_B < 0.0) & (self.x_B > -1e-9)] = 0.0

            self.iterations += 1
            pivots_since_refactor += 1
            if pivots_since_refactor >= self.opts.refactor_every:
                self._refactor()
                pivots_since_refactor = 0


def simplex_solve(costs, G, h, opts=SolverOptions(), max_iterations=None):
    """Solve  min costs.z : G z <= h, z >= 0  by the revised simplex.

    Returns (status, z, iterations, ray).  For "infeasible" z is the least
    infeasible point of Phase I; for "unbounded" `ray` is an improving
    recession direction of the structural variables.
    """
    costs = np.asarray(costs, dtype=float)
    h = np.asarray(h, dtype=float)
    G = np.asarray(G, dtype=float).reshape(h.size, costs.size)
    if max_iterations is None:
        max_iterations = opts.max_iterations or 50 * (h.size + costs.size)
    sx = _Simplex(costs, G, h, opts)
    status, ray = sx.run(max_iterations)
    return status, sx.structural(), sx.iterations, ray


def solve(problem, opts=SolverOptions(), adapter=None):
    """Solve an LpProblem; deterministic, returns an LpSolution.

    With `adapter` the external solver is used on the full system.  The
    built-in path activates inequality rows on demand (see module doc),
    which keeps the simplex working set near the active set of the optimum.
    """
    costs = np.asarray(problem.costs, dtype=float)
    G = np.asarray(problem.inequalities, dtype=float)
    h = np.asarray(problem.rhs, dtype=float)
    m = h.size

    if adapter is not None:
        status, z, iters = adapter(costs, G, h)
        return _finish(problem, status, np.asarray(z, dtype=float), iters, G, h)

    budget = opts.max_iterations or 50 * (m + costs.size)

    if not opts.row_generation:
        status, z, iters, _ = simplex_solve(costs, G, h, opts, budget)
        return _finish(problem, status, z, iters, G, h)

    add_tol = 0.1 * opts.feasibility_tol
    active = np.zeros(m, dtype=bool)
    start = np.flatnonzero(h < 0.0)
    active[start] = True
    sx = _Simplex(costs, G[start], h[start], opts)

    while True:
        status, ray = sx.run(budget)
        z = sx.structural()
        if status in ("infeasible", "iteration_limit"):
            return _finish(problem, status, z, sx.iterations, G, h)
        if status == "unbounded":
            gain = G @ ray
            fresh = np.flatnonzero(~active & (gain > 1e-12))
            if fresh.size == 0:
                return _finish(problem, "unbounded", z, sx.iterations, G, h)
            order = np.argsort(-gain[fresh], kind="stable")
            chosen = fresh[order[: opts.row_batch]]
        else:
            viol = G @ z - h
            viol[active] = -np.inf
            fresh = np.flatnonzero(viol > add_tol)
            if fresh.size == 0:
                return _finish(problem, "optimal", z, sx.iterations, G, h)
            order = np.argsort(-viol[fresh], kind="stable")
            chosen = fresh[order[: opts.row_batch]]
        chosen = np.sort(chosen)
        active[chosen] = True
        sx.extend(G[chosen], h[chosen])


def _finish(problem, status, z, iterations, G, h):
    viol = G @ z - h
    max_violation = float(np.max(viol, initial=0.0))
    certificate_row = None
    certificate_label = None
    if status == "infeasible" and viol.size:
        certificate_row = int(np.argmax(viol))
        if problem.row_labels:
            certificate_label = problem.row_labels[certificate_row]
    objective = float(problem.costs @ z)
    return LpSolution(
        status=status,
        z=z,
        objective=objective,
        iterations=iterations,
        max_violation=max(max_violation, 0.0),
        split=problem.split,
        certificate_row=certificate_row,
        certificate_label=certificate_label,
    )


def scipy_linprog_adapter(costs, G, h):
    """Adapter delegating to scipy.optimize.linprog (HiGHS), for cross-checks."""
    from scipy.optimize import linprog

    res = linprog(costs, A_ub=G, b_ub=h, bounds=(0, None), method="highs")
    status = {0: "optimal", 1: "iteration_limit", 2: "infeasible", 3: "unbounded"}.get(res.status, "iteration_limit")
    z = res.x if res.x is not None else np.zeros(len(costs))
    iters = int(getattr(res, "nit", 0) or 0)
    return status, z, iters
