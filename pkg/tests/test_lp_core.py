import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callsurf.errors import SolverStateError, ValidationError
from callsurf.lp_core import (
    LpProblem,
    LpSolution,
    SolverOptions,
    recover_x,
    scipy_linprog_adapter,
    simplex_solve,
    solve,
    to_lp,
)
from callsurf.constraints import ToleranceSpec, assemble
from callsurf.market_data import build_fine_grid
from callsurf.poly_basis import dedup_nodes, orthonormal_family, tensor_matrix


def brute_force_lp(c, G, h, tol=1e-9):
    """Vertex enumeration oracle: with z >= 0 the feasible region is pointed,
    so an optimum (when one exists) is attained at a basic solution."""
    c = np.asarray(c, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    n, m = c.size, h.size
    rows = np.vstack([G, -np.eye(n)])
    rhs = np.concatenate([h, np.zeros(n)])
    best = None
    for combo in itertools.combinations(range(m + n), n):
        M = rows[list(combo)]
        b = rhs[list(combo)]
        try:
            z = np.linalg.solve(M, b)
        except np.linalg.LinAlgError:
            continue
        if np.max(np.abs(M @ z - b)) > 1e-7:
            continue
        if np.all(rows @ z <= rhs + tol * (1.0 + np.abs(rhs))):
            val = float(c @ z)
            if best is None or val < best:
                best = val
    return best


def random_feasible_lp(rng, max_vars=6, max_rows=8, nonneg_costs=True):
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows + 1))
    c = rng.uniform(0.0, 2.0, n) if nonneg_costs else rng.normal(size=n)
    G = rng.normal(size=(m, n))
    z0 = rng.uniform(0.0, 2.0, n)
    h = G @ z0 + rng.uniform(0.0, 1.0, m)
    return c, G, h


class TestSimplexBasics:
    def test_min_x_above_one(self):
        st_, z, _, _ = simplex_solve(np.array([1.0]), np.array([[-1.0]]), np.array([-1.0]))
        assert st_ == "optimal"
        assert z[0] == pytest.approx(1.0)

    def test_split_pair_band(self):
        c = np.ones(2)
        G = np.array([[1.0, -1.0], [-1.0, 1.0]])
        h = np.array([0.5, -0.5])
        st_, z, _, _ = simplex_solve(c, G, h)
        assert st_ == "optimal"
        assert c @ z == pytest.approx(0.5)
        assert z == pytest.approx([0.5, 0.0])

    def test_infeasible(self):
        st_, _, _, _ = simplex_solve(np.array([1.0]), np.array([[1.0]]), np.array([-1.0]))
        assert st_ == "infeasible"

    def test_unbounded(self):
        st_, _, _, ray = simplex_solve(np.array([-1.0]), np.array([[0.0]]), np.array([1.0]))
        assert st_ == "unbounded"
        assert ray[0] > 0

    def test_iteration_limit_status(self):
        rng = np.random.default_rng(3)
        c, G, h = random_feasible_lp(rng, max_vars=6, max_rows=8)
        st_, _, _, _ = simplex_solve(c, G, h, max_iterations=1)
        assert st_ in ("iteration_limit", "optimal")


class TestOracle:
    def test_hundred_random_lps_match_enumeration(self):
        rng = np.random.default_rng(20240501)
        for _ in range(100):
            c, G, h = random_feasible_lp(rng)
            ref = brute_force_lp(c, G, h)
            assert ref is not None
            st_, z, _, _ = simplex_solve(c, G, h)
            assert st_ == "optimal"
            obj = float(c @ z)
            assert obj == pytest.approx(ref, abs=1e-7, rel=1e-7)
            assert np.max(G @ z - h) <= 1e-8
            assert z.min() >= -1e-12

    def test_row_generation_agrees_with_direct(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            c, G, h = random_feasible_lp(rng, max_vars=5, max_rows=8)
            direct = solve(LpProblem(costs=c, inequalities=G, rhs=h),
                           SolverOptions(row_generation=False))
            rowgen = solve(LpProblem(costs=c, inequalities=G, rhs=h))
            assert direct.status == rowgen.status == "optimal"
            assert rowgen.objective == pytest.approx(direct.objective, abs=1e-7, rel=1e-7)
            assert rowgen.max_violation <= 1e-8

    def test_weak_duality_sanity(self):
        rng = np.random.default_rng(4242)
        for _ in range(20):
            c, G, h = random_feasible_lp(rng)
            sol = solve(LpProblem(costs=c, inequalities=G, rhs=h))
            for _ in range(20):
                z = rng.uniform(0.0, 3.0, c.size)
                if np.all(G @ z <= h):
                    assert c @ z >= sol.objective - 1e-7

    def test_scipy_adapter_cross_check(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c, G, h = random_feasible_lp(rng)
            mine = solve(LpProblem(costs=c, inequalities=G, rhs=h))
            ext = solve(LpProblem(costs=c, inequalities=G, rhs=h), adapter=scipy_linprog_adapter)
            assert ext.status == "optimal"
            assert mine.objective == pytest.approx(ext.objective, abs=1e-6, rel=1e-6)


class TestDeterminism:
    def test_bitwise_identical_reruns(self):
        rng = np.random.default_rng(11)
        c, G, h = random_feasible_lp(rng)
        a = solve(LpProblem(costs=c, inequalities=G, rhs=h))
        b = solve(LpProblem(costs=c, inequalities=G, rhs=h))
        assert a.status == b.status
        assert a.objective == b.objective          # bitwise
        assert np.array_equal(a.z, b.z)
        assert a.iterations == b.iterations


class TestToLp:
    def make_system(self, flat_quote_set, eps=5e-4):
        grid = build_fine_grid(flat_quote_set, 25, 5)
        fam_t = orthonormal_family(grid.maturities, 2)
        fam_k = orthonormal_family(dedup_nodes(grid.strikes.ravel()), 4)
        basis = tensor_matrix(fam_t, fam_k, grid)
        return assemble(grid, basis, flat_quote_set, ToleranceSpec("relative", eps)), basis

    def test_variable_split_count(self, flat_quote_set):
        system, basis = self.make_system(flat_quote_set)
        lp = to_lp(system, basis.column_weights)
        assert lp.costs.size == 2 * basis.n_columns
        assert lp.split == basis.n_columns
        n_quotes = len(flat_quote_set.quotes)
        assert lp.rhs.size == 2 * n_quotes + system.L.shape[0]

    def test_infinite_band_drops_rows(self, flat_quote_set):
        system, basis = self.make_system(flat_quote_set)
        wide = type(system)(L=np.zeros((0, system.A.shape[1])), J=np.zeros(0),
                            A=system.A, c_target=system.c_target,
                            epsilon=np.full(system.c_target.shape, np.inf), blocks={})
        lp = to_lp(wide, basis.column_weights)
        assert lp.rhs.size == 0
        sol = solve(lp)
        assert sol.status == "optimal"
        assert sol.objective == 0.0
        assert np.all(sol.z == 0.0)

    def test_single_coefficient_equality_band(self):
        from callsurf.constraints import ConstraintSystem
        system = ConstraintSystem(
            L=np.zeros((0, 1)), J=np.zeros(0),
            A=np.array([[1.0]]), c_target=np.array([0.7]),
            epsilon=np.array([0.0]), blocks={},
        )
        lp = to_lp(system, np.array([1.0]))
        sol = solve(lp)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(0.7, abs=1e-9)
        assert recover_x(sol) == pytest.approx([0.7], abs=1e-9)
        assert sol.complementarity <= 1e-8

    def test_nonpositive_weight_rejected(self, flat_quote_set):
        system, basis = self.make_system(flat_quote_set)
        bad = np.ones(basis.n_columns)
        bad[0] = 0.0
        with pytest.raises(ValidationError):
            to_lp(system, bad)


class TestRecoverX:
    def test_simple_split(self):
        sol = LpSolution(status="optimal", z=np.array([1.0, 0.0, 0.0, 2.0]),
                         objective=3.0, iterations=1, max_violation=0.0, split=2)
        assert np.array_equal(recover_x(sol), [1.0, -2.0])

    def test_zero_point(self):
        sol = LpSolution(status="optimal", z=np.zeros(4), objective=0.0,
                         iterations=0, max_violation=0.0, split=2)
        assert np.array_equal(recover_x(sol), [0.0, 0.0])

    def test_unique_feasible_point_recovered(self):
        rng = np.random.default_rng(5)
        n = 4
        A = rng.normal(size=(n, n)) + 3 * np.eye(n)
        x_true = rng.uniform(-1, 1, n)
        b = A @ x_true
        G = np.block([[A, -A], [-A, A]])
        h = np.concatenate([b, -b])
        sol = solve(LpProblem(costs=np.ones(2 * n), inequalities=G, rhs=h, split=n))
        assert sol.status == "optimal"
        assert recover_x(sol) == pytest.approx(x_true, abs=1e-7)

    def test_requires_optimal_status(self):
        sol = LpSolution(status="infeasible", z=np.zeros(2), objective=0.0,
                         iterations=0, max_violation=1.0, split=1)
        with pytest.raises(SolverStateError):
            recover_x(sol)


@given(st.integers(min_value=0, max_value=10**9))
@settings(max_examples=40, deadline=None)
def test_complementarity_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 7))
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = A @ x0 + rng.uniform(0.0, 0.5, m)
    G = np.block([[A, -A], [-A, A]])
    h = np.concatenate([b + 0.1, -(b - 0.1)])
    sol = solve(LpProblem(costs=np.ones(2 * n), inequalities=G, rhs=h, split=n))
    if sol.status == "optimal":
        assert sol.complementarity <= 1e-8
