import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from callsurf.constraints import (
    ToleranceSpec,
    assemble,
    bound_block,
    butterfly_block,
    calendar_block,
    slope_lower_block,
    vertical_block,
)
from callsurf.market_data import Curve, Quote, QuoteSet, build_fine_grid
from callsurf.poly_basis import dedup_nodes, orthonormal_family, tensor_matrix

from conftest import bs_call_oracle, flat_vol_quotes


def small_grid(n_strikes=6, n_mats=3, rate=0.0, dividend=0.0):
    strikes = np.linspace(90, 110, min(4, n_strikes))
    mats = (0.5, 1.0) if n_mats == 2 else (0.5, 0.75, 1.0)
    qs = QuoteSet(
        spot=100.0,
        maturities=mats,
        rate_curve=Curve.flat(rate),
        dividend_curve=Curve.flat(dividend),
        quotes=tuple(Quote(T, float(K), 1.0, 2.0, 3.0) for T in mats for K in strikes),
    )
    return build_fine_grid(qs, n_strikes, n_mats)


def small_basis(grid, n_t=2, n_k=4):
    fam_t = orthonormal_family(grid.maturities, n_t)
    fam_k = orthonormal_family(dedup_nodes(grid.strikes.ravel()), n_k)
    return tensor_matrix(fam_t, fam_k, grid)


def bs_price_grid(grid, sigma=0.2):
    prices = np.empty(grid.strikes.shape)
    for m, T in enumerate(grid.maturities):
        r = grid.rate_curve(T)
        q = grid.dividend_curve(T)
        for k, K in enumerate(grid.strikes[m]):
            prices[m, k] = bs_call_oracle(grid.spot, K, T, r, q, sigma)
    return prices


class TestButterfly:
    def test_asymmetric_butterfly_payoff_value(self):
        # three-strike position priced off its payoff at expiry spot 120
        k1, k2, k3 = 100.0, 120.0, 150.0
        payoff = lambda K, s: max(s - K, 0.0)
        s = 120.0
        value = (k3 - k2) * payoff(k1, s) - (k3 - k1) * payoff(k2, s) + (k2 - k1) * payoff(k3, s)
        assert value == 600.0
        # the interior stencil is this butterfly scaled by 1/(K3-K2)
        stencil = np.array([1.0, -(k3 - k1) / (k3 - k2), (k2 - k1) / (k3 - k2)])
        prices = np.array([payoff(k, s) for k in (k1, k2, k3)])
        assert stencil @ prices == pytest.approx(value / (k3 - k2))

    def test_equidistant_interior_stencil(self):
        grid = small_grid()
        bf, rhs = butterfly_block(grid)
        dense = bf.toarray()
        m_k = grid.n_strikes
        row = dense[1, :m_k]   # first interior row of slice 0
        nz = row[row != 0.0]
        assert nz == pytest.approx([1.0, -2.0, 1.0])

    def test_rhs_at_slice_initial_rows(self):
        grid = small_grid()
        bf, rhs = butterfly_block(grid)
        m_k = grid.n_strikes
        for m in range(grid.n_slices):
            expected = -grid.spot * grid.discounts[m] * grid.forwards[m]
            assert rhs[m * m_k] == pytest.approx(expected)
            assert np.all(rhs[m * m_k + 1:(m + 1) * m_k] == 0.0)

    def test_convex_decreasing_prices_satisfy(self):
        grid = small_grid(n_strikes=12)
        bf, rhs = butterfly_block(grid)
        prices = bs_price_grid(grid).ravel()
        assert np.all(bf @ prices - rhs >= -1e-8)

    @given(st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_random_convex_decreasing_curves(self, seed):
        rng = np.random.default_rng(seed)
        grid = small_grid(n_strikes=10)
        m_k = grid.n_strikes
        prices = np.empty(grid.strikes.shape)
        for m in range(grid.n_slices):
            # slopes increase from about -1 toward 0 => convex decreasing
            slopes = np.sort(-rng.uniform(0.0, 1.0, m_k - 1))[::-1]
            slopes = np.sort(slopes)
            start = rng.uniform(20.0, 40.0)
            prices[m, 0] = start
            prices[m, 1:] = start + np.cumsum(slopes * np.diff(grid.strikes[m]))
        prices = np.maximum(prices, 0.0)
        bf, rhs = butterfly_block(grid)
        vals = bf @ prices.ravel() - rhs
        interior = np.ones(vals.size, dtype=bool)
        interior[::m_k] = False          # slice-initial rows need the cap
        assert np.all(vals[interior] >= -1e-8)


class TestCalendar:
    def test_dimension_formula(self):
        grid = small_grid(n_strikes=3, n_mats=2)
        g = calendar_block(grid)
        assert g.shape == (3, 6)

    def test_zero_carry_rows(self):
        grid = small_grid(n_strikes=4)
        g = calendar_block(grid).toarray()
        m_k = grid.n_strikes
        row = g[0]
        assert row[0] == pytest.approx(1.0)
        assert row[m_k] == pytest.approx(-1.0)
        assert np.count_nonzero(row) == 2

    def test_ratio_with_carry(self):
        grid = small_grid(rate=0.03, dividend=0.01)
        g = calendar_block(grid).toarray()
        m_k = grid.n_strikes
        df = grid.discounts * grid.forwards
        assert g[0, 0] == pytest.approx(df[1] / df[0])

    def test_flat_vol_prices_satisfy(self):
        grid = small_grid(n_strikes=10, rate=0.02, dividend=0.01)
        g = calendar_block(grid)
        prices = bs_price_grid(grid).ravel()
        assert np.max(g @ prices) <= 1e-8


class TestVertical:
    def test_monotone_row_shape(self):
        grid = small_grid(n_strikes=3, n_mats=2)
        h, rhs = vertical_block(grid)
        dense = h.toarray()
        assert dense[1, :3] == pytest.approx([-1.0, 1.0, 0.0])
        assert rhs[1] == 0.0

    def test_cap_row_literal_value(self):
        # slice-initial cap D * F * S with D=1, F=S=100
        strikes = np.linspace(90, 110, 4)
        qs = QuoteSet(spot=100.0, maturities=(1.0,), rate_curve=Curve.flat(0.0),
                      dividend_curve=Curve.flat(0.0),
                      quotes=tuple(Quote(1.0, float(K), 1.0, 2.0, 3.0) for K in strikes))
        grid = build_fine_grid(qs, 4, 1, strike_extension=0.0)
        h, rhs = vertical_block(grid)
        assert rhs[0] == pytest.approx(10000.0)

    def test_decreasing_prices_satisfy_monotone_rows(self):
        grid = small_grid(n_strikes=8)
        h, rhs = vertical_block(grid)
        prices = bs_price_grid(grid)
        vals = h @ prices.ravel() - rhs
        mask = np.ones(vals.size, dtype=bool)
        mask[::grid.n_strikes] = False
        assert np.all(vals[mask] <= 1e-8)

    def test_slope_lower_block_bounds_decrement(self):
        grid = small_grid(n_strikes=8)
        lo, rhs = slope_lower_block(grid)
        prices = bs_price_grid(grid)
        assert np.all(lo @ prices.ravel() <= rhs + 1e-8)


class TestBound:
    def test_far_strike_above_forward(self, flat_quote_set):
        grid = build_fine_grid(flat_quote_set, 20, 4)
        row, rhs = bound_block(grid)
        assert rhs == 0.0
        assert row[grid.n_strikes - 1] == 1.0

    def test_far_strike_below_forward(self):
        strikes = np.array([50.0, 60.0, 70.0])
        qs = flat_vol_quotes(maturities=(1.0,), strikes=strikes)
        grid = build_fine_grid(qs, 3, 1, strike_extension=0.0)
        row, rhs = bound_block(grid)
        assert rhs == pytest.approx(100.0 - 70.0)


class TestAssemble:
    def test_paper_row_count(self, flat_quote_set):
        grid = build_fine_grid(flat_quote_set, 104, 11)
        basis = small_basis(grid, n_t=3, n_k=5)
        system = assemble(grid, basis, flat_quote_set)
        assert system.L.shape[0] == 104 * (4 * 11 - 1) + 1 == 4473
        spans = sorted(system.blocks.values())
        assert spans[0][0] == 0 and spans[-1][1] == 4473
        assert set(system.blocks) == {"butterfly", "calendar", "vertical", "bound"}

    @pytest.mark.parametrize("m_k,m_t", [(8, 2), (10, 3), (15, 5)])
    def test_row_count_formula_general(self, m_k, m_t):
        strikes = np.linspace(90, 110, 4)
        mats = tuple(np.linspace(0.5, 1.0, max(m_t - 1, 2)))
        qs = QuoteSet(spot=100.0, maturities=mats, rate_curve=Curve.flat(0.0),
                      dividend_curve=Curve.flat(0.0),
                      quotes=tuple(Quote(T, float(K), 1.0, 2.0, 3.0) for T in mats for K in strikes))
        grid = build_fine_grid(qs, m_k, m_t)
        basis = small_basis(grid, n_t=2, n_k=3)
        system = assemble(grid, basis, qs)
        assert system.L.shape[0] == m_k * (4 * m_t - 1) + 1

    def test_relative_tolerance_band(self, flat_quote_set):
        grid = build_fine_grid(flat_quote_set, 30, 5)
        basis = small_basis(grid)
        system = assemble(grid, basis, flat_quote_set, ToleranceSpec("relative", 5e-4))
        mids = np.array([q.mid for q in flat_quote_set.quotes])
        assert np.allclose(system.epsilon, 5e-4 * np.abs(mids))
        assert np.allclose(system.fit_hi - system.fit_lo, 2 * system.epsilon)

    def test_bidask_mode_degenerates_to_interpolation(self):
        qs = flat_vol_quotes(spread=0.0)
        grid = build_fine_grid(qs, 30, 5)
        basis = small_basis(grid)
        system = assemble(grid, basis, qs, ToleranceSpec("bidask"))
        assert np.all(system.epsilon == 0.0)

    def test_bs_price_vector_feasible(self, flat_quote_set):
        # a flat-vol surface satisfies every no-arbitrage row: express it as
        # L applied to a coefficient vector via least squares on an exactly
        # representable case (here: check the block matrices on prices directly)
        grid = build_fine_grid(flat_quote_set, 25, 6)
        prices = bs_price_grid(grid).ravel()
        bf, r = butterfly_block(grid)
        g = calendar_block(grid)
        h, u = vertical_block(grid)
        lo, v = slope_lower_block(grid)
        row, rhs = bound_block(grid)
        assert np.all(bf @ prices >= r - 1e-8)
        assert np.max(g @ prices) <= 1e-8
        assert np.all(h @ prices <= u + 1e-8)
        assert np.all(lo @ prices <= v + 1e-8)
        assert row @ prices >= rhs - 1e-8

    def test_orientation_roundtrip(self):
        grid = small_grid()
        bf, r = butterfly_block(grid)
        negated_twice = -(-bf.toarray())
        assert np.array_equal(negated_twice, bf.toarray())

    def test_restricted_domain_drops_extension_rows(self, flat_quote_set):
        grid = build_fine_grid(flat_quote_set, 40, 6)
        basis = small_basis(grid)
        full = assemble(grid, basis, flat_quote_set, enforce_extended=True)
        trimmed = assemble(grid, basis, flat_quote_set, enforce_extended=False)
        assert trimmed.L.shape[0] < full.L.shape[0]
