"""Shared synthetic market builders and independent oracles.

The oracles here are deliberately written against scipy/stdlib rather
than the package's own pricing helpers, so tests cross two independent
implementations wherever a value is asserted.
"""

import numpy as np
import pytest
from scipy.stats import norm

from callsurf.market_data import Curve, Quote, QuoteSet


def bs_call_oracle(spot, strike, maturity, rate=0.0, dividend=0.0, sigma=0.2):
    """Black-Scholes call via scipy.stats.norm (independent of the package)."""
    fwd = spot * np.exp((rate - dividend) * maturity)
    disc = np.exp(-rate * maturity)
    vol = sigma * np.sqrt(maturity)
    if vol <= 0:
        return disc * max(fwd - strike, 0.0)
    d1 = (np.log(fwd / strike) + 0.5 * vol**2) / vol
    d2 = d1 - vol
    return disc * (fwd * norm.cdf(d1) - strike * norm.cdf(d2))


def lognormal_pdf_oracle(strike, forward, sigma, maturity):
    """Risk-neutral density of a flat-vol model (undiscounted)."""
    v = sigma * np.sqrt(maturity)
    z = (np.log(strike / forward) + 0.5 * v * v) / v
    return np.exp(-0.5 * z * z) / (strike * v * np.sqrt(2.0 * np.pi))


def flat_vol_quotes(spot=100.0, sigma=0.2, maturities=(0.9, 0.95, 1.0),
                    strikes=None, spread=0.0):
    """QuoteSet generated from a flat-volatility model, r = q = 0."""
    if strikes is None:
        strikes = np.linspace(66.0, 145.0, 9)
    quotes = []
    for T in maturities:
        for K in np.asarray(strikes, dtype=float):
            mid = bs_call_oracle(spot, K, T, 0.0, 0.0, sigma)
            quotes.append(Quote(float(T), float(K), mid - spread / 2, mid, mid + spread / 2))
    return QuoteSet(
        spot=spot,
        maturities=tuple(float(T) for T in maturities),
        rate_curve=Curve.flat(0.0),
        dividend_curve=Curve.flat(0.0),
        quotes=tuple(quotes),
    )


PEG_SPOT = 7.80
PEG_MATURITIES = (1.0 / 52, 1.0 / 12, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
PEG_STRIKES = (7.75, 7.775, 7.80, 7.825, 7.85)


def pegged_call_oracle(strike, maturity, spot=PEG_SPOT):
    """Call price when the rate at expiry is uniform on a band inside the peg.

    Width grows from 0.02 to 0.05 with maturity, so calls increase in
    maturity and the density support stays inside [7.75, 7.85].
    """
    w = 0.02 + 0.03 * min(maturity, 1.0)
    a, b = spot - w, spot + w
    if strike <= a:
        return spot - strike
    if strike >= b:
        return 0.0
    return (b - strike) ** 2 / (4.0 * w)


def pegged_fx_quotes(spread=0.004):
    """Bid/ask quotes of the pegged-pair synthetic (r = q = 0)."""
    quotes = []
    for T in PEG_MATURITIES:
        for K in PEG_STRIKES:
            c = pegged_call_oracle(K, T)
            bid = max(c - spread / 2, 0.0)
            ask = c + spread / 2
            quotes.append(Quote(float(T), float(K), bid, 0.5 * (bid + ask), ask))
    return QuoteSet(
        spot=PEG_SPOT,
        maturities=tuple(float(T) for T in PEG_MATURITIES),
        rate_curve=Curve.flat(0.0),
        dividend_curve=Curve.flat(0.0),
        quotes=tuple(quotes),
    )


@pytest.fixture(scope="session")
def flat_quote_set():
    return flat_vol_quotes()


@pytest.fixture(scope="session")
def peg_quote_set():
    return pegged_fx_quotes()
