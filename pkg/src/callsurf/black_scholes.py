"""Black-Scholes call pricing used for quote conversion and diagnostics."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr


def call_price(spot, strike, maturity, rate=0.0, dividend=0.0, sigma=0.2):
    """Forward form C = D(T) * (F*N(d1) - K*N(d2)), vectorised.

    F = spot*exp((rate-dividend)*T), D = exp(-rate*T).  sigma=0 returns the
    discounted intrinsic value D*(F-K)^+.
    """
    spot = np.asarray(spot, dtype=float)
    strike = np.asarray(strike, dtype=float)
    T = np.asarray(maturity, dtype=float)
    rate = np.asarray(rate, dtype=float)
    dividend = np.asarray(dividend, dtype=float)
    sigma = np.asarray(sigma, dtype=float)

    fwd = spot * np.exp((rate - dividend) * T)
    disc = np.exp(-rate * T)
    vol = sigma * np.sqrt(T)

    safe = np.where(vol > 0.0, vol, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(fwd / strike) + 0.5 * safe**2) / safe
    d2 = d1 - safe
    price = disc * (fwd * ndtr(d1) - strike * ndtr(d2))
    intrinsic = disc * np.maximum(fwd - strike, 0.0)
    price = np.where(vol > 0.0, price, intrinsic)
    return price if price.ndim else float(price)


def vega(spot, strike, maturity, rate=0.0, dividend=0.0, sigma=0.2):
    """dC/dsigma = D * F * phi(d1) * sqrt(T)."""
    fwd = spot * math.exp((rate - dividend) * maturity)
    disc = math.exp(-rate * maturity)
    vol = sigma * math.sqrt(maturity)
    if vol <= 0.0:
        return 0.0
    d1 = (math.log(fwd / strike) + 0.5 * vol * vol) / vol
    phi = math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)
    return disc * fwd * phi * math.sqrt(maturity)
