"""European option pricing: damped Fourier inversion of the ATS characteristic
function, Black reference prices, implied volatilities, delta and ATM skew."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .exceptions import NumericalError, ValidationError
from .model import ModelParams, TenorParams, ats_log_chf


@dataclass(frozen=True)
class PricingGrid:
    """Quadrature settings for the Fourier pricer.

    ``truncation=None`` picks the upper integration bound from the decay of the
    characteristic function; ``n_nodes`` is a floor that is raised when the
    integrand oscillates faster than the panels can resolve.
    """

    damping: float = 0.75
    truncation: float | None = None
    n_nodes: int = 2048
    rule: str = "gauss-legendre"
    trunc_tol: float = 1e-13
    max_truncation: float = 2e5

    def __post_init__(self):
        if self.damping <= 0:
            raise ValidationError("damping must be positive (call convention)")
        if self.truncation is not None and self.truncation <= 0:
            raise ValidationError("truncation bound must be positive")
        if self.n_nodes <= 0:
            raise ValidationError("node count must be positive")
        if self.rule != "gauss-legendre":
            raise ValidationError(f"unknown quadrature rule {self.rule!r}")


@dataclass(frozen=True)
class EuropeanOption:
    K: float
    T: float
    is_call: bool = True
    F: float = 100.0
    D: float = 1.0

    def __post_init__(self):
        if not (self.K > 0 and self.T > 0 and self.F > 0):
            raise ValidationError("strike, maturity and forward must be positive")
        if not 0 < self.D <= 1.0:
            raise ValidationError("discount factor must lie in (0, 1]")


_PANEL = 16


@lru_cache(maxsize=None)
def _gl_panel():
    return np.polynomial.legendre.leggauss(_PANEL)


def _nodes(upper: float, h: float, a: float, n_min: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on ``[0, upper]``.

    The Carr-Madan denominator has poles at ``i a`` and ``i(a+1)``, so panels
    grow geometrically from width ``~a/2`` at the origin until they reach the
    uniform width ``h`` used on the rest of the interval.
    """
    x, w = _gl_panel()
    edges = [0.0]
    e = 0.5 * min(a, 1.0)
    while e < upper and 0.5 * e < h:
        edges.append(e)
        e *= 1.5
    n_uniform = max(int(math.ceil((upper - edges[-1]) / h)), n_min // _PANEL - len(edges) + 1, 1)
    edges = np.concatenate([edges[:-1], np.linspace(edges[-1], upper, n_uniform + 1)])
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    v = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return v, wt


def admissible_damping(tenor: TenorParams, alpha: float, damping: float) -> float:
    """Largest damping not above ``damping`` keeping ``E[exp((1+a) f_T)]`` finite.

    Shifting the contour to ``Im u = -(1+a)`` needs ``1+a`` strictly inside the
    moment strip ``(c_-, c_+)``; the damping is moved to the midpoint between 1
    and ``c_+`` when the requested value is too large.
    """
    s2k = tenor.sigma ** 2 * tenor.k
    if s2k <= 0:
        return damping
    b = 0.5 + tenor.eta
    c_plus = b + math.sqrt(b * b + 2.0 * (1.0 - alpha) / s2k)
    return min(damping, 0.5 * (c_plus - 1.0))


def _psi(v: np.ndarray, tenor: TenorParams, alpha: float, a: float) -> np.ndarray:
    u = v - 1j * (a + 1.0)
    return np.exp(ats_log_chf(u, tenor, alpha)) / (a * a + a - v * v + 1j * (2.0 * a + 1.0) * v)


def _truncation(tenor: TenorParams, alpha: float, a: float, x_min: float, grid: PricingGrid) -> float:
    if grid.truncation is not None:
        return grid.truncation
    v = np.geomspace(1.0, grid.max_truncation, 161)
    bound = np.abs(_psi(v, tenor, alpha, a)) * math.exp(-a * x_min) / math.pi
    bad = np.nonzero(bound > grid.trunc_tol)[0]
    if bad.size == 0:
        return float(v[0])
    if bad[-1] == v.size - 1:
        return float(grid.max_truncation)
    return float(v[bad[-1] + 1])


def fourier_call_prices(strikes, tenor: TenorParams, alpha: float, F: float = 1.0, D: float = 1.0,
                        grid: PricingGrid = PricingGrid()) -> np.ndarray:
    """Undamped call prices for many strikes at one maturity.

    Carr-Madan representation in log-moneyness ``x = ln(K/F)``::

        C = D F e^{-a x}/pi int_0^inf Re[e^{-ivx} phi(v - (a+1)i) /
                                       (a^2 + a - v^2 + i(2a+1)v)] dv

    evaluated by composite Gauss-Legendre quadrature on ``[0, U]``.
    """
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    if np.any(strikes <= 0):
        raise ValidationError("strikes must be positive")
    if tenor.phi is None:
        tenor = tenor.with_drift(alpha)
    x = np.log(strikes / F)
    a = admissible_damping(tenor, alpha, grid.damping)
    upper = _truncation(tenor, alpha, a, float(x.min()), grid)
    # 16-point panels integrate e^{iwv} to machine precision while w*h <~ 8;
    # the characteristic function itself varies on the scale 1/(sigma sqrt(T))
    h = min(8.0 / max(float(np.abs(x).max()), 1e-8), 2.0 / (tenor.sigma * math.sqrt(tenor.T)))
    v, wt = _nodes(upper, h, a, grid.n_nodes)
    psi = _psi(v, tenor, alpha, a) * wt
    integral = np.cos(np.outer(x, v)) @ psi.real + np.sin(np.outer(x, v)) @ psi.imag
    calls = np.exp(-a * x) / math.pi * integral
    if not np.all(np.isfinite(calls)):
        raise NumericalError("non-finite Fourier price")
    # round-off can push prices marginally outside the no-arbitrage band
    return D * F * np.clip(calls, np.maximum(0.0, 1.0 - np.exp(x)), 1.0)


def fourier_price(opt: EuropeanOption, params: ModelParams, grid: PricingGrid = PricingGrid()) -> float:
    """Price of one European option; puts follow from put-call parity."""
    tenor = params.tenor(opt.T)
    call = float(fourier_call_prices([opt.K], tenor, params.alpha, opt.F, opt.D, grid)[0])
    return call if opt.is_call else call - opt.D * (opt.F - opt.K)


# ---------------------------------------------------------------- Black

def black(F, K, T, D, sigma, is_call=True):
    """Vectorised Black formula on the forward."""
    F, K, T, D, sigma = (np.asarray(a, dtype=float) for a in (F, K, T, D, sigma))
    sign = np.where(np.asarray(is_call), 1.0, -1.0)
    vol = sigma * np.sqrt(T)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.log(F / K) / vol + 0.5 * vol
        d2 = d1 - vol
        price = D * sign * (F * special.ndtr(sign * d1) - K * special.ndtr(sign * d2))
    intrinsic = D * np.maximum(sign * (F - K), 0.0)
    out = np.where(vol > 0, price, intrinsic)
    return out[()] if out.ndim == 0 else out


def black_price(opt: EuropeanOption, sigma_bs: float) -> float:
    if sigma_bs < 0:
        raise ValidationError("volatility must be non-negative")
    return float(black(opt.F, opt.K, opt.T, opt.D, sigma_bs, opt.is_call))


def bs_delta(opt: EuropeanOption, sigma_bs: float) -> float:
    """Undiscounted forward delta ``N(d1)``; puts report the call-equivalent delta."""
    if sigma_bs <= 0:
        raise ValidationError("delta needs a positive volatility")
    vol = sigma_bs * math.sqrt(opt.T)
    return float(special.ndtr(math.log(opt.F / opt.K) / vol + 0.5 * vol))


def implied_vol(price: float, opt: EuropeanOption, tol: float = 1e-10, maxiter: int = 200) -> float:
    """Black implied volatility by bracketing and Brent's method."""
    lower = opt.D * max(opt.F - opt.K, 0.0) if opt.is_call else opt.D * max(opt.K - opt.F, 0.0)
    upper = opt.D * opt.F if opt.is_call else opt.D * opt.K
    if not price > lower:
        raise ValidationError(f"price {price!r} is not above the intrinsic value {lower!r}")
    if not price < upper:
        raise ValidationError(f"price {price!r} is not below the upper bound {upper!r}")

    def f(s):
        return black_price(opt, s) - price

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise NumericalError("could not bracket the implied volatility")
    sigma, info = optimize.brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                  maxiter=maxiter, full_output=True, disp=False)
    if abs(f(sigma)) > tol * max(1.0, price):
        raise NumericalError(f"implied volatility did not converge ({info.flag})")
    return float(sigma)


def implied_vols(prices, F, K, T, D, is_call=True, maxiter: int = 200) -> np.ndarray:
    """Vectorised implied volatilities (safeguarded Newton on total volatility).

    Prices on or outside the no-arbitrage band map to 0 (below intrinsic) or
    ``inf`` (at the upper bound) instead of raising, which keeps optimisers
    running when a trial parameter set produces a degenerate smile.
    """
    prices, F, K, T, D = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (prices, F, K, T, D)))
    is_call = np.broadcast_to(np.asarray(is_call, dtype=bool), prices.shape)
    x = np.log(K / F)
    c = prices / (D * F)
    # out-of-the-money normalised value: call for x >= 0, put for x < 0
    parity = 1.0 - np.exp(x)
    otm = np.where(x >= 0, np.where(is_call, c, c + parity), np.where(is_call, c - parity, c))
    hi_bound = np.where(x >= 0, 1.0, np.exp(x))
    low_mask = otm <= 0.0
    high_mask = otm >= hi_bound

    def value(v):
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = -x / v + 0.5 * v
            d2 = d1 - v
            call = special.ndtr(d1) - np.exp(x) * special.ndtr(d2)
            put = np.exp(x) * special.ndtr(-d2) - special.ndtr(-d1)
        return np.where(x >= 0, call, put), np.exp(-0.5 * d1 * d1) / math.sqrt(2 * math.pi)

    target = np.clip(otm, 1e-300, hi_bound * (1 - 1e-16))
    lo = np.zeros_like(x)
    hi = np.full_like(x, 1.0)
    for _ in range(60):
        val, _ = value(hi)
        grow = val < target
        if not grow.any():
            break
        hi = np.where(grow, hi * 2.0, hi)
    # Newton started at the inflection point sqrt(2|x|) converges monotonically
    v = np.sqrt(2.0 * np.abs(x))
    v = np.where((v > lo) & (v < hi), v, 0.5 * (lo + hi))
    for _ in range(maxiter):
        val, vega = value(v)
        err = val - target
        lo = np.where(err < 0, v, lo)
        hi = np.where(err > 0, v, hi)
        # Newton on the log value: well behaved for deep out-of-the-money quotes
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = v - (np.log(val) - np.log(target)) * val / vega
        ok = (newton > lo) & (newton < hi) & np.isfinite(newton)
        v_new = np.where(ok, newton, 0.5 * (lo + hi))
        done = (np.abs(err) <= 1e-15 * target) | (hi - lo <= 1e-15 * hi)
        v = np.where(done, v, v_new)
        if done.all():
            break
    sigma = v / np.sqrt(T)
    sigma = np.where(low_mask, 0.0, np.where(high_mask, np.inf, sigma))
    return sigma[()] if sigma.ndim == 0 else sigma


def atm_skew(params: ModelParams, T: float, bump: float = 1e-3, F: float = 1.0, D: float = 1.0,
             per_strike: bool = False, grid: PricingGrid = PricingGrid()) -> float:
    """At-the-money implied-volatility skew by central differences in strike.

    Returned per unit log-moneyness (``F dIV/dK`` at ``K = F``) unless
    ``per_strike`` asks for ``dIV/dK``.
    """
    if bump <= 0:
        raise ValidationError("bump must be positive")
    tenor = params.tenor(T)
    strikes = F * np.array([1.0 - bump, 1.0 + bump])
    calls = fourier_call_prices(strikes, tenor, params.alpha, F, D, grid)
    iv = implied_vols(calls, F, strikes, T, D, True)
    slope = (iv[1] - iv[0]) / (2.0 * bump)
    return float(slope / F if per_strike else slope)
