"""Seeded Monte Carlo oracles for the TSS and ATS marginals.

Only the Gamma (alpha = 0) and inverse Gaussian (alpha = 1/2) subordinators
have exact samplers here; other indices raise ``ValidationError``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .model import ModelParams, TenorParams
from .pricing import EuropeanOption
from .subordination import TssSpec

SUPPORTED_ALPHAS = (0.0, 0.5)


@dataclass(frozen=True)
class RngSpec:
    """A reproducible random stream: same ``(seed, stream)`` gives the same draws."""

    seed: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return RngSpec(int(rng)).generator()


def _check_alpha(alpha: float) -> None:
    if alpha not in SUPPORTED_ALPHAS:
        raise ValidationError(f"exact sampling is only available for alpha in {SUPPORTED_ALPHAS}, got {alpha!r}")


def _subordinator(t: float, sigma: float, k: float, alpha: float, n: int, gen: np.random.Generator) -> np.ndarray:
    mean = t * sigma * sigma
    if alpha == 0.0:
        return gen.gamma(shape=t / k, scale=sigma * sigma * k, size=n)
    # inverse Gaussian with mean t sigma^2 and shape t^2 sigma^2 / k
    return gen.wald(mean, t * t * sigma * sigma / k, size=n)


def sample_tss_marginal(t: float, spec: TssSpec, n: int, rng=RngSpec()) -> np.ndarray:
    """``n`` draws of ``Z_t`` (mean ``t sigma_t^2``, variance ``t sigma_t^4 k_t``)."""
    _check_alpha(spec.alpha)
    if t <= 0:
        raise ValidationError("t must be positive")
    if n == 0:
        return np.empty(0)
    return _subordinator(t, spec.sigma(t), spec.k(t), spec.alpha, n, _rng(rng))


def sample_ats_marginal(tenor: TenorParams, alpha: float, n: int, rng=RngSpec()) -> np.ndarray:
    """Draws of ``f_T = -(eta + 1/2) Z + sqrt(Z) G + phi T`` at the tenor's maturity."""
    _check_alpha(alpha)
    if tenor.phi is None:
        tenor = tenor.with_drift(alpha)
    if n == 0:
        return np.empty(0)
    gen = _rng(rng)
    T = tenor.T
    # Z here is sigma^2 times a unit-mean-rate subordinator, so sqrt(Z) G carries sigma
    z = _subordinator(T, tenor.sigma, tenor.k, alpha, n, gen) if tenor.k > 0 else np.full(n, T * tenor.sigma ** 2)
    g = gen.standard_normal(n)
    return -(tenor.eta + 0.5) * z + np.sqrt(z) * g + tenor.phi * T


def mc_price(opt: EuropeanOption, params: ModelParams, n: int, rng=RngSpec()) -> tuple[float, float]:
    """Monte Carlo price and its standard error."""
    if n < 2:
        raise ValidationError("need at least two samples for a standard error")
    f = sample_ats_marginal(params.tenor(opt.T), params.alpha, n, rng)
    m = opt.K / opt.F
    payoff = np.maximum(np.exp(f) - m, 0.0) if opt.is_call else np.maximum(m - np.exp(f), 0.0)
    scale = opt.D * opt.F
    return float(scale * payoff.mean()), float(scale * payoff.std(ddof=1) / np.sqrt(n))


def empirical_chf(samples: np.ndarray, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.exp(1j * np.outer(u, samples)).mean(axis=1)
