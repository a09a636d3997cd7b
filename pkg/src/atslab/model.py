"""Characteristic functions of the additive normal tempered stable (ATS) model.

The log-characteristic function of the ATS at time ``t`` is

    ln E[exp(iu f_t)] = ln L_t(iu(1/2 + eta_t) sigma_t^2 + u^2 sigma_t^2 / 2; k_t, alpha)
                        + iu phi_t t

with the tempered stable Laplace exponent

    ln L_t(w; k, alpha) = (t/k) (1-alpha)/alpha (1 - (1 + w k/(1-alpha))^alpha)   0 < alpha < 1
    ln L_t(w; k, 0)     = -(t/k) ln(1 + w k)

All complex powers and logarithms use the principal branch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy import special

from .exceptions import DomainError, ValidationError

#: below this variance-of-time the Brownian limit ``-t*w`` is used
K_SERIES_SWITCH = 1e-12


def model_label(alpha: float) -> str:
    if alpha == 0.5:
        return "NIG"
    if alpha == 0.0:
        return "VG"
    return "ATS"


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must lie in [0, 1), got {alpha!r}")


def log_l(u, t: float, k: float, alpha: float):
    """Log-Laplace exponent ``ln L_t(u; k, alpha)`` of the tempered stable time change.

    ``u`` may be a complex scalar or array. ``k == 0`` (below ``K_SERIES_SWITCH``)
    returns the deterministic-time limit ``-t*u``.

    Raises
    ------
    DomainError
        If ``Re(1 + u k / (1 - alpha)) <= 0`` for some element of ``u``.
    """
    _check_alpha(alpha)
    if k < 0:
        raise ValidationError(f"k must be non-negative, got {k!r}")
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=complex)
    if k < K_SERIES_SWITCH:
        out = -t * u
    else:
        z = u * (k / (1.0 - alpha))
        if np.any(1.0 + z.real <= 0.0):
            raise DomainError("principal branch of (1 + u k/(1-alpha)) left the right half-plane")
        lz = special.log1p(z)
        if alpha == 0.0:
            out = -(t / k) * lz
        else:
            out = -(t / k) * ((1.0 - alpha) / alpha) * special.expm1(alpha * lz)
    return complex(out) if scalar else out


def martingale_drift(sigma: float, k: float, eta: float, alpha: float, t: float) -> float:
    """Drift ``phi`` making ``exp(f_t)`` a martingale: ``phi t = -ln L_t(eta sigma^2)``."""
    if t <= 0:
        raise ValidationError(f"t must be positive, got {t!r}")
    return float(-log_l(eta * sigma * sigma, t, k, alpha).real / t)


@dataclass(frozen=True)
class TenorParams:
    """ATS parameters calibrated on one maturity.

    ``phi`` may be left as ``None``; :meth:`with_drift` fills it from the
    martingale condition.
    """

    T: float
    sigma: float
    k: float
    eta: float
    phi: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValidationError(f"maturity must be positive, got {self.T!r}")
        if not self.sigma > 0:
            raise ValidationError(f"sigma must be positive, got {self.sigma!r}")
        if not self.k >= 0:
            raise ValidationError(f"k must be non-negative, got {self.k!r}")
        if not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta!r}")

    def with_drift(self, alpha: float) -> "TenorParams":
        phi = martingale_drift(self.sigma, self.k, self.eta, alpha, self.T)
        return replace(self, phi=phi)

    def to_dict(self) -> dict:
        return {"T": self.T, "sigma": self.sigma, "k": self.k, "eta": self.eta, "phi": self.phi}


@dataclass(frozen=True)
class ModelParams:
    """An ATS model: the index ``alpha`` plus per-maturity parameters."""

    alpha: float
    tenors: tuple[TenorParams, ...]
    label: str = ""

    def __post_init__(self):
        _check_alpha(self.alpha)
        tenors = tuple(self.tenors)
        mats = [tp.T for tp in tenors]
        if any(b <= a for a, b in zip(mats, mats[1:])):
            raise ValidationError("tenor maturities must be strictly increasing")
        tenors = tuple(tp if tp.phi is not None else tp.with_drift(self.alpha) for tp in tenors)
        object.__setattr__(self, "tenors", tenors)
        if not self.label:
            object.__setattr__(self, "label", model_label(self.alpha))

    @property
    def maturities(self) -> np.ndarray:
        return np.array([tp.T for tp in self.tenors])

    def tenor(self, T: float, rtol: float = 1e-10) -> TenorParams:
        """Parameters of maturity ``T``; no interpolation between tenors."""
        for tp in self.tenors:
            if abs(tp.T - T) <= rtol * max(abs(T), 1.0):
                return tp
        raise ValidationError(f"no tenor with maturity {T!r} (available: {list(self.maturities)})")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "label": self.label, "tenors": [tp.to_dict() for tp in self.tenors]}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        try:
            alpha = float(data["alpha"])
            tenors = []
            for row in data["tenors"]:
                phi = row.get("phi")
                tenors.append(TenorParams(
                    T=float(row["T"]), sigma=float(row["sigma"]), k=float(row["k"]),
                    eta=float(row["eta"]), phi=None if phi is None else float(phi)))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed model parameters: {exc}") from exc
        # a supplied phi is recomputed so the martingale condition always holds
        tenors = [replace(tp, phi=None) for tp in tenors]
        return cls(alpha=alpha, tenors=tuple(tenors), label=str(data.get("label", "")))


@dataclass(frozen=True)
class CurveSpec:
    """Power-law parameter curves ``x_t = x_bar t^beta`` used as synthetic ground truth."""

    sigma_bar: float = 0.2
    k_bar: float = 1.0
    eta_bar: float = 0.5
    beta_sigma: float = 0.0
    beta_k: float = 1.0
    delta: float = 0.0

    def sigma(self, t):
        return self.sigma_bar * np.power(t, self.beta_sigma)

    def k(self, t):
        return self.k_bar * np.power(t, self.beta_k)

    def eta(self, t):
        return self.eta_bar * np.power(t, self.delta)

    def tenor(self, t: float, alpha: float) -> TenorParams:
        tp = TenorParams(T=float(t), sigma=float(self.sigma(t)), k=float(self.k(t)), eta=float(self.eta(t)))
        return tp.with_drift(alpha)

    def model_params(self, maturities: Iterable[float], alpha: float, label: str = "") -> ModelParams:
        return ModelParams(alpha=alpha, tenors=tuple(self.tenor(t, alpha) for t in maturities), label=label)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def ats_log_chf(u, tenor: TenorParams, alpha: float):
    """Log-characteristic function of the ATS at maturity ``tenor.T``.

    ``u`` may be complex; off the real axis the caller must keep the
    tempered-stable argument in the principal-branch domain.
    """
    if tenor.phi is None:
        tenor = tenor.with_drift(alpha)
    s2 = tenor.sigma * tenor.sigma
    u = np.asarray(u, dtype=complex) if np.ndim(u) else complex(u)
    w = 1j * u * (0.5 + tenor.eta) * s2 + 0.5 * u * u * s2
    return log_l(w, tenor.T, tenor.k, alpha) + 1j * u * tenor.phi * tenor.T


def lts_log_chf(u, t: float, sigma: float, k: float, eta: float, alpha: float):
    """Lévy normal tempered stable special case (time-constant parameters)."""
    return ats_log_chf(u, TenorParams(T=t, sigma=sigma, k=k, eta=eta), alpha)
