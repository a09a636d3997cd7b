"""The additive tempered stable subordinator (TSS) and the subordination checks.

The TSS has generating triplet ``(0, V_t, Gamma_t)`` with Lévy density

    V_t(x) = t sigma_t^(2 alpha) / Gamma(1-alpha) * ((1-alpha)/k_t)^(1-alpha)
             * exp(-(1-alpha) x / (sigma_t^2 k_t)) / x^(1+alpha),   x > 0

and ``Gamma_t = int_0^1 x V_t(x) dx`` (so the reduced drift ``b_t`` is zero).
Laplace transforms follow the convention ``ln E[exp(-w Z_t)]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

from .exceptions import DomainError, NumericalError, ValidationError
from .model import CurveSpec, ModelParams, _check_alpha

Curve = Callable[[float], float]


@dataclass(frozen=True)
class PowerCurve:
    """``t -> base * t**exponent``."""

    base: float
    exponent: float = 0.0

    def __call__(self, t):
        return self.base * np.power(t, self.exponent)


class TabulatedCurve:
    """Piecewise power-law interpolation of tabulated positive values.

    Linear in log-log coordinates between nodes; the end segments are
    extended as power laws so the curve can be probed near ``t = 0``.
    """

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size == 0:
            raise ValidationError("times and values must be 1-d arrays of equal non-zero length")
        if np.any(times <= 0) or np.any(values <= 0):
            raise ValidationError("tabulated curves need positive times and values")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("tabulated times must be strictly increasing")
        self.times = times
        self.values = values
        self._lt = np.log(times)
        self._lv = np.log(values)

    def __call__(self, t):
        lt = np.log(np.asarray(t, dtype=float))
        if self.times.size == 1:
            out = np.full_like(lt, self.values[0])
        else:
            i = np.clip(np.searchsorted(self._lt, lt) - 1, 0, self.times.size - 2)
            slope = (self._lv[i + 1] - self._lv[i]) / (self._lt[i + 1] - self._lt[i])
            out = np.exp(self._lv[i] + slope * (lt - self._lt[i]))
        return float(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class TssSpec:
    """Index ``alpha`` and the two positive curves ``sigma_t`` and ``k_t`` of a TSS."""

    alpha: float
    sigma_curve: Curve
    k_curve: Curve

    def __post_init__(self):
        _check_alpha(self.alpha)

    @classmethod
    def constant(cls, alpha: float, sigma: float, k: float) -> "TssSpec":
        return cls(alpha, PowerCurve(sigma), PowerCurve(k))

    @classmethod
    def from_curves(cls, curves: CurveSpec, alpha: float) -> "TssSpec":
        return cls(alpha, PowerCurve(curves.sigma_bar, curves.beta_sigma), PowerCurve(curves.k_bar, curves.beta_k))

    @classmethod
    def from_params(cls, params: ModelParams) -> "TssSpec":
        """Tabulated curves through the per-tenor ``sigma_T`` and ``k_T``."""
        mats = params.maturities
        return cls(params.alpha,
                   TabulatedCurve(mats, [tp.sigma for tp in params.tenors]),
                   TabulatedCurve(mats, [tp.k for tp in params.tenors]))

    def sigma(self, t: float) -> float:
        return float(self.sigma_curve(t))

    def k(self, t: float) -> float:
        return float(self.k_curve(t))

    def _laplace_coefficients(self, t: float) -> tuple[float, float]:
        # ln M_t(w) = (d/alpha)(1 - (1 + w e)^alpha), or -d ln(1 + w e) when alpha = 0
        a = self.alpha
        s2, k = self.sigma(t) ** 2, self.k(t)
        return t * (1.0 - a) / k, s2 * k / (1.0 - a)


@dataclass(frozen=True)
class Violation:
    condition: int
    message: str

    def to_dict(self) -> dict:
        return {"condition": self.condition, "message": self.message}


def _non_decreasing(values: np.ndarray, rtol: float = 1e-12) -> int | None:
    """Index of the first pairwise decrease, or None."""
    for i in range(len(values) - 1):
        if values[i + 1] < values[i] - rtol * abs(values[i]):
            return i
    return None


def validate_tss(spec: TssSpec, t_grid: Sequence[float], small_tol: float = 1e-3) -> list[Violation]:
    """Check the three admissibility conditions of the TSS on a time grid.

    "o(1) for small t" is checked as the value at the smallest grid point
    being below ``small_tol``; monotonicity is checked pairwise.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ValidationError("t_grid must be positive, strictly increasing and hold at least two points")
    a = spec.alpha
    s2 = np.array([spec.sigma(x) ** 2 for x in t])
    k = np.array([spec.k(x) for x in t])
    out = []

    c1 = t * s2
    if c1[0] >= small_tol:
        out.append(Violation(1, f"t*sigma_t^2 = {c1[0]:.3g} at t = {t[0]:.3g} is not small"))

    c2 = t * s2 ** a / k ** (1.0 - a)
    if c2[0] >= small_tol:
        out.append(Violation(2, f"t*sigma_t^(2a)/k_t^(1-a) = {c2[0]:.3g} at t = {t[0]:.3g} is not small"))
    i = _non_decreasing(c2)
    if i is not None:
        out.append(Violation(2, f"t*sigma_t^(2a)/k_t^(1-a) decreases between t = {t[i]:.6g} and {t[i + 1]:.6g}"))

    i = _non_decreasing(s2 * k)
    if i is not None:
        out.append(Violation(3, f"sigma_t^2*k_t decreases between t = {t[i]:.6g} and {t[i + 1]:.6g}"))
    return out


def tss_levy_density(x, t: float, spec: TssSpec):
    """Lévy density ``V_t(x)`` of the TSS, ``x > 0``."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise DomainError("the TSS Lévy density is only defined for x > 0")
    a = spec.alpha
    s2, k = spec.sigma(t) ** 2, spec.k(t)
    scale = t * s2 ** a / special.gamma(1.0 - a) * ((1.0 - a) / k) ** (1.0 - a)
    out = scale * np.exp(-(1.0 - a) * xa / (s2 * k)) / xa ** (1.0 + a)
    return float(out) if np.ndim(x) == 0 else out


def _density_parts(t: float, spec: TssSpec) -> tuple[float, float]:
    # V_t(x) = scale * x^(-1-alpha) * exp(-rate * x)
    a = spec.alpha
    s2, k = spec.sigma(t) ** 2, spec.k(t)
    scale = t * s2 ** a / special.gamma(1.0 - a) * ((1.0 - a) / k) ** (1.0 - a)
    return scale, (1.0 - a) / (s2 * k)


def _quad(f, lo, hi, **kw) -> float:
    val, err, *rest = integrate.quad(f, lo, hi, full_output=1, limit=200, **kw)
    if len(rest) >= 2 and err > 1e-6:
        raise NumericalError(f"quadrature did not converge: {rest[1]}")
    return val


def tss_gamma_drift(t: float, spec: TssSpec) -> float:
    """``Gamma_t = int_0^1 x V_t(x) dx`` by quadrature with the ``x^-alpha`` weight."""
    if t <= 0:
        raise ValidationError("t must be positive")
    scale, rate = _density_parts(t, spec)
    # x V_t(x) = scale * x^-alpha * exp(-rate x): the singular factor goes into the weight
    val = _quad(lambda x: np.exp(-rate * x), 0.0, 1.0, weight="alg", wvar=(-spec.alpha, 0.0),
                epsabs=1e-13, epsrel=1e-12)
    return scale * val


def tss_log_laplace(w, t: float, spec: TssSpec):
    """``ln E[exp(-w Z_t)]`` in closed form (principal branch)."""
    d, e = _laplace_coefficients_checked(t, spec)
    scalar = np.ndim(w) == 0
    w = np.asarray(w, dtype=complex)
    z = w * e
    if np.any(1.0 + z.real <= 0.0):
        raise DomainError("Re(1 + w e_t) must be positive")
    lz = special.log1p(z)
    if spec.alpha == 0.0:
        out = -d * lz
    else:
        out = -(d / spec.alpha) * special.expm1(spec.alpha * lz)
    return complex(out) if scalar else out


def _laplace_coefficients_checked(t: float, spec: TssSpec) -> tuple[float, float]:
    if t <= 0:
        raise ValidationError("t must be positive")
    return spec._laplace_coefficients(t)


def tss_exponent_by_integral(u: float, t: float, spec: TssSpec) -> complex:
    """``int_{x>0} (exp(iux) - 1) V_t(x) dx`` by adaptive quadrature.

    Independent of the closed form: on ``(0, 1]`` the ``x^-alpha`` singularity
    is carried by an algebraic quadrature weight, the tail uses Fourier weights.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    if u == 0:
        return 0j
    scale, rate = _density_parts(t, spec)
    a = spec.alpha
    tol = dict(epsabs=1e-13, epsrel=1e-12)

    # (cos(ux) - 1)/x = -2 sin^2(ux/2)/x and sin(ux)/x are smooth at 0
    def re_head(x):
        return -2.0 * np.sin(0.5 * u * x) ** 2 / x * np.exp(-rate * x) if x > 0 else 0.0

    def im_head(x):
        return np.sin(u * x) / x * np.exp(-rate * x) if x > 0 else u

    re = _quad(re_head, 0.0, 1.0, weight="alg", wvar=(-a, 0.0), **tol)
    im = _quad(im_head, 0.0, 1.0, weight="alg", wvar=(-a, 0.0), **tol)

    def tail(x):
        return np.exp(-rate * x) / x ** (1.0 + a)

    re += _quad(tail, 1.0, np.inf, weight="cos", wvar=u) - _quad(tail, 1.0, np.inf, **tol)
    im += _quad(tail, 1.0, np.inf, weight="sin", wvar=u)
    return scale * complex(re, im)


@dataclass(frozen=True)
class Verdict:
    """Outcome of the subordination representability check."""

    representable: bool
    a: float | None = None
    b: float | None = None
    witness: tuple[float, float] | None = None
    eta_spread: float = 0.0

    def to_dict(self) -> dict:
        return {"representable": self.representable, "a": self.a, "b": self.b,
                "witness": list(self.witness) if self.witness else None, "eta_spread": self.eta_spread}


def representability_verdict(params: ModelParams, tol: float = 1e-6) -> Verdict:
    """Can the calibrated ATS be written as ``W(a Z_t) + b Z_t + c_t`` with ``Z`` a TSS?

    Matching the characteristic function maturity by maturity forces
    ``-b/a = 1/2 + eta_T``; with constant ``a, b`` this is only possible if
    ``eta_T`` does not depend on ``T``. ``tol`` bounds the relative spread.
    """
    if len(params.tenors) < 2:
        raise ValidationError("at least two tenors are needed")
    eta = np.array([tp.eta for tp in params.tenors])
    spread = float((eta.max() - eta.min()) / eta.mean())
    if spread <= tol:
        return Verdict(True, a=1.0, b=-(0.5 + float(eta.mean())), eta_spread=spread)
    lo, hi = int(eta.argmin()), int(eta.argmax())
    i, j = sorted((lo, hi))
    return Verdict(False, witness=(params.tenors[i].T, params.tenors[j].T), eta_spread=spread)


@dataclass(frozen=True)
class CoefficientPath:
    """Deterministic coefficients of ``W(a_t Z_t) + b_t Z_t + c_t``."""

    a_fn: Curve
    b_fn: Curve
    c_fn: Curve = PowerCurve(0.0)


def independence_gap(s: float, t: float, u1: complex, u2: complex, path: CoefficientPath, spec: TssSpec) -> float:
    """``|E[e^{iu1(f_t-f_s) + iu2 f_s}] - E[e^{iu1(f_t-f_s)}] E[e^{iu2 f_s}]|``.

    Both sides are products of TSS Laplace transforms after conditioning on
    the subordinator. The gap vanishes for every ``(u1, u2)`` when ``a`` and
    ``b`` are constant and is non-zero otherwise.
    """
    if not 0 < s < t:
        raise ValidationError("need 0 < s < t")
    a_s, a_t = float(path.a_fn(s)), float(path.a_fn(t))
    b_s, b_t = float(path.b_fn(s)), float(path.b_fn(t))
    if a_s <= 0 or a_t <= 0:
        raise ValidationError("a_t must be positive")
    u1, u2 = complex(u1), complex(u2)
    # Laplace arguments: E[e^{i u_hat Z}] = M(-i u_hat)
    w1 = -1j * u1 * (b_t - b_s) + 0.5 * u1 * u1 * (a_t - a_s)
    w2 = -1j * u2 * b_s + 0.5 * u2 * u2 * a_s
    w_inc = -1j * u1 * b_t + 0.5 * u1 * u1 * a_t
    increment = np.exp(tss_log_laplace(w_inc, t, spec) - tss_log_laplace(w_inc, s, spec))
    left = np.exp(tss_log_laplace(w1 + w2, s, spec)) * increment
    right = np.exp(tss_log_laplace(w1, s, spec) + tss_log_laplace(w2, s, spec)) * increment
    return float(abs(left - right))
