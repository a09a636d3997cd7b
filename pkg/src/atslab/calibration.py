"""Maturity-by-maturity calibration of the ATS to implied-volatility smiles.

Each smile is fitted independently in ``(sigma_T, k_T, eta_T)`` by bounded
least squares on implied volatilities, with ``phi_T`` always fixed by the
martingale condition. :class:`ATSCalibrator` wraps the same routines behind
the scikit-learn estimator interface.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ValidationError
from .market_data import Smile, Surface
from .model import ModelParams, TenorParams
from .pricing import PricingGrid, fourier_call_prices, implied_vols

logger = logging.getLogger(__name__)

#: (lower, upper) for sigma, k, eta
DEFAULT_BOUNDS = ((1e-4, 5.0), (1e-8, 1e3), (1e-4, 1e3))
MIN_QUOTES = 4
_JAC_STEP = 1e-5
_IV_CAP = 5.0


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ATSLAB_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class TenorFit:
    params: TenorParams
    covariance: np.ndarray
    mse: float
    n_quotes: int
    converged: bool

    @property
    def T(self) -> float:
        return self.params.T

    def to_dict(self) -> dict:
        return {**self.params.to_dict(), "covariance": self.covariance.tolist(), "mse": self.mse,
                "n_quotes": self.n_quotes, "converged": self.converged}

    @classmethod
    def from_dict(cls, data: dict) -> "TenorFit":
        tp = TenorParams(T=float(data["T"]), sigma=float(data["sigma"]), k=float(data["k"]),
                         eta=float(data["eta"]), phi=data.get("phi"))
        return cls(tp, np.asarray(data["covariance"], dtype=float), float(data["mse"]),
                   int(data["n_quotes"]), bool(data["converged"]))


@dataclass(frozen=True)
class ThetaPoint:
    """A calibrated tenor expressed in the time ``theta = T sigma_T^2``."""

    theta: float
    k_hat: float
    eta_hat: float
    var_log_eta: float = 0.0

    def tenor(self) -> TenorParams:
        return TenorParams(T=self.theta, sigma=1.0, k=self.k_hat, eta=self.eta_hat)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "k_hat": self.k_hat, "eta_hat": self.eta_hat, "var_log_eta": self.var_log_eta}

    @classmethod
    def from_dict(cls, data: dict) -> "ThetaPoint":
        return cls(float(data["theta"]), float(data["k_hat"]), float(data["eta_hat"]), float(data["var_log_eta"]))


def model_ivs(smile: Smile, sigma: float, k: float, eta: float, alpha: float,
              grid: PricingGrid = PricingGrid()) -> np.ndarray:
    tenor = TenorParams(smile.T, sigma, k, eta).with_drift(alpha)
    calls = fourier_call_prices(smile.strikes, tenor, alpha, smile.F, smile.D, grid)
    iv = implied_vols(calls, smile.F, smile.strikes, smile.T, smile.D)
    return np.minimum(iv, _IV_CAP)


def _residuals(smile, alpha, grid, root_w=1.0):
    def fun(log_p):
        s, k, e = np.exp(log_p)
        return root_w * (model_ivs(smile, s, k, e, alpha, grid) - smile.ivs)
    return fun


def _strike_weights(smile: Smile, weights) -> np.ndarray | float:
    """Square roots of the strike weights, rescaled to mean one."""
    if weights is None:
        return 1.0
    w = np.asarray(weights, dtype=float)
    if w.shape != smile.strikes.shape or np.any(w < 0) or not np.all(np.isfinite(w)) or not w.sum() > 0:
        raise ValidationError("strike weights must be finite, non-negative, not all zero, one per strike")
    return np.sqrt(w / w.mean())


def _jacobian(smile, p, alpha, grid, free=(0, 1, 2)) -> np.ndarray:
    cols = []
    for j in free:
        h = _JAC_STEP * p[j]
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        cols.append((model_ivs(smile, *up, alpha, grid) - model_ivs(smile, *dn, alpha, grid)) / (2 * h))
    return np.column_stack(cols)


def _covariance(smile, p, alpha, mse, grid, root_w=1.0) -> np.ndarray:
    J = _jacobian(smile, p, alpha, grid) * np.reshape(root_w, (-1, 1))
    return np.linalg.pinv(J.T @ J) * mse


def _atm_vol(smile: Smile) -> float:
    return float(np.interp(np.log(smile.F), np.log(smile.strikes), smile.ivs))


def _starts(init: np.ndarray, n_starts: int) -> list[np.ndarray]:
    s, k, e = init
    dispersed = [(s, 0.1 * k, 0.3 * e), (s, 0.1 * k, 3.0 * e), (s, 10.0 * k, 0.3 * e), (s, 10.0 * k, 3.0 * e)]
    starts = [init] + [np.array(d) for d in dispersed]
    return starts[:max(1, n_starts)]


def calibrate_tenor(smile: Smile, alpha: float, init=None, bounds=DEFAULT_BOUNDS, n_starts: int = 5,
                    grid: PricingGrid = PricingGrid(), extra_starts=(), weights=None) -> TenorFit:
    """Fit ``(sigma, k, eta)`` to one smile by multi-start bounded least squares.

    The objective is the mean squared implied-volatility error, equally
    weighted unless per-strike ``weights`` are given (they are rescaled to
    mean one, so ``mse`` stays in squared vol units). The covariance is the
    Gauss-Newton ``(J'J)^-1 * mse``.
    """
    if len(smile) < MIN_QUOTES:
        raise ValidationError(f"need at least {MIN_QUOTES} quotes to fit 3 parameters, got {len(smile)}")
    lo = np.log([b[0] for b in bounds])
    hi = np.log([b[1] for b in bounds])
    if init is None:
        init = (_atm_vol(smile), 1.0, 1.0)
    root_w = _strike_weights(smile, weights)
    fun = _residuals(smile, alpha, grid, root_w)
    best = None
    for start in _starts(np.asarray(init, dtype=float), n_starts) + [np.asarray(x, dtype=float) for x in extra_starts]:
        z0 = np.clip(np.log(start), lo + 1e-9, hi - 1e-9)
        res = optimize.least_squares(fun, z0, bounds=(lo, hi), method="trf", ftol=1e-10, xtol=1e-10,
                                     gtol=1e-10, diff_step=1e-6, max_nfev=400)
        if best is None or res.cost < best.cost:
            best = res
    p = np.exp(best.x)
    mse = float(np.mean(best.fun ** 2))
    cov = _covariance(smile, p, alpha, mse, grid, root_w)
    tenor = TenorParams(smile.T, *map(float, p)).with_drift(alpha)
    if not best.success:
        logger.warning("T=%.6g: optimiser stopped without convergence (%s)", smile.T, best.message)
    return TenorFit(tenor, cov, mse, len(smile), bool(best.success))


def _fit_fixed_eta(smile, alpha, eta, starts, bounds, grid):
    lo = np.log([bounds[0][0], bounds[1][0]])
    hi = np.log([bounds[0][1], bounds[1][1]])

    def fun(z):
        s, k = np.exp(z)
        return model_ivs(smile, s, k, eta, alpha, grid) - smile.ivs

    best = None
    for start in starts:
        z0 = np.clip(np.log(start), lo + 1e-9, hi - 1e-9)
        res = optimize.least_squares(fun, z0, bounds=(lo, hi), method="trf", ftol=1e-10, xtol=1e-10,
                                     gtol=1e-10, diff_step=1e-6, max_nfev=400)
        if best is None or res.cost < best.cost:
            best = res
    return best


def calibrate_tenor_constant_eta(surface, alpha: float, shared_eta: float | None = None,
                                 bounds=DEFAULT_BOUNDS, grid: PricingGrid = PricingGrid()) -> list[TenorFit]:
    """Joint fit with a single ``eta`` shared by every maturity.

    An outer bounded scalar search over ``ln eta`` minimises the total squared
    IV error; for each trial value the per-maturity ``(sigma_T, k_T)`` are
    refitted, warm-started from the previous trial.
    """
    smiles = list(surface.smiles if isinstance(surface, Surface) else surface)
    if not smiles:
        raise ValidationError("empty surface")
    if len(smiles) == 1 and shared_eta is None:
        return [calibrate_tenor(smiles[0], alpha, bounds=bounds, grid=grid)]
    for sm in smiles:
        if len(sm) < MIN_QUOTES:
            raise ValidationError(f"need at least {MIN_QUOTES} quotes per smile, got {len(sm)} at T={sm.T:.6g}")
    warm = {i: np.array([_atm_vol(sm), 1.0]) for i, sm in enumerate(smiles)}
    defaults = {i: np.array([_atm_vol(sm), 1.0]) for i, sm in enumerate(smiles)}

    def inner(eta):
        def one(i):
            starts = [warm[i]] if np.array_equal(warm[i], defaults[i]) else [warm[i], defaults[i]]
            return _fit_fixed_eta(smiles[i], alpha, eta, starts, bounds, grid)
        results = _map(one, list(range(len(smiles))))
        for i, r in enumerate(results):
            warm[i] = np.exp(r.x)
        return results

    if shared_eta is None:
        def objective(log_eta):
            return sum(2.0 * r.cost for r in inner(float(np.exp(log_eta))))
        lo, hi = np.log(bounds[2][0]), np.log(bounds[2][1])
        # coarse scan to bracket the global minimum, then a bounded Brent refinement
        scan = np.linspace(np.log(0.01), np.log(100.0), 13)
        vals = [objective(x) for x in scan]
        j = int(np.argmin(vals))
        a, b = scan[max(j - 1, 0)], scan[min(j + 1, scan.size - 1)]
        for i, sm in enumerate(smiles):
            warm[i] = defaults[i]
        inner(float(np.exp(scan[j])))
        opt = optimize.minimize_scalar(objective, bounds=(max(a, lo), min(b, hi)), method="bounded",
                                       options={"xatol": 1e-6})
        shared_eta = float(np.exp(opt.x))
    results = inner(shared_eta)

    fits = []
    for sm, r in zip(smiles, results):
        s, k = np.exp(r.x)
        mse = float(np.mean(r.fun ** 2))
        p = np.array([s, k, shared_eta])
        J = _jacobian(sm, p, alpha, grid, free=(0, 1))
        cov = np.zeros((3, 3))
        cov[:2, :2] = np.linalg.pinv(J.T @ J) * mse
        fits.append(TenorFit(TenorParams(sm.T, float(s), float(k), shared_eta).with_drift(alpha),
                             cov, mse, len(sm), bool(r.success)))
    return fits


def to_theta(fits) -> list[ThetaPoint]:
    """Map per-maturity fits to ``(theta, k_hat, eta_hat) = (T sigma^2, k sigma^2, eta)``.

    The variance of ``ln eta_hat`` comes from the delta method.
    """
    out = []
    for f in fits:
        tp = f.params
        s2 = tp.sigma * tp.sigma
        var = float(f.covariance[2, 2]) / tp.eta ** 2 if f.covariance.size else 0.0
        out.append(ThetaPoint(tp.T * s2, tp.k * s2, tp.eta, max(var, 0.0)))
    thetas = [p.theta for p in out]
    if any(b <= a for a, b in zip(thetas, thetas[1:])):
        logger.warning("theta = T sigma_T^2 is not increasing across tenors")
    return out


def fits_to_params(fits, alpha: float, label: str = "") -> ModelParams:
    return ModelParams(alpha=alpha, tenors=tuple(f.params for f in fits), label=label)


# ------------------------------------------------------------ estimator API

def _smiles_from_arrays(X: np.ndarray, y: np.ndarray) -> list[Smile]:
    smiles = []
    for T in np.unique(X[:, 0]):
        rows = X[:, 0] == T
        K, F, D = X[rows, 1], X[rows, 2], X[rows, 3]
        if np.ptp(F) > 0 or np.ptp(D) > 0:
            raise ValidationError(f"forward and discount must be constant within maturity {T}")
        order = np.argsort(K)
        smiles.append(Smile(float(T), float(F[0]), float(D[0]), K[order], y[rows][order]))
    return smiles


class ATSCalibrator(RegressorMixin, BaseEstimator):
    """Per-maturity ATS calibration as a scikit-learn regressor.

    ``X`` has one row per quote with columns ``(T, K, F, D)``; ``y`` holds the
    market implied volatilities. ``predict`` returns model implied
    volatilities and requires maturities seen during ``fit``.

    Parameters
    ----------
    alpha : float
        Tempered stable index (0.5 for NIG, 0 for VG).
    constant_eta : bool
        Share a single ``eta`` across maturities (the subordinated sub-model).
    n_starts : int
        Number of optimiser starts per maturity.
    n_nodes : int
        Minimum quadrature node count of the Fourier pricer.
    """

    def __init__(self, alpha=0.5, constant_eta=False, n_starts=5, n_nodes=2048):
        self.alpha = alpha
        self.constant_eta = constant_eta
        self.n_starts = n_starts
        self.n_nodes = n_nodes

    def _grid(self):
        return PricingGrid(n_nodes=self.n_nodes)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 4:
            raise ValidationError("X must have columns (T, K, F, D)")
        smiles = _smiles_from_arrays(X, y)
        grid = self._grid()
        if self.constant_eta:
            fits = calibrate_tenor_constant_eta(smiles, self.alpha, grid=grid)
        else:
            fits = _map(lambda sm: calibrate_tenor(sm, self.alpha, n_starts=self.n_starts, grid=grid), smiles)
        self.tenor_fits_ = fits
        self.params_ = fits_to_params(fits, self.alpha)
        self.theta_points_ = to_theta(fits)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        out = np.empty(X.shape[0])
        grid = self._grid()
        for T in np.unique(X[:, 0]):
            rows = np.nonzero(X[:, 0] == T)[0]
            tenor = self.params_.tenor(T)
            K, F, D = X[rows, 1], X[rows, 2], X[rows, 3]
            for Fi, Di in {(f, d) for f, d in zip(F, D)}:
                sel = rows[(F == Fi) & (D == Di)]
                calls = fourier_call_prices(X[sel, 1], tenor, self.alpha, Fi, Di, grid)
                out[sel] = implied_vols(calls, Fi, X[sel, 1], T, Di)
        return out

    def fit_surface(self, surface: Surface) -> "ATSCalibrator":
        X, y = surface_to_xy(surface)
        return self.fit(X, y)


def surface_to_xy(surface: Surface) -> tuple[np.ndarray, np.ndarray]:
    rows, ivs = [], []
    for sm in surface.smiles:
        for K, iv in zip(sm.strikes, sm.ivs):
            rows.append((sm.T, K, sm.F, sm.D))
            ivs.append(iv)
    return np.array(rows, dtype=float), np.array(ivs, dtype=float)
