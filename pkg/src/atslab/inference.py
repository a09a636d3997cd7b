"""Power-law scaling of the skew parameter: weighted log-log regression of
``eta_hat`` on ``theta`` and the t-test of a zero exponent."""

from __future__ import annotations

import io
import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .calibration import ThetaPoint
from .exceptions import ValidationError

#: days with a p-value at or above this are flagged
REJECTION_LEVEL = 1e-3


@dataclass(frozen=True)
class ScalingReport:
    """Result of regressing ``ln eta_hat = log_eta_hat + delta_hat ln theta``."""

    delta_hat: float
    log_eta_hat: float
    se_delta: float
    se_log_eta: float
    t_stat: float
    p_value: float
    n_points: int
    r_squared_weighted: float
    equal_weights: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalingReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def regression_weights(var_log_eta: Sequence[float], equal_weights: bool = False) -> np.ndarray:
    """``1 / var``; zero variances take the largest finite weight of the set."""
    var = np.asarray(var_log_eta, dtype=float)
    if np.any(var < 0) or not np.all(np.isfinite(var)):
        raise ValidationError("variances of ln eta must be finite and non-negative")
    if equal_weights or np.all(var == 0):
        return np.ones_like(var)
    w = np.zeros_like(var)
    pos = var > 0
    w[pos] = 1.0 / var[pos]
    w[~pos] = w[pos].max()
    return w


def weighted_line(x, y, w) -> tuple[float, float, float, float, float, int]:
    """WLS of ``y`` on ``(1, x)`` with the residual variance estimated from the data.

    Returns ``(slope, intercept, se_slope, se_intercept, r2, n)``. Scaling every
    weight by a constant changes nothing.
    """
    x, y, w = (np.asarray(a, dtype=float) for a in (x, y, w))
    n = x.size
    if n < 3:
        raise ValidationError(f"need at least 3 points, got {n}")
    W = w.sum()
    xbar = (w * x).sum() / W
    dx = x - xbar
    sxx = (w * dx * dx).sum()
    if not sxx > 0:
        raise ValidationError("the regressor must take at least two distinct values")
    # shifting by y[0] makes an exactly constant response give an exactly zero slope
    yc = y - y[0]
    ybar = (w * yc).sum() / W
    dy = yc - ybar
    slope = (w * dx * dy).sum() / sxx
    intercept = y[0] + ybar - slope * xbar
    resid = dy - slope * dx
    ssr = (w * resid * resid).sum()
    syy = (w * dy * dy).sum()
    s2 = ssr / (n - 2)
    se_slope = math.sqrt(s2 / sxx)
    se_intercept = math.sqrt(s2 / W + s2 * xbar * xbar / sxx)
    r2 = 1.0 - ssr / syy if syy > 0 else 1.0
    return float(slope), float(intercept), se_slope, se_intercept, float(r2), n


def _t_test(estimate: float, se: float, df: int) -> tuple[float, float]:
    if se == 0.0:
        return (0.0, 1.0) if estimate == 0.0 else (math.copysign(math.inf, estimate), 0.0)
    t = estimate / se
    return t, float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def fit_power_law(points: Sequence[ThetaPoint], equal_weights: bool = False) -> ScalingReport:
    """Estimate the exponent ``delta`` in ``eta_hat = eta * theta**delta`` and test ``delta = 0``.

    Weights are the inverse delta-method variances of ``ln eta_hat``; the
    p-value is two-sided from a Student t with ``n - 2`` degrees of freedom.
    """
    points = list(points)
    if len(points) < 3:
        raise ValidationError(f"need at least 3 points, got {len(points)}")
    theta = np.array([p.theta for p in points], dtype=float)
    eta = np.array([p.eta_hat for p in points], dtype=float)
    if np.any(eta <= 0):
        raise ValidationError("eta_hat must be positive")
    if np.any(theta <= 0):
        raise ValidationError("theta must be positive")
    w = regression_weights([p.var_log_eta for p in points], equal_weights)
    slope, icpt, se_s, se_i, r2, n = weighted_line(np.log(theta), np.log(eta), w)
    t, p = _t_test(slope, se_s, n - 2)
    return ScalingReport(slope, icpt, se_s, se_i, t, p, n, r2, bool(equal_weights))


def regression_line_rows(points: Sequence[ThetaPoint], report: ScalingReport) -> list[dict]:
    """Plot data: ``ln theta``, ``ln eta_hat``, a 2-sd band on ``ln eta_hat`` and the fitted line."""
    rows = []
    for p in sorted(points, key=lambda q: q.theta):
        lt = math.log(p.theta)
        rows.append({
            "ln_theta": lt,
            "ln_eta_hat": math.log(p.eta_hat),
            "ci_half_width_ln_eta": 2.0 * math.sqrt(p.var_log_eta),
            "fitted_ln_eta": report.log_eta_hat + report.delta_hat * lt,
        })
    return rows


def format_rows(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([f"{r[c]:.12g}" if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def regression_svg(rows: Sequence[Mapping], width: int = 480, height: int = 320) -> str:
    """A bare SVG scatter of ``ln eta_hat`` against ``ln theta`` with error bars and the fitted line."""
    if not rows:
        raise ValidationError("no points to plot")
    x = np.array([r["ln_theta"] for r in rows])
    y = np.array([r["ln_eta_hat"] for r in rows])
    hw = np.array([r["ci_half_width_ln_eta"] for r in rows])
    fit = np.array([r["fitted_ln_eta"] for r in rows])
    pad = 40
    x0, x1 = x.min(), x.max()
    lo = min((y - hw).min(), fit.min())
    hi = max((y + hw).max(), fit.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if hi == lo:
        lo, hi = lo - 1, hi + 1

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    line = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, fit))
    parts.append(f'<polyline points="{line}" fill="none" stroke="black"/>')
    for a, b, h in zip(x, y, hw):
        parts.append(f'<line x1="{px(a):.2f}" y1="{py(b - h):.2f}" x2="{px(a):.2f}" y2="{py(b + h):.2f}" stroke="gray"/>')
        parts.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="steelblue"/>')
    parts.append(f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">ln theta</text>')
    parts.append(f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" '
                 f'text-anchor="middle">ln eta</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class GroupSummary:
    model: str
    index: str
    n_days: int
    mean_p: float
    max_p: float
    flagged_days: list[str] = field(default_factory=list)


@dataclass
class AggregateReport:
    p_values: dict[tuple[str, str], dict[str, float]]
    groups: list[GroupSummary]

    def rows(self) -> list[dict]:
        return [{"model": g.model, "index": g.index, "n_days": g.n_days, "mean_p": g.mean_p,
                 "max_p": g.max_p, "n_flagged": len(g.flagged_days)} for g in self.groups]


def aggregate_days(reports: Mapping[tuple[str, str], Mapping[str, ScalingReport | float]],
                   level: float = REJECTION_LEVEL) -> AggregateReport:
    """Mean and maximum p-value per ``(model, index)`` group, flagging days with ``p >= level``."""
    if not reports:
        raise ValidationError("no report groups")
    p_values, groups = {}, []
    for (model, index) in sorted(reports):
        days = reports[(model, index)]
        if not days:
            raise ValidationError(f"group ({model}, {index}) holds no reports")
        ps = {d: float(r.p_value if isinstance(r, ScalingReport) else r) for d, r in sorted(days.items())}
        vals = np.array(list(ps.values()))
        groups.append(GroupSummary(model, index, vals.size, float(vals.mean()), float(vals.max()),
                                   [d for d, p in ps.items() if p >= level]))
        p_values[(model, index)] = ps
    return AggregateReport(p_values, groups)


class PowerLawScaling(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`fit_power_law`.

    ``fit(theta, eta_hat, sample_weight)`` with ``sample_weight`` the inverse
    variances of ``ln eta_hat`` (equal weights when omitted); ``predict`` returns
    ``eta * theta**delta``.
    """

    def __init__(self, equal_weights: bool = False):
        self.equal_weights = equal_weights

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, ensure_2d=False, dtype=float)
        theta = X.ravel() if X.ndim == 1 or X.shape[1] == 1 else None
        if theta is None:
            raise ValidationError("X must hold a single column of theta values")
        y = check_array(y, ensure_2d=False, dtype=float).ravel()
        check_consistent_length(theta, y)
        if np.any(theta <= 0) or np.any(y <= 0):
            raise ValidationError("theta and eta_hat must be positive")
        if sample_weight is None or self.equal_weights:
            w = np.ones_like(theta)
        else:
            w = np.asarray(sample_weight, dtype=float)
            check_consistent_length(theta, w)
            if np.any(w <= 0) or not np.all(np.isfinite(w)):
                raise ValidationError("sample weights must be positive and finite")
        slope, icpt, se_s, se_i, r2, n = weighted_line(np.log(theta), np.log(y), w)
        t, p = _t_test(slope, se_s, n - 2)
        self.delta_, self.log_eta_ = slope, icpt
        self.report_ = ScalingReport(slope, icpt, se_s, se_i, t, p, n, r2, sample_weight is None or self.equal_weights)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "report_")
        theta = check_array(X, ensure_2d=False, dtype=float).ravel()
        return np.exp(self.log_eta_) * theta ** self.delta_
