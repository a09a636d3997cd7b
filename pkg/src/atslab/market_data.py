"""Option quotes: CSV ingestion, forward/discount extraction, delta filtering and
synthetic surfaces generated from a known ATS."""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .exceptions import ValidationError
from .model import CurveSpec, ModelParams
from .pricing import PricingGrid, black, fourier_call_prices, implied_vols
from .sampling import RngSpec

logger = logging.getLogger(__name__)

CSV_HEADER = ("date", "T", "strike", "flag", "price")

#: default maturities: 1w, 2w, 1m, 2m, 3m, 6m, 1y, 2y
DEFAULT_MATURITIES = (1 / 52, 2 / 52, 1 / 12, 2 / 12, 3 / 12, 6 / 12, 1.0, 2.0)


def year_fraction(start: dt.date, end: dt.date) -> float:
    """ACT/365 fixed."""
    return (end - start).days / 365.0


@dataclass(frozen=True)
class OptionQuote:
    date: str
    T: float
    strike: float
    is_call: bool
    price: float

    @property
    def flag(self) -> str:
        return "C" if self.is_call else "P"


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    row: tuple = ()


@dataclass
class IngestResult:
    quotes: list[OptionQuote]
    rejects: list[Reject] = field(default_factory=list)


@dataclass(frozen=True)
class Smile:
    T: float
    F: float
    D: float
    strikes: np.ndarray
    ivs: np.ndarray

    def __post_init__(self):
        strikes = np.asarray(self.strikes, dtype=float)
        ivs = np.asarray(self.ivs, dtype=float)
        if strikes.shape != ivs.shape or strikes.ndim != 1:
            raise ValidationError("strikes and ivs must be 1-d arrays of equal length")
        if np.any(np.diff(strikes) <= 0):
            raise ValidationError("strikes must be strictly increasing within a smile")
        if not (self.F > 0 and self.D > 0 and self.T > 0):
            raise ValidationError("T, F and D must be positive")
        object.__setattr__(self, "strikes", strikes)
        object.__setattr__(self, "ivs", ivs)

    def __len__(self):
        return self.strikes.size


@dataclass(frozen=True)
class Surface:
    date: str
    smiles: tuple[Smile, ...]

    @property
    def maturities(self) -> np.ndarray:
        return np.array([s.T for s in self.smiles])


# ------------------------------------------------------------------ CSV I/O

def _parse_row(row: Sequence[str]) -> OptionQuote:
    if len(row) != len(CSV_HEADER):
        raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(row)}")
    date, T, strike, flag, price = row
    flag = flag.strip()
    if flag not in ("C", "P"):
        raise ValueError(f"flag must be C or P, got {flag!r}")
    T, strike, price = float(T), float(strike), float(price)
    if not T > 0:
        raise ValueError("maturity must be positive")
    if not strike > 0:
        raise ValueError("strike must be positive")
    if not price > 0:
        raise ValueError("price must be positive")
    return OptionQuote(date.strip(), T, strike, flag == "C", price)


def ingest_quotes(source) -> IngestResult:
    """Parse and validate a quotes CSV (path, text stream or string content).

    Invalid rows are collected in ``rejects``; duplicated ``(T, strike, flag)``
    keys keep the first occurrence.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).is_file()):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, io.TextIOBase):
        text = source.read()
    else:
        text = str(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError("empty quotes file") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ValidationError(f"bad header {header!r}, expected {','.join(CSV_HEADER)}")

    quotes, rejects, seen = [], [], set()
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            q = _parse_row(row)
        except ValueError as exc:
            rejects.append(Reject(line, str(exc), tuple(row)))
            continue
        key = (q.T, q.strike, q.is_call)
        if key in seen:
            rejects.append(Reject(line, "duplicate (T, strike, flag)", tuple(row)))
            continue
        seen.add(key)
        quotes.append(q)
    if not quotes:
        raise ValidationError(f"all {len(rejects)} rows were rejected")
    return IngestResult(quotes, rejects)


def format_quotes(quotes: Iterable[OptionQuote]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for q in quotes:
        w.writerow([q.date, f"{q.T:.12g}", f"{q.strike:.12g}", q.flag, f"{q.price:.12g}"])
    return buf.getvalue()


# ------------------------------------------------------------ market objects

def extract_forward_discount(quotes: Sequence[OptionQuote]) -> tuple[float, float]:
    """Forward and discount from put-call parity: regress ``C - P`` on ``K``.

    ``C - P = D F - D K``, so the slope is ``-D`` and the intercept ``D F``.
    """
    calls = {q.strike: q.price for q in quotes if q.is_call}
    puts = {q.strike: q.price for q in quotes if not q.is_call}
    strikes = sorted(set(calls) & set(puts))
    if len(strikes) < 2:
        raise ValidationError("need at least two strikes quoted as both call and put")
    K = np.array(strikes)
    y = np.array([calls[k] - puts[k] for k in strikes])
    A = np.column_stack([np.ones_like(K), K])
    (intercept, slope), *_ = np.linalg.lstsq(A, y, rcond=None)
    D = -slope
    if not 0 < D <= 1.2:
        raise ValidationError(f"implausible discount factor {D!r} from put-call parity")
    return float(intercept / D), float(D)


def build_surface(quotes: Sequence[OptionQuote]) -> Surface:
    """Group quotes by maturity into implied-volatility smiles.

    Each strike uses its out-of-the-money quote (put below the forward, call
    above) when both are available.
    """
    dates = {q.date for q in quotes}
    if len(dates) != 1:
        raise ValidationError(f"expected a single trade date, got {sorted(dates)}")
    by_T: dict[float, list[OptionQuote]] = {}
    for q in quotes:
        by_T.setdefault(q.T, []).append(q)
    smiles = []
    for T in sorted(by_T):
        qs = by_T[T]
        F, D = extract_forward_discount(qs)
        chosen: dict[float, OptionQuote] = {}
        for q in qs:
            prev = chosen.get(q.strike)
            otm = q.is_call == (q.strike >= F)
            if prev is None or otm:
                chosen[q.strike] = q
        K = np.array(sorted(chosen))
        sel = [chosen[k] for k in K]
        ivs = implied_vols([q.price for q in sel], F, K, T, D, [q.is_call for q in sel])
        ok = np.isfinite(ivs) & (ivs > 0)
        if not ok.all():
            logger.warning("T=%.6g: dropped %d quotes without an implied volatility", T, int((~ok).sum()))
        smiles.append(Smile(T, F, D, K[ok], ivs[ok]))
    return Surface(dates.pop(), tuple(smiles))


def call_deltas(smile: Smile) -> np.ndarray:
    vol = smile.ivs * np.sqrt(smile.T)
    return special.ndtr(np.log(smile.F / smile.strikes) / vol + 0.5 * vol)


def filter_by_delta(smile: Smile, lo: float = 0.10, hi: float = 0.90) -> Smile:
    """Keep quotes whose forward call delta lies in the open interval ``(lo, hi)``."""
    d = call_deltas(smile)
    keep = (d > lo) & (d < hi)
    if not keep.any():
        raise ValidationError(f"no quote at T={smile.T:.6g} has delta in ({lo}, {hi})")
    return Smile(smile.T, smile.F, smile.D, smile.strikes[keep], smile.ivs[keep])


def filter_surface(surface: Surface, lo: float = 0.10, hi: float = 0.90) -> Surface:
    return Surface(surface.date, tuple(filter_by_delta(s, lo, hi) for s in surface.smiles))


# ---------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticConfig:
    """Ground truth and quoting conventions for a synthetic option surface."""

    curves: CurveSpec = CurveSpec(sigma_bar=0.2, k_bar=1.0, eta_bar=0.5, beta_sigma=0.0, beta_k=1.0, delta=-0.5)
    alpha: float = 0.5
    maturities: tuple[float, ...] = DEFAULT_MATURITIES
    strike_rule: str = "delta"
    n_strikes: int = 15
    delta_range: tuple[float, float] = (0.15, 0.85)
    moneyness_range: tuple[float, float] = (-0.3, 0.3)
    iv_noise_bps: float = 5.0
    spot: float = 100.0
    rate: float = 0.02
    dividend: float = 0.0
    date: str = "2019-03-21"
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if self.iv_noise_bps < 0:
            raise ValidationError("IV noise must be non-negative")
        if not self.maturities or self.n_strikes < 1:
            raise ValidationError("maturity and strike grids must be non-empty")
        if self.strike_rule not in ("delta", "moneyness"):
            raise ValidationError(f"unknown strike rule {self.strike_rule!r}")

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in self.__dataclass_fields__}
        out["curves"] = self.curves.to_dict()
        out["maturities"] = list(self.maturities)
        out["delta_range"] = list(self.delta_range)
        out["moneyness_range"] = list(self.moneyness_range)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown synthetic config keys: {sorted(unknown)}")
        if "curves" in data:
            data["curves"] = CurveSpec(**data["curves"])
        for key in ("maturities", "delta_range", "moneyness_range"):
            if key in data:
                data[key] = tuple(float(x) for x in data[key])
        return cls(**data)


@dataclass
class SyntheticSurface:
    surface: Surface
    quotes: list[OptionQuote]
    truth: ModelParams


def _strike_grid(cfg: SyntheticConfig, T: float, F: float, atm_vol: float) -> np.ndarray:
    if cfg.strike_rule == "delta":
        deltas = np.linspace(cfg.delta_range[1], cfg.delta_range[0], cfg.n_strikes)
        vol = atm_vol * np.sqrt(T)
        return F * np.exp(-vol * special.ndtri(deltas) + 0.5 * vol * vol)
    # a listed-strike style grid: fixed log-moneyness spacing at every maturity,
    # so the delta filter keeps more strikes as the maturity grows
    lo, hi = cfg.moneyness_range
    return F * np.exp(np.linspace(lo, hi, cfg.n_strikes))


def gen_synthetic_surface(cfg: SyntheticConfig, grid: PricingGrid = PricingGrid()) -> SyntheticSurface:
    """Price a known ATS, add Gaussian IV noise and emit call and put quotes.

    Call and put at the same strike get independent noise draws; the
    returned surface holds the noisy out-of-the-money IVs.
    """
    gen = RngSpec(cfg.seed, cfg.stream).generator()
    truth = cfg.curves.model_params(cfg.maturities, cfg.alpha)
    noise = cfg.iv_noise_bps * 1e-4
    quotes, smiles = [], []
    for tenor in truth.tenors:
        T = tenor.T
        D = float(np.exp(-cfg.rate * T))
        F = float(cfg.spot * np.exp((cfg.rate - cfg.dividend) * T))
        atm = fourier_call_prices([F], tenor, cfg.alpha, F, D, grid)
        atm_vol = float(implied_vols(atm, F, F, T, D)[0])
        K = _strike_grid(cfg, T, F, atm_vol)
        calls = fourier_call_prices(K, tenor, cfg.alpha, F, D, grid)
        ivs = implied_vols(calls, F, K, T, D)
        iv_call = ivs + noise * gen.standard_normal(K.size)
        iv_put = ivs + noise * gen.standard_normal(K.size)
        otm_iv = np.where(K >= F, iv_call, iv_put)
        smiles.append(Smile(T, F, D, K, otm_iv))
        c = black(F, K, T, D, iv_call, True)
        p = black(F, K, T, D, iv_put, False)
        for i in range(K.size):
            quotes.append(OptionQuote(cfg.date, T, float(K[i]), True, float(c[i])))
            quotes.append(OptionQuote(cfg.date, T, float(K[i]), False, float(p[i])))
    return SyntheticSurface(Surface(cfg.date, tuple(smiles)), quotes, truth)
