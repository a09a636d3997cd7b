"""Additive normal tempered stable (ATS) processes: pricing, calibration and
the power-law test on the skew parameter."""

from .calibration import (ATSCalibrator, TenorFit, ThetaPoint, calibrate_tenor, calibrate_tenor_constant_eta,
                          surface_to_xy, to_theta)
from .exceptions import ATSError, DomainError, NumericalError, ValidationError
from .inference import PowerLawScaling, ScalingReport, aggregate_days, fit_power_law
from .market_data import (OptionQuote, Smile, Surface, SyntheticConfig, build_surface, extract_forward_discount,
                          filter_by_delta, gen_synthetic_surface, ingest_quotes)
from .model import CurveSpec, ModelParams, TenorParams, ats_log_chf, log_l, martingale_drift
from .pricing import EuropeanOption, PricingGrid, atm_skew, black_price, fourier_price, implied_vol
from .sampling import RngSpec, mc_price, sample_ats_marginal, sample_tss_marginal
from .subordination import TssSpec, independence_gap, representability_verdict, validate_tss

__version__ = "0.1.0"
