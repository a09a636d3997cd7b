"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line (shown even without
``-s``) and then asserts the same condition.
"""

import json
import math
import time

import numpy as np
import pytest

from atslab.calibration import TenorFit, calibrate_tenor, calibrate_tenor_constant_eta, to_theta
from atslab.cli import run
from atslab.inference import fit_power_law
from atslab.market_data import SyntheticConfig, filter_surface, gen_synthetic_surface
from atslab.model import CurveSpec, ModelParams, TenorParams, ats_log_chf
from atslab.pricing import EuropeanOption, atm_skew, fourier_price
from atslab.sampling import RngSpec, mc_price
from atslab.subordination import (CoefficientPath, PowerCurve, TssSpec, independence_gap, representability_verdict,
                                  tss_exponent_by_integral, tss_gamma_drift, tss_log_laplace)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok
    return emit


def test_criterion_01_black_limit(report):
    start = time.perf_counter()
    price = fourier_price(EuropeanOption(K=100.0, T=1.0, F=100.0, D=1.0),
                          ModelParams(0.5, (TenorParams(1.0, 0.2, 1e-8, 1.0),)))
    elapsed = time.perf_counter() - start
    ok = abs(price - 7.9656) <= 1e-3 and elapsed < 1.0
    assert report(1, ok, f"price {price:.6f} vs 7.9656 (tol 1e-3), {elapsed:.3f}s (< 1s)")


def test_criterion_02_fourier_vs_mc(report):
    start = time.perf_counter()
    strikes = (80.0, 90.0, 100.0, 110.0, 120.0)
    worst, fails = 0.0, []
    for alpha in (0.5, 0.0):
        params = ModelParams(alpha, (TenorParams(0.25, 0.2, 0.2, 1.0), TenorParams(1.0, 0.2, 1.0, 1.0)))
        for j, tp in enumerate(params.tenors):
            for i, K in enumerate(strikes):
                opt = EuropeanOption(K=K, T=tp.T, F=100.0)
                fp = fourier_price(opt, params)
                mp, se = mc_price(opt, params, 1_000_000, RngSpec(20240, j * len(strikes) + i))
                z = abs(mp - fp) / se
                worst = max(worst, z)
                if z > 3.0:
                    fails.append((alpha, tp.T, K, round(z, 2)))
    elapsed = time.perf_counter() - start
    ok = not fails and elapsed < 60.0
    assert report(2, ok, f"20 options, max |z| {worst:.2f} (limit 3), failures {fails}, {elapsed:.1f}s (< 60s)")


def test_criterion_03_exponent_by_integral(report):
    start = time.perf_counter()
    err = 0.0
    for alpha in (0.0, 0.5):
        spec = TssSpec.from_curves(CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0), alpha)
        for t in (0.05, 0.25, 1.0, 2.0):
            for u in (-5.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 5.0):
                err = max(err, abs(tss_exponent_by_integral(u, t, spec) - tss_log_laplace(-1j * u, t, spec)))
    elapsed = time.perf_counter() - start
    ok = err <= 1e-6 and elapsed < 10.0
    assert report(3, ok, f"max error {err:.2e} (tol 1e-6), {elapsed:.2f}s (< 10s)")


def test_criterion_04_gamma_bound(report):
    sets = [(0.0, CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0)),
            (0.5, CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0)),
            (0.5, CurveSpec(sigma_bar=0.4, k_bar=0.3, beta_k=0.5, beta_sigma=0.1)),
            (0.8, CurveSpec(sigma_bar=0.15, k_bar=2.0, beta_k=1.5))]
    grid = np.geomspace(1e-4, 3.0, 20)
    bad = []
    for alpha, curves in sets:
        spec = TssSpec.from_curves(curves, alpha)
        for t in grid:
            g = tss_gamma_drift(t, spec)
            if not 0.0 <= g <= t * spec.sigma(t) ** 2 * (1 + 1e-12):
                bad.append((alpha, float(t), g))
    closed = tss_gamma_drift(1.0, TssSpec.constant(0.0, 1.0, 1.0))
    closed_err = abs(closed - (1 - math.exp(-1)))
    ok = not bad and closed_err <= 1e-8
    assert report(4, ok, f"{len(bad)} bound violations over 4 sets x 20 t; closed form error {closed_err:.1e} (tol 1e-8)")


def test_criterion_05_subordination_lab(report):
    spec = TssSpec.constant(0.5, 0.2, 1.0)
    us = np.linspace(-4.0, 4.0, 5)
    s, t = 0.5, 1.0
    const = CoefficientPath(PowerCurve(1.3), PowerCurve(-1.0), PowerCurve(0.01, 1.0))
    doubling = CoefficientPath(PowerCurve(1.0, 1.0), PowerCurve(-1.0))
    assert doubling.a_fn(t) / doubling.a_fn(s) == pytest.approx(2.0)
    gap_const = max(independence_gap(s, t, a, b, const, spec) for a in us for b in us)
    gap_double = max(independence_gap(s, t, a, b, doubling, spec) for a in us for b in us)

    tol = 1e-6
    verdicts_ok = True
    for spread in (0.0, 0.5e-6, 0.99e-6, 1.01e-6, 2e-6, 0.1):
        eta = np.array([1.0, 1.0 + spread / 2, 1.0 + spread])
        params = ModelParams(0.5, tuple(TenorParams(T, 0.2, 1.0, e) for T, e in zip((0.1, 0.5, 1.0), eta)))
        realised = (eta.max() - eta.min()) / eta.mean()
        verdicts_ok &= representability_verdict(params, tol=tol).representable is bool(realised <= tol)
    ok = gap_const <= 1e-12 and gap_double >= 1e-3 and verdicts_ok
    assert report(5, ok, f"constant gap {gap_const:.1e} (<= 1e-12), a_t/a_s=2 gap {gap_double:.2e} (>= 1e-3), "
                         f"verdict matches tolerance: {verdicts_ok}")


def test_criterion_06_theta_map(report):
    syn = gen_synthetic_surface(SyntheticConfig(maturities=(1 / 52, 0.25, 2.0), iv_noise_bps=5.0, seed=1))
    surf = filter_surface(syn.surface)
    fits = [calibrate_tenor(sm, 0.5) for sm in surf.smiles]
    fits += [TenorFit(tp, np.zeros((3, 3)), 0.0, 0, True) for tp in syn.truth.tenors]
    u = np.linspace(-50.0, 50.0, 201)
    err = 0.0
    for alpha in (0.5, 0.0):
        for fit, point in zip(fits, to_theta(fits)):
            tp = fit.params.with_drift(alpha)
            a = ats_log_chf(u, tp, alpha)
            b = ats_log_chf(u, point.tenor().with_drift(alpha), alpha)
            err = max(err, float(np.max(np.abs(np.exp(a) - np.exp(b)))))
    ok = err <= 1e-12
    assert report(6, ok, f"max chf difference {err:.1e} over {len(fits)} tenors x 2 models (tol 1e-12)")


def _experiment(delta, seed):
    cfg = SyntheticConfig(curves=CurveSpec(eta_bar=0.5, delta=delta), iv_noise_bps=5.0, seed=seed)
    assert len(cfg.maturities) == 8
    surf = filter_surface(gen_synthetic_surface(cfg).surface)
    return fit_power_law(to_theta([calibrate_tenor(sm, cfg.alpha) for sm in surf.smiles]))


def test_criterion_07_power_law_experiment(report):
    start = time.perf_counter()
    alt = [_experiment(-0.5, seed) for seed in range(10)]
    null = [_experiment(0.0, 100 + seed) for seed in range(10)]
    elapsed = time.perf_counter() - start
    hits = sum(-0.65 <= r.delta_hat <= -0.35 and r.p_value < 1e-3 for r in alt)
    keeps = sum(r.p_value >= 0.01 for r in null)
    ok = hits >= 9 and keeps >= 8 and elapsed < 600.0
    deltas = ", ".join(f"{r.delta_hat:.3f}" for r in alt)
    assert report(7, ok, f"delta=-0.5: {hits}/10 in range with p<1e-3 (need 9), deltas [{deltas}], "
                         f"max p {max(r.p_value for r in alt):.1e}; null: {keeps}/10 with p>=0.01 (need 8); "
                         f"{elapsed:.0f}s (< 600s)")


def test_criterion_08_constant_eta_mse(report):
    cfg = SyntheticConfig(curves=CurveSpec(eta_bar=0.5, delta=-0.5), iv_noise_bps=5.0, seed=0)
    surf = filter_surface(gen_synthetic_surface(cfg).surface)
    free = [calibrate_tenor(sm, cfg.alpha) for sm in surf.smiles]
    const = calibrate_tenor_constant_eta(surf, cfg.alpha)
    ratios = [c.mse / f.mse for f, c in zip(free, const)]
    ok = ratios[0] >= 10.0 and ratios[-1] <= 3.0
    assert report(8, ok, f"MSE ratio constant/free by maturity {[round(r, 2) for r in ratios]}; "
                         f"shortest {ratios[0]:.1f} (need >= 10), longest {ratios[-1]:.2f} (need <= 3)")


def test_criterion_09_skew_slope(report):
    T = np.geomspace(0.02, 0.5, 10)
    params = CurveSpec(sigma_bar=0.2, k_bar=1.0, beta_k=1.0, eta_bar=0.5, delta=-0.5).model_params(T, 0.5)
    skew = np.array([atm_skew(params, t) for t in T])
    slope = float(np.polyfit(np.log(T), np.log(np.abs(skew)), 1)[0])
    ok = bool(np.all(skew < 0)) and abs(slope + 0.5) <= 0.1
    assert report(9, ok, f"slope of ln|skew| on ln T {slope:.4f} (target -0.5 +/- 0.1)")


def _pipeline(d):
    (d / "cfg.json").write_text(json.dumps({"seed": 11}))
    steps = [
        ["gen-synthetic", "--in", str(d / "cfg.json"), "--out", str(d / "q.csv")],
        ["calibrate", "--in", str(d / "q.csv"), "--out", str(d / "fits.json")],
        ["calibrate", "--in", str(d / "q.csv"), "--out", str(d / "cfits.json"), "--constant-eta"],
        ["test-eta", "--in", str(d / "fits.json"), "--out", str(d / "reports" / "rep.json"),
         "--line", str(d / "line.csv"), "--svg", str(d / "line.svg")],
        ["aggregate", "--in", str(d / "reports"), "--out", str(d / "agg.csv")],
        ["smile-report", "--in", str(d / "q.csv"), "--fits", str(d / "fits.json"),
         "--constant-fits", str(d / "cfits.json"), "--out", str(d / "smile.csv")],
        ["mc-check", "--out", str(d / "mc.json"), "--n", "20000", "--seed", "3"],
        ["lab", "--out", str(d / "lab.json")],
    ]
    (d / "reports").mkdir()
    codes = [run(s) for s in steps]
    return codes, {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_10_determinism(report, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    codes_a, files_a = _pipeline(tmp_path / "a")
    codes_b, files_b = _pipeline(tmp_path / "b")
    differing = sorted(k for k in files_a if files_a[k] != files_b.get(k))
    ok = codes_a == codes_b == [0] * len(codes_a) and files_a.keys() == files_b.keys() and not differing
    assert report(10, ok, f"{len(files_a)} output files compared, differing: {differing or 'none'}")
