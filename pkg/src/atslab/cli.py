"""Command-line front end: ``atslab <subcommand> [options]``.

Exit status is 0 on success, 1 on invalid input or usage and 2 when a
numerical routine fails. Outputs are written atomically and are
byte-identical across runs with the same inputs and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .calibration import (TenorFit, ThetaPoint, _map, calibrate_tenor, calibrate_tenor_constant_eta, model_ivs,
                          to_theta)
from .exceptions import ATSError, NumericalError, ValidationError
from .inference import (ScalingReport, aggregate_days, fit_power_law, format_rows, regression_line_rows,
                        regression_svg)
from .market_data import (DEFAULT_MATURITIES, SyntheticConfig, Surface, build_surface, filter_surface,
                          format_quotes, gen_synthetic_surface, ingest_quotes)
from .model import CurveSpec, ModelParams, TenorParams, model_label
from .pricing import EuropeanOption, PricingGrid, fourier_call_prices, implied_vols
from .sampling import RngSpec, mc_price
from .subordination import (CoefficientPath, PowerCurve, TssSpec, independence_gap, representability_verdict,
                            tss_exponent_by_integral, tss_gamma_drift, tss_log_laplace, validate_tss)

logger = logging.getLogger("atslab")

MODELS = {"nig": 0.5, "vg": 0.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------------ output

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _check_paths(args, inputs=("input",), outputs=("out",)) -> None:
    for name in inputs:
        p = getattr(args, name, None)
        if p is not None and not Path(p).exists():
            raise ValidationError(f"input path does not exist: {p}")
    for name in outputs:
        p = getattr(args, name, None)
        if p is not None and not Path(p).resolve().parent.is_dir():
            raise ValidationError(f"output directory does not exist: {Path(p).parent}")


def _alpha(args, default: float = 0.5) -> float:
    if getattr(args, "alpha", None) is not None:
        return args.alpha
    if getattr(args, "model", None) is not None:
        return MODELS[args.model]
    return default


# ---------------------------------------------------------------- smile report

def smile_report(free_fits, constant_fits, surface: Surface, alpha: float,
                 grid: PricingGrid = PricingGrid()) -> tuple[list[dict], list[dict]]:
    """Market against free-eta and constant-eta model IVs, per quote and per tenor MSE."""
    smiles = list(surface.smiles)
    if not smiles:
        raise ValidationError("empty surface")
    if not (len(free_fits) == len(constant_fits) == len(smiles)):
        raise ValidationError("fits and surface hold different numbers of tenors")
    rows, mse_rows = [], []
    for sm, ff, cf in zip(smiles, free_fits, constant_fits):
        if not (math.isclose(ff.T, sm.T, rel_tol=1e-10) and math.isclose(cf.T, sm.T, rel_tol=1e-10)):
            raise ValidationError(f"tenor mismatch at T={sm.T:.6g}")
        a = model_ivs(sm, ff.params.sigma, ff.params.k, ff.params.eta, alpha, grid)
        b = model_ivs(sm, cf.params.sigma, cf.params.k, cf.params.eta, alpha, grid)
        for K, m, x, y in zip(sm.strikes, sm.ivs, a, b):
            rows.append({"T": sm.T, "K": float(K), "market_iv": float(m), "model_iv": float(x),
                         "constant_eta_iv": float(y)})
        mse_a = float(np.mean((a - sm.ivs) ** 2))
        mse_b = float(np.mean((b - sm.ivs) ** 2))
        mse_rows.append({"T": sm.T, "mse_model": mse_a, "mse_constant_eta": mse_b,
                         "ratio": mse_b / mse_a if mse_a > 0 else math.inf})
    return rows, mse_rows


# ---------------------------------------------------------------- subcommands

def _load_surface(path) -> tuple[Surface, int]:
    res = ingest_quotes(Path(path))
    for r in res.rejects:
        logger.warning("line %d rejected: %s", r.line, r.reason)
    return filter_surface(build_surface(res.quotes)), len(res.rejects)


def _fits_payload(fits, alpha, date, constant_eta, n_rejects) -> dict:
    return {"alpha": alpha, "label": model_label(alpha), "date": date, "constant_eta": constant_eta,
            "n_rejected_rows": n_rejects, "tenors": [f.to_dict() for f in fits],
            "theta_points": [p.to_dict() for p in to_theta(fits)]}


def _calibrate(surface, alpha, constant_eta):
    if constant_eta:
        return calibrate_tenor_constant_eta(surface, alpha)
    return _map(lambda sm: calibrate_tenor(sm, alpha), list(surface.smiles))


def cmd_gen_synthetic(args) -> int:
    _check_paths(args, outputs=("out", "truth"))
    cfg = SyntheticConfig.from_dict(_read_json(args.input)) if args.input else SyntheticConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.alpha is not None or args.model is not None:
        overrides["alpha"] = _alpha(args)
    if overrides:
        cfg = SyntheticConfig.from_dict({**cfg.to_dict(), **overrides})
    syn = gen_synthetic_surface(cfg)
    out = Path(args.out)
    truth = Path(args.truth) if args.truth else _sibling(out, ".truth.json")
    write_atomic(out, format_quotes(syn.quotes))
    write_atomic(truth, dumps({"config": cfg.to_dict(), "params": syn.truth.to_dict()}))
    return 0


def cmd_calibrate(args) -> int:
    _check_paths(args)
    alpha = _alpha(args)
    surface, n_rej = _load_surface(args.input)
    fits = _calibrate(surface, alpha, args.constant_eta)
    write_atomic(args.out, dumps(_fits_payload(fits, alpha, surface.date, args.constant_eta, n_rej)))
    return 0


def cmd_test_eta(args) -> int:
    _check_paths(args, outputs=("out", "line", "svg"))
    data = _read_json(args.input)
    try:
        points = [ThetaPoint.from_dict(p) for p in data["theta_points"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"fits file lacks theta points: {exc}") from None
    report = fit_power_law(points, equal_weights=args.equal_weights)
    out = Path(args.out)
    payload = {**report.to_dict(), "model": data.get("label", ""), "index": args.index,
               "date": data.get("date", ""), "reject_null": report.p_value < args.level}
    write_atomic(out, dumps(payload))
    rows = regression_line_rows(points, report)
    cols = ["ln_theta", "ln_eta_hat", "ci_half_width_ln_eta", "fitted_ln_eta"]
    write_atomic(args.line or _sibling(out, ".line.csv"), format_rows(rows, cols))
    if args.svg:
        write_atomic(args.svg, regression_svg(rows))
    return 0


def cmd_aggregate(args) -> int:
    src = Path(args.input)
    if not src.is_dir():
        raise ValidationError(f"not a directory: {src}")
    _check_paths(args, inputs=())
    groups: dict[tuple[str, str], dict[str, ScalingReport]] = {}
    files = sorted(src.glob("*.json"))
    if not files:
        raise ValidationError(f"no report files in {src}")
    for f in files:
        d = _read_json(f)
        if "p_value" not in d:
            logger.warning("%s skipped: not a scaling report", f.name)
            continue
        key = (str(d.get("model", "")), str(d.get("index", "")))
        day = str(d.get("date") or f.stem)
        if day in groups.setdefault(key, {}):
            raise ValidationError(f"duplicate day {day} for {key}")
        groups[key][day] = ScalingReport.from_dict(d)
    agg = aggregate_days(groups, level=args.level)
    cols = ["model", "index", "n_days", "mean_p", "max_p", "n_flagged"]
    write_atomic(args.out, format_rows(agg.rows(), cols))
    for g in agg.groups:
        for day in g.flagged_days:
            logger.warning("%s/%s %s: p >= %g", g.model, g.index, day, args.level)
    return 0


def _read_strikes(path) -> list[tuple[float, float, float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"T", "K"} <= set(reader.fieldnames):
            raise ValidationError("strikes CSV needs columns T and K (optionally F and D)")
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                out.append((float(row["T"]), float(row["K"]), float(row.get("F") or 100.0), float(row.get("D") or 1.0)))
            except ValueError:
                raise ValidationError(f"line {line}: non-numeric value") from None
    if not out:
        raise ValidationError("no strikes to price")
    return out


def cmd_price(args) -> int:
    _check_paths(args, inputs=("input", "strikes"))
    params = ModelParams.from_dict(_read_json(args.input))
    grid = PricingGrid(trunc_tol=args.tol) if args.tol else PricingGrid()
    rows = []
    for T, K, F, D in _read_strikes(args.strikes):
        tenor = params.tenor(T)
        call = float(fourier_call_prices([K], tenor, params.alpha, F, D, grid)[0])
        put = call - D * (F - K)
        iv = float(implied_vols([call], F, K, T, D)[0])
        rows.append({"T": T, "K": K, "call_price": call, "put_price": max(put, 0.0), "iv": iv})
    write_atomic(args.out, format_rows(rows, ["T", "K", "call_price", "put_price", "iv"]))
    return 0


def _default_mc_params(alpha: float) -> ModelParams:
    return ModelParams(alpha, (TenorParams(0.25, 0.2, 0.2, 1.0), TenorParams(1.0, 0.2, 1.0, 1.0)))


def cmd_mc_check(args) -> int:
    _check_paths(args)
    params = ModelParams.from_dict(_read_json(args.input)) if args.input else _default_mc_params(_alpha(args))
    strikes = [float(x) for x in args.strikes.split(",")]
    seed = 0 if args.seed is None else args.seed
    threshold = args.tol or 3.0
    results = []
    for j, tp in enumerate(params.tenors):
        for i, K in enumerate(strikes):
            opt = EuropeanOption(K=K, T=tp.T, F=args.forward)
            fp = float(fourier_call_prices([K], tp, params.alpha, args.forward, 1.0)[0])
            mp, se = mc_price(opt, params, args.n, RngSpec(seed, j * len(strikes) + i))
            z = (mp - fp) / se if se > 0 else 0.0
            results.append({"T": tp.T, "K": K, "fourier_price": fp, "mc_price": mp, "mc_se": se, "z_score": z,
                            "ok": abs(z) <= threshold})
    payload = {"alpha": params.alpha, "label": params.label, "n": args.n, "seed": seed,
               "threshold": threshold, "all_ok": all(r["ok"] for r in results), "options": results}
    write_atomic(args.out, dumps(payload))
    return 0


def _lab_curves(args) -> tuple[CurveSpec, float, np.ndarray]:
    cfg = _read_json(args.input) if args.input else {}
    cfg = dict(cfg)
    alpha = float(cfg.pop("alpha", _alpha(args)))
    t_grid = np.asarray(cfg.pop("t_grid", np.geomspace(1e-5, 2.0, 20)), dtype=float)
    try:
        curves = CurveSpec(**{"sigma_bar": 0.2, "k_bar": 1.0, "beta_k": 1.0, "eta_bar": 0.5, "delta": -0.5, **cfg})
    except TypeError as exc:
        raise ValidationError(f"bad lab config: {exc}") from None
    return curves, alpha, t_grid


def cmd_lab(args) -> int:
    _check_paths(args)
    curves, alpha, t_grid = _lab_curves(args)
    spec = TssSpec.from_curves(curves, alpha)
    violations = validate_tss(spec, t_grid)

    u_grid = (-20.0, -1.0, 0.5, 3.0, 50.0)
    t_check = (0.01, 0.25, 1.0, 2.0)
    err = 0.0
    for t in t_check:
        for u in u_grid:
            err = max(err, abs(tss_exponent_by_integral(u, t, spec) - tss_log_laplace(-1j * u, t, spec)))

    gamma_ok = all(0.0 <= tss_gamma_drift(t, spec) <= t * spec.sigma(t) ** 2 * (1 + 1e-12) for t in t_grid)

    tol = args.tol or 1e-6
    params = curves.model_params(DEFAULT_MATURITIES, alpha)
    verdict = representability_verdict(params, tol=tol)

    eta = curves.eta_bar
    paths = {
        "constant": CoefficientPath(PowerCurve(1.0), PowerCurve(-(0.5 + eta))),
        "doubling": CoefficientPath(PowerCurve(1.0, 1.0), PowerCurve(-(0.5 + eta), 1.0)),
    }
    gaps = []
    s, t = 0.5, 1.0
    for name, path in paths.items():
        for u1 in (-2.0, 1.0, 3.0):
            for u2 in (-1.0, 2.0):
                gaps.append({"path": name, "s": s, "t": t, "u1": u1, "u2": u2,
                             "gap": independence_gap(s, t, u1, u2, path, spec)})
    payload = {
        "alpha": alpha, "curves": curves.to_dict(),
        "tss_validation": {"ok": not violations, "violations": [v.to_dict() for v in violations],
                           "t_grid": t_grid},
        "exponent_match_max_err": err,
        "gamma_bound_ok": gamma_ok,
        "representability": {**verdict.to_dict(), "tol": tol},
        "independence_gaps": gaps,
    }
    write_atomic(args.out, dumps(payload))
    return 0


def cmd_smile_report(args) -> int:
    _check_paths(args, inputs=("input", "fits", "constant_fits"), outputs=("out", "mse_out"))
    alpha = _alpha(args)
    surface, _ = _load_surface(args.input)

    def load(path, constant):
        if path:
            return [TenorFit.from_dict(d) for d in _read_json(path)["tenors"]]
        return _calibrate(surface, alpha, constant)

    rows, mse_rows = smile_report(load(args.fits, False), load(args.constant_fits, True), surface, alpha)
    out = Path(args.out)
    write_atomic(out, format_rows(rows, ["T", "K", "market_iv", "model_iv", "constant_eta_iv"]))
    write_atomic(args.mse_out or _sibling(out, ".mse.csv"),
                 format_rows(mse_rows, ["T", "mse_model", "mse_constant_eta", "ratio"]))
    return 0


# ---------------------------------------------------------------- parser

def _model_flags(p, default_help="nig"):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float, help="tempered stable index in [0, 1)")
    g.add_argument("--model", choices=sorted(MODELS), help=f"shorthand for alpha (default {default_help})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atslab", description="Additive normal tempered stable model toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="subcommand")

    p = sub.add_parser("gen-synthetic", help="synthetic option quotes from a known ATS")
    p.add_argument("--in", dest="input", help="synthetic config JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="quotes CSV")
    p.add_argument("--truth", help="ground-truth JSON (default: <out>.truth.json)")
    p.add_argument("--seed", type=int)
    _model_flags(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("calibrate", help="per-maturity calibration of a quotes CSV")
    p.add_argument("--in", dest="input", required=True, help="quotes CSV")
    p.add_argument("--out", required=True, help="fits JSON")
    p.add_argument("--constant-eta", action="store_true", help="share one eta across maturities")
    _model_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("test-eta", help="power-law regression of eta on theta and the test of delta = 0")
    p.add_argument("--in", dest="input", required=True, help="fits JSON")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--line", help="regression line CSV (default: <out>.line.csv)")
    p.add_argument("--svg", help="optional SVG plot of the regression")
    p.add_argument("--equal-weights", action="store_true")
    p.add_argument("--index", default="synthetic", help="name of the underlying, kept for aggregation")
    p.add_argument("--level", type=float, default=1e-3, help="rejection level")
    p.set_defaults(func=cmd_test_eta)

    p = sub.add_parser("aggregate", help="mean and max p-values over a directory of reports")
    p.add_argument("--in", dest="input", required=True, help="directory of test-eta report JSONs")
    p.add_argument("--out", required=True, help="summary CSV")
    p.add_argument("--level", type=float, default=1e-3)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("price", help="Fourier prices and implied vols")
    p.add_argument("--in", dest="input", required=True, help="model params JSON")
    p.add_argument("--strikes", required=True, help="CSV with columns T, K and optionally F, D")
    p.add_argument("--out", required=True, help="prices CSV")
    p.add_argument("--tol", type=float, help="truncation tolerance of the Fourier integral")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("mc-check", help="Fourier prices against Monte Carlo")
    p.add_argument("--in", dest="input", help="model params JSON (default: two-tenor test surface)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--strikes", default="80,90,100,110,120")
    p.add_argument("--forward", type=float, default=100.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float, help="z-score threshold (default 3)")
    _model_flags(p)
    p.set_defaults(func=cmd_mc_check)

    p = sub.add_parser("lab", help="subordinator checks and the subordination theorem checks")
    p.add_argument("--in", dest="input", help="JSON with alpha, t_grid and curve parameters")
    p.add_argument("--out", required=True)
    p.add_argument("--tol", type=float, help="relative eta spread tolerated as constant (default 1e-6)")
    _model_flags(p)
    p.set_defaults(func=cmd_lab)

    p = sub.add_parser("smile-report", help="market against free and constant-eta model smiles")
    p.add_argument("--in", dest="input", required=True, help="quotes CSV")
    p.add_argument("--fits", help="free fits JSON (calibrated if omitted)")
    p.add_argument("--constant-fits", help="constant-eta fits JSON (calibrated if omitted)")
    p.add_argument("--out", required=True, help="per-quote CSV")
    p.add_argument("--mse-out", help="per-tenor MSE CSV (default: <out>.mse.csv)")
    _model_flags(p)
    p.set_defaults(func=cmd_smile_report)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    alpha = getattr(args, "alpha", None)
    if alpha is not None and not 0.0 <= alpha < 1.0:
        print(f"atslab: error: alpha must lie in [0, 1), got {alpha}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"atslab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ATSError, ValueError, KeyError, OSError) as exc:
        print(f"atslab: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
