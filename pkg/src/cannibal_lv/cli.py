"""Command-line interface.

Exit codes: 0 success, 1 user error (bad input, config or arguments),
2 numeric failure (divergent integration, failed fit).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .data import SalesSeries, dumps_csv, load_csv, moving_average, write_csv
from .errors import CannibalLVError, ComparisonInvalidError, DomainError, InputError
from .estimation import (
    CompetitionModel,
    FitOptions,
    StackedData,
    compare_nested,
    competition_inits,
    fit_bass_series,
    fit_best,
    fit_standalone,
    lvac_model,
    project_init,
)
from .models import BassParams, LVacParams, LVchParams, ReductionCase, simulate
from .nondim import FormulaMode, peak_delay_report
from .pipeline import RunConfig, dumps_report, resolve_seed, run_pipeline
from .scenarios import PAPER_LVAC

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2
MODEL_CHOICES = ["Bass", "LVac"] + [c.value for c in ReductionCase]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors are user errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


class UserError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def _emit(obj: Any, path: str | None) -> None:
    text = dumps_report(obj)
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _config(args, pipeline_model: bool = False) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if pipeline_model and args.model is not None:
        overrides["model"] = args.model
    for key in ("horizon", "holdout", "output_dir", "product1", "product2", "formula_mode"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "inputs", None):
        overrides["inputs"] = list(args.inputs)
    if getattr(args, "smooth", False):
        overrides["smooth"] = True
    if getattr(args, "sarmax", None) is not None:
        overrides["sarmax"] = _parse_sarmax(args.sarmax)
    cfg = cfg.with_overrides(**overrides)
    return cfg.with_overrides(seed=resolve_seed(getattr(args, "seed", None), cfg.seed))


def _parse_sarmax(text: str):
    if text == "auto":
        return "auto"
    try:
        p, q, sp, sq = (int(x) for x in text.split(","))
    except ValueError:
        raise InputError(f"--sarmax expects 'auto' or four orders 'p,q,P,Q', got {text!r}") from None
    return {"ar_order": p, "ma_order": q, "sar_order": sp, "sma_order": sq}


def _two_series(cfg: RunConfig) -> tuple[SalesSeries, SalesSeries | None]:
    from .pipeline import _load, _pick_series

    return _pick_series(_load(cfg), cfg)


def _read_params(source: str | None) -> dict:
    if source is None:
        return {}
    path = Path(source)
    text = path.read_text() if path.exists() else source
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"parameters must be a JSON object or a path to one ({exc})") from None
    if not isinstance(values, dict):
        raise InputError("parameters must be a JSON object")
    return values


def params_from_dict(kind: str, values: dict):
    """Model parameters from a JSON object; competition models need ``standalone`` and ``c2``."""
    try:
        if kind == "Bass":
            return BassParams(**values)
        values = dict(values)
        sa = values.pop("standalone", None)
        if sa is None:
            raise InputError("competition parameters need a 'standalone' object with m, p, q")
        standalone = BassParams(**sa)
        if kind == "LVac":
            return LVacParams(standalone=standalone, **values)
        case = ReductionCase(kind)
        lv = LVchParams(standalone=standalone, **values)
        if case.alphas is not None:
            a1, a2 = case.alphas
            if (lv.alpha1, lv.alpha2) != (a1, a2):
                raise InputError(f"{kind} requires alpha1={a1}, alpha2={a2}")
        return lv
    except TypeError as exc:
        raise InputError(f"bad parameter set for {kind}: {exc}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _config(args, pipeline_model=True)
    result = run_pipeline(cfg)
    summary = {
        "output_dir": str(result.output_dir),
        "stages": result.report["stages"],
        "selected": result.report.get("selected"),
        "errors": result.report["errors"],
    }
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if result.ok:
        return EXIT_OK
    return EXIT_USER if result.error_kind == "input" else EXIT_NUMERIC


def _fit_one(kind: str, s1: SalesSeries, s2: SalesSeries | None, options: FitOptions):
    if kind == "Bass":
        return {s.product_id: fit_bass_series(s, options=options).to_dict() for s in (s1, s2) if s is not None}, None
    if s2 is None:
        raise InputError(f"{kind} needs two products")
    c2 = StackedData.from_series(s1, s2).c2
    sa = fit_standalone(s1, c2, options)
    model = lvac_model(sa.model_params(), c2) if kind == "LVac" else CompetitionModel(kind, sa.model_params(), c2)
    starts = [project_init(model, s) for s in competition_inits(model, s1, s2)]
    fit = fit_best(model, StackedData.from_series(s1, s2), starts, options)
    return {"standalone": sa.to_dict(), "fit": fit.to_dict()}, fit


def cmd_fit(args) -> int:
    cfg = _config(args)
    s1, s2 = _two_series(cfg)
    out, _ = _fit_one(args.model, s1, s2, FitOptions(max_iter=cfg.max_iter, bounds=cfg.bounds))
    _emit(out, args.json)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    if args.ladder:
        result = run_pipeline(cfg.with_overrides(model="ladder", horizon=0, holdout=0), write=False)
        if not result.ok:
            _emit({"errors": result.report["errors"]}, args.json)
            return EXIT_USER if result.error_kind == "input" else EXIT_NUMERIC
        _emit({"selected": result.report["selected"], "ladder": result.report["ladder"]}, args.json)
        return EXIT_OK
    if not (args.reduced and args.extended):
        raise InputError("give --reduced and --extended, or --ladder")
    s1, s2 = _two_series(cfg)
    options = FitOptions(max_iter=cfg.max_iter, bounds=cfg.bounds)
    _, red = _fit_one(args.reduced, s1, s2, options)
    _, ext = _fit_one(args.extended, s1, s2, options)
    if red is None or ext is None:
        raise ComparisonInvalidError("comparisons need two competition models")
    if not red.spec.nested_in(ext.spec):
        raise ComparisonInvalidError(f"{args.reduced} is not nested in {args.extended}")
    cmp = compare_nested(red, ext)
    _emit({"reduced": red.to_dict(), "extended": ext.to_dict(), "comparison": cmp.to_dict()}, args.json)
    return EXIT_OK


def cmd_forecast(args) -> int:
    cfg = _config(args)
    if cfg.horizon < 1 and cfg.holdout < 1:
        raise InputError("forecast needs --horizon >= 1")
    if cfg.model == "ladder":
        # the two-step forecast is built on the LVac fit; skip the full ladder
        cfg = cfg.with_overrides(model="LVac")
    result = run_pipeline(cfg, write=bool(args.output_dir))
    if not result.ok:
        _emit({"errors": result.report["errors"]}, args.json)
        return EXIT_USER if result.error_kind == "input" else EXIT_NUMERIC
    _emit(result.report["forecast"], args.json)
    return EXIT_OK


def cmd_nondim(args) -> int:
    values = _read_params(args.params)
    try:
        params = params_from_dict("LVac", values) if values else PAPER_LVAC
        rep = peak_delay_report(params, args.formula_mode or FormulaMode.Literal.value)
    except DomainError as exc:
        raise UserError(str(exc)) from None
    _emit(rep.to_dict(), args.json)
    return EXIT_OK


def cmd_simulate(args) -> int:
    values = _read_params(args.params)
    try:
        params = params_from_dict(args.model, values) if values else PAPER_LVAC
    except DomainError as exc:
        raise UserError(str(exc)) from None
    seed = resolve_seed(args.seed, 0)
    seasonal = tuple(float(x) for x in args.seasonal.split(",")) if args.seasonal else (1.0, 1.0, 1.0, 1.0)
    s1, s2 = simulate(
        params, args.horizon, seasonal, noise_sd=args.noise_sd, seed=seed,
        noise_cv=args.noise_cv, start=args.start, product_ids=(args.ids[0], args.ids[1]),
    )
    series = [s1] + ([s2] if s2 is not None else [])
    if args.out:
        write_csv(args.out, series)
    else:
        sys.stdout.write(dumps_csv(series))
    return EXIT_OK


def cmd_smooth(args) -> int:
    series = load_csv(args.input)
    smoothed = [moving_average(s, args.window) for s in series]
    if args.out:
        write_csv(args.out, smoothed)
    else:
        sys.stdout.write(dumps_csv(smoothed))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="random seed (overrides CANNIBAL_LV_SEED and the config)")
    if data:
        p.add_argument("inputs", nargs="*", help="CSV files with columns product,quarter,units (default: bundled data)")
        p.add_argument("--product1", help="id of the first entrant")
        p.add_argument("--product2", help="id of the second entrant")
        p.add_argument("--smooth", action="store_true", help="apply the 5-term moving average before fitting")
    p.add_argument("--json", help="write the JSON result here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cannibal-lv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="full pipeline: fit, select, forecast, peak analysis")
    _common(p)
    p.add_argument("--model", help="'ladder' (default) or one model: " + ", ".join(MODEL_CHOICES[1:]))
    p.add_argument("--horizon", type=int)
    p.add_argument("--holdout", type=int)
    p.add_argument("--sarmax", help="'auto' or orders 'p,q,P,Q'")
    p.add_argument("--formula-mode", dest="formula_mode", choices=[m.value for m in FormulaMode])
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit", help="fit one model")
    _common(p)
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", help="nested comparison of two models, or the selection ladder")
    _common(p)
    p.add_argument("--reduced", choices=MODEL_CHOICES[1:])
    p.add_argument("--extended", choices=MODEL_CHOICES[1:])
    p.add_argument("--ladder", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("forecast", help="two-step LVac forecast with 95%% bands")
    _common(p)
    p.add_argument("--horizon", type=int, help="quarters ahead (default 4)")
    p.add_argument("--holdout", type=int)
    p.add_argument("--sarmax", help="'auto' or orders 'p,q,P,Q'")
    p.add_argument("--out", dest="output_dir", help="also write the full artifact set here")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("nondim", help="non-dimensional form and peak position of an LVac parameter set")
    _common(p, data=False)
    p.add_argument("--params", help="LVac parameters as JSON or a JSON file (default: published estimates)")
    p.add_argument("--formula-mode", dest="formula_mode", choices=[m.value for m in FormulaMode])
    p.set_defaults(func=cmd_nondim)

    p = sub.add_parser("simulate", help="synthetic quarterly sales as CSV")
    _common(p, data=False)
    p.add_argument("--model", default="LVac", choices=MODEL_CHOICES)
    p.add_argument("--params", help="parameters as JSON or a JSON file (default: published LVac estimates)")
    p.add_argument("--horizon", type=int, default=40)
    p.add_argument("--noise-cv", dest="noise_cv", type=float, default=0.0)
    p.add_argument("--noise-sd", dest="noise_sd", type=float, default=0.0)
    p.add_argument("--seasonal", help="four quarter-of-year factors, e.g. 0.9,0.9,1.0,1.2")
    p.add_argument("--start", default="2000Q1")
    p.add_argument("--ids", nargs=2, default=["product1", "product2"])
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("smooth", help="centered moving average of every series in a CSV")
    p.add_argument("input")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_smooth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UserError, InputError, ComparisonInvalidError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except CannibalLVError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
