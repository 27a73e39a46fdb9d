"""End-to-end batch run: load, fit, select, forecast, analyse, write artifacts.

The run is configured by :class:`RunConfig`, usually loaded from a JSON file.
Every stage records its outcome in the report; a failing stage stops the run
and later stages are marked as skipped.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import platform
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .data import SalesSeries, load_csv, moving_average, quarter_range
from .errors import CannibalLVError, InputError
from .estimation import (
    INSTANTANEOUS,
    CompetitionModel,
    FitOptions,
    FitResult,
    StackedData,
    competition_inits,
    default_candidates,
    fit_bass_series,
    fit_best,
    fit_standalone,
    lvac_model,
    project_init,
    selection_ladder,
)
from .forecasting import (
    MeanTrajectory,
    SarmaxSpec,
    auto_sarmax,
    fit_sarmax,
    ljung_box,
    mean_forecast_z1,
    mean_forecast_z2,
    on_product1_axis,
    sarmax_forecast,
)
from .models import LVacParams, ReductionCase, simulate
from .nondim import FormulaMode, peak_delay_report
from .scenarios import SYNTHETIC_HORIZON, SYNTHETIC_LVAC

SEED_ENV = "CANNIBAL_LV_SEED"
BUNDLED_DATASET = "synthetic_lvac.csv"
STAGES = ("load", "standalone", "fit", "forecast", "nondim")


@dataclass
class RunConfig:
    """Settings of one pipeline run; see the README for the JSON schema."""

    inputs: list[str] = field(default_factory=list)
    product1: str | None = None
    product2: str | None = None
    model: str = "ladder"
    fit_mode: str = INSTANTANEOUS
    bounds: bool = True
    max_iter: int = 500
    init: dict[str, float] = field(default_factory=dict)
    sarmax: Any = "auto"
    horizon: int = 4
    holdout: int = 0
    output_dir: str = "out"
    seed: int = 0
    smooth: bool = False
    smooth_window: int = 5
    formula_mode: str = FormulaMode.Literal.value
    simulate: dict | None = None

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise InputError(f"horizon must be >= 0, got {self.horizon}")
        if self.holdout < 0:
            raise InputError(f"holdout must be >= 0, got {self.holdout}")
        if self.model != "ladder" and self.model != "LVac":
            try:
                ReductionCase(self.model)
            except ValueError:
                raise InputError(f"unknown model {self.model!r}") from None
        FormulaMode(self.formula_mode)
        if isinstance(self.inputs, str):
            self.inputs = [self.inputs]

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**dict(values))

    @classmethod
    def from_json(cls, path: str | Path) -> RunConfig:
        try:
            values = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise InputError(f"{path}: config must be a JSON object")
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **overrides: Any) -> RunConfig:
        """Copy with the non-``None`` overrides applied (command-line flags)."""
        values = self.to_dict()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(values)


def resolve_seed(flag: int | None, config_seed: int, env: Mapping[str, str] | None = None) -> int:
    """Seed precedence: command-line flag, then ``CANNIBAL_LV_SEED``, then the config."""
    if flag is not None:
        return int(flag)
    env = os.environ if env is None else env
    raw = env.get(SEED_ENV)
    if raw not in (None, ""):
        try:
            return int(raw)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return int(config_seed)


def bundled_dataset_path() -> Path:
    return Path(str(resources.files("cannibal_lv").joinpath("datasets", BUNDLED_DATASET)))


def synthetic_dataset(seed: int = 0, noise_cv: float = 0.02, horizon: int = SYNTHETIC_HORIZON,
                      seasonal_amplitudes=(0.95, 0.95, 0.95, 1.15)) -> list[SalesSeries]:
    """The synthetic LVac world behind the bundled dataset."""
    s1, s2 = simulate(
        SYNTHETIC_LVAC, horizon, seasonal_amplitudes, noise_cv=noise_cv, seed=seed,
        start="2007Q3", product_ids=("incumbent", "entrant"),
    )
    return [s1, s2] if s2 is not None else [s1]


# -- JSON helpers ------------------------------------------------------------

def _clean(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


# -- the run ----------------------------------------------------------------

@dataclass
class RunResult:
    report: dict
    params_rows: list[dict]
    series_rows: list[dict]
    output_dir: Path | None
    ok: bool
    failed_stage: str | None = None
    error_kind: str | None = None


def _pick_series(series: list[SalesSeries], cfg: RunConfig) -> tuple[SalesSeries, SalesSeries | None]:
    by_id = {s.product_id: s for s in series}
    if cfg.product1 is not None:
        if cfg.product1 not in by_id:
            raise InputError(f"product {cfg.product1!r} not in data ({', '.join(by_id)})")
        s1 = by_id[cfg.product1]
    else:
        s1 = min(series, key=lambda s: (s.start, s.product_id))
    if cfg.product2 is not None:
        if cfg.product2 not in by_id:
            raise InputError(f"product {cfg.product2!r} not in data ({', '.join(by_id)})")
        return s1, by_id[cfg.product2]
    others = [s for s in series if s.product_id != s1.product_id]
    if len(others) > 1:
        raise InputError("more than two products in the data; set product1 and product2")
    return s1, (others[0] if others else None)


def _load(cfg: RunConfig) -> list[SalesSeries]:
    if cfg.inputs:
        out: list[SalesSeries] = []
        for path in cfg.inputs:
            out.extend(load_csv(path))
        return out
    if cfg.simulate is not None:
        return synthetic_dataset(seed=cfg.seed, **cfg.simulate)
    return load_csv(bundled_dataset_path())


def _model_for(name: str, standalone, c2: int) -> CompetitionModel:
    if name == "LVac":
        return lvac_model(standalone, c2)
    return CompetitionModel(name, standalone, c2)


def _fit_rows(name: str, fit: FitResult) -> list[dict]:
    rows = []
    for n in fit.names:
        lo, hi = fit.ci95[n]
        est = fit.params[n]
        rows.append({
            "model": name, "parameter": n, "estimate": est, "ci_lower": lo, "ci_upper": hi,
            "unstable": fit.unstable[n], "display": f"{est:.6g} [{lo:.6g}, {hi:.6g}]",
        })
    for stat in ("r2", "dw", "n_obs", "n_params"):
        v = getattr(fit, stat)
        rows.append({"model": name, "parameter": stat, "estimate": v, "ci_lower": "", "ci_upper": "",
                     "unstable": "", "display": f"{v:.6g}"})
    return rows


def _sarmax_for(cfg: RunConfig, observed: np.ndarray, traj: MeanTrajectory):
    if cfg.sarmax == "auto" or cfg.sarmax is None:
        return auto_sarmax(observed, traj)
    if not isinstance(cfg.sarmax, dict):
        raise InputError("sarmax must be \"auto\" or an object of orders")
    return fit_sarmax(observed, traj, SarmaxSpec(**cfg.sarmax))


def _forecast_product(cfg, label, observed_cum, traj, K, holdout_actual):
    fit = _sarmax_for(cfg, observed_cum, traj)
    band = sarmax_forecast(fit, traj, K)
    lb_lags = min(8, max(1, len(fit.residuals) // 4))
    try:
        lb = ljung_box(fit.residuals, lb_lags, fit.spec.n_arma)
    except CannibalLVError as exc:
        lb = {"error": str(exc)}
    out = {
        "product": label,
        "sarmax": fit.to_dict(),
        "ljung_box": lb,
        "mean_trajectory": traj.values.tolist(),
        "band": band.to_dict(),
        "note": "prediction limits assume normal innovations and ignore parameter uncertainty",
    }
    if holdout_actual is not None and len(holdout_actual):
        h = len(holdout_actual)
        act = np.asarray(holdout_actual, dtype=float)
        pt = band.point[:h]
        out["holdout"] = {
            "actual_cumulative": act.tolist(),
            "point": pt.tolist(),
            "abs_error": np.abs(act - pt).tolist(),
            "pct_error": (100.0 * np.abs(act - pt) / np.where(act != 0, np.abs(act), np.nan)).tolist(),
            "within_band": ((act >= band.lower95[:h]) & (act <= band.upper95[:h])).tolist(),
        }
    return out, fit, band


def run_pipeline(config: RunConfig, write: bool = True) -> RunResult:
    """Execute every stage for ``config``; artifacts go to ``config.output_dir`` when ``write``."""
    cfg = config
    started = time.time()
    report: dict[str, Any] = {
        "metadata": {"package": "cannibal_lv", "version": __version__, "seed": cfg.seed,
                     "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}},
        "stages": {s: "skipped" for s in STAGES},
        "errors": [],
    }
    params_rows: list[dict] = []
    series_rows: list[dict] = []
    failed: str | None = None
    kind: str | None = None
    ctx: dict[str, Any] = {}

    def stage(name, fn):
        nonlocal failed, kind
        if failed is not None:
            return
        try:
            fn()
            report["stages"][name] = "ok"
        except CannibalLVError as exc:
            failed = name
            kind = "input" if isinstance(exc, InputError) else "numeric"
            report["stages"][name] = "failed"
            report["errors"].append({"stage": name, "type": type(exc).__name__, "message": str(exc)})
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            failed, kind = name, "numeric"
            report["stages"][name] = "failed"
            report["errors"].append({"stage": name, "type": type(exc).__name__, "message": str(exc)})

    def do_load():
        series = _load(cfg)
        s1, s2 = _pick_series(series, cfg)
        if s2 is None:
            raise InputError("two products are needed for the competition analysis")
        h = cfg.holdout
        if h:
            if h >= len(s2) - 4 or h >= len(s1) - 4:
                raise InputError(f"holdout {h} leaves too little data to fit")
            ctx["holdout"] = (s1.cumulative[-h:], s2.cumulative[-h:])
            s1, s2 = s1.head(len(s1) - h), s2.head(len(s2) - h)
        if cfg.smooth:
            ctx["raw"] = (s1, s2)
            s1 = moving_average(s1, cfg.smooth_window)
            s2 = moving_average(s2, cfg.smooth_window)
        c2 = StackedData.from_series(s1, s2).c2
        ctx.update(s1=s1, s2=s2, c2=c2)
        report["data"] = {
            "product1": {"id": s1.product_id, "first": s1.quarters[0], "last": s1.quarters[-1], "n": len(s1)},
            "product2": {"id": s2.product_id, "first": s2.quarters[0], "last": s2.quarters[-1], "n": len(s2)},
            "c2": c2,
            "holdout": h,
            "smoothed": cfg.smooth,
        }

    def do_standalone():
        s1, s2, c2 = ctx["s1"], ctx["s2"], ctx["c2"]
        options = FitOptions(max_iter=cfg.max_iter, bounds=cfg.bounds)
        sa = fit_standalone(s1, c2, options)
        ctx["standalone"] = sa.model_params()
        report["standalone"] = sa.to_dict()
        params_rows.extend(_fit_rows("standalone", sa))
        bass = {}
        for s in (s1, s2):
            f = fit_bass_series(s, options=options)
            bass[s.product_id] = f.to_dict()
            params_rows.extend(_fit_rows(f"Bass[{s.product_id}]", f))
        report["bass"] = bass

    def do_fit():
        s1, s2, c2, sa = ctx["s1"], ctx["s2"], ctx["c2"], ctx["standalone"]
        options = FitOptions(max_iter=cfg.max_iter, bounds=cfg.bounds)
        inits = None
        if cfg.init:
            base = competition_inits(default_candidates(sa, c2)[0], s1, s2)
            inits = [dict(base[0], **cfg.init)] + base
        if cfg.fit_mode != INSTANTANEOUS:
            raise InputError("competition models are fitted on instantaneous data only")
        if cfg.model == "ladder":
            ladder = selection_ladder(s1, s2, default_candidates(sa, c2), options, inits)
            report["ladder"] = ladder.to_dict()
            report["selected"] = ladder.selected
            fits = ladder.fits
            for step in ladder.steps:
                if step.fit is not None:
                    params_rows.extend(_fit_rows(step.candidate, step.fit))
            if ladder.selected_fit is None:
                raise InputError("no competition model could be fitted")
            ctx["selected_fit"] = ladder.selected_fit
        else:
            model = _model_for(cfg.model, sa, c2)
            starts = inits or competition_inits(model, s1, s2)
            data = StackedData.from_series(s1, s2)
            fit = fit_best(model, data, [project_init(model, s) for s in starts], options)
            fits = {model.label: fit}
            report["fit"] = fit.to_dict()
            report["selected"] = model.label
            params_rows.extend(_fit_rows(model.label, fit))
            ctx["selected_fit"] = fit
        sel = report["selected"]
        report["selected_case"] = ReductionCase.InverseCannibalisation.value if sel == "LVac" else (
            ReductionCase.FullLVch.value if sel == "LVch" else sel
        )
        lvac = fits.get("LVac")
        if lvac is None:
            model = lvac_model(sa, c2)
            starts = inits or competition_inits(model, s1, s2)
            data = StackedData.from_series(s1, s2)
            lvac = fit_best(model, data, [project_init(model, s) for s in starts], options)
            report["lvac_fit"] = lvac.to_dict()
            params_rows.extend(_fit_rows("LVac", lvac))
        ctx["lvac_fit"] = lvac

    def do_forecast():
        K = max(cfg.horizon, cfg.holdout)
        if K == 0:
            return
        s1, s2, c2 = ctx["s1"], ctx["s2"], ctx["c2"]
        lvac: FitResult = ctx["lvac_fit"]
        params: LVacParams = lvac.model_params()
        T1, T2 = len(s1), len(s2)
        n1 = T1
        fitted_rates = lvac.fitted
        z1_in = np.cumsum(fitted_rates[:n1])
        K2 = T1 + K - c2 - T2
        traj2 = mean_forecast_z2(params, T2, K2)
        traj2_own = MeanTrajectory(traj2.times[: T2 + K], traj2.values[: T2 + K], T2)
        traj1 = mean_forecast_z1(params, z1_in, on_product1_axis(traj2, c2), T1, K)
        hold = ctx.get("holdout")
        f1, fit1, band1 = _forecast_product(cfg, s1.product_id, s1.cumulative, traj1, K, None if hold is None else hold[0])
        f2, fit2, band2 = _forecast_product(cfg, s2.product_id, s2.cumulative, traj2_own, K, None if hold is None else hold[1])
        report["forecast"] = {"horizon": K, "model": "LVac", "products": {s1.product_id: f1, s2.product_id: f2}}
        ctx["forecast"] = {s1.product_id: (traj1, fit1, band1), s2.product_id: (traj2_own, fit2, band2)}

    def do_nondim():
        lvac: FitResult = ctx["lvac_fit"]
        rep = peak_delay_report(lvac.model_params(), cfg.formula_mode)
        report["nondim"] = rep.to_dict()

    stage("load", do_load)
    stage("standalone", do_standalone)
    stage("fit", do_fit)
    stage("forecast", do_forecast)
    stage("nondim", do_nondim)
    if failed is None and max(cfg.horizon, cfg.holdout) == 0:
        report["stages"]["forecast"] = "not requested"

    if "s1" in ctx:
        series_rows = _series_rows(ctx)

    out_dir = None
    if write:
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(dumps_report(report))
        _write_csv(out_dir / "params.csv", PARAMS_COLUMNS, params_rows)
        _write_csv(out_dir / "series.csv", SERIES_COLUMNS, series_rows)
        meta = {
            "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "elapsed_s": round(time.time() - started, 3),
            "python": platform.python_version(),
            "version": __version__,
            "output_dir": str(out_dir),
        }
        (out_dir / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return RunResult(report, params_rows, series_rows, out_dir, failed is None, failed, kind)


PARAMS_COLUMNS = ("model", "parameter", "estimate", "ci_lower", "ci_upper", "unstable", "display")
SERIES_COLUMNS = (
    "product", "quarter", "t", "observed_units", "observed_cumulative", "smoothed_units",
    "fitted_units", "fitted_cumulative", "mean_trajectory", "forecast", "lower95", "upper95", "segment",
)


def _series_rows(ctx: dict) -> list[dict]:
    """One row per quarter per product: observations, fits and (when present) forecasts."""
    s1: SalesSeries = ctx["s1"]
    s2: SalesSeries = ctx["s2"]
    c2: int = ctx["c2"]
    sel: FitResult | None = ctx.get("selected_fit")
    fc = ctx.get("forecast", {})
    raw = ctx.get("raw")
    rows = []
    offset = 0
    for k, s in enumerate((s1, s2)):
        n = len(s)
        fitted = None
        if sel is not None:
            fitted = sel.fitted[offset: offset + n]
        offset += n
        t0 = 0 if k == 0 else c2
        observed = raw[k] if raw is not None else s
        entry = fc.get(s.product_id)
        in_fc = None
        if entry is not None:
            traj, sfit, band = entry
            # one-step-ahead fitted values inside the sample
            in_fc = sfit.observed - np.concatenate([np.zeros(len(sfit.observed) - sfit.n_eff), sfit.residuals])
            half = 1.959963984540054 * math.sqrt(sfit.sigma2)
        for i in range(n):
            row = {
                "product": s.product_id, "quarter": s.quarters[i], "t": t0 + i + 1,
                "observed_units": float(observed.units[i]),
                "observed_cumulative": float(observed.cumulative[i]),
                "smoothed_units": float(s.units[i]) if raw is not None else "",
                "fitted_units": "" if fitted is None else float(fitted[i]),
                "fitted_cumulative": "" if fitted is None else float(np.sum(fitted[: i + 1])),
                "mean_trajectory": "", "forecast": "", "lower95": "", "upper95": "",
                "segment": "in_sample",
            }
            if entry is not None:
                row.update(mean_trajectory=float(traj.values[i]), forecast=float(in_fc[i]),
                           lower95=float(in_fc[i] - half), upper95=float(in_fc[i] + half))
            rows.append(row)
        if entry is not None:
            traj, sfit, band = entry
            future = quarter_range(s.quarters[-1], len(band.point) + 1)[1:]
            for j, q in enumerate(future):
                rows.append({
                    "product": s.product_id, "quarter": q, "t": t0 + n + j + 1,
                    "observed_units": "", "observed_cumulative": "", "smoothed_units": "",
                    "fitted_units": "", "fitted_cumulative": "",
                    "mean_trajectory": float(traj.values[n + j]), "forecast": float(band.point[j]),
                    "lower95": float(band.lower95[j]), "upper95": float(band.upper95[j]),
                    "segment": "forecast",
                })
    return rows


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    path.write_text(buf.getvalue())
