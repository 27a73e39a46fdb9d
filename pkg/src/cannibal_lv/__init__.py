"""Diffusion models of competing products: fitting, model reduction, forecasting and peak analysis."""

__version__ = "0.1.0"

from .data import SalesSeries, load_csv, loads_csv, moving_average, write_csv
from .errors import (
    CannibalLVError,
    ComparisonInvalidError,
    DomainError,
    InputError,
    IntegrationDivergedError,
    NumericFailure,
    ParseError,
)
from .estimation import (
    CompetitionModel,
    FitOptions,
    FitResult,
    ModelComparison,
    StackedData,
    Verdict,
    compare_nested,
    durbin_watson,
    f_ratio,
    fit_nls,
    lvac_model,
    partial_r_squared,
    r_squared,
    selection_ladder,
)
from .forecasting import (
    ForecastBand,
    MeanTrajectory,
    SarmaxSpec,
    fit_sarmax,
    ljung_box,
    mean_forecast_z1,
    mean_forecast_z2,
    sarmax_forecast,
)
from .models import (
    BassParams,
    LVacParams,
    LVchParams,
    ReductionCase,
    Trajectory,
    bass_cumulative,
    bass_rate,
    integrate,
    lvac_rates,
    lvch_rates,
    simulate,
)
from .nondim import FormulaMode, NonDimParams, nondim_rates, peak_delay_report, riccati_f2, to_nondim
from .pipeline import RunConfig, run_pipeline

__all__ = [
    name for name, obj in list(globals().items())
    if not name.startswith("_") and getattr(obj, "__module__", "").startswith("cannibal_lv")
]
