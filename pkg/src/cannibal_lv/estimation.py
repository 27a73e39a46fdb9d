"""Stacked nonlinear least squares, fit diagnostics and nested-model selection.

Both products' observations are concatenated into one response vector
(product 1 block first, then product 2) and fitted with a projected
Levenberg-Marquardt iteration.  Competition models keep the stand-alone
Bass parameters fixed; only the competition-phase parameters are free.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .data import SalesSeries
from .errors import (
    ComparisonInvalidError,
    DomainError,
    InputError,
    IntegrationDivergedError,
)
from .models import (
    COMPETITION_NAMES,
    BassParams,
    LVacParams,
    LVchParams,
    ReductionCase,
    bass_cumulative,
    integrate_raw,
)

logger = logging.getLogger(__name__)

Z_975 = 1.96
INSTANTANEOUS = "instantaneous"
CUMULATIVE = "cumulative"
FIT_MODES = (INSTANTANEOUS, CUMULATIVE)

_TINY = 1e-12


# -- data ------------------------------------------------------------------

@dataclass(frozen=True)
class StackedData:
    """Stacked observations ``w`` at quarter ``t`` for ``product`` 1 or 2.

    ``t`` counts quarters since the first product's launch (its first
    observed quarter is ``t = 1``).  ``c2`` is inferred from the first
    quarter of the second product.
    """

    t: np.ndarray
    product: np.ndarray
    w: np.ndarray
    fit_mode: str = INSTANTANEOUS
    c2: int | None = None

    def __post_init__(self) -> None:
        if self.fit_mode not in FIT_MODES:
            raise InputError(f"fit_mode must be one of {FIT_MODES}, got {self.fit_mode!r}")
        for name in ("t", "product", "w"):
            arr = np.asarray(getattr(self, name)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.t) == len(self.product) == len(self.w)):
            raise InputError("t, product and w must have equal length")
        if len(self.w) == 0:
            raise InputError("no observations")
        if np.any(self.t < 0):
            raise InputError("quarter indices must be >= 0")
        if not np.all(np.isfinite(self.w)):
            raise InputError("observations must be finite")

    @classmethod
    def from_series(
        cls,
        series1: SalesSeries,
        series2: SalesSeries | None = None,
        fit_mode: str = INSTANTANEOUS,
    ) -> StackedData:
        if series1 is None or len(series1) == 0:
            raise InputError("first series is empty")
        origin = series1.start - 1
        t1 = series1.quarter_index(origin)
        w1 = series1.units if fit_mode == INSTANTANEOUS else series1.cumulative
        if series2 is None:
            return cls(t1, np.ones(len(t1), dtype=int), w1, fit_mode, None)
        if len(series2) == 0:
            raise InputError("second series is empty")
        t2 = series2.quarter_index(origin)
        if t2[0] < 2:
            raise InputError(
                f"second product starts at {series2.quarters[0]}, not after the first "
                f"product's launch {series1.quarters[0]}"
            )
        if t2[-1] > t1[-1]:
            raise InputError(
                f"series misaligned: {series2.product_id} runs past the last quarter "
                f"of {series1.product_id} ({series1.quarters[-1]})"
            )
        w2 = series2.units if fit_mode == INSTANTANEOUS else series2.cumulative
        return cls(
            np.concatenate([t1, t2]),
            np.concatenate([np.ones(len(t1), dtype=int), np.full(len(t2), 2)]),
            np.concatenate([w1, w2]),
            fit_mode,
            int(t2[0] - 1),
        )

    @property
    def n(self) -> int:
        return len(self.w)

    def block(self, product: int) -> np.ndarray:
        return self.product == product

    def key(self) -> tuple:
        """Identity used to check that two fits saw the same data."""
        return (self.fit_mode, self.c2, self.t.tobytes(), self.product.tobytes(), self.w.tobytes())


# -- model specifications --------------------------------------------------

class CurveModel:
    """A single-block model ``w = func(theta, t)``; used for Bass fits and ad-hoc curves."""

    def __init__(
        self,
        names: Sequence[str],
        func: Callable[[np.ndarray, np.ndarray], np.ndarray],
        lower: Sequence[float] | None = None,
        upper: Sequence[float] | None = None,
        label: str = "curve",
    ):
        self.names = tuple(names)
        self.func = func
        k = len(self.names)
        self.lower = np.full(k, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(k, np.inf) if upper is None else np.asarray(upper, dtype=float)
        self.label = label
        self.fixed: dict[str, float] = {}

    def validate(self, theta: np.ndarray) -> None:
        if not np.all(np.isfinite(theta)):
            raise DomainError("non-finite parameters")

    def predict(self, theta: np.ndarray, data: StackedData) -> np.ndarray:
        self.validate(theta)
        return np.asarray(self.func(theta, np.asarray(data.t, dtype=float)), dtype=float)

    def build(self, theta: np.ndarray) -> Any:
        return dict(zip(self.names, map(float, theta)))


class BassModel(CurveModel):
    """Bass model on one series; cumulative mode uses the closed form."""

    def __init__(self, label: str = "Bass"):
        super().__init__(
            ("m", "p", "q"), self._curve, lower=(_TINY, _TINY, 0.0), upper=None, label=label
        )

    @staticmethod
    def _curve(theta: np.ndarray, t: np.ndarray) -> np.ndarray:
        return bass_cumulative(BassParams(*theta), t)

    def validate(self, theta: np.ndarray) -> None:
        BassParams(*map(float, theta))

    def predict(self, theta: np.ndarray, data: StackedData) -> np.ndarray:
        self.validate(theta)
        params = BassParams(*map(float, theta))
        t = np.asarray(data.t, dtype=float)
        z = bass_cumulative(params, t)
        if data.fit_mode == CUMULATIVE:
            return z
        return z - bass_cumulative(params, t - 1.0)

    def build(self, theta: np.ndarray) -> BassParams:
        return BassParams(*map(float, theta))

    def initial_guess(self, data: StackedData) -> np.ndarray:
        cum = data.w if data.fit_mode == CUMULATIVE else np.cumsum(data.w)
        return np.array([1.5 * max(float(np.max(cum)), _TINY), 0.01, 0.2])


_NAME_LOWER = {
    "p1": 0.0, "a1": _TINY, "b1": -np.inf, "alpha2": 0.0, "m1": _TINY,
    "p2": 0.0, "a2": _TINY, "b2": -np.inf, "alpha1": 0.0, "m2": _TINY,
}
_NAME_UPPER = {"alpha1": 1.0, "alpha2": 1.0}


class CompetitionModel:
    """One member of the LVch family, integrated numerically and fitted on stacked data.

    The reduction ``case`` fixes ``(alpha1, alpha2)``; cross-WOM terms whose
    alpha is fixed at zero are dropped from the free set because they no
    longer enter the equations.  ``p1_zero`` additionally fixes ``p1 = 0``,
    which turns :attr:`ReductionCase.InverseCannibalisation` into LVac.
    """

    def __init__(
        self,
        case: ReductionCase | str,
        standalone: BassParams,
        c2: int,
        p1_zero: bool = False,
        unconstrained: bool = False,
        dt: float = 0.01,
    ):
        self.case = ReductionCase(case)
        self.standalone = standalone
        self.c2 = int(c2)
        self.p1_zero = p1_zero
        self.unconstrained = unconstrained and self.case is ReductionCase.FullLVch
        self.dt = dt
        fixed: dict[str, float] = {}
        alphas = self.case.alphas
        if alphas is not None:
            fixed["alpha1"], fixed["alpha2"] = alphas
            if alphas[1] == 0.0:
                fixed["b1"] = 0.0
            if alphas[0] == 0.0:
                fixed["b2"] = 0.0
        if p1_zero:
            fixed["p1"] = 0.0
        self.fixed = fixed
        # with a fully shared residual market only m1 + m2 is identified
        self.shared_market = self.case is ReductionCase.UCRCD
        free = [n for n in COMPETITION_NAMES if n not in fixed]
        if self.shared_market:
            free = [n for n in free if n != "m2"]
            free[free.index("m1")] = "m"
        self.names = tuple(free)
        self._free_idx = np.array([COMPETITION_NAMES.index(n) for n in free if n != "m"])
        self._free_pos = np.array([i for i, n in enumerate(free) if n != "m"])
        self.lower = np.array([_NAME_LOWER.get(n, _TINY) for n in self.names])
        upper = [np.inf if self.unconstrained else _NAME_UPPER.get(n, np.inf) for n in self.names]
        self.upper = np.array(upper)
        self._template = np.array([fixed.get(n, 0.0) for n in COMPETITION_NAMES])
        self._sa = np.array([standalone.m, standalone.p, standalone.q])

    @property
    def label(self) -> str:
        if self.case is ReductionCase.InverseCannibalisation and self.p1_zero:
            return "LVac"
        if self.case is ReductionCase.FullLVch:
            return "LVch"
        return self.case.value + ("(p1=0)" if self.p1_zero else "")

    def full_vector(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        full = self._template.copy()
        full[self._free_idx] = theta[self._free_pos]
        if self.shared_market:
            m = theta[self.names.index("m")]
            full[COMPETITION_NAMES.index("m1")] = full[COMPETITION_NAMES.index("m2")] = 0.5 * m
        return full

    def build(self, theta: np.ndarray) -> LVchParams | LVacParams:
        params = LVchParams.from_vector(
            self.standalone, self.c2, self.full_vector(theta), unconstrained=self.unconstrained
        )
        if self.label == "LVac":
            return LVacParams(
                self.standalone, self.c2, params.a1, params.b1, params.m1,
                params.p2, params.a2, params.m2,
            )
        return params

    def validate(self, theta: np.ndarray) -> None:
        self.build(theta)

    def predict(self, theta: np.ndarray, data: StackedData) -> np.ndarray:
        if data.c2 is not None and data.c2 != self.c2:
            raise InputError(f"model entry time c2={self.c2} but data imply c2={data.c2}")
        self.validate(theta)
        horizon = int(np.max(data.t))
        z = integrate_raw(self.full_vector(theta), self._sa, self.c2, horizon, self.dt)
        col = np.asarray(data.product) - 1
        t = np.asarray(data.t, dtype=int)
        if data.fit_mode == CUMULATIVE:
            pred = z[t, col]
            # product 2 cumulative is counted from its own launch
            return pred
        return z[t, col] - z[t - 1, col]

    def theta_from(self, values: Mapping[str, float]) -> np.ndarray:
        values = self.complete(values)
        return np.array([float(values[n]) for n in self.names])

    def complete(self, values: Mapping[str, float]) -> dict:
        """``values`` with the common potential ``m`` filled in from ``m1 + m2`` when needed."""
        values = dict(values)
        if self.shared_market and "m" not in values and "m1" in values and "m2" in values:
            values["m"] = values["m1"] + values["m2"]
        return values

    def nested_in(self, other: CompetitionModel) -> bool:
        """True if every restriction of ``other`` also holds in ``self``."""
        if self.standalone != other.standalone or self.c2 != other.c2:
            return False
        mine = self.fixed
        for name, value in other.fixed.items():
            if name not in mine or mine[name] != value:
                return False
        # free alphas in ``other`` must admit the values fixed here
        for name in ("alpha1", "alpha2"):
            if name in mine and name not in other.fixed and not other.unconstrained:
                if not 0.0 <= mine[name] <= 1.0:
                    return False
        return len(self.names) < len(other.names)


def lvac_model(standalone: BassParams, c2: int, **kw) -> CompetitionModel:
    return CompetitionModel(ReductionCase.InverseCannibalisation, standalone, c2, p1_zero=True, **kw)


# -- Levenberg-Marquardt ---------------------------------------------------

@dataclass
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-10
    bounds: bool = True
    lambda0: float = 1e-3


@dataclass
class LMResult:
    x: np.ndarray
    residuals: np.ndarray
    sse: float
    iterations: int
    converged: bool
    sse_history: list[float]
    jacobian: np.ndarray
    message: str


def _forward_jacobian(fun, x, f0, lower, upper) -> np.ndarray:
    J = np.empty((len(f0), len(x)))
    for i in range(len(x)):
        h = max(1e-6, 1e-6 * abs(x[i]))
        step = h if x[i] + h <= upper[i] else -h
        xp = x.copy()
        xp[i] += step
        try:
            fp = fun(xp)
        except (DomainError, IntegrationDivergedError):
            xp[i] = x[i] - step
            step = -step
            fp = fun(xp)
        J[:, i] = (fp - f0) / step
    return J


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    x0: Sequence[float],
    lower: Sequence[float] | None = None,
    upper: Sequence[float] | None = None,
    max_iter: int = 500,
    tol: float = 1e-10,
    lambda0: float = 1e-3,
) -> LMResult:
    """Minimise ``sum(fun(x)**2)`` with Marquardt-scaled damping and box projection.

    ``fun`` returns the residual vector.  Steps are projected onto the box
    and accepted only if they lower the objective, so the recorded SSE
    history is non-increasing.  Convergence means an accepted step whose
    relative SSE decrease is below ``tol`` (or no decrease being possible
    at machine precision).
    """
    x = np.asarray(x0, dtype=float).copy()
    k = len(x)
    lo = np.full(k, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(k, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = np.clip(x, lo, hi)
    f = fun(x)
    sse = float(f @ f)
    scale = max(float(np.max(np.abs(f))) if len(f) else 0.0, 1.0)
    history = [sse]
    J = _forward_jacobian(fun, x, f, lo, hi)
    lam = lambda0
    converged = False
    message = "maximum iterations reached"
    it = 0
    if sse <= 1e-28 * scale**2 * len(f):
        return LMResult(x, f, sse, 0, True, history, J, "zero residual at start")
    while it < max_iter:
        it += 1
        A = J.T @ J
        g = J.T @ f
        d = np.maximum(np.diag(A), 1e-12 * max(float(np.max(np.diag(A))), 1e-300))
        # parameters pinned at a bound with the descent direction pointing outside stay put
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not free.any():
            converged = True
            message = "all parameters held at bounds"
            break
        Af = A[np.ix_(free, free)]
        accepted = False
        while lam <= 1e16:
            delta = np.zeros(k)
            try:
                delta[free] = np.linalg.solve(Af + lam * np.diag(d[free]), -g[free])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = np.clip(x + delta, lo, hi)
            if np.array_equal(x_new, x):
                lam *= 10.0
                continue
            try:
                f_new = fun(x_new)
                sse_new = float(f_new @ f_new)
            except (DomainError, IntegrationDivergedError, FloatingPointError):
                sse_new = math.inf
            if np.isfinite(sse_new) and sse_new < sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            message = "no further decrease possible"
            break
        rel = (sse - sse_new) / sse
        x, f, sse = x_new, f_new, sse_new
        assert sse <= history[-1]
        history.append(sse)
        lam = max(lam / 10.0, 1e-12)
        J = _forward_jacobian(fun, x, f, lo, hi)
        if rel < tol:
            converged = True
            message = "relative SSE change below tolerance"
            break
        if sse <= 1e-28 * scale**2 * len(f):
            converged = True
            message = "zero residual"
            break
    return LMResult(x, f, sse, it, converged, history, J, message)


# -- fit results -----------------------------------------------------------

@dataclass
class FitResult:
    """Estimated parameters with the diagnostics reported for every fitted model."""

    model: str
    names: tuple[str, ...]
    params: dict[str, float]
    residuals: np.ndarray
    observed: np.ndarray
    fitted: np.ndarray
    r2: float
    dw: float
    ci95: dict[str, tuple[float, float]]
    se: dict[str, float]
    unstable: dict[str, bool]
    n_obs: int
    n_params: int
    converged: bool
    fit_mode: str
    iterations: int
    sse: float
    jacobian: np.ndarray = field(repr=False)
    sse_history: list[float] = field(default_factory=list, repr=False)
    fixed: dict[str, float] = field(default_factory=dict)
    data_key: tuple = field(default=(), repr=False)
    spec: Any = field(default=None, repr=False)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.params[n] for n in self.names])

    def model_params(self):
        """The fitted parameters as a model-core parameter object."""
        return self.spec.build(self.theta)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fit_mode": self.fit_mode,
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "converged": self.converged,
            "iterations": self.iterations,
            "sse": self.sse,
            "r2": self.r2,
            "dw": self.dw,
            "params": {
                n: {
                    "estimate": self.params[n],
                    "ci95": list(self.ci95[n]),
                    "se": self.se[n],
                    "unstable": self.unstable[n],
                }
                for n in self.names
            },
            "fixed": dict(self.fixed),
        }


def r_squared(fit_or_observed, residuals: np.ndarray | None = None) -> float:
    """Determination index ``1 - SSE/SST`` on the representation used for fitting."""
    if residuals is None:
        observed, residuals = fit_or_observed.observed, fit_or_observed.residuals
    else:
        observed = fit_or_observed
    observed = np.asarray(observed, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    sst = float(np.sum((observed - observed.mean()) ** 2))
    if sst == 0.0:
        raise DomainError("zero total variance: R^2 undefined")
    return 1.0 - float(residuals @ residuals) / sst


def durbin_watson(residuals) -> float:
    e = np.asarray(residuals, dtype=float)
    if len(e) < 2:
        raise DomainError("Durbin-Watson needs at least 2 residuals")
    denom = float(e @ e)
    if denom == 0.0:
        raise DomainError("all-zero residuals: Durbin-Watson undefined")
    return float(np.sum(np.diff(e) ** 2) / denom)


def _ci_from_jacobian(theta, J, residuals, n_params):
    n = len(residuals)
    dof = n - n_params
    s2 = float(residuals @ residuals) / dof if dof > 0 else math.nan
    JtJ = J.T @ J
    unstable = np.zeros(n_params, dtype=bool)
    rank = np.linalg.matrix_rank(J) if J.size else 0
    if rank < n_params or not np.all(np.isfinite(JtJ)):
        cov = np.linalg.pinv(JtJ)
        # parameters with a component in the null space are not identified
        _, sv, vt = np.linalg.svd(J, full_matrices=True)
        tol = sv.max() * max(J.shape) * np.finfo(float).eps if sv.size else 0.0
        null = vt[np.sum(sv > tol):]
        unstable = np.any(np.abs(null) > 1e-8, axis=0) if len(null) else unstable
    else:
        try:
            cov = np.linalg.inv(JtJ)
        except np.linalg.LinAlgError:
            cov = np.linalg.pinv(JtJ)
            unstable[:] = True
    var = np.clip(np.diag(cov) * s2, 0.0, None)
    se = np.sqrt(var)
    unstable |= ~np.isfinite(se)
    # the data carry no information on a null-space direction: report an unbounded interval
    se[unstable] = math.inf
    return se, unstable


def confidence_intervals(fit: FitResult) -> dict[str, tuple[float, float]]:
    """Linearised asymptotic 95% limits ``estimate -+ 1.96 se`` from the Jacobian at the optimum."""
    se, _ = _ci_from_jacobian(fit.theta, fit.jacobian, fit.residuals, fit.n_params)
    return {
        n: (fit.params[n] - Z_975 * s, fit.params[n] + Z_975 * s) for n, s in zip(fit.names, se)
    }


def stack_residuals(model, series1: SalesSeries, series2: SalesSeries | None, params, fit_mode: str | None = None) -> np.ndarray:
    """Observed minus predicted, product-1 block then product-2 block."""
    if fit_mode is None:
        fit_mode = CUMULATIVE if isinstance(model, BassModel) else INSTANTANEOUS
    data = StackedData.from_series(series1, series2, fit_mode)
    theta = model.theta_from(params) if isinstance(params, Mapping) else np.asarray(params, dtype=float)
    return data.w - model.predict(theta, data)


def fit_nls(model, data: StackedData, init=None, options: FitOptions | None = None) -> FitResult:
    """Least-squares fit of ``model`` to stacked ``data`` from ``init``."""
    options = options or FitOptions()
    if init is None:
        if not hasattr(model, "initial_guess"):
            raise InputError(f"{model.label}: no initial values given")
        init = model.initial_guess(data)
    theta0 = model.theta_from(init) if isinstance(init, Mapping) else np.asarray(init, dtype=float)
    if len(theta0) != len(model.names):
        raise InputError(f"{model.label}: expected {len(model.names)} initial values, got {len(theta0)}")
    model.validate(theta0)
    k = len(model.names)
    if data.n < k + 1:
        raise InputError(f"{model.label}: {data.n} observations for {k} parameters")
    lower = model.lower if options.bounds else None
    upper = model.upper if options.bounds else None

    def residual_fn(theta: np.ndarray) -> np.ndarray:
        return data.w - model.predict(theta, data)

    try:
        lm = levenberg_marquardt(
            residual_fn, theta0, lower, upper,
            max_iter=options.max_iter, tol=options.tol, lambda0=options.lambda0,
        )
    except IntegrationDivergedError as exc:
        raise DomainError(f"{model.label}: initial parameters give a divergent trajectory ({exc})") from exc
    return _make_result(model, data, lm)


def _make_result(model, data: StackedData, lm: LMResult) -> FitResult:
    theta = lm.x
    residuals = lm.residuals
    k = len(theta)
    se, unstable = _ci_from_jacobian(theta, lm.jacobian, residuals, k)
    params = {n: float(v) for n, v in zip(model.names, theta)}
    try:
        r2 = r_squared(data.w, residuals)
    except DomainError:
        r2 = math.nan
    try:
        dw = durbin_watson(residuals)
    except DomainError:
        dw = math.nan
    return FitResult(
        model=model.label,
        names=tuple(model.names),
        params=params,
        residuals=residuals,
        observed=np.asarray(data.w, dtype=float),
        fitted=np.asarray(data.w, dtype=float) - residuals,
        r2=r2,
        dw=dw,
        ci95={n: (params[n] - Z_975 * s, params[n] + Z_975 * s) for n, s in zip(model.names, se)},
        se={n: float(s) for n, s in zip(model.names, se)},
        unstable={n: bool(u) for n, u in zip(model.names, unstable)},
        n_obs=data.n,
        n_params=k,
        converged=lm.converged,
        fit_mode=data.fit_mode,
        iterations=lm.iterations,
        sse=lm.sse,
        jacobian=lm.jacobian,
        sse_history=lm.sse_history,
        fixed=dict(model.fixed),
        data_key=data.key(),
        spec=model,
    )


def fit_best(model, data: StackedData, inits: Sequence, options: FitOptions | None = None) -> FitResult:
    """Multi-start wrapper: the lowest-SSE fit over ``inits`` (failed starts are skipped)."""
    best = None
    errors = []
    for init in inits:
        try:
            fit = fit_nls(model, data, init, options)
        except (DomainError, IntegrationDivergedError, InputError) as exc:
            errors.append(str(exc))
            continue
        if best is None or fit.sse < best.sse:
            best = fit
    if best is None:
        raise DomainError(f"{model.label}: every start failed ({'; '.join(errors)})")
    return best


# -- nested comparison -----------------------------------------------------

def partial_r_squared(r2_reduced: float, r2_extended: float) -> float:
    """Squared multiple partial correlation ``(R2_ext - R2_red) / (1 - R2_red)``."""
    if r2_reduced == 1.0:
        raise ZeroDivisionError("reduced model has R^2 = 1; partial R^2 undefined")
    return (r2_extended - r2_reduced) / (1.0 - r2_reduced)


def f_ratio(r2_partial: float, n: int, v: int, u: int) -> float:
    """``F = R2_partial (n - v) / ((1 - R2_partial) u)``; ``inf`` when ``R2_partial = 1``."""
    if n <= v:
        raise DomainError(f"need n > v, got n={n}, v={v}")
    if u < 1:
        raise DomainError(f"incremental parameter count u must be >= 1, got {u}")
    if r2_partial == 1.0:
        return math.inf
    if not 0.0 <= r2_partial < 1.0:
        raise DomainError(f"partial R^2 must lie in [0, 1), got {r2_partial}")
    return r2_partial * (n - v) / ((1.0 - r2_partial) * u)


class Verdict(str, enum.Enum):
    ExtendedSignificant = "ExtendedSignificant"
    ReducedAccepted = "ReducedAccepted"


def f_threshold(u: int) -> float:
    return 4.0 if u == 1 else 2.0


def verdict_for(f: float, u: int) -> Verdict:
    # equality counts as "not much higher" than the threshold
    return Verdict.ExtendedSignificant if f > f_threshold(u) else Verdict.ReducedAccepted


@dataclass(frozen=True)
class ModelComparison:
    reduced: str
    extended: str
    r2_reduced: float
    r2_extended: float
    r2_partial: float
    f_ratio: float
    n: int
    v: int
    u: int
    threshold: float
    verdict: Verdict

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["verdict"] = self.verdict.value
        return d


def compare_nested(reduced_fit: FitResult, extended_fit: FitResult) -> ModelComparison:
    if reduced_fit.data_key != extended_fit.data_key or reduced_fit.fit_mode != extended_fit.fit_mode:
        raise ComparisonInvalidError("fits were made on different data or fit modes")
    n = extended_fit.n_obs
    v = extended_fit.n_params
    u = v - reduced_fit.n_params
    if u < 1:
        raise ComparisonInvalidError(
            f"{reduced_fit.model} ({reduced_fit.n_params} params) is not a reduction of "
            f"{extended_fit.model} ({v} params)"
        )
    r2_partial = partial_r_squared(reduced_fit.r2, extended_fit.r2)
    # a worse extended fit means no improvement; clamp before forming F
    f = f_ratio(min(max(r2_partial, 0.0), 1.0), n, v, u)
    return ModelComparison(
        reduced=reduced_fit.model,
        extended=extended_fit.model,
        r2_reduced=reduced_fit.r2,
        r2_extended=extended_fit.r2,
        r2_partial=r2_partial,
        f_ratio=f,
        n=n,
        v=v,
        u=u,
        threshold=f_threshold(u),
        verdict=verdict_for(f, u),
    )


# -- initialisation and the selection ladder -------------------------------

def fit_bass_series(series: SalesSeries, fit_mode: str = CUMULATIVE, options: FitOptions | None = None) -> FitResult:
    """Bass fit of one series, time measured from its own launch."""
    model = BassModel(label=f"Bass[{series.product_id}]")
    data = StackedData.from_series(series, None, fit_mode)
    guess = model.initial_guess(data)
    inits = [guess, guess * np.array([1.0, 0.3, 1.5]), guess * np.array([0.8, 3.0, 0.5])]
    return fit_best(model, data, inits, options)


def fit_standalone(series1: SalesSeries, c2: int, options: FitOptions | None = None) -> FitResult:
    """Bass fit of the first product's quarters ``1..c2`` on cumulative data."""
    if c2 < 4:
        raise InputError(f"stand-alone phase has only {c2} quarters; need >= 4 to fit a Bass model")
    return fit_bass_series(series1.head(c2), CUMULATIVE, options)


def competition_inits(model: CompetitionModel, series1: SalesSeries, series2: SalesSeries) -> list[dict]:
    """Starting points seeded from independent Bass fits of the two products."""
    b1 = fit_bass_series(series1).params
    b2 = fit_bass_series(series2).params
    base = {
        "p1": b1["p"], "a1": max(b1["q"], 1e-3), "b1": 0.0, "alpha2": 0.5, "m1": b1["m"],
        "p2": b2["p"], "a2": max(b2["q"], 1e-3), "b2": 0.0, "alpha1": 0.5, "m2": b2["m"],
    }
    starts = [base]
    alt = dict(base, alpha1=0.1, alpha2=0.9, b1=-0.1 * base["a1"])
    starts.append(alt)
    alt2 = dict(base, alpha1=0.9, alpha2=0.1, b2=-0.1 * base["a2"])
    starts.append(alt2)
    return starts


def project_init(model: CompetitionModel, values: Mapping[str, float]) -> dict:
    values = model.complete(values)
    out = {}
    for name, lo, hi in zip(model.names, model.lower, model.upper):
        out[name] = float(np.clip(values.get(name, 0.0), lo, hi))
    return out


@dataclass
class LadderStep:
    candidate: str
    fit: FitResult | None
    compared_with: str | None = None
    comparison: ModelComparison | None = None
    accepted: bool = False
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "compared_with": self.compared_with,
            "comparison": None if self.comparison is None else self.comparison.to_dict(),
            "accepted": self.accepted,
            "error": self.error,
        }


@dataclass
class SelectionReport:
    steps: list[LadderStep]
    selected: str
    selected_fit: FitResult | None
    polarisation: dict | None = None

    @property
    def fits(self) -> dict[str, FitResult]:
        return {s.candidate: s.fit for s in self.steps if s.fit is not None}

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "polarisation": self.polarisation,
            "steps": [s.to_dict() for s in self.steps],
        }


def polarisation(fit: FitResult, tol: float = 0.1) -> dict | None:
    """Reduction suggested by polarised alpha estimates, if any.

    Each alpha is snapped to 0 or 1 when it lies within ``tol`` of it, or
    beyond it for unconstrained fits.
    """
    if "alpha1" not in fit.params or "alpha2" not in fit.params:
        return None

    def snap(a: float) -> float | None:
        if a <= tol:
            return 0.0
        if a >= 1.0 - tol:
            return 1.0
        return None

    a1, a2 = snap(fit.params["alpha1"]), snap(fit.params["alpha2"])
    suggestion = None
    if a1 is not None and a2 is not None:
        for case in ReductionCase:
            if case.alphas == (a1, a2):
                suggestion = case.value
    return {
        "alpha1": fit.params["alpha1"],
        "alpha2": fit.params["alpha2"],
        "suggested_reduction": suggestion,
    }


def default_candidates(standalone: BassParams, c2: int, unconstrained: bool = False) -> list[CompetitionModel]:
    return [
        CompetitionModel(ReductionCase.FullLVch, standalone, c2, unconstrained=unconstrained),
        CompetitionModel(ReductionCase.UCRCD, standalone, c2),
        CompetitionModel(ReductionCase.DirectCannibalisation, standalone, c2),
        CompetitionModel(ReductionCase.InverseCannibalisation, standalone, c2),
        lvac_model(standalone, c2),
        CompetitionModel(ReductionCase.IndependentBass, standalone, c2),
    ]


def selection_ladder(
    series1: SalesSeries,
    series2: SalesSeries,
    candidates: Sequence[CompetitionModel],
    options: FitOptions | None = None,
    inits: Sequence[Mapping[str, float]] | None = None,
) -> SelectionReport:
    """Fit the candidates in order and keep the most parsimonious accepted model.

    Each candidate is compared with the currently accepted model when it is
    nested in it, otherwise with the first (most general) candidate.  A
    candidate replaces the current model when the F-ratio rule accepts it
    and it is nested in the current model, or has fewer parameters (ties go
    to the higher R^2).  Fit failures are recorded and skipped.
    """
    if not candidates:
        raise InputError("no candidate models")
    data = StackedData.from_series(series1, series2, INSTANTANEOUS)
    if inits is None:
        inits = competition_inits(candidates[0], series1, series2)
    steps: list[LadderStep] = []
    full_model = candidates[0]
    fitted: dict[int, FitResult] = {}

    def run(model: CompetitionModel, extra: Sequence[Mapping[str, float]] = ()) -> FitResult:
        starts = [project_init(model, s) for s in list(inits) + list(extra)]
        return fit_best(model, data, starts, options)

    try:
        full_fit = run(full_model)
    except Exception as exc:  # recorded, not fatal
        steps.append(LadderStep(full_model.label, None, error=str(exc)))
        return SelectionReport(steps, selected="none", selected_fit=None)
    fitted[0] = full_fit
    steps.append(LadderStep(full_model.label, full_fit, accepted=True))
    current_idx = 0

    for idx, model in enumerate(candidates[1:], start=1):
        previous = [fitted[j].params for j in sorted(fitted)]
        try:
            fit = run(model, previous)
        except Exception as exc:
            steps.append(LadderStep(model.label, None, error=str(exc)))
            continue
        fitted[idx] = fit
        current = candidates[current_idx]
        base_idx = current_idx if model.nested_in(current) else 0
        if base_idx != 0 and not model.nested_in(candidates[base_idx]):
            base_idx = 0
        if not model.nested_in(candidates[base_idx]):
            steps.append(LadderStep(model.label, fit, error="not nested in the reference model"))
            continue
        base_fit = fitted[base_idx]
        if fit.sse < base_fit.sse * (1.0 - 1e-9):
            # the restricted optimum is admissible for the extension: restart from it
            refit = run(candidates[base_idx], [fit.params])
            if refit.sse < base_fit.sse:
                fitted[base_idx] = base_fit = refit
                for s in steps:
                    if s.fit is not None and s.candidate == candidates[base_idx].label:
                        s.fit = refit
        try:
            cmp = compare_nested(fit, base_fit)
        except (ZeroDivisionError, ComparisonInvalidError, DomainError) as exc:
            steps.append(LadderStep(model.label, fit, candidates[base_idx].label, error=str(exc)))
            continue
        step = LadderStep(model.label, fit, candidates[base_idx].label, cmp)
        if cmp.verdict is Verdict.ReducedAccepted:
            cur_fit = fitted[current_idx]
            if base_idx == current_idx or fit.n_params < cur_fit.n_params or (
                fit.n_params == cur_fit.n_params and fit.r2 > cur_fit.r2
            ):
                current_idx = idx
                step.accepted = True
        steps.append(step)

    selected_fit = fitted[current_idx]
    return SelectionReport(
        steps,
        selected=candidates[current_idx].label,
        selected_fit=selected_fit,
        polarisation=polarisation(fitted[0]),
    )
