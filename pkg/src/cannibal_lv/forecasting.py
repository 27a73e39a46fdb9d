"""Two-step out-of-sample forecasting: mean trajectories, then SARMAX refinement.

Step one extends the fitted deterministic trajectories beyond the last
observed quarter ``T``: product 2 through its closed-form Bass solution and
product 1 through a one-quarter Euler recursion of its LVac rate.  Step two
models the deviations ``D(t) = W(t) - c f(t)`` of observed cumulative sales
``W`` from the scaled mean trajectory ``f`` as a multiplicative seasonal ARMA
process

    Psi(B^s) Phi(B) D(t) = Theta(B) Omega(B^s) a(t)

with ``Phi(B) = 1 - phi B``, ``Psi(B^s) = 1 - Phi B^s``, ``Theta(B) = 1 + theta B``
and ``Omega(B^s) = 1 + Theta B^s`` (orders 0 or higher in each factor).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp

from .errors import DomainError, InputError
from .estimation import levenberg_marquardt
from .models import BassParams, LVacParams, bass_cumulative, lvac_rates

log = logging.getLogger(__name__)

Z_975 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class MeanTrajectory:
    """Cumulative mean trajectory on quarters ``1..T+K``; ``split = T``."""

    times: np.ndarray
    values: np.ndarray
    split: int

    def __post_init__(self) -> None:
        if len(self.times) != len(self.values):
            raise InputError("times and values differ in length")
        if not 0 <= self.split <= len(self.times):
            raise InputError(f"split {self.split} outside 0..{len(self.times)}")

    @property
    def in_sample(self) -> np.ndarray:
        return self.values[: self.split]

    @property
    def out_of_sample(self) -> np.ndarray:
        return self.values[self.split:]


def mean_forecast_z2(params: LVacParams, T: int, K: int) -> MeanTrajectory:
    """Closed-form product-2 trajectory, ``t`` counted in quarters since its launch."""
    if T < 1 or K < 0:
        raise InputError(f"need T >= 1 and K >= 0, got T={T}, K={K}")
    times = np.arange(1, T + K + 1, dtype=float)
    if params.p2 > 0:
        values = bass_cumulative(BassParams(params.m2, params.p2, params.a2), times)
    else:
        log.warning("p2 = 0: closed form unavailable, integrating the second equation numerically")
        sol = solve_ivp(
            lambda _t, z: (params.p2 + params.a2 * z / params.m2) * (params.m2 - z),
            (0.0, float(times[-1])), [0.0], t_eval=times, rtol=1e-10, atol=1e-12,
        )
        values = sol.y[0]
    return MeanTrajectory(times.astype(int), np.asarray(values, dtype=float), T)


def euler_step(params: LVacParams, z1: float, z2: float, t: int) -> float:
    """Increment ``c1(t)`` of the recursion ``z1(t+1) = z1(t) + c1(t)``."""
    # the increment covers quarter t + 1, so the phase is decided at its midpoint
    r1, _ = lvac_rates(params, z1, z2, t + 0.5)
    return float(r1)


def mean_forecast_z1(
    params: LVacParams,
    z1_insample: Sequence[float],
    z2_trajectory: Sequence[float],
    T: int,
    K: int,
) -> MeanTrajectory:
    """Product-1 trajectory: fitted values up to ``T``, Euler recursion beyond.

    Both inputs are on the product-1 time axis (quarter 1 is the first
    product's launch); ``z2_trajectory`` must cover ``1..T+K`` and is zero
    before the second product enters.
    """
    z1_in = np.asarray(z1_insample, dtype=float)
    z2 = np.asarray(z2_trajectory, dtype=float)
    if T < 1 or K < 0:
        raise InputError(f"need T >= 1 and K >= 0, got T={T}, K={K}")
    if len(z1_in) < T:
        raise InputError(f"z1_insample has {len(z1_in)} values, need {T}")
    if len(z2) < T + K:
        raise InputError(f"z2_trajectory has {len(z2)} values, need {T + K}")
    if not (np.all(np.isfinite(z2[: T + K])) and np.all(np.isfinite(z1_in[:T]))):
        raise InputError("missing values in the trajectories")
    values = np.empty(T + K)
    values[:T] = z1_in[:T]
    for t in range(T, T + K):
        # z2 at quarter t sits at index t - 1
        values[t] = values[t - 1] + euler_step(params, values[t - 1], z2[t - 1], t)
    return MeanTrajectory(np.arange(1, T + K + 1), values, T)


def on_product1_axis(traj2: MeanTrajectory, c2: int) -> np.ndarray:
    """Product-2 cumulative values re-indexed to quarters since product 1's launch."""
    return np.concatenate([np.zeros(c2), traj2.values])


# -- SARMAX ----------------------------------------------------------------

@dataclass(frozen=True)
class SarmaxSpec:
    ar_order: int = 0
    ma_order: int = 0
    sar_order: int = 0
    sma_order: int = 0
    season_length: int = 4
    include_c: bool = True

    def __post_init__(self) -> None:
        for name in ("ar_order", "ma_order", "sar_order", "sma_order"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be >= 0")
        if self.season_length < 1:
            raise DomainError("season_length must be >= 1")

    @property
    def n_arma(self) -> int:
        return self.ar_order + self.ma_order + self.sar_order + self.sma_order

    @property
    def max_lag(self) -> int:
        """Observations consumed before the first conditional innovation."""
        return self.ar_order + self.season_length * self.sar_order

    def label(self) -> str:
        return (
            f"({self.ar_order},0,{self.ma_order})x({self.sar_order},0,{self.sma_order})"
            f"[{self.season_length}]"
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _poly(coefs: Sequence[float], sign: float, step: int = 1) -> np.ndarray:
    """Coefficients of ``1 + sign * sum c_i B^(i*step)`` in increasing powers."""
    out = np.zeros(len(coefs) * step + 1)
    out[0] = 1.0
    for i, c in enumerate(coefs, start=1):
        out[i * step] = sign * c
    return out


@dataclass
class SarmaxFit:
    spec: SarmaxSpec
    c_exog: float
    phi: np.ndarray
    seasonal_phi: np.ndarray
    theta: np.ndarray
    seasonal_theta: np.ndarray
    sigma2: float
    residuals: np.ndarray
    deviations: np.ndarray
    observed: np.ndarray
    mean_in: np.ndarray
    n_eff: int
    aicc: float
    converged: bool
    ar_roots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma_roots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flags: list[str] = field(default_factory=list)

    @property
    def ar_poly(self) -> np.ndarray:
        s = self.spec.season_length
        return np.convolve(_poly(self.phi, -1.0), _poly(self.seasonal_phi, -1.0, s))

    @property
    def ma_poly(self) -> np.ndarray:
        s = self.spec.season_length
        return np.convolve(_poly(self.theta, 1.0), _poly(self.seasonal_theta, 1.0, s))

    def psi_weights(self, n: int) -> np.ndarray:
        """First ``n`` weights of the infinite moving-average form."""
        ar, ma = self.ar_poly, self.ma_poly
        psi = np.zeros(n)
        for j in range(n):
            v = ma[j] if j < len(ma) else 0.0
            for i in range(1, min(j, len(ar) - 1) + 1):
                v -= ar[i] * psi[j - i]
            psi[j] = v
        return psi

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "label": self.spec.label(),
            "c_exog": self.c_exog,
            "phi": self.phi.tolist(),
            "seasonal_phi": self.seasonal_phi.tolist(),
            "theta": self.theta.tolist(),
            "seasonal_theta": self.seasonal_theta.tolist(),
            "sigma2": self.sigma2,
            "n_eff": self.n_eff,
            "aicc": self.aicc,
            "converged": self.converged,
            "ar_roots_abs": np.abs(self.ar_roots).tolist(),
            "ma_roots_abs": np.abs(self.ma_roots).tolist(),
            "flags": list(self.flags),
        }


def _unpack(spec: SarmaxSpec, beta: np.ndarray):
    i = 0
    c = beta[i] if spec.include_c else 1.0
    i += int(spec.include_c)
    phi = beta[i:i + spec.ar_order]
    i += spec.ar_order
    sphi = beta[i:i + spec.sar_order]
    i += spec.sar_order
    th = beta[i:i + spec.ma_order]
    i += spec.ma_order
    sth = beta[i:i + spec.sma_order]
    return c, phi, sphi, th, sth


def _innovations(d: np.ndarray, ar: np.ndarray, ma: np.ndarray, start: int) -> np.ndarray:
    """Conditional innovations ``a(t)`` for ``t >= start`` with zero pre-sample innovations."""
    n = len(d)
    a = np.zeros(n)
    p, q = len(ar) - 1, len(ma) - 1
    for t in range(start, n):
        v = d[t]
        for i in range(1, p + 1):
            v += ar[i] * d[t - i]
        for j in range(1, min(q, t) + 1):
            v -= ma[j] * a[t - j]
        a[t] = v
    return a


def _polys(spec: SarmaxSpec, phi, sphi, th, sth):
    s = spec.season_length
    ar = np.convolve(_poly(phi, -1.0), _poly(sphi, -1.0, s))
    ma = np.convolve(_poly(th, 1.0), _poly(sth, 1.0, s))
    return ar, ma


def _roots_outside(poly: np.ndarray) -> tuple[np.ndarray, bool]:
    """Roots of ``poly(z)`` and whether all lie strictly outside the unit circle."""
    trimmed = np.trim_zeros(poly, "b")
    if len(trimmed) <= 1:
        return np.zeros(0), True
    roots = np.roots(trimmed[::-1])
    return roots, bool(np.all(np.abs(roots) > 1.0 + 1e-9))


def fit_sarmax(
    observed: Sequence[float],
    mean_trajectory: MeanTrajectory | Sequence[float],
    spec: SarmaxSpec,
    condition_on: int | None = None,
) -> SarmaxFit:
    """Conditional least-squares fit of ``c`` and the ARMA coefficients.

    ``observed`` holds cumulative values for ``t = 1..T`` and is aligned
    with the in-sample part of ``mean_trajectory``.  ``condition_on`` sets
    how many leading observations only seed the recursion (defaults to the
    largest autoregressive lag of ``spec``).
    """
    w = np.asarray(observed, dtype=float)
    f = mean_trajectory.in_sample if isinstance(mean_trajectory, MeanTrajectory) else np.asarray(mean_trajectory, dtype=float)
    if len(f) < len(w):
        raise InputError(f"mean trajectory covers {len(f)} quarters, observed has {len(w)}")
    f = f[: len(w)]
    start = spec.max_lag if condition_on is None else int(condition_on)
    if start < spec.max_lag:
        raise InputError("condition_on is shorter than the autoregressive lag")
    k = spec.n_arma + int(spec.include_c)
    n_eff = len(w) - start
    if n_eff < k + 2:
        raise InputError(f"{len(w)} observations are too few for {spec.label()}")

    def resid(beta: np.ndarray) -> np.ndarray:
        c, phi, sphi, th, sth = _unpack(spec, beta)
        ar, ma = _polys(spec, phi, sphi, th, sth)
        return _innovations(w - c * f, ar, ma, start)[start:]

    beta0 = np.zeros(k)
    if spec.include_c:
        ff = float(f[start:] @ f[start:])
        beta0[0] = float(f[start:] @ w[start:]) / ff if ff > 0 else 1.0
    if k == 0:
        beta, converged = beta0, True
    elif spec.n_arma == 0:
        beta, converged = beta0, True  # the scale-only fit is a closed-form regression
    else:
        # AR/MA coefficients stay inside (-1, 1); the regression coefficient is free
        lo = np.full(k, -0.999)
        hi = np.full(k, 0.999)
        if spec.include_c:
            lo[0], hi[0] = -np.inf, np.inf
        lm = levenberg_marquardt(resid, beta0, lo, hi, max_iter=200, tol=1e-12)
        beta, converged = lm.x, lm.converged

    c, phi, sphi, th, sth = _unpack(spec, beta)
    ar, ma = _polys(spec, phi, sphi, th, sth)
    a = _innovations(w - c * f, ar, ma, start)
    sse = float(a[start:] @ a[start:])
    sigma2 = sse / max(n_eff - k, 1)
    kk = k + 1  # the innovation variance counts as a parameter
    if sse > 0 and n_eff - kk - 1 > 0:
        aicc = n_eff * math.log(sse / n_eff) + 2 * kk + 2 * kk * (kk + 1) / (n_eff - kk - 1)
    else:
        aicc = -math.inf
    ar_roots, stationary = _roots_outside(ar)
    ma_roots, invertible = _roots_outside(ma)
    flags = []
    if not stationary:
        flags.append("non-stationary autoregressive polynomial")
    if not invertible:
        flags.append("non-invertible moving-average polynomial")
    return SarmaxFit(
        spec=spec,
        c_exog=float(c),
        phi=np.asarray(phi, dtype=float),
        seasonal_phi=np.asarray(sphi, dtype=float),
        theta=np.asarray(th, dtype=float),
        seasonal_theta=np.asarray(sth, dtype=float),
        sigma2=sigma2,
        residuals=a[start:],
        deviations=w - c * f,
        observed=w,
        mean_in=f,
        n_eff=n_eff,
        aicc=aicc,
        converged=converged,
        ar_roots=ar_roots,
        ma_roots=ma_roots,
        flags=flags,
    )


def auto_sarmax(
    observed: Sequence[float],
    mean_trajectory: MeanTrajectory | Sequence[float],
    season_length: int = 4,
    include_c: bool = True,
) -> SarmaxFit:
    """Order search over ``{0,1}^4`` by corrected AIC on a common estimation sample."""
    specs = [
        SarmaxSpec(p, q, sp, sq, season_length, include_c)
        for p, q, sp, sq in itertools.product((0, 1), repeat=4)
    ]
    start = max(s.max_lag for s in specs)
    best = None
    for spec in specs:
        try:
            fit = fit_sarmax(observed, mean_trajectory, spec, condition_on=start)
        except InputError:
            continue
        if fit.flags:
            continue
        if best is None or fit.aicc < best.aicc - 1e-12:
            best = fit
    if best is None:
        raise InputError("no admissible SARMAX specification for this series")
    return best


@dataclass(frozen=True)
class ForecastBand:
    times: np.ndarray
    point: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    sigma2: float
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "point": self.point.tolist(),
            "lower": self.lower95.tolist(),
            "upper": self.upper95.tolist(),
            "sigma2": self.sigma2,
            "level": self.level,
        }


def sarmax_forecast(
    fit: SarmaxFit,
    mean_trajectory_out: MeanTrajectory | Sequence[float],
    K: int,
    level: float = 0.95,
) -> ForecastBand:
    """``K``-step forecasts with normal prediction limits from the psi weights."""
    if K <= 0:
        raise InputError(f"K must be >= 1, got {K}")
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if isinstance(mean_trajectory_out, MeanTrajectory):
        f_out = mean_trajectory_out.out_of_sample
    else:
        f_out = np.asarray(mean_trajectory_out, dtype=float)
    if len(f_out) < K:
        raise InputError(f"mean trajectory covers {len(f_out)} out-of-sample quarters, need {K}")
    T = len(fit.observed)
    ar, ma = fit.ar_poly, fit.ma_poly
    start = T - fit.n_eff
    d = np.concatenate([fit.deviations, np.zeros(K)])
    a = np.concatenate([np.zeros(start), fit.residuals, np.zeros(K)])
    for t in range(T, T + K):
        v = 0.0
        for i in range(1, len(ar)):
            v -= ar[i] * d[t - i]
        for j in range(1, len(ma)):
            if t - j >= 0:
                v += ma[j] * a[t - j]
        d[t] = v
    point = fit.c_exog * f_out[:K] + d[T:]
    psi = fit.psi_weights(K)
    var = fit.sigma2 * np.cumsum(psi**2)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    half = z * np.sqrt(var)
    return ForecastBand(
        times=np.arange(T + 1, T + K + 1),
        point=point,
        lower95=point - half,
        upper95=point + half,
        sigma2=fit.sigma2,
        level=level,
    )


# -- residual checks and hold-out evaluation --------------------------------

def ljung_box(residuals: Sequence[float], lags: int = 8, fitted_params: int = 0) -> dict:
    """Portmanteau whiteness test; ``passed`` means no evidence of autocorrelation at 5%."""
    x = np.asarray(residuals, dtype=float)
    n = len(x)
    if lags < 1:
        raise InputError("lags must be >= 1")
    if n <= lags:
        raise InputError(f"{n} residuals are too few for {lags} lags")
    x = x - x.mean()
    denom = float(x @ x)
    if not denom > 1e-300 * n:
        raise DomainError("residuals have zero variance")
    rho = np.array([float(x[k:] @ x[:-k]) / denom for k in range(1, lags + 1)])
    q = float(n * (n + 2) * np.sum(rho**2 / (n - np.arange(1, lags + 1))))
    dof = max(lags - fitted_params, 1)
    crit = float(stats.chi2.ppf(0.95, dof))
    return {"statistic": q, "dof": dof, "critical": crit, "p_value": float(stats.chi2.sf(q, dof)), "passed": q < crit}


def holdout_evaluate(
    full_series: Sequence[float],
    T: int,
    model_pipeline: Callable[[np.ndarray, int], ForecastBand],
) -> dict:
    """Refit on the first ``T`` points, forecast the rest, score against the actuals.

    ``model_pipeline(head, K)`` receives the first ``T`` observations and the
    hold-out length and returns a :class:`ForecastBand`.
    """
    y = np.asarray(full_series, dtype=float)
    if not 1 <= T < len(y):
        raise InputError(f"hold-out split T={T} leaves no data to evaluate (length {len(y)})")
    K = len(y) - T
    band = model_pipeline(y[:T].copy(), K)
    actual = y[T:]
    err = actual - band.point
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = np.where(actual != 0, 100.0 * np.abs(err) / np.abs(actual), np.nan)
    inside = (actual >= band.lower95) & (actual <= band.upper95)
    return {
        "times": band.times.tolist(),
        "actual": actual.tolist(),
        "point": band.point.tolist(),
        "abs_error": np.abs(err).tolist(),
        "pct_error": pct.tolist(),
        "within_band": inside.tolist(),
    }


def sarmax_pipeline(mean_values: Sequence[float], spec: SarmaxSpec | None = None) -> Callable[[np.ndarray, int], ForecastBand]:
    """Hold-out pipeline around a fixed mean trajectory: SARMAX fit then forecast."""
    f = np.asarray(mean_values, dtype=float)

    def run(head: np.ndarray, K: int) -> ForecastBand:
        T = len(head)
        if len(f) < T + K:
            raise InputError("mean trajectory shorter than the evaluation window")
        traj = MeanTrajectory(np.arange(1, T + K + 1), f[: T + K], T)
        fit = fit_sarmax(head, traj, spec) if spec is not None else auto_sarmax(head, traj)
        return sarmax_forecast(fit, traj, K)

    return run
