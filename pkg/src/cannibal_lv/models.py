"""Bass, LVch and LVac diffusion models: rates, closed forms, integration, simulation.

Time is measured in quarters from the launch of the first product.  The
second product enters at the integer quarter ``c2``: for ``t <= c2`` the
first product follows a stand-alone Bass model and ``z2 = 0``; from ``c2``
onward the competition equations apply, starting from the stand-alone
``z1(c2)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from ._kernels import integrate_rk4
from .data import SalesSeries, format_quarter, parse_quarter
from .errors import DomainError, IntegrationDivergedError

COMPETITION_NAMES = ("p1", "a1", "b1", "alpha2", "m1", "p2", "a2", "b2", "alpha1", "m2")


@dataclass(frozen=True)
class BassParams:
    """Market potential ``m``, innovation ``p`` and imitation ``q`` of a Bass model."""

    m: float
    p: float
    q: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in (self.m, self.p, self.q)):
            raise DomainError(f"Bass parameters must be finite: {self}")
        if self.m <= 0:
            raise DomainError(f"market potential m must be > 0, got {self.m}")
        if self.p < 0 or self.q < 0:
            raise DomainError(f"p and q must be >= 0, got p={self.p}, q={self.q}")
        if self.p + self.q <= 0:
            raise DomainError("p + q must be > 0")


@dataclass(frozen=True)
class LVchParams:
    """All symbols of the Lotka-Volterra-with-churn system.

    ``unconstrained=True`` lifts the ``[0, 1]`` box on the alphas, which is
    only meant for the polarisation diagnostic of unconstrained fits.
    """

    standalone: BassParams
    c2: int
    p1: float
    a1: float
    b1: float
    alpha2: float
    m1: float
    p2: float
    a2: float
    b2: float
    alpha1: float
    m2: float
    unconstrained: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        values = self.vector()
        if not np.all(np.isfinite(values)):
            raise DomainError("LVch parameters must be finite")
        if int(self.c2) != self.c2 or self.c2 < 1:
            raise DomainError(f"entry time c2 must be an integer >= 1, got {self.c2}")
        object.__setattr__(self, "c2", int(self.c2))
        if self.a1 <= 0 or self.a2 <= 0:
            raise DomainError(f"within-product WOM a1, a2 must be > 0, got {self.a1}, {self.a2}")
        if self.m1 <= 0 or self.m2 <= 0:
            raise DomainError(f"market potentials must be > 0, got {self.m1}, {self.m2}")
        if not self.unconstrained:
            for name in ("alpha1", "alpha2"):
                value = getattr(self, name)
                if not 0.0 <= value <= 1.0:
                    raise DomainError(f"{name} must lie in [0, 1], got {value}")

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in COMPETITION_NAMES], dtype=float)

    @classmethod
    def from_vector(
        cls, standalone: BassParams, c2: int, theta: Sequence[float], unconstrained: bool = False
    ) -> LVchParams:
        return cls(standalone, c2, *map(float, theta), unconstrained=unconstrained)


@dataclass(frozen=True)
class LVacParams:
    """Asymmetric-competition reduction: ``p1 = 0``, ``alpha1 = 0``, ``alpha2 = 1``."""

    standalone: BassParams
    c2: int
    a1: float
    b1: float
    m1: float
    p2: float
    a2: float
    m2: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in (self.a1, self.b1, self.m1, self.p2, self.a2, self.m2)):
            raise DomainError("LVac parameters must be finite")
        if int(self.c2) != self.c2 or self.c2 < 1:
            raise DomainError(f"entry time c2 must be an integer >= 1, got {self.c2}")
        object.__setattr__(self, "c2", int(self.c2))
        if self.a1 <= 0 or self.a2 <= 0:
            raise DomainError(f"a1, a2 must be > 0, got {self.a1}, {self.a2}")
        if self.m1 <= 0 or self.m2 <= 0:
            raise DomainError(f"market potentials must be > 0, got {self.m1}, {self.m2}")
        if self.p2 < 0:
            raise DomainError(f"p2 must be >= 0, got {self.p2}")

    def to_lvch(self, b2: float = 0.0) -> LVchParams:
        return LVchParams(
            self.standalone, self.c2,
            p1=0.0, a1=self.a1, b1=self.b1, alpha2=1.0, m1=self.m1,
            p2=self.p2, a2=self.a2, b2=b2, alpha1=0.0, m2=self.m2,
        )

    @property
    def product2_bass(self) -> BassParams:
        return BassParams(self.m2, self.p2, self.a2)


Model = Union[BassParams, LVchParams, LVacParams]


class ReductionCase(str, enum.Enum):
    FullLVch = "FullLVch"
    UCRCD = "UCRCD"
    IndependentBass = "IndependentBass"
    DirectCannibalisation = "DirectCannibalisation"
    InverseCannibalisation = "InverseCannibalisation"

    @property
    def alphas(self) -> tuple[float, float] | None:
        """``(alpha1, alpha2)`` fixed by the reduction, ``None`` for the full model."""
        return _REDUCTION_ALPHAS[self]


_REDUCTION_ALPHAS: dict[ReductionCase, tuple[float, float] | None] = {
    ReductionCase.FullLVch: None,
    ReductionCase.UCRCD: (1.0, 1.0),
    ReductionCase.IndependentBass: (0.0, 0.0),
    ReductionCase.DirectCannibalisation: (1.0, 0.0),
    ReductionCase.InverseCannibalisation: (0.0, 1.0),
}


def apply_reduction(params: LVchParams, case: ReductionCase | str) -> LVchParams:
    alphas = ReductionCase(case).alphas
    if alphas is None:
        return params
    alpha1, alpha2 = alphas
    return replace(params, alpha1=alpha1, alpha2=alpha2, unconstrained=False)


@dataclass(frozen=True)
class Trajectory:
    """Cumulative units and per-quarter sales at quarters ``1..horizon``.

    ``rates1[i]`` is the number of units sold during quarter ``times[i]``,
    that is ``z1(t) - z1(t - 1)``.
    """

    times: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    rates1: np.ndarray
    rates2: np.ndarray
    c2: int | None = None


# -- closed forms and rates ------------------------------------------------

def bass_cumulative(params: BassParams, t):
    """Closed-form Bass cumulative adoptions ``m (1 - e^{-(p+q)t}) / (1 + (q/p) e^{-(p+q)t})``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise DomainError("bass_cumulative requires t >= 0")
    if params.p <= 0:
        raise DomainError("closed form needs p > 0; integrate the model instead")
    m, p, q = params.m, params.p, params.q
    e = np.exp(-(p + q) * t_arr)
    out = m * (1.0 - e) / (1.0 + (q / p) * e)
    return float(out) if np.ndim(out) == 0 else out


def bass_rate(params: BassParams, z):
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < 0) or np.any(z_arr > params.m):
        raise DomainError(f"cumulative z must lie in [0, m={params.m}]")
    out = (params.p + params.q * z_arr / params.m) * (params.m - z_arr)
    return float(out) if np.ndim(out) == 0 else out


def _check_states(z1, z2) -> None:
    if np.any(np.asarray(z1) < 0) or np.any(np.asarray(z2) < 0):
        raise DomainError("cumulative states must be >= 0")


def lvch_rates(params: LVchParams, z1, z2, t) -> tuple:
    """Rates of the LVch system; the stand-alone Bass phase applies for ``t <= c2``."""
    _check_states(z1, z2)
    if t <= params.c2:
        sa = params.standalone
        return (sa.p + sa.q * z1 / sa.m) * (sa.m - z1), 0.0 * z1
    p = params
    r1 = (p.p1 + (p.a1 * z1 + (p.alpha2 * p.b1) * z2) / (p.m1 + p.alpha2 * p.m2)) * (
        (p.m1 - z1) + p.alpha2 * (p.m2 - z2)
    )
    r2 = (p.p2 + (p.a2 * z2 + (p.alpha1 * p.b2) * z1) / (p.m2 + p.alpha1 * p.m1)) * (
        (p.m2 - z2) + p.alpha1 * (p.m1 - z1)
    )
    return r1, r2


def lvac_rates(params: LVacParams, z1, z2, t) -> tuple:
    _check_states(z1, z2)
    if t <= params.c2:
        sa = params.standalone
        return (sa.p + sa.q * z1 / sa.m) * (sa.m - z1), 0.0 * z1
    p = params
    r1 = ((p.a1 * z1 + p.b1 * z2) / (p.m1 + p.m2)) * ((p.m1 - z1) + (p.m2 - z2))
    r2 = (p.p2 + p.a2 * z2 / p.m2) * (p.m2 - z2)
    return r1, r2


def model_rates(params: Model, z1, z2, t) -> tuple:
    if isinstance(params, LVacParams):
        return lvac_rates(params, z1, z2, t)
    if isinstance(params, LVchParams):
        return lvch_rates(params, z1, z2, t)
    return bass_rate(params, z1), 0.0 * z1


# -- integration -----------------------------------------------------------

def kernel_arguments(model: Model, horizon: int) -> tuple[np.ndarray, np.ndarray, int]:
    """``(theta, standalone, c2)`` for the compiled integrator."""
    if isinstance(model, BassParams):
        return np.ones(10), np.array([model.m, model.p, model.q]), horizon
    if isinstance(model, LVacParams):
        model = model.to_lvch()
    sa = model.standalone
    return model.vector(), np.array([sa.m, sa.p, sa.q]), model.c2


def _steps_per_quarter(dt: float) -> int:
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    steps = round(1.0 / dt)
    if steps < 1 or abs(steps * dt - 1.0) > 1e-9:
        raise DomainError(f"dt must divide one quarter exactly, got {dt}")
    return steps


def integrate_raw(theta, standalone, c2: int, horizon: int, dt: float = 0.01) -> np.ndarray:
    """Cumulative states, shape ``(horizon + 1, 2)``, at quarters ``0..horizon``."""
    steps = _steps_per_quarter(dt)
    z, bad = integrate_rk4(
        np.ascontiguousarray(theta, dtype=float),
        np.ascontiguousarray(standalone, dtype=float),
        int(c2), int(horizon), steps,
    )
    if bad >= 0:
        raise IntegrationDivergedError(int(bad), bad / steps)
    return z


def integrate(model: Model, horizon: int, dt: float = 0.01) -> Trajectory:
    """Fourth-order fixed-step integration sampled at integer quarters.

    Negative rates are kept as computed; cumulative values are never clipped.
    """
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1 quarter, got {horizon}")
    theta, sa, c2 = kernel_arguments(model, horizon)
    z = integrate_raw(theta, sa, c2, horizon, dt)
    return Trajectory(
        times=np.arange(1, horizon + 1),
        z1=z[1:, 0].copy(),
        z2=z[1:, 1].copy(),
        rates1=np.diff(z[:, 0]),
        rates2=np.diff(z[:, 1]),
        c2=None if isinstance(model, BassParams) else c2,
    )


# -- synthetic data --------------------------------------------------------

def simulate(
    model: Model,
    horizon: int,
    seasonal_amplitudes: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    noise_sd: float = 0.0,
    seed: int | None = 0,
    *,
    noise_cv: float = 0.0,
    start: str = "2000Q1",
    dt: float = 0.01,
    product_ids: tuple[str, str] = ("product1", "product2"),
) -> tuple[SalesSeries, SalesSeries | None]:
    """Synthetic quarterly sales from the integrated model.

    Per-quarter sales are multiplied by the quarter-of-year factor
    ``seasonal_amplitudes[(ordinal) % 4]`` (index 0 is Q1), then perturbed by
    multiplicative noise of relative size ``noise_cv`` and additive Gaussian
    noise with standard deviation ``noise_sd``.  The second series starts in
    quarter ``c2 + 1`` and is ``None`` if the horizon ends before that.
    """
    if noise_sd < 0 or noise_cv < 0:
        raise DomainError("noise levels must be >= 0")
    factors = np.asarray(seasonal_amplitudes, dtype=float)
    if factors.shape != (4,):
        raise DomainError("seasonal_amplitudes needs exactly 4 values")
    traj = integrate(model, horizon, dt)
    rng = np.random.default_rng(seed)
    first = parse_quarter(start)
    ordinals = first + np.arange(horizon)

    def perturb(rates: np.ndarray, ords: np.ndarray) -> np.ndarray:
        out = rates * factors[ords % 4]
        if noise_cv > 0:
            out = out * (1.0 + noise_cv * rng.standard_normal(len(out)))
        if noise_sd > 0:
            out = out + noise_sd * rng.standard_normal(len(out))
        return out

    quarters = tuple(format_quarter(o) for o in ordinals)
    s1 = SalesSeries(product_ids[0], quarters, perturb(traj.rates1, ordinals))
    if traj.c2 is None or traj.c2 >= horizon:
        return s1, None
    c2 = traj.c2
    s2 = SalesSeries(product_ids[1], quarters[c2:], perturb(traj.rates2[c2:], ordinals[c2:]))
    return s1, s2
