"""Three-parameter non-dimensional form of LVac and the first product's peak condition.

With ``x1 = z1/m1``, ``x2 = z2/m2`` and ``tau = a2 t`` the competition
phase of LVac collapses onto

    x1' = (v x1 + s x2) [(1 - x1) + s (1 - x2)]
    x2' = (r + x2) (1 - x2)

with ``v = a1/b1``, ``s = m2/m1`` and ``r = p2/a2``.  The first equation is
the dimensional one scaled by ``a2 (1 + s) / b1`` on top of the time
rescaling, so its sign flips when ``b1 < 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationDivergedError
from .models import LVacParams, integrate


class FormulaMode(str, enum.Enum):
    """How the peak fraction is evaluated.

    ``Literal`` substitutes into ``1/2 + s/2 (1 - F2 - F2/v)``.  ``PaperNumeric``
    uses the published numeric form ``1/2 + s/2 (1 + (|v| - 1) F2)``, which
    differs from the literal expression whenever ``F2 > 0``.
    """

    Literal = "Literal"
    PaperNumeric = "PaperNumeric"


@dataclass(frozen=True)
class NonDimParams:
    v: float
    s: float
    r: float
    t0: float
    z10: float
    z20: float

    def __post_init__(self) -> None:
        if self.v == 0 or not math.isfinite(self.v):
            raise DomainError(f"v must be finite and non-zero, got {self.v}")
        if not self.s > 0:
            raise DomainError(f"s must be > 0, got {self.s}")
        if not self.t0 > 0:
            raise DomainError(f"t0 must be > 0, got {self.t0}")
        if self.r < 0:
            raise DomainError(f"r must be >= 0, got {self.r}")


def to_nondim(params: LVacParams) -> NonDimParams:
    if params.b1 == 0:
        raise DomainError("b1 = 0: v = a1/b1 undefined (no cross-product word-of-mouth)")
    return NonDimParams(
        v=params.a1 / params.b1,
        s=params.m2 / params.m1,
        r=params.p2 / params.a2,
        t0=1.0 / params.a2,
        z10=params.m1,
        z20=params.m2,
    )


def nondim_rates(nd: NonDimParams, x1, x2) -> tuple:
    v, s, r = nd.v, nd.s, nd.r
    dx1 = (v * x1 + s * x2) * ((1.0 - x1) + s * (1.0 - x2))
    dx2 = (r + x2) * (1.0 - x2)
    return dx1, dx2


def rate_scale_factors(params: LVacParams) -> tuple[float, float]:
    """Factors mapping dimensional LVac rates (per quarter) onto ``nondim_rates``.

    ``x1' = k1 * z1'`` with ``k1 = (1 + s) / (b1 m1)`` and ``x2' = k2 * z2'``
    with ``k2 = 1 / (a2 m2)``.
    """
    s = params.m2 / params.m1
    return (1.0 + s) / (params.b1 * params.m1), 1.0 / (params.a2 * params.m2)


def riccati_f2(r: float, tau):
    """Solution ``F2(tau)`` of ``x2' = (r + x2)(1 - x2)``, ``x2(0) = 0``.

    Both exponentials carry the negative sign, which is the form that
    starts at 0 and saturates at 1.
    """
    if not r > 0:
        raise DomainError(f"r must be > 0, got {r}")
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0):
        raise DomainError("tau must be >= 0")
    e = np.exp(-(r + 1.0) * tau_arr)
    out = (1.0 - e) / (1.0 + e / r)
    return float(out) if np.ndim(out) == 0 else out


def peak_fraction(v: float, s: float, f2, mode: FormulaMode | str = FormulaMode.Literal):
    """Normalised cumulative ``x1`` at which the first product's rate peaks, for fixed ``F2``."""
    if v == 0:
        raise DomainError("v must be non-zero")
    f2 = np.asarray(f2, dtype=float)
    if np.any(f2 < 0) or np.any(f2 > 1):
        raise DomainError("F2 must lie in [0, 1]")
    if FormulaMode(mode) is FormulaMode.Literal:
        out = 0.5 + 0.5 * s * (1.0 - f2 - f2 / v)
    else:
        out = 0.5 + 0.5 * s * (1.0 + (abs(v) - 1.0) * f2)
    return float(out) if np.ndim(out) == 0 else out


def peak_value(m1: float, m2: float, v: float, f2):
    """Dimensional cumulative sales ``m1/2 + m2/2 (1 - F2 - F2/v)`` at the rate peak."""
    if v == 0:
        raise DomainError("v must be non-zero")
    f2 = np.asarray(f2, dtype=float)
    out = 0.5 * m1 + 0.5 * m2 * (1.0 - f2 - f2 / v)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class PeakReport:
    x1_hat: float
    z1_hat: float
    f2_at_peak: float
    interval: tuple[float, float]
    formula_mode: FormulaMode
    intervals: dict[str, tuple[float, float]]
    delta_vs_bass: dict[str, tuple[float, float]]
    nondim: NonDimParams
    simulated: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "formula_mode": self.formula_mode.value,
            "x1_hat": self.x1_hat,
            "z1_hat": self.z1_hat,
            "f2_at_peak": self.f2_at_peak,
            "interval": list(self.interval),
            "intervals": {k: list(v) for k, v in self.intervals.items()},
            "delta_vs_bass": {k: list(v) for k, v in self.delta_vs_bass.items()},
            "nondim": dict(self.nondim.__dict__),
            "simulated": self.simulated,
            "notes": list(self.notes),
        }


def _interval(v: float, s: float, mode: FormulaMode) -> tuple[float, float]:
    # both forms are affine in F2, so the extremes sit at F2 = 0 and F2 = 1
    ends = peak_fraction(v, s, np.array([0.0, 1.0]), mode)
    return float(min(ends)), float(max(ends))


def peak_delay_report(
    params: LVacParams,
    mode: FormulaMode | str = FormulaMode.Literal,
    horizon: int = 200,
    dt: float = 0.01,
) -> PeakReport:
    """Peak-position analysis over ``F2 in [0, 1]`` plus a simulated cross-check.

    The simulated block integrates the full LVac system, locates the
    largest competition-phase quarterly sales of product 1, and evaluates
    ``F2`` there; the headline ``x1_hat``/``z1_hat`` use that ``F2``.
    """
    mode = FormulaMode(mode)
    nd = to_nondim(params)
    intervals = {m.value: _interval(nd.v, nd.s, m) for m in FormulaMode}
    deltas = {k: (lo - 0.5, hi - 0.5) for k, (lo, hi) in intervals.items()}

    notes = []
    lit, num = intervals["Literal"], intervals["PaperNumeric"]
    if abs(lit[0] - num[0]) > 1e-12 or abs(lit[1] - num[1]) > 1e-12:
        notes.append(
            "Literal and PaperNumeric peak formulas disagree for F2 > 0: literal coefficient "
            f"of F2 is {-(1.0 + 1.0 / nd.v):+.6f}, published numeric coefficient is {abs(nd.v) - 1.0:+.6f}"
        )

    simulated: dict = {}
    f2_peak = 0.0
    try:
        try:
            traj = integrate(params, horizon, dt)
        except IntegrationDivergedError as exc:
            # the peak usually precedes the blow-up of an overshooting tail
            usable = int(math.floor(exc.time)) - 1
            if usable <= params.c2 + 1:
                raise
            notes.append(f"full dynamics diverge at t = {exc.time:.2f}; peak searched over quarters 1..{usable}")
            traj = integrate(params, usable, dt)
        comp = traj.times > params.c2
        idx = int(np.argmax(np.where(comp, traj.rates1, -np.inf)))
        t_peak = float(traj.times[idx])
        # quarterly sales in quarter t are centred on t - 1/2
        tau = max(t_peak - 0.5 - params.c2, 0.0) / nd.t0
        f2_peak = riccati_f2(nd.r, tau) if nd.r > 0 else 0.0
        simulated = {
            "peak_quarter": t_peak,
            "peak_sales": float(traj.rates1[idx]),
            "x1_at_peak": float(traj.z1[idx] / params.m1),
            "x2_at_peak": float(traj.z2[idx] / params.m2),
            "f2_at_peak": f2_peak,
        }
        if float(np.min(traj.rates1[comp])) < 0:
            notes.append("simulated product-1 sales turn negative within the horizon")
    except Exception as exc:  # the analytic part does not depend on the simulation
        simulated = {"error": str(exc)}

    x1_hat = peak_fraction(nd.v, nd.s, f2_peak, mode)
    return PeakReport(
        x1_hat=x1_hat,
        z1_hat=params.m1 * x1_hat,
        f2_at_peak=f2_peak,
        interval=intervals[mode.value],
        formula_mode=mode,
        intervals=intervals,
        delta_vs_bass=deltas,
        nondim=nd,
        simulated=simulated,
        notes=notes,
    )
