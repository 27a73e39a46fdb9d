"""Reference parameter sets: the published Apple estimates and synthetic test designs.

The synthetic designs were chosen so that every free parameter of the
generating reduction is well identified from 40 quarters of data with a
few percent of multiplicative noise.
"""

from __future__ import annotations

from .estimation import CompetitionModel, lvac_model
from .models import BassParams, LVacParams, LVchParams, ReductionCase

# Published estimates (millions of units, quarters).
IPHONE_STANDALONE = BassParams(m=120.0, p=0.006, q=0.290)
IPHONE_ENTRY_C2 = 12
PAPER_LVAC = LVacParams(
    standalone=IPHONE_STANDALONE, c2=IPHONE_ENTRY_C2,
    a1=0.202, b1=-0.196, m1=1886.0, p2=0.013, a2=0.122, m2=454.0,
)
PAPER_IPAD_BASS = BassParams(m=415.0, p=0.013, q=0.143)
PAPER_IPHONE_BASS = BassParams(m=1701.0, p=0.0013, q=0.132)
PAPER_R2_LVCH = 0.84989
PAPER_R2_LVAC = 0.840867


def paper_lvch_clipped() -> LVchParams:
    """The full LVch estimates with the out-of-range alpha2 = 42.16 clipped to 1."""
    return LVchParams(
        IPHONE_STANDALONE, IPHONE_ENTRY_C2,
        p1=0.0002, a1=0.089, b1=0.001, alpha2=1.0, m1=8706.0,
        p2=0.016, a2=0.184, b2=-81.49, alpha1=0.0003, m2=470.0,
    )


# Synthetic LVac world used by the ladder, the pipeline and the bundled dataset.
SYNTHETIC_LVAC = LVacParams(
    standalone=BassParams(m=200.0, p=0.01, q=0.35), c2=12,
    a1=0.25, b1=-0.15, m1=1800.0, p2=0.02, a2=0.2, m2=600.0,
)
SYNTHETIC_HORIZON = 43

# One identifiable design per reduction of the LVch family (horizon 40).  All
# share a ten-quarter stand-alone phase so the Bass pre-fit is well determined.
RECOVERY_HORIZON = 40
RECOVERY_C2 = 10
RECOVERY_STANDALONE = BassParams(m=150.0, p=0.03, q=0.6)
_RECOVERY = {
    ReductionCase.FullLVch: dict(
        p1=0.0364, a1=0.4949, b1=-1.2638, alpha2=0.4447, m1=1502.5,
        p2=0.0074, a2=0.1709, b2=0.2432, alpha1=0.2512, m2=6286.3,
    ),
    ReductionCase.UCRCD: dict(p1=0.0062, a1=0.1332, b1=0.1868, m=7731.3, p2=0.0306, a2=0.169, b2=-0.1322),
    ReductionCase.IndependentBass: dict(p1=0.02, a1=0.25, m1=1500.0, p2=0.01, a2=0.3, m2=1200.0),
    ReductionCase.DirectCannibalisation: dict(
        p1=0.0143, a1=0.1417, m1=3813.0, p2=0.0325, a2=0.2829, b2=-0.2096, m2=997.5,
    ),
    ReductionCase.InverseCannibalisation: dict(
        p1=0.0311, a1=0.2897, b1=-0.7984, m1=6157.4, p2=0.0076, a2=0.1454, m2=8081.6,
    ),
}


def recovery_design(case: ReductionCase | str) -> tuple[CompetitionModel, dict[str, float]]:
    """``(model, true free parameters)`` of the recovery design for ``case``."""
    values = _RECOVERY[ReductionCase(case)]
    return CompetitionModel(case, RECOVERY_STANDALONE, RECOVERY_C2), dict(values)


def synthetic_lvac_model() -> tuple[CompetitionModel, dict[str, float]]:
    p = SYNTHETIC_LVAC
    model = lvac_model(p.standalone, p.c2)
    return model, dict(a1=p.a1, b1=p.b1, m1=p.m1, p2=p.p2, a2=p.a2, m2=p.m2)
