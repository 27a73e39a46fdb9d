"""Compiled fixed-step integrator for the two-phase competition system.

The parameter vector layout is shared with :mod:`cannibal_lv.models`::

    theta = (p1, a1, b1, alpha2, m1, p2, a2, b2, alpha1, m2)
    standalone = (m_a, p_1a, q_1a)
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _standalone_rate(sa, z1):
    return (sa[1] + sa[2] * z1 / sa[0]) * (sa[0] - z1)


@njit(cache=True, inline="always")
def _competition_rates(th, z1, z2):
    p1, a1, b1, al2, m1 = th[0], th[1], th[2], th[3], th[4]
    p2, a2, b2, al1, m2 = th[5], th[6], th[7], th[8], th[9]
    # alpha * b products are formed first so that alpha = 0 removes b even when b * z is huge
    r1 = (p1 + (a1 * z1 + (al2 * b1) * z2) / (m1 + al2 * m2)) * ((m1 - z1) + al2 * (m2 - z2))
    r2 = (p2 + (a2 * z2 + (al1 * b2) * z1) / (m2 + al1 * m1)) * ((m2 - z2) + al1 * (m1 - z1))
    return r1, r2


@njit(cache=True)
def integrate_rk4(theta, standalone, c2, horizon, steps_per_quarter):
    """Cumulative states at integer quarters ``0..horizon``.

    Returns ``(z, bad_step)``; ``bad_step`` is -1 unless the state became
    non-finite, in which case it is the global index of the offending step.
    """
    z = np.zeros((horizon + 1, 2))
    h = 1.0 / steps_per_quarter
    z1 = 0.0
    z2 = 0.0
    step = 0
    for q in range(1, horizon + 1):
        if q <= c2:
            for _ in range(steps_per_quarter):
                k1 = _standalone_rate(standalone, z1)
                k2 = _standalone_rate(standalone, z1 + 0.5 * h * k1)
                k3 = _standalone_rate(standalone, z1 + 0.5 * h * k2)
                k4 = _standalone_rate(standalone, z1 + h * k3)
                z1 += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                step += 1
                if not np.isfinite(z1):
                    return z, step
        else:
            for _ in range(steps_per_quarter):
                a1_, a2_ = _competition_rates(theta, z1, z2)
                b1_, b2_ = _competition_rates(theta, z1 + 0.5 * h * a1_, z2 + 0.5 * h * a2_)
                c1_, c2_ = _competition_rates(theta, z1 + 0.5 * h * b1_, z2 + 0.5 * h * b2_)
                d1_, d2_ = _competition_rates(theta, z1 + h * c1_, z2 + h * c2_)
                z1 += h / 6.0 * (a1_ + 2.0 * b1_ + 2.0 * c1_ + d1_)
                z2 += h / 6.0 * (a2_ + 2.0 * b2_ + 2.0 * c2_ + d2_)
                step += 1
                if not (np.isfinite(z1) and np.isfinite(z2)):
                    return z, step
        z[q, 0] = z1
        z[q, 1] = z2
    return z, -1
