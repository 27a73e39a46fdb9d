import numpy as np
import pytest
from scipy.integrate import solve_ivp

from cannibal_lv.errors import DomainError, InputError
from cannibal_lv.forecasting import (
    MeanTrajectory,
    SarmaxSpec,
    auto_sarmax,
    euler_step,
    fit_sarmax,
    holdout_evaluate,
    ljung_box,
    mean_forecast_z1,
    mean_forecast_z2,
    on_product1_axis,
    sarmax_forecast,
    sarmax_pipeline,
)
from cannibal_lv.models import LVacParams, integrate
from cannibal_lv.scenarios import IPHONE_STANDALONE, PAPER_LVAC


def _ar(n, phi, rng, lag=1, burn=60):
    e = rng.standard_normal(n + burn)
    d = np.zeros(n + burn)
    for t in range(lag, n + burn):
        d[t] = phi * d[t - lag] + e[t]
    return d[burn:]


def _line(T, K):
    f = np.linspace(10.0, 500.0, T + K)
    return f, MeanTrajectory(np.arange(1, T + K + 1), f, T)


class TestMeanTrajectories:
    def test_z2_in_sample_only(self):
        traj = mean_forecast_z2(PAPER_LVAC, 10, 0)
        assert len(traj.values) == 10 and len(traj.out_of_sample) == 0

    def test_z2_matches_integration_oracle(self):
        p = PAPER_LVAC
        sol = solve_ivp(lambda _, z: (p.p2 + p.a2 * z / p.m2) * (p.m2 - z), (0, 20), [0.0],
                        rtol=1e-12, atol=1e-10, method="DOP853")
        assert mean_forecast_z2(p, 20, 0).values[-1] == pytest.approx(sol.y[0, -1], rel=1e-9)

    def test_z2_saturates(self):
        assert mean_forecast_z2(PAPER_LVAC, 10, 2000).values[-1] == pytest.approx(454.0)

    def test_z2_without_innovation_falls_back_to_integration(self, caplog):
        p = LVacParams(IPHONE_STANDALONE, 12, a1=0.2, b1=-0.2, m1=1886.0, p2=0.0, a2=0.12, m2=454.0)
        with caplog.at_level("WARNING"):
            traj = mean_forecast_z2(p, 10, 5)
        assert "integrating" in caplog.text
        # without external influence and no initial adopters nothing ever diffuses
        np.testing.assert_array_equal(traj.values, 0.0)

    def test_euler_fixpoint(self):
        p = PAPER_LVAC
        z2 = np.full(31, p.m2)
        z1 = np.full(30, p.m1)
        traj = mean_forecast_z1(p, z1, z2, 30, 1)
        assert traj.values[-1] == pytest.approx(p.m1)

    def test_euler_substitution(self):
        p = PAPER_LVAC
        c1 = (p.a1 * 1200.0 + p.b1 * 400.0) / (p.m1 + p.m2) * ((p.m1 - 1200.0) + (p.m2 - 400.0))
        assert euler_step(p, 1200.0, 400.0, 30) == pytest.approx(c1)
        z2 = np.full(32, 400.0)
        z1 = np.concatenate([np.zeros(29), [1200.0]])
        assert mean_forecast_z1(p, z1, z2, 30, 1).values[-1] == pytest.approx(1200.0 + c1)

    def test_euler_recursion_close_to_integrator(self):
        p = PAPER_LVAC
        T, K = 30, 8
        traj = integrate(p, T + K)
        z2 = on_product1_axis(mean_forecast_z2(p, T - p.c2, K + 5), p.c2)
        z1 = mean_forecast_z1(p, traj.z1[:T], z2, T, K)
        assert np.max(np.abs(z1.out_of_sample - traj.z1[T:])) < 0.01 * p.m1

    def test_short_z2_is_an_input_error(self):
        with pytest.raises(InputError):
            mean_forecast_z1(PAPER_LVAC, np.ones(30), np.ones(31), 30, 4)


class TestSarmaxFit:
    def test_exact_mean(self):
        f, traj = _line(40, 0)
        fit = fit_sarmax(f, traj, SarmaxSpec())
        assert fit.c_exog == pytest.approx(1.0, abs=1e-14)
        assert fit.sigma2 == pytest.approx(0.0, abs=1e-20)

    def test_white_noise_scale_only(self):
        f, traj = _line(500, 0)
        w = f + np.random.default_rng(2).standard_normal(500)
        fit = fit_sarmax(w, traj, SarmaxSpec())
        assert fit.c_exog == pytest.approx(1.0, abs=0.02)
        assert fit.sigma2 == pytest.approx(1.0, abs=0.15)

    def test_seasonal_ar_recovered(self):
        f = np.linspace(10.0, 5000.0, 500)
        w = f + _ar(500, 0.6, np.random.default_rng(3), lag=4)
        fit = fit_sarmax(w, MeanTrajectory(np.arange(1, 501), f, 500), SarmaxSpec(sar_order=1))
        assert fit.seasonal_phi[0] == pytest.approx(0.6, abs=0.1)
        assert not fit.flags

    def test_ar_psi_weights(self):
        f, traj = _line(200, 0)
        fit = fit_sarmax(f + _ar(200, 0.5, np.random.default_rng(4)), traj, SarmaxSpec(ar_order=1))
        np.testing.assert_allclose(fit.psi_weights(5), fit.phi[0] ** np.arange(5))

    def test_order_search_finds_autoregression(self):
        f, traj = _line(120, 0)
        fit = auto_sarmax(f + _ar(120, 0.8, np.random.default_rng(5)), traj)
        assert fit.spec.ar_order == 1 or fit.spec.sar_order == 1

    def test_too_short(self):
        f, traj = _line(4, 0)
        with pytest.raises(InputError):
            fit_sarmax(f, traj, SarmaxSpec(1, 1, 1, 1))


class TestSarmaxForecast:
    def test_zero_orders_closed_form(self):
        f, traj = _line(60, 6)
        w = f[:60] + np.random.default_rng(6).standard_normal(60)
        fit = fit_sarmax(w, traj, SarmaxSpec())
        band = sarmax_forecast(fit, traj, 6)
        np.testing.assert_allclose(band.point, fit.c_exog * f[60:])
        np.testing.assert_allclose(band.upper95 - band.point, 1.96 * np.sqrt(fit.sigma2), rtol=1e-4)

    def test_ar1_band_variance(self):
        f, traj = _line(60, 8)
        w = f + _ar(68, 0.7, np.random.default_rng(7))
        fit = fit_sarmax(w[:60], traj, SarmaxSpec(ar_order=1))
        band = sarmax_forecast(fit, traj, 8)
        var = ((band.upper95 - band.point) / 1.959963984540054) ** 2
        np.testing.assert_allclose(var, fit.sigma2 * np.cumsum(fit.phi[0] ** (2 * np.arange(8))), rtol=1e-10)

    def test_noiseless_band_has_zero_width(self):
        f, traj = _line(40, 4)
        band = sarmax_forecast(fit_sarmax(f[:40], traj, SarmaxSpec()), traj, 4)
        np.testing.assert_allclose(band.upper95, band.lower95, atol=1e-9)

    def test_bad_horizon(self):
        f, traj = _line(40, 4)
        fit = fit_sarmax(f[:40], traj, SarmaxSpec())
        with pytest.raises(InputError):
            sarmax_forecast(fit, traj, 0)
        with pytest.raises(InputError):
            sarmax_forecast(fit, traj, 10)


class TestLjungBox:
    def test_white_noise_pass_rate(self):
        passed = [ljung_box(np.random.default_rng(s).standard_normal(500), 8)["passed"] for s in range(200)]
        assert 0.90 <= np.mean(passed) <= 0.99

    def test_autocorrelated_fails(self):
        assert not ljung_box(_ar(500, 0.8, np.random.default_rng(8)), 8)["passed"]

    def test_degenerate(self):
        with pytest.raises(DomainError):
            ljung_box(np.ones(50), 8)
        with pytest.raises(InputError):
            ljung_box(np.arange(5.0), 8)


class TestHoldout:
    def test_noiseless(self):
        f, _ = _line(40, 8)
        out = holdout_evaluate(f, 40, sarmax_pipeline(f, SarmaxSpec()))
        assert max(out["abs_error"]) < 1e-9

    def test_coverage(self):
        # bands ignore estimation error, so the sample must be long enough for them to be near nominal
        f, _ = _line(120, 8)
        inside = []
        for seed in range(100):
            w = f + _ar(128, 0.7, np.random.default_rng(seed))
            inside += holdout_evaluate(w, 120, sarmax_pipeline(f, SarmaxSpec(ar_order=1)))["within_band"]
        assert np.mean(inside) >= 0.90

    def test_empty_holdout(self):
        f, _ = _line(40, 0)
        with pytest.raises(InputError):
            holdout_evaluate(f, 40, sarmax_pipeline(f))
