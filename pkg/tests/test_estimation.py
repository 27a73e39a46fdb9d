import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cannibal_lv.errors import ComparisonInvalidError, DomainError, InputError
from cannibal_lv.estimation import (
    CUMULATIVE,
    BassModel,
    CompetitionModel,
    CurveModel,
    StackedData,
    Verdict,
    compare_nested,
    competition_inits,
    default_candidates,
    durbin_watson,
    f_ratio,
    fit_best,
    fit_nls,
    fit_standalone,
    levenberg_marquardt,
    lvac_model,
    partial_r_squared,
    project_init,
    r_squared,
    selection_ladder,
    stack_residuals,
    verdict_for,
)
from cannibal_lv.models import BassParams, ReductionCase, simulate
from cannibal_lv.scenarios import (
    PAPER_IPAD_BASS,
    PAPER_LVAC,
    SYNTHETIC_HORIZON,
    SYNTHETIC_LVAC,
    recovery_design,
    synthetic_lvac_model,
)


@pytest.fixture(scope="module")
def lvac_noisy():
    p = SYNTHETIC_LVAC
    s1, s2 = simulate(p, SYNTHETIC_HORIZON, noise_cv=0.02, seed=0)
    sa = fit_standalone(s1, p.c2).model_params()
    return s1, s2, sa


class TestStackedData:
    def test_stacked_length(self):
        s1, s2 = simulate(PAPER_LVAC, 43)
        assert (len(s1), len(s2)) == (43, 31)
        data = StackedData.from_series(s1, s2)
        assert data.n == 74 and data.c2 == 12

    def test_misaligned_series(self):
        s1, s2 = simulate(PAPER_LVAC, 43)
        with pytest.raises(InputError):
            StackedData.from_series(s1.head(30), s2)

    def test_true_parameters_give_zero_residuals(self):
        model, truth = synthetic_lvac_model()
        s1, s2 = simulate(SYNTHETIC_LVAC, 40)
        res = stack_residuals(model, s1, s2, truth)
        assert np.max(np.abs(res)) < 1e-9

    def test_invalid_parameters_rejected_before_evaluation(self):
        model, truth = synthetic_lvac_model()
        s1, s2 = simulate(SYNTHETIC_LVAC, 40)
        with pytest.raises(DomainError):
            stack_residuals(model, s1, s2, dict(truth, m1=-5.0))


class TestLevenbergMarquardt:
    def test_rosenbrock(self):
        res = levenberg_marquardt(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.2, 1.0])
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)

    def test_sse_history_non_increasing(self):
        res = levenberg_marquardt(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.2, 1.0])
        assert all(b <= a for a, b in zip(res.sse_history, res.sse_history[1:]))

    def test_bound_is_respected_and_pinned(self):
        # unconstrained optimum at x = -1; the box keeps x >= 0
        res = levenberg_marquardt(lambda x: np.array([x[0] + 1.0, x[1] - 2.0]), [3.0, 0.0], [0.0, -10], [10, 10])
        assert res.x[0] == 0.0
        assert res.x[1] == pytest.approx(2.0)
        assert res.converged


class TestFitting:
    def test_bass_recovery_from_perturbed_start(self):
        b = PAPER_IPAD_BASS
        s1, _ = simulate(b, 30)
        data = StackedData.from_series(s1, None, CUMULATIVE)
        init = np.array([b.m, b.p, b.q]) * np.array([1.2, 0.8, 1.2])
        fit = fit_nls(BassModel(), data, init)
        np.testing.assert_allclose(fit.theta, [b.m, b.p, b.q], rtol=1e-4)

    def test_lvac_published_parameters_recovered(self):
        p = PAPER_LVAC
        s1, s2 = simulate(p, 43)
        sa = fit_standalone(s1, p.c2).model_params()
        model = lvac_model(sa, p.c2)
        th = model.theta_from(dict(a1=p.a1, b1=p.b1, m1=p.m1, p2=p.p2, a2=p.a2, m2=p.m2))
        rng = np.random.default_rng(1)
        starts = [th * (1 + 0.05 * rng.uniform(-1, 1, len(th))) for _ in range(4)]
        fit = fit_best(model, StackedData.from_series(s1, s2), starts)
        np.testing.assert_allclose(fit.theta, th, rtol=0.01)

    def test_start_at_optimum_is_stationary(self):
        model, truth = synthetic_lvac_model()
        s1, s2 = simulate(SYNTHETIC_LVAC, 40, noise_cv=0.02, seed=4)
        data = StackedData.from_series(s1, s2)
        first = fit_nls(model, data, model.theta_from(truth))
        again = fit_nls(model, data, first.theta)
        assert again.iterations <= 2
        np.testing.assert_allclose(again.theta, first.theta, rtol=1e-6)

    def test_noiseless_intervals_collapse(self):
        model, truth = synthetic_lvac_model()
        s1, s2 = simulate(SYNTHETIC_LVAC, 40)
        fit = fit_nls(model, StackedData.from_series(s1, s2), model.theta_from(truth))
        for n in fit.names:
            lo, hi = fit.ci95[n]
            assert hi - lo < 1e-6 * max(1.0, abs(fit.params[n]))

    def test_r2_at_paper_like_noise(self):
        p = SYNTHETIC_LVAC
        for seed in range(3):
            s1, s2 = simulate(p, SYNTHETIC_HORIZON, (0.9, 0.9, 0.9, 1.3), noise_cv=0.15, seed=seed)
            sa = fit_standalone(s1, p.c2).model_params()
            model = lvac_model(sa, p.c2)
            starts = [project_init(model, s) for s in competition_inits(model, s1, s2)]
            fit = fit_best(model, StackedData.from_series(s1, s2), starts)
            assert 0.8 < fit.r2 < 1.0

    def test_ucrcd_shares_one_potential(self):
        model, truth = recovery_design(ReductionCase.UCRCD)
        assert "m" in model.names and "m1" not in model.names
        full = model.build(model.theta_from(truth))
        assert full.m1 == pytest.approx(truth["m"] / 2) and full.m2 == pytest.approx(truth["m"] / 2)

    def test_all_starts_failing_is_an_error(self):
        model, truth = synthetic_lvac_model()
        s1, s2 = simulate(SYNTHETIC_LVAC, 40)
        with pytest.raises(DomainError):
            fit_best(model, StackedData.from_series(s1, s2), [dict(truth, a1=-1.0)])


class TestIntervals:
    def test_linear_model_matches_ols(self):
        rng = np.random.default_rng(3)
        x = np.arange(1.0, 31.0)
        y = 2.5 * x + rng.normal(0.0, 1.0, x.size)
        data = StackedData(x, np.ones(x.size, dtype=int), y, CUMULATIVE)
        fit = fit_nls(CurveModel(("beta",), lambda th, t: th[0] * t), data, np.array([1.0]))
        beta = float(x @ y / (x @ x))
        resid = y - beta * x
        se = math.sqrt(resid @ resid / (x.size - 1) / (x @ x))
        z = 1.96
        assert fit.params["beta"] == pytest.approx(beta, abs=1e-8)
        lo, hi = fit.ci95["beta"]
        assert lo == pytest.approx(beta - z * se, abs=1e-8)
        assert hi == pytest.approx(beta + z * se, abs=1e-8)

    def test_overparametrised_fit_shows_instability(self, lvac_noisy):
        s1, s2, sa = lvac_noisy
        model = CompetitionModel(ReductionCase.FullLVch, sa, SYNTHETIC_LVAC.c2)
        starts = [project_init(model, s) for s in competition_inits(model, s1, s2)]
        fit = fit_best(model, StackedData.from_series(s1, s2), starts)
        wide = [n for n in fit.names if fit.ci95[n][0] < 0 < fit.ci95[n][1]
                and fit.ci95[n][1] - fit.ci95[n][0] > 10 * abs(fit.params[n])]
        assert wide

    def test_unidentified_parameter_is_flagged(self):
        # y depends on a + b only: the split between them is not identified
        x = np.arange(1.0, 21.0)
        data = StackedData(x, np.ones(x.size, dtype=int), 3.0 * x + np.sin(x), CUMULATIVE)
        fit = fit_nls(CurveModel(("a", "b"), lambda th, t: (th[0] + th[1]) * t), data, np.array([1.0, 1.0]))
        assert fit.unstable["a"] and fit.unstable["b"]
        assert math.isinf(fit.se["a"])


class TestDiagnostics:
    def test_r2_edges(self):
        y = np.array([1.0, 2.0, 4.0])
        assert r_squared(y, np.zeros(3)) == 1.0
        assert r_squared(y, y - y.mean()) == pytest.approx(0.0)
        with pytest.raises(DomainError):
            r_squared(np.ones(3), np.zeros(3))

    def test_durbin_watson(self):
        assert durbin_watson([1, -1, 1, -1]) == pytest.approx(3.0)
        assert durbin_watson(np.random.default_rng(0).standard_normal(10_000)) == pytest.approx(2.0, abs=0.05)
        with pytest.raises(DomainError):
            durbin_watson(np.zeros(4))

    def test_durbin_watson_autocorrelated(self):
        rng = np.random.default_rng(1)
        e = np.zeros(1000)
        for t in range(1, 1000):
            e[t] = 0.9 * e[t - 1] + rng.standard_normal()
        assert durbin_watson(e) < 1


class TestComparison:
    def test_partial_r_squared(self):
        assert partial_r_squared(0.840867, 0.84989) == pytest.approx(0.0567, abs=5e-5)
        assert partial_r_squared(0.7, 0.7) == 0.0
        assert partial_r_squared(0.0, 0.5) == 0.5
        with pytest.raises(ZeroDivisionError):
            partial_r_squared(1.0, 1.0)

    def test_f_ratio(self):
        assert f_ratio(0.056, 73, 10, 4) == pytest.approx(0.934, abs=5e-4)
        assert f_ratio(0.0, 73, 10, 4) == 0.0
        assert f_ratio(0.5, 20, 5, 1) == pytest.approx(15.0)
        assert f_ratio(1.0, 20, 5, 1) == math.inf
        with pytest.raises(DomainError):
            f_ratio(0.5, 5, 5, 1)

    @pytest.mark.parametrize(
        "f, u, verdict",
        [(0.93, 4, Verdict.ReducedAccepted), (10.0, 1, Verdict.ExtendedSignificant),
         (3.0, 1, Verdict.ReducedAccepted), (4.0, 1, Verdict.ReducedAccepted),
         (2.0, 3, Verdict.ReducedAccepted), (2.5, 3, Verdict.ExtendedSignificant)],
    )
    def test_verdicts(self, f, u, verdict):
        assert verdict_for(f, u) is verdict

    @settings(max_examples=50, deadline=None)
    @given(r2p=st.floats(0.0, 0.99), n=st.integers(12, 200), v=st.integers(1, 10), u=st.integers(1, 5))
    def test_f_monotone_in_partial_r2(self, r2p, n, v, u):
        assert f_ratio(r2p, n, v, u) <= f_ratio(min(r2p + 0.005, 0.999), n, v, u)

    def test_compare_nested_on_shared_data(self, lvac_noisy):
        s1, s2, sa = lvac_noisy
        data = StackedData.from_series(s1, s2)
        full = CompetitionModel(ReductionCase.FullLVch, sa, SYNTHETIC_LVAC.c2)
        red = lvac_model(sa, SYNTHETIC_LVAC.c2)
        ext_fit = fit_best(full, data, [project_init(full, s) for s in competition_inits(full, s1, s2)])
        red_fit = fit_best(red, data, [project_init(red, ext_fit.params), *[project_init(red, s) for s in competition_inits(red, s1, s2)]])
        cmp = compare_nested(red_fit, ext_fit)
        assert (cmp.n, cmp.v, cmp.u) == (data.n, 10, 4)
        assert cmp.r2_partial == pytest.approx(partial_r_squared(red_fit.r2, ext_fit.r2))
        assert cmp.f_ratio == pytest.approx(f_ratio(cmp.r2_partial, data.n, 10, 4))
        assert cmp.verdict is verdict_for(cmp.f_ratio, 4)

    def test_mismatched_data_is_rejected(self, lvac_noisy):
        s1, s2, sa = lvac_noisy
        red = lvac_model(sa, SYNTHETIC_LVAC.c2)
        full = CompetitionModel(ReductionCase.FullLVch, sa, SYNTHETIC_LVAC.c2)
        starts = [project_init(red, s) for s in competition_inits(red, s1, s2)]
        a = fit_best(red, StackedData.from_series(s1, s2), starts)
        b = fit_best(full, StackedData.from_series(s1.head(40), s2.head(28)),
                     [project_init(full, s) for s in competition_inits(full, s1, s2)])
        with pytest.raises(ComparisonInvalidError):
            compare_nested(a, b)


class TestLadder:
    def test_single_candidate(self, lvac_noisy):
        s1, s2, sa = lvac_noisy
        rep = selection_ladder(s1, s2, [lvac_model(sa, SYNTHETIC_LVAC.c2)])
        assert rep.selected == "LVac" and len(rep.steps) == 1

    def test_lvac_data_selects_inverse_family(self, lvac_noisy):
        s1, s2, sa = lvac_noisy
        rep = selection_ladder(s1, s2, default_candidates(sa, SYNTHETIC_LVAC.c2))
        assert rep.selected in ("LVac", "InverseCannibalisation")
        assert rep.to_dict()["selected"] == rep.selected

    def test_independent_bass_data(self):
        model, truth = recovery_design(ReductionCase.IndependentBass)
        picks = []
        for seed in range(5):
            s1, s2 = simulate(model.build(model.theta_from(truth)), 40, noise_cv=0.02, seed=seed)
            sa = fit_standalone(s1, model.c2).model_params()
            picks.append(selection_ladder(s1, s2, default_candidates(sa, model.c2)).selected)
        assert picks.count("IndependentBass") >= 3, picks

    def test_empty_candidates(self, lvac_noisy):
        s1, s2, _ = lvac_noisy
        with pytest.raises(InputError):
            selection_ladder(s1, s2, [])


def test_standalone_needs_four_quarters():
    s1, _ = simulate(BassParams(100.0, 0.02, 0.3), 10)
    with pytest.raises(InputError):
        fit_standalone(s1, 3)
