import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from xdwell import (
    ConfigError,
    ExperimentConfig,
    InsufficientBinError,
    RankDeficiencyError,
    bin_and_average,
    calibrate_proportional_noise,
    click_inference_check,
    combine_detunings,
    correct_phi_T,
    fit_phi0,
    fit_transmitted,
    iter_batches,
    xps_template,
)
from xdwell.estimator import FitResult, RunningMoments

CFG = ExperimentConfig()
TEMPLATE = xps_template(CFG)
N = CFG.n_samples
T_NORM = np.linspace(-1.0, 1.0, N)


def exact_click_excess(mu, p_t, eta, dark, n_max=400):
    """Conditional transmitted-photon excess by exact summation over n_T."""
    k = np.arange(n_max)
    pmf = stats.poisson.pmf(k, mu * p_t)
    p_click = 1.0 - (1.0 - dark) * (1.0 - eta) ** k
    pc = np.sum(pmf * p_click)
    mean_click = np.sum(pmf * p_click * k) / pc
    mean_noclick = np.sum(pmf * (1 - p_click) * k) / (1.0 - pc)
    return mean_click - mean_noclick


def make_batch(n_shots, rng, click_frac=0.5, offset=None, noise=0.0):
    clicks = rng.random(n_shots) < click_frac
    phases = noise * rng.standard_normal((n_shots, N))
    if offset is not None:
        phases[clicks] += offset
    return phases, clicks


class TestRunningMoments:
    def test_matches_two_pass(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5000, N))
        m = RunningMoments(N)
        for chunk in np.array_split(x, 7):
            m.add_batch(chunk)
        np.testing.assert_allclose(m.mean, x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(m.variance, x.var(axis=0, ddof=1),
                                   rtol=1e-12)

    def test_merge_associative(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3000, N))
        a, b = RunningMoments(N), RunningMoments(N)
        a.add_batch(x[:1000])
        b.add_batch(x[1000:])
        a.merge(b)
        np.testing.assert_allclose(a.mean, x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(a.variance, x.var(axis=0, ddof=1),
                                   rtol=1e-12)

    def test_empty_merge(self):
        a = RunningMoments(N)
        a.add_batch(np.ones((10, N)))
        a.merge(RunningMoments(N))
        assert a.count == 10


class TestBinning:
    def test_identical_shots_zero_delta(self):
        phases = np.tile(np.sin(T_NORM), (400, 1))
        clicks = np.arange(400) % 2 == 0
        binned = bin_and_average((phases, clicks))
        np.testing.assert_allclose(binned.delta_phi, 0.0, atol=1e-15)

    def test_recovers_injected_offset(self):
        rng = np.random.default_rng(3)
        offset = np.zeros(N)
        offset[13] = 5e-3
        phases, clicks = make_batch(40000, rng, offset=offset, noise=0.1)
        binned = bin_and_average((phases, clicks))
        assert abs(binned.delta_phi[13] - 5e-3) < 3 * binned.se_delta[13]

    def test_streaming_equals_two_pass(self):
        rng = np.random.default_rng(4)
        phases, clicks = make_batch(5000, rng, noise=0.2)
        batches = [(phases[:2000], clicks[:2000]),
                   (phases[2000:], clicks[2000:])]
        streamed = bin_and_average(batches)
        direct = phases[clicks].mean(axis=0) - phases[~clicks].mean(axis=0)
        np.testing.assert_allclose(streamed.delta_phi, direct, rtol=1e-12,
                                   atol=1e-18)

    def test_underpopulated_bin_named(self):
        phases = np.zeros((150, N))
        clicks = np.zeros(150, dtype=bool)
        clicks[:10] = True
        with pytest.raises(InsufficientBinError) as exc:
            bin_and_average((phases, clicks))
        assert exc.value.bin_name == "click"


class TestFits:
    def test_pure_cubic_gives_zero_amplitude(self):
        trace = 0.3 - 0.2 * T_NORM + 0.05 * T_NORM**2 + 0.7 * T_NORM**3
        fit = fit_phi0(trace, 34.0, TEMPLATE)
        assert abs(fit.amplitude) < 1e-12

    def test_noise_free_template_amplitude(self):
        trace = 0.7e-3 * TEMPLATE.samples
        fit = fit_phi0(trace, 34.0, TEMPLATE)
        assert fit.amplitude == pytest.approx(0.7e-3 / 34.0, rel=1e-12)

    def test_zero_delta_gives_zero(self):
        phases = np.tile(1e-3 * TEMPLATE.samples, (400, 1))
        clicks = np.arange(400) % 2 == 0
        binned = bin_and_average((phases, clicks))
        se = np.full(N, 1.0)
        binned = binned.__class__(**{**binned.__dict__,
                                     "se_delta": se})
        fit = fit_transmitted(binned, TEMPLATE)
        assert abs(fit.amplitude) < 1e-12

    def test_weighted_fit_recovers_known_mix(self):
        rng = np.random.default_rng(6)
        true = (2e-4 - 1e-4 * T_NORM + 3e-4 * T_NORM**3
                + 5e-4 * TEMPLATE.samples)
        phases = true + 1e-3 * rng.standard_normal((200000, N))
        clicks = rng.random(200000) < 0.5
        binned = bin_and_average((phases, clicks))
        fit = fit_phi0(phases.mean(axis=0), 1.0, TEMPLATE,
                       sigma=phases.std(axis=0) / np.sqrt(phases.shape[0]))
        assert fit.amplitude == pytest.approx(5e-4, abs=3 * fit.amplitude_se)
        assert fit.amplitude_se < 1e-5

    def test_rank_deficiency_reported(self):
        from types import SimpleNamespace
        cubic_template = SimpleNamespace(samples=0.1 + 0.2 * T_NORM**2)
        with pytest.raises(RankDeficiencyError) as exc:
            fit_phi0(np.zeros(N), 1.0, cubic_template)
        assert exc.value.condition > 1e10

    def test_bad_sigma_rejected(self):
        with pytest.raises(ConfigError):
            fit_phi0(np.zeros(N), 1.0, TEMPLATE, sigma=np.zeros(N))

    @given(st.floats(min_value=-50, max_value=50).filter(lambda c: abs(c) > 1e-3))
    @settings(max_examples=20, deadline=None)
    def test_linearity(self, c):
        rng = np.random.default_rng(7)
        trace = 1e-4 * TEMPLATE.samples + 1e-5 * rng.standard_normal(N)
        base = fit_phi0(trace, 1.0, TEMPLATE)
        scaled = fit_phi0(c * trace, 1.0, TEMPLATE)
        assert scaled.amplitude == pytest.approx(c * base.amplitude, rel=1e-9)

    @given(st.tuples(*[st.floats(min_value=-10, max_value=10)] * 4))
    @settings(max_examples=25, deadline=None)
    def test_background_immunity(self, coeffs):
        rng = np.random.default_rng(8)
        trace = 1e-4 * TEMPLATE.samples + 1e-5 * rng.standard_normal(N)
        cubic = (coeffs[0] + coeffs[1] * T_NORM + coeffs[2] * T_NORM**2
                 + coeffs[3] * T_NORM**3)
        base = fit_phi0(trace, 1.0, TEMPLATE)
        shifted = fit_phi0(trace + cubic, 1.0, TEMPLATE)
        assert abs(shifted.amplitude - base.amplitude) < 1e-12


class TestCalibration:
    def test_exact_linear_points(self):
        s2 = 9e-4
        points = [(mu, 1.0 + s2 * mu, 0.01)
                  for mu in (588, 898, 1527, 3040)]
        cal = calibrate_proportional_noise(points)
        assert cal.s2 == pytest.approx(s2, rel=1e-9)
        assert not cal.upper_bound

    def test_null_consistent_with_zero(self):
        rng = np.random.default_rng(9)
        points = [(mu, 1.0 + 0.05 * rng.standard_normal(), 0.05)
                  for mu in (588, 898, 1527, 3040)]
        cal = calibrate_proportional_noise(points)
        assert abs(cal.s2) < 3 * cal.s2_se

    def test_negative_slope_is_upper_bound(self):
        points = [(mu, 1.0 - 1e-4 * mu, 0.01)
                  for mu in (588, 898, 1527, 3040)]
        cal = calibrate_proportional_noise(points)
        assert cal.upper_bound
        assert cal.s2 == 0.0

    def test_slope_identity(self):
        s2 = 9e-4
        points = [(mu, 1.0 + s2 * mu, 0.01)
                  for mu in (588, 898, 1527, 3040)]
        cal = calibrate_proportional_noise(points)
        assert (points[3][1] - points[0][1]) == pytest.approx(
            cal.s2 * (3040 - 588), rel=1e-9)

    def test_too_few_points(self):
        with pytest.raises(ConfigError):
            calibrate_proportional_noise([(588, 1.0, 0.01)] * 3)


class TestCorrection:
    def _fit(self, amp, se=1e-6):
        return FitResult(amplitude=amp, amplitude_se=se,
                         cubic_coeffs=(0, 0, 0, 0), chi2_per_dof=1.0)

    def test_zero_s2_identity(self):
        raw = self._fit(1e-5)
        out = correct_phi_T(raw, 0.0, 134.0, self._fit(2e-5))
        assert out.amplitude == raw.amplitude
        assert out.amplitude_se == raw.amplitude_se

    def test_documented_arithmetic(self):
        # raw/phi0 = 0.87 reduced by s2 * mu = 9e-4 * 134 = 0.1206
        phi0 = self._fit(-20e-6, se=0.0)
        raw = self._fit(0.87 * -20e-6, se=0.0)
        out = correct_phi_T(raw, 9e-4, 134.0, phi0)
        assert out.amplitude / phi0.amplitude == pytest.approx(0.87 - 0.1206,
                                                               rel=1e-9)

    def test_errors_in_quadrature(self):
        phi0 = self._fit(-20e-6, se=1e-6)
        raw = self._fit(-15e-6, se=2e-6)
        out = correct_phi_T(raw, 9e-4, 134.0, phi0, s2_se=1e-4)
        expect = np.sqrt((2e-6) ** 2
                         + (20e-6 * 134 * 1e-4) ** 2
                         + (9e-4 * 134 * 1e-6) ** 2)
        assert out.amplitude_se == pytest.approx(expect, rel=1e-9)


class TestCombine:
    def _fit(self, amp, se):
        return FitResult(amplitude=amp, amplitude_se=se,
                         cubic_coeffs=(0, 0, 0, 0), chi2_per_dof=1.0)

    def test_single_entry_passthrough(self):
        phi_t = self._fit(-15e-6, 1e-6)
        phi_0 = self._fit(-20e-6, 1e-8)
        out = combine_detunings([(1.0, phi_t, phi_0)])
        assert out.ratio == pytest.approx(0.75, rel=1e-3)
        assert out.se == pytest.approx(1e-6 / 20e-6, rel=1e-2)

    def test_equal_error_mean(self):
        phi_0 = self._fit(-20e-6, 1e-9)
        a = combine_detunings([(1.0, self._fit(-14e-6, 1e-6), phi_0),
                               (2.0, self._fit(-16e-6, 1e-6), phi_0)])
        assert a.ratio == pytest.approx((0.7 + 0.8) / 2, rel=1e-6)
        single = combine_detunings([(1.0, self._fit(-14e-6, 1e-6), phi_0)])
        assert a.se == pytest.approx(single.se / np.sqrt(2), rel=1e-6)

    def test_insignificant_phi0_rejected(self):
        with pytest.raises(ConfigError):
            combine_detunings([(1.0, self._fit(1e-6, 1e-6),
                                self._fit(2e-6, 1e-6))])

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            combine_detunings([])


class TestClickInference:
    def _campaign(self, cfg, n, seed=0):
        return list(iter_batches(cfg, n, seed))

    def test_small_eta_excess_one(self):
        cfg = ExperimentConfig(eta_detect=0.01, p_transmit=0.4)
        rep = click_inference_check(self._campaign(cfg, 400000, seed=19))
        oracle = exact_click_excess(34.0, 0.4, 0.01, cfg.dark_prob)
        assert abs(oracle - 1.0) < 0.01  # analytic check of the regime
        assert abs(rep.excess_transmitted - 1.0) < \
            5 * rep.excess_transmitted_se
        assert abs(rep.excess_lost) < 5 * rep.excess_lost_se

    def test_large_eta_matches_exact_summation(self):
        # small photon number, eta = 0.5: excess below 1, deviation negative
        cfg = ExperimentConfig(mean_photons=0.5, eta_detect=0.5,
                               p_transmit=0.4)
        rep = click_inference_check(self._campaign(cfg, 400000, seed=23))
        oracle = exact_click_excess(0.5, 0.4, 0.5, cfg.dark_prob)
        assert oracle < 1.0
        assert abs(rep.excess_transmitted - oracle) < \
            5 * rep.excess_transmitted_se

    def test_dark_only_zero_excess(self):
        cfg = ExperimentConfig(mean_photons=0.0)
        rep = click_inference_check(self._campaign(cfg, 50000, seed=29))
        assert rep.excess_transmitted == 0.0
        assert rep.excess_lost == 0.0

    def test_requires_truth(self):
        phases = np.zeros((300, N))
        clicks = np.arange(300) % 2 == 0
        with pytest.raises(ConfigError):
            click_inference_check([(phases, clicks, None)])
