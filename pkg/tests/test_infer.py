"""Filtering, smoothing, likelihood, and fitting tests.

Batch Gaussian-process regression on the dense kernel matrix serves as
the independent oracle for the state-space posterior, and scipy's
multivariate normal density for the marginal likelihood.
"""

import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.stats

from lfmcontrol import gpss, infer, model, numlin
from lfmcontrol.errors import ConditioningError, OptimizationError


def kernel_matrix(spec, times):
    t = np.asarray(times, dtype=float)
    return np.array(
        [[gpss.kernel_exact(spec, ti - tj) for tj in t] for ti in t]
    )


def batch_gp_posterior(spec, times, y, noise_var):
    """Dense GP regression: posterior mean and covariance at the inputs."""
    k = kernel_matrix(spec, times)
    ky = k + noise_var * np.eye(len(times))
    alpha = sla.solve(ky, y, assume_a="pos")
    mean = k @ alpha
    cov = k - k @ sla.solve(ky, k, assume_a="pos")
    return mean, cov


def latent_series(spec, times, noise_std, rng):
    """Draw y = f + e from the dense kernel matrix (not the filter)."""
    k = kernel_matrix(spec, times)
    f = rng.multivariate_normal(np.zeros(len(times)), k, method="cholesky")
    y = f + noise_std * rng.standard_normal(len(times))
    return f, y


def unit_scalar_setup():
    # Matern-1/2 with sigma=1, ell=2: F=-1/2, q=1, Pinf=1
    spec = gpss.CovarianceSpec(kind="matern12", sigma=1.0, ell=2.0)
    real = gpss.realize(spec)
    ss = infer.GpStateSpace(real)
    meas = infer.MeasurementModel(C=[[1.0]], R=[[1.0]])
    return spec, real, ss, meas


class TestBeliefAndData:
    def test_conjugate_scalar_update(self):
        # N(0,1) prior, unit-noise observation of 1 -> N(1/2, 1/2)
        _, _, ss, meas = unit_scalar_setup()
        data = infer.TimeSeriesData(times=[0.0], observations=[[1.0]])
        out = infer.run_filter(ss, meas, data)
        assert out.filtered[0].mean[0] == pytest.approx(0.5, abs=1e-12)
        assert out.filtered[0].cov[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_single_observation_loglik(self):
        _, _, ss, meas = unit_scalar_setup()
        data = infer.TimeSeriesData(times=[0.0], observations=[[1.0]])
        out = infer.run_filter(ss, meas, data)
        expected = -0.5 * math.log(4.0 * math.pi) - 0.25
        assert out.loglik == pytest.approx(expected, abs=1e-12)

    def test_times_must_increase(self):
        with pytest.raises(ValueError):
            infer.TimeSeriesData(times=[0.0, 0.0], observations=[[1.0], [2.0]])

    def test_partial_nan_row_rejected(self):
        with pytest.raises(ValueError):
            infer.TimeSeriesData(
                times=[0.0, 1.0],
                observations=[[1.0, 2.0], [np.nan, 3.0]],
            )

    def test_row_vector_convenience(self):
        data = infer.TimeSeriesData(times=[0.0, 1.0, 2.0], observations=[1.0, 2.0, 3.0])
        assert data.observations.shape == (3, 1)

    def test_measurement_model_checks(self):
        with pytest.raises(ValueError):
            infer.MeasurementModel(C=[[1.0]], R=[[0.0]])
        with pytest.raises(ValueError):
            infer.MeasurementModel(C=[[1.0], [2.0]], R=[[1.0]])

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        times = np.cumsum(rng.uniform(0.05, 0.3, size=12))
        obs = rng.standard_normal((12, 2))
        obs[4] = np.nan
        ctrl = rng.standard_normal((12, 1))
        data = infer.TimeSeriesData(times=times, observations=obs, applied_controls=ctrl)
        path = tmp_path / "series.csv"
        data.to_csv(path)
        back = infer.TimeSeriesData.from_csv(path)
        np.testing.assert_array_equal(back.times, data.times)
        np.testing.assert_array_equal(back.observations, data.observations)
        np.testing.assert_array_equal(back.applied_controls, data.applied_controls)
        # repr-based serialization is byte stable
        path2 = tmp_path / "series2.csv"
        back.to_csv(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_csv_header(self, tmp_path):
        data = infer.TimeSeriesData(
            times=[0.0, 1.0],
            observations=[[1.0, 2.0], [3.0, 4.0]],
            applied_controls=[[0.1], [0.2]],
        )
        path = tmp_path / "h.csv"
        data.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,y_1,y_2,c_1"


class TestDiscretize:
    def test_scalar_matern_closed_form(self):
        # dt=1: Ad = e^{-1/2}, Qd = Pinf - Ad Pinf Ad = 1 - e^{-1}
        _, real, ss, _ = unit_scalar_setup()
        ad, qd, md = infer.discretize(ss, 1.0)
        assert ad[0, 0] == pytest.approx(math.exp(-0.5), abs=1e-13)
        assert qd[0, 0] == pytest.approx(1.0 - math.exp(-1.0), abs=1e-12)
        assert md.shape == (1, 0)

    def test_transition_matches_taylor(self):
        phys = model.build_spring()
        spec = gpss.CovarianceSpec(kind="matern32", sigma=1.0, ell=1.0)
        aug = model.augment(phys, [gpss.realize(spec)])
        a = aug.A
        dt = 1e-3
        ad, _, _ = infer.discretize(aug, dt)
        taylor = np.eye(aug.dim) + a * dt + a @ a * dt**2 / 2.0
        bound = np.linalg.norm(a, 2) ** 3 * dt**3
        assert np.linalg.norm(ad - taylor, 2) <= bound

    def test_zoh_control_matrix(self):
        # Af=-1 scalar plant: Md plant entry is int_0^dt e^{-s} ds
        phys = model.LtiPhysicalSystem(
            Af=[[-1.0]], Bf=[[1.0]], Cf=[[1.0]], Mf=[[1.0]]
        )
        spec = gpss.CovarianceSpec(kind="matern12", sigma=1.0, ell=1.0)
        aug = model.augment(phys, [gpss.realize(spec)])
        dt = 0.3
        _, _, md = infer.discretize(aug, dt)
        assert md[0, 0] == pytest.approx(1.0 - math.exp(-dt), abs=1e-12)
        assert md[1, 0] == pytest.approx(0.0, abs=1e-15)

    def test_discrete_noise_positive_semidefinite(self):
        phys = model.build_spring()
        spec = gpss.CovarianceSpec(kind="matern52", sigma=0.7, ell=0.4)
        aug = model.augment(phys, [gpss.realize(spec)])
        for dt in (1e-3, 0.01, 0.1, 1.0):
            _, qd, _ = infer.discretize(aug, dt)
            numlin.check_symmetric_psd(qd, "Qd")


class TestFilter:
    def test_stationary_without_observations(self):
        # no data: predicting from Pinf leaves the belief at Pinf
        spec = gpss.CovarianceSpec(kind="matern52", sigma=1.2, ell=0.8)
        ss = infer.GpStateSpace(gpss.realize(spec))
        meas = infer.MeasurementModel(C=[[1.0, 0.0, 0.0]], R=[[1.0]])
        obs = np.full((6, 1), np.nan)
        data = infer.TimeSeriesData(times=np.linspace(0.0, 2.5, 6), observations=obs)
        out = infer.run_filter(ss, meas, data)
        for bel in out.filtered:
            np.testing.assert_allclose(bel.mean, 0.0, atol=1e-14)
            np.testing.assert_allclose(bel.cov, ss.Pinf_u, atol=1e-12)
        assert out.loglik == 0.0

    def test_covariances_stay_psd(self):
        phys = model.build_spring()
        spec = gpss.CovarianceSpec(kind="matern32", sigma=1.0, ell=2.0)
        aug = model.augment(phys, [gpss.realize(spec)])
        meas = infer.MeasurementModel(C=aug.C, R=[[0.01**2]])
        rng = np.random.default_rng(31)
        times = np.arange(100) * 0.05
        obs = rng.standard_normal((100, 1))
        data = infer.TimeSeriesData(times=times, observations=obs)
        out = infer.run_filter(aug, meas, data)
        for bel in out.filtered:
            bel.validate()
        for bel in infer.rts_smooth(out.filtered, out.predicted, out.transitions):
            bel.validate()

    def test_control_enters_prediction(self):
        phys = model.build_spring()
        spec = gpss.CovarianceSpec(kind="matern12", sigma=1.0, ell=1.0)
        aug = model.augment(phys, [gpss.realize(spec)])
        meas = infer.MeasurementModel(C=aug.C, R=[[1.0]])
        ad, qd, md = infer.discretize(aug, 0.5)
        data = infer.TimeSeriesData(
            times=[0.0, 0.5],
            observations=[[0.2], [np.nan]],
            applied_controls=[[1.7], [0.0]],
        )
        out = infer.run_filter(aug, meas, data)
        expected = ad @ out.filtered[0].mean + md @ np.array([1.7])
        np.testing.assert_allclose(out.filtered[1].mean, expected, atol=1e-13)
        np.testing.assert_allclose(
            out.filtered[1].cov, ad @ out.filtered[0].cov @ ad.T + qd, atol=1e-12
        )

    def test_prior_block_layout(self):
        phys = model.build_spring()
        spec = gpss.CovarianceSpec(kind="matern32", sigma=2.0, ell=1.0)
        aug = model.augment(phys, [gpss.realize(spec)])
        prior = infer.stationary_prior(aug)
        np.testing.assert_allclose(prior.cov[:2, :2], 100.0 * np.eye(2))
        np.testing.assert_allclose(prior.cov[2:, 2:], aug.Pinf_u)
        np.testing.assert_allclose(prior.cov[:2, 2:], 0.0)
        np.testing.assert_allclose(prior.mean, 0.0)

    def test_singular_innovation_raises(self):
        meas = infer.MeasurementModel(C=[[1.0], [1.0]], R=[[1.0, 1.0], [1.0, 1.0]])
        belief = infer.GaussianBelief(mean=[0.0], cov=[[0.0]])
        with pytest.raises(ConditioningError):
            infer.kf_step(
                belief, np.eye(1), np.zeros((1, 1)), None, None, meas, y=[1.0, 2.0]
            )


class TestSmoother:
    def test_last_smoothed_equals_last_filtered(self):
        _, _, ss, meas = unit_scalar_setup()
        rng = np.random.default_rng(5)
        data = infer.TimeSeriesData(
            times=np.arange(8) * 0.4, observations=rng.standard_normal((8, 1))
        )
        out = infer.run_filter(ss, meas, data)
        sm = infer.rts_smooth(out.filtered, out.predicted, out.transitions)
        np.testing.assert_array_equal(sm[-1].mean, out.filtered[-1].mean)
        np.testing.assert_array_equal(sm[-1].cov, out.filtered[-1].cov)

    def test_alignment_required(self):
        _, _, ss, meas = unit_scalar_setup()
        data = infer.TimeSeriesData(times=[0.0, 1.0], observations=[[1.0], [2.0]])
        out = infer.run_filter(ss, meas, data)
        with pytest.raises(ValueError):
            infer.rts_smooth(out.filtered[:-1], out.predicted, out.transitions)

    def test_zero_noise_smoother_inverts_dynamics(self):
        # with Qd = 0 the smoother gain is exactly Ad^{-1}, so smoothed
        # means satisfy m_k = Ad^{-1} m_{k+1}
        a = np.array([[0.0, 1.0], [-1.0, -0.3]])
        ad, qd = numlin.van_loan_discretize(a, np.eye(2), np.zeros((2, 2)), 0.4)
        meas = infer.MeasurementModel(C=[[1.0, 0.0]], R=[[0.05**2]])
        rng = np.random.default_rng(11)
        belief = infer.GaussianBelief(mean=[0.5, -0.2], cov=0.3 * np.eye(2))
        filtered, predicted, transitions = [belief], [belief], [np.eye(2)]
        for _ in range(6):
            pred, _ = infer.kf_step(belief, ad, qd, None, None, meas, y=None)
            belief, _ = infer.kf_step(
                belief, ad, qd, None, None, meas, y=[rng.standard_normal()]
            )
            filtered.append(belief)
            predicted.append(pred)
            transitions.append(ad)
        sm = infer.rts_smooth(filtered, predicted, transitions)
        for k in range(len(sm) - 1):
            np.testing.assert_allclose(
                sm[k].mean, sla.solve(ad, sm[k + 1].mean), atol=1e-9
            )

    def test_matches_batch_gp_regression(self):
        # state-space smoother vs dense-kernel GP regression
        spec = gpss.CovarianceSpec(kind="matern32", sigma=1.3, ell=0.7)
        real = gpss.realize(spec)
        ss = infer.GpStateSpace(real)
        rng = np.random.default_rng(17)
        times = np.sort(rng.uniform(0.0, 6.0, size=40))
        noise_std = 0.1
        _, y = latent_series(spec, times, noise_std, rng)
        meas = infer.MeasurementModel(C=real.H, R=[[noise_std**2]])
        data = infer.TimeSeriesData(times=times, observations=y.reshape(-1, 1))
        out = infer.run_filter(ss, meas, data)
        sm = infer.rts_smooth(out.filtered, out.predicted, out.transitions)
        mean_ss = np.array([(real.H @ b.mean).item() for b in sm])
        var_ss = np.array([(real.H @ b.cov @ real.H.T).item() for b in sm])
        mean_gp, cov_gp = batch_gp_posterior(spec, times, y, noise_std**2)
        np.testing.assert_allclose(mean_ss, mean_gp, atol=1e-6)
        np.testing.assert_allclose(var_ss, np.diag(cov_gp), atol=1e-6)

    def test_inserting_missing_times_changes_nothing(self):
        # refining the grid with prediction-only steps is a no-op
        spec = gpss.CovarianceSpec(kind="matern52", sigma=0.9, ell=1.1)
        real = gpss.realize(spec)
        ss = infer.GpStateSpace(real)
        rng = np.random.default_rng(23)
        times = np.arange(20) * 0.3
        _, y = latent_series(spec, times, 0.05, rng)
        meas = infer.MeasurementModel(C=real.H, R=[[0.05**2]])
        data = infer.TimeSeriesData(times=times, observations=y.reshape(-1, 1))

        mids = times[:-1] + 0.15
        times2 = np.sort(np.concatenate([times, mids]))
        obs2 = np.full((len(times2), 1), np.nan)
        obs2[np.searchsorted(times2, times)] = y.reshape(-1, 1)
        data2 = infer.TimeSeriesData(times=times2, observations=obs2)

        out = infer.run_filter(ss, meas, data)
        out2 = infer.run_filter(ss, meas, data2)
        assert out2.loglik == pytest.approx(out.loglik, abs=1e-10)
        sm = infer.rts_smooth(out.filtered, out.predicted, out.transitions)
        sm2 = infer.rts_smooth(out2.filtered, out2.predicted, out2.transitions)
        idx = np.searchsorted(times2, times)
        for k, j in enumerate(idx):
            np.testing.assert_allclose(sm2[j].mean, sm[k].mean, atol=1e-9)


class TestLikelihood:
    def test_empty_data_gives_zero(self):
        spec = gpss.CovarianceSpec(kind="matern32", sigma=1.0, ell=1.0)
        meas = infer.MeasurementModel(C=[[1.0]], R=[[1.0]])
        data = infer.TimeSeriesData(times=[], observations=np.zeros((0, 1)))
        assert infer.log_marginal_likelihood(data, spec, None, meas) == 0.0

    def test_matches_dense_multivariate_normal(self):
        # filterbank recursion vs scipy's MVN density on K + R
        spec = gpss.CovarianceSpec(kind="matern52", sigma=1.1, ell=0.9)
        rng = np.random.default_rng(41)
        times = np.sort(rng.uniform(0.0, 5.0, size=25))
        noise_std = 0.2
        _, y = latent_series(spec, times, noise_std, rng)
        meas = infer.MeasurementModel(C=[[1.0]], R=[[noise_std**2]])
        data = infer.TimeSeriesData(times=times, observations=y.reshape(-1, 1))
        got = infer.log_marginal_likelihood(data, spec, None, meas)
        cov = kernel_matrix(spec, times) + noise_std**2 * np.eye(len(times))
        want = scipy.stats.multivariate_normal.logpdf(y, mean=np.zeros(len(y)), cov=cov)
        assert got == pytest.approx(want, abs=1e-6)

    def test_physical_measurement_widths_agree(self):
        phys = model.build_spring()
        spec = gpss.CovarianceSpec(kind="matern32", sigma=1.0, ell=2.0)
        aug = model.augment(phys, [gpss.realize(spec)])
        rng = np.random.default_rng(3)
        times = np.arange(30) * 0.2
        obs = rng.standard_normal((30, 1))
        data = infer.TimeSeriesData(times=times, observations=obs)
        narrow = infer.MeasurementModel(C=phys.Cf, R=[[0.04]])
        wide = infer.MeasurementModel(C=aug.C, R=[[0.04]])
        a = infer.log_marginal_likelihood(data, spec, phys, narrow)
        b = infer.log_marginal_likelihood(data, spec, phys, wide)
        assert a == pytest.approx(b, abs=1e-12)


class TestFit:
    def test_recovers_known_hyperparameters(self):
        truth = gpss.CovarianceSpec(kind="matern32", sigma=1.5, ell=2.0)
        rng = np.random.default_rng(19)
        times = np.linspace(0.0, 20.0, 200)
        noise_std = 0.05
        _, y = latent_series(truth, times, noise_std, rng)
        meas = infer.MeasurementModel(C=[[1.0]], R=[[noise_std**2]])
        data = infer.TimeSeriesData(times=times, observations=y.reshape(-1, 1))
        template = gpss.CovarianceSpec(kind="matern32", sigma=1.0, ell=1.0)
        result = infer.fit_hyperparameters(data, template, None, meas)
        assert 0.5 <= result.spec.sigma / truth.sigma <= 2.0
        assert 0.5 <= result.spec.ell / truth.ell <= 2.0
        # the optimum cannot be worse than the generating parameters
        at_truth = infer.log_marginal_likelihood(data, truth, None, meas)
        assert result.loglik >= at_truth - 1e-6
        assert len(result.starts) == 3
        assert result.n_evaluations > 0

    def test_all_starts_failing_raises(self):
        # odd Pade numerators are not factorable, so every evaluation errors
        template = gpss.CovarianceSpec(kind="se", sigma=1.0, ell=1.0, se_order=(3, 6))
        meas = infer.MeasurementModel(C=[[1.0]], R=[[0.01]])
        data = infer.TimeSeriesData(times=[0.0, 1.0], observations=[[0.1], [0.2]])
        with pytest.raises(OptimizationError):
            infer.fit_hyperparameters(data, template, None, meas)

    def test_empty_data_rejected(self):
        template = gpss.CovarianceSpec(kind="matern32", sigma=1.0, ell=1.0)
        meas = infer.MeasurementModel(C=[[1.0]], R=[[0.01]])
        data = infer.TimeSeriesData(times=[], observations=np.zeros((0, 1)))
        with pytest.raises(ValueError):
            infer.fit_hyperparameters(data, template, None, meas)
