import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimogpr import gpr
from mimogpr.exceptions import DegenerateDataError, NumericalError
from mimogpr.timeseries import SupervisedDataset


def theta_of(nu=1.0, lam=1.0, gamma=0.0, kappa=0.0, sigma=0.0):
    return gpr.KernelHyperparams(nu=nu, lam=lam, gamma=gamma, kappa=kappa, sigma=sigma)


def random_theta(rng):
    return gpr.KernelHyperparams(
        nu=rng.uniform(0.5, 2.0),
        lam=rng.uniform(0.5, 3.0),
        gamma=rng.uniform(0.0, 0.5),
        kappa=rng.uniform(0.0, 0.5),
        sigma=rng.uniform(0.1, 1.0),
    )


def kernel_oracle(a, b, theta):
    """Independent transcription of the covariance: loops and scalar math only."""
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            sq = sum((a[i, k] - b[j, k]) ** 2 for k in range(a.shape[1]))
            dot = sum(a[i, k] * b[j, k] for k in range(a.shape[1]))
            out[i, j] = theta.nu**2 * math.exp(-sq / (2 * theta.lam**2)) + theta.gamma * dot + theta.kappa
    return out


def dense_lml_oracle(x, y, theta, jitter=0.0):
    """Multivariate-normal log density via explicit inverse and determinant."""
    k = kernel_oracle(x, x, theta) + (theta.sigma**2 + jitter) * np.eye(len(y))
    sign, logdet = np.linalg.slogdet(k)
    assert sign > 0
    return -0.5 * y @ np.linalg.inv(k) @ y - 0.5 * logdet - len(y) / 2 * math.log(2 * math.pi)


def dense_posterior_oracle(x, y, x_star, theta, jitter=0.0):
    """Posterior mean/covariance via explicit dense inverse."""
    k_inv = np.linalg.inv(kernel_oracle(x, x, theta) + (theta.sigma**2 + jitter) * np.eye(len(y)))
    k_star = kernel_oracle(x_star, x, theta)
    mu = k_star @ k_inv @ y
    cov = kernel_oracle(x_star, x_star, theta) - k_star @ k_inv @ k_star.T
    return mu, cov


def make_dataset(rng, n, p):
    x = rng.normal(size=(n, p))
    theta = random_theta(rng)
    k = kernel_oracle(x, x, theta) + theta.sigma**2 * np.eye(n)
    y = np.linalg.cholesky(k) @ rng.standard_normal(n)
    return x, y, theta


class TestKernelEval:
    def test_zero_distance_gives_prior_variance(self):
        x = np.array([0.3, -0.7, 2.0])
        assert gpr.kernel_eval(x, x, theta_of(nu=1.7)) == pytest.approx(1.7**2, rel=1e-15)

    def test_gaussian_tail(self):
        x_i = np.array([0.0])
        x_j = np.array([10.0])
        value = gpr.kernel_eval(x_i, x_j, theta_of())
        assert value == pytest.approx(math.exp(-50.0), rel=1e-12)

    def test_hand_evaluated_mixed_terms(self):
        x_i = np.array([1.0, 0.0])
        x_j = np.array([0.0, 1.0])
        value = gpr.kernel_eval(x_i, x_j, theta_of(gamma=0.5, kappa=0.25))
        assert value == pytest.approx(math.exp(-1.0) + 0.25, rel=1e-14)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="equal dimension"):
            gpr.kernel_eval(np.zeros(2), np.zeros(3), theta_of())

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        theta = random_theta(rng)
        a, b = rng.normal(size=(2, 4))
        assert gpr.kernel_eval(a, b, theta) == gpr.kernel_eval(b, a, theta)


class TestKernelMatrix:
    def test_single_row(self):
        x = np.array([[1.0, 2.0]])
        theta = theta_of(nu=1.5, gamma=0.3, kappa=0.2)
        k = gpr.kernel_matrix(x, x, theta)
        assert k.shape == (1, 1)
        assert k[0, 0] == pytest.approx(1.5**2 + 0.3 * 5.0 + 0.2, rel=1e-14)

    def test_symmetric_by_construction(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(12, 3))
        k = gpr.kernel_matrix(x, x, random_theta(rng))
        assert np.max(np.abs(k - k.T)) == 0.0

    def test_noisy_matrix_positive_definite_eigensolver_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            theta = random_theta(rng)
            x = rng.normal(size=(20, 3))
            k = gpr.kernel_matrix(x, x, theta) + theta.sigma**2 * np.eye(20)
            min_eig = float(np.linalg.eigvalsh(k)[0])
            assert min_eig >= theta.sigma**2 - 1e-10

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        theta = random_theta(rng)
        a = rng.normal(size=(6, 3))
        b = rng.normal(size=(4, 3))
        np.testing.assert_allclose(
            gpr.kernel_matrix(a, b, theta), kernel_oracle(a, b, theta), rtol=1e-12
        )


class TestLogMarginalLikelihood:
    def test_scalar_closed_form(self):
        # one observation, unit prior variance, zero noise: v = 1, y = 0
        x = np.array([[0.0]])
        y = np.array([0.0])
        value = gpr.log_marginal_likelihood(x, y, theta_of())
        assert value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
        assert value == pytest.approx(-0.9189385, abs=1e-7)

    def test_scalar_general_closed_form(self):
        x = np.array([[0.4]])
        y = np.array([1.3])
        theta = theta_of(nu=1.2, gamma=0.5, kappa=0.1, sigma=0.7)
        v = 1.2**2 + 0.5 * 0.16 + 0.1 + 0.49
        expected = -0.5 * 1.3**2 / v - 0.5 * math.log(v) - 0.5 * math.log(2 * math.pi)
        assert gpr.log_marginal_likelihood(x, y, theta) == pytest.approx(expected, rel=1e-12)

    def test_against_dense_inverse_oracle(self):
        rng = np.random.default_rng(7)
        x, y, theta = make_dataset(rng, 8, 3)
        value = gpr.log_marginal_likelihood(x, y, theta)
        assert value == pytest.approx(dense_lml_oracle(x, y, theta), abs=1e-9)

    def test_jitter_sensitivity_is_first_order(self):
        rng = np.random.default_rng(8)
        x, y, theta = make_dataset(rng, 10, 2)
        base = dense_lml_oracle(x, y, theta)
        # analytic d(lml)/d(eps) = 1/2 (alpha.alpha - tr Kinv)
        k = kernel_oracle(x, x, theta) + theta.sigma**2 * np.eye(10)
        k_inv = np.linalg.inv(k)
        alpha = k_inv @ y
        slope = 0.5 * (alpha @ alpha - np.trace(k_inv))
        for eps in (1e-10, 1e-8, 1e-6):
            delta = dense_lml_oracle(x, y, theta, jitter=eps) - base
            assert abs(delta) <= (abs(slope) + 1.0) * eps

    def test_indefinite_matrix_reported(self):
        # duplicated rows with zero noise: singular until jitter rescues it
        x = np.vstack([np.ones((3, 2)), np.ones((3, 2))])
        y = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
        value = gpr.log_marginal_likelihood(x, y, theta_of(sigma=0.0))
        assert np.isfinite(value)  # jitter escalation rescued the factorization


class TestLmlGradient:
    def finite_difference(self, x, y, theta, step=1e-5):
        log_theta = theta.to_log_vector()
        grad = np.zeros(5)
        for i in range(5):
            hi, lo = log_theta.copy(), log_theta.copy()
            hi[i] += step
            lo[i] -= step
            f_hi = gpr.log_marginal_likelihood(x, y, gpr.KernelHyperparams.from_log_vector(hi))
            f_lo = gpr.log_marginal_likelihood(x, y, gpr.KernelHyperparams.from_log_vector(lo))
            grad[i] = (f_hi - f_lo) / (2 * step)
        return grad

    def test_matches_central_differences(self):
        rng = np.random.default_rng(9)
        x, y, theta = make_dataset(rng, 15, 3)
        analytic = gpr.lml_gradient(x, y, theta)
        numeric = self.finite_difference(x, y, theta)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-7)

    def test_many_random_instances(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            n = int(rng.integers(4, 21))
            p = int(rng.integers(1, 6))
            x, y, theta = make_dataset(rng, n, p)
            analytic = gpr.lml_gradient(x, y, theta)
            numeric = self.finite_difference(x, y, theta)
            scale = np.maximum(np.abs(numeric), 1e-3)
            assert np.max(np.abs(analytic - numeric) / scale) <= 1e-4

    def test_gamma_component_zero_for_zero_inputs(self):
        x = np.zeros((6, 3))
        y = np.random.default_rng(11).normal(size=6)
        grad = gpr.lml_gradient(x, y, theta_of(gamma=0.4, kappa=0.1, sigma=0.5))
        assert grad[2] == 0.0

    def test_converged_fit_satisfies_gradient_tolerance(self):
        rng = np.random.default_rng(12)
        x, y, theta = make_dataset(rng, 25, 2)
        ds = SupervisedDataset(inputs=x, targets=y, lag_order=2, origin_index=2)
        config = gpr.FitConfig(restarts=1, max_iters=500, grad_tol=1e-5, seed=0)
        model = gpr.fit(ds, config, initial=theta)
        grad = gpr.lml_gradient(x, y, model.hyperparams)
        assert np.max(np.abs(grad)) <= config.grad_tol


class TestFit:
    def test_ascent_property_from_given_start(self):
        rng = np.random.default_rng(13)
        x, y, theta0 = make_dataset(rng, 20, 2)
        ds = SupervisedDataset(inputs=x, targets=y, lag_order=2, origin_index=2)
        model = gpr.fit(ds, gpr.FitConfig(restarts=1, seed=0), initial=theta0)
        lml0 = gpr.log_marginal_likelihood(x, y, theta0)
        lml1 = gpr.log_marginal_likelihood(x, y, model.hyperparams)
        assert lml1 >= lml0 - 1e-12

    def test_fit_dominates_generating_hyperparams(self):
        rng = np.random.default_rng(14)
        theta_star = gpr.KernelHyperparams(nu=1.0, lam=1.5, gamma=0.05, kappa=0.1, sigma=0.3)
        x = rng.normal(size=(60, 3))
        k = kernel_oracle(x, x, theta_star) + theta_star.sigma**2 * np.eye(60)
        y = np.linalg.cholesky(k) @ rng.standard_normal(60)
        ds = SupervisedDataset(inputs=x, targets=y, lag_order=3, origin_index=3)
        model = gpr.fit(ds, gpr.FitConfig(restarts=5, seed=3))
        lml_truth = gpr.log_marginal_likelihood(x, y, theta_star)
        lml_fit = gpr.log_marginal_likelihood(x, y, model.hyperparams)
        assert lml_fit >= lml_truth - 1e-6

    def test_more_restarts_never_hurt(self):
        rng = np.random.default_rng(15)
        x, y, _ = make_dataset(rng, 25, 2)
        ds = SupervisedDataset(inputs=x, targets=y, lag_order=2, origin_index=2)
        lml = {
            r: gpr.log_marginal_likelihood(
                x, y, gpr.fit(ds, gpr.FitConfig(restarts=r, seed=7)).hyperparams
            )
            for r in (1, 5)
        }
        assert lml[5] >= lml[1] - 1e-12

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(16)
        x, y, _ = make_dataset(rng, 18, 2)
        ds = SupervisedDataset(inputs=x, targets=y, lag_order=2, origin_index=2)
        a = gpr.fit(ds, gpr.FitConfig(restarts=3, seed=21))
        b = gpr.fit(ds, gpr.FitConfig(restarts=3, seed=21))
        assert a.hyperparams == b.hyperparams  # bit-identical
        np.testing.assert_array_equal(a.alpha, b.alpha)

    def test_zero_variance_targets_rejected(self):
        ds = SupervisedDataset(
            inputs=np.random.default_rng(17).normal(size=(8, 2)),
            targets=np.full(8, 3.0),
            lag_order=2,
            origin_index=2,
        )
        with pytest.raises(DegenerateDataError, match="zero variance"):
            gpr.fit(ds)

    def test_model_invariants(self):
        rng = np.random.default_rng(18)
        x, y, _ = make_dataset(rng, 20, 3)
        ds = SupervisedDataset(inputs=x, targets=y, lag_order=3, origin_index=3)
        model = gpr.fit(ds, gpr.FitConfig(restarts=2, seed=5))
        theta = model.hyperparams
        k = gpr.kernel_matrix(x, x, theta) + theta.sigma**2 * np.eye(20)
        recon = model.chol_factor @ model.chol_factor.T
        rel = np.linalg.norm(recon - k) / np.linalg.norm(k)
        assert rel <= 1e-8
        residual = k @ model.alpha - y
        assert np.max(np.abs(residual)) <= 1e-8 * max(np.max(np.abs(y)), 1.0)


class TestPredict:
    def test_noiseless_interpolation(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=(10, 2))
        y = rng.normal(size=10)
        theta = theta_of(nu=1.0, lam=2.0, sigma=0.0)
        model = _build_model(x, y, theta)
        mu, cov = gpr.predict(model, x)
        np.testing.assert_allclose(mu, y, atol=1e-6)
        assert np.max(np.diag(cov)) <= 1e-6

    def test_prior_reversion_far_from_data(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(8, 2))
        y = rng.normal(size=8)
        theta = theta_of(nu=1.3, lam=1.0, sigma=0.1)
        model = _build_model(x, y, theta)
        far = np.full((1, 2), 100.0)
        mu, cov = gpr.predict(model, far)
        assert abs(mu[0]) <= 1e-8
        assert cov[0, 0] == pytest.approx(1.3**2, rel=1e-10)

    def test_against_dense_inverse_oracle(self):
        rng = np.random.default_rng(21)
        x, y, theta = make_dataset(rng, 10, 2)
        x_star = rng.normal(size=(3, 2))
        model = _build_model(x, y, theta)
        assert model.jitter == 0.0  # well-conditioned: no stabilizer engaged
        mu, cov = gpr.predict(model, x_star)
        mu0, cov0 = dense_posterior_oracle(x, y, x_star, theta)
        np.testing.assert_allclose(mu, mu0, atol=1e-9)
        np.testing.assert_allclose(cov, cov0, atol=1e-9)

    def test_posterior_variance_bounded_by_prior(self):
        rng = np.random.default_rng(22)
        x, y, theta = make_dataset(rng, 15, 3)
        model = _build_model(x, y, theta)
        x_star = rng.normal(size=(20, 3))
        _, cov = gpr.predict(model, x_star)
        for i in range(20):
            prior = gpr.kernel_eval(x_star[i], x_star[i], theta)
            assert cov[i, i] <= prior + 1e-8

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(23)
        x, y, theta = make_dataset(rng, 6, 2)
        model = _build_model(x, y, theta)
        with pytest.raises(ValueError, match="columns"):
            gpr.predict(model, np.zeros((2, 3)))


class TestJitterEscalation:
    def test_duplicate_rows_rescued(self):
        x = np.vstack([np.ones((4, 2)), np.ones((4, 2)), np.zeros((4, 2))])
        y = np.concatenate([np.ones(8), np.zeros(4)])
        theta = theta_of(sigma=0.0)
        k, _, _, _ = gpr._noisy_kernel(x, theta)
        chol, jitter = gpr._factorize(k, 1e-10)
        assert 0.0 < jitter <= gpr.JITTER_CAP
        recon = chol @ chol.T
        np.testing.assert_allclose(recon, k + jitter * np.eye(len(y)), atol=1e-8)

    def test_exact_matrix_preferred(self):
        rng = np.random.default_rng(24)
        x, y, theta = make_dataset(rng, 12, 2)
        k, _, _, _ = gpr._noisy_kernel(x, theta)
        _, jitter = gpr._factorize(k, 1e-10)
        assert jitter == 0.0

    def test_hopeless_matrix_reported(self):
        bad = -np.eye(4)
        with pytest.raises(NumericalError, match="indefinite"):
            gpr._factorize(bad, 1e-10)


def _identity(p):
    from mimogpr.timeseries import identity_standardizer

    return identity_standardizer(p)


def _build_model(x, y, theta):
    ds = SupervisedDataset(inputs=x, targets=y, lag_order=x.shape[1], origin_index=x.shape[1])
    return gpr.build_model(ds, theta)
