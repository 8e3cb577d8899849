import math

import numpy as np
import pytest

from corrmap.gp import (
    Heteroscedastic,
    Homoscedastic,
    KernelParams,
    TrainingSet,
    gp_fit,
    gp_predict,
    kernel_eval,
    kernel_matrix,
    lml_gradient,
    log_marginal_likelihood,
    load_posterior,
    optimize_hyperparams,
    optimize_with_noise,
    save_posterior,
)


def brute_kernel(x1, x2, params):
    """Independent double-loop kernel evaluation."""
    x1 = np.atleast_2d(x1)
    x2 = np.atleast_2d(x2)
    out = np.empty((x1.shape[0], x2.shape[0]))
    for i in range(x1.shape[0]):
        for j in range(x2.shape[0]):
            s = 0.0
            for d in range(x1.shape[1]):
                s += ((x1[i, d] - x2[j, d]) / params.lengthscale[d]) ** 2
            out[i, j] = params.signal_variance * math.exp(-0.5 * s)
    return out


def dense_oracle(x, y, params, noise_diag, xq, prior_mean=0.0):
    """Posterior mean/variance and marginal likelihood via explicit inverse."""
    k = brute_kernel(x, x, params) + np.diag(noise_diag)
    k_inv = np.linalg.inv(k)
    ks = brute_kernel(x, xq, params)
    resid = y - prior_mean
    mean = prior_mean + ks.T @ k_inv @ resid
    var = np.diag(brute_kernel(xq, xq, params) - ks.T @ k_inv @ ks)
    sign, logdet = np.linalg.slogdet(k)
    assert sign > 0
    lml = (-0.5 * resid @ k_inv @ resid - 0.5 * logdet
           - 0.5 * len(y) * np.log(2 * np.pi))
    return mean, var, lml


def random_instance(rng, max_points=20, max_dim=3, hetero=None):
    n = rng.integers(2, max_points + 1)
    d = rng.integers(1, max_dim + 1)
    x = rng.uniform(-3, 3, size=(n, d))
    y = rng.normal(size=n)
    params = KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.3, 3.0, size=d))
    if hetero is None:
        hetero = rng.random() < 0.5
    if hetero:
        noise = Heteroscedastic(rng.uniform(1e-4, 0.1, size=n))
    else:
        noise = Homoscedastic(rng.uniform(1e-4, 0.1))
    return TrainingSet(x, y), params, noise


class TestKernel:
    def test_zero_distance_identity(self):
        p = KernelParams(1.0, [2.0])
        assert kernel_eval([0.7], [0.7], p) == 1.0

    def test_huge_lengthscale_limit(self):
        p = KernelParams(3.0, [1e12])
        assert kernel_eval([0.0], [1.0], p) == pytest.approx(3.0, abs=1e-9)

    def test_closed_form(self):
        p = KernelParams(1.0, [1.0])
        assert kernel_eval([0.0], [1.0], p) == pytest.approx(
            math.exp(-0.5), abs=1e-12)

    def test_symmetry(self):
        p = KernelParams(1.3, [0.7, 2.0])
        a, b = [0.1, -0.4], [1.0, 0.2]
        assert kernel_eval(a, b, p) == kernel_eval(b, a, p)

    def test_dimension_mismatch(self):
        p = KernelParams(1.0, [1.0, 1.0])
        with pytest.raises(ValueError, match="dimension"):
            kernel_eval([0.0], [1.0, 2.0], p)

    def test_matrix_symmetric_to_machine_precision(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(15, 2))
        k = kernel_matrix(x, x, KernelParams(1.5, [0.8, 1.2]))
        assert np.array_equal(k, k.T)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            KernelParams(0.0, [1.0])
        with pytest.raises(ValueError):
            KernelParams(1.0, [1.0, -1.0])


class TestFitPredict:
    def test_interpolates_single_datum(self):
        ts = TrainingSet(np.array([0.0]), np.array([1.0]))
        g = gp_fit(ts, KernelParams(1.0, [1.0]), Homoscedastic(1e-12))
        mean, _ = gp_predict(g, [0.0])
        assert mean == pytest.approx(1.0, abs=1e-6)

    def test_reverts_to_prior_far_away(self):
        rng = np.random.default_rng(2)
        ts = TrainingSet(rng.uniform(0, 1, size=5), rng.normal(size=5))
        g = gp_fit(ts, KernelParams(2.0, [0.5]), Homoscedastic(0.01))
        mean, var = gp_predict(g, [1e6])
        assert mean == pytest.approx(0.0, abs=1e-10)
        assert var == pytest.approx(2.0, abs=1e-10)

    def test_five_point_oracle(self):
        rng = np.random.default_rng(3)
        ts, params, noise = random_instance(rng, hetero=False)
        g = gp_fit(ts, params, noise)
        xq = rng.uniform(-3, 3, size=(7, ts.input_dim))
        mean, var = g.predict(xq)
        from corrmap.gp import noise_diagonal
        o_mean, o_var, _ = dense_oracle(ts.inputs, ts.targets, params,
                                        noise_diagonal(noise, ts.n_points), xq)
        np.testing.assert_allclose(mean, o_mean, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(var, o_var, rtol=1e-8, atol=1e-12)

    def test_exact_at_training_input_with_zero_noise(self):
        x = np.array([0.0, 1.0, 2.5])
        y = np.array([1.0, -2.0, 0.5])
        g = gp_fit(TrainingSet(x, y), KernelParams(1.0, [1.0]),
                   Homoscedastic(0.0))
        for xi, yi in zip(x, y):
            mean, _ = gp_predict(g, [xi])
            assert mean == pytest.approx(yi, abs=1e-8)

    def test_variance_ordering(self):
        ts = TrainingSet(np.array([0.0, 1.0]), np.array([0.3, -0.1]))
        g = gp_fit(ts, KernelParams(1.0, [1.0]), Homoscedastic(1e-6))
        _, v_train = gp_predict(g, [0.0])
        _, v_far = gp_predict(g, [10.0])
        assert v_train <= v_far

    def test_midpoint_oracle(self):
        x = np.array([0.0, 1.0, 2.0])
        y = np.array([0.0, 1.0, 0.0])
        params = KernelParams(1.0, [0.8])
        noise = Homoscedastic(0.01)
        g = gp_fit(TrainingSet(x, y), params, noise)
        mean, var = gp_predict(g, [0.5])
        o_mean, o_var, _ = dense_oracle(x.reshape(-1, 1), y, params,
                                        np.full(3, 0.01), [[0.5]])
        assert mean == pytest.approx(o_mean[0], rel=1e-10)
        assert var == pytest.approx(o_var[0], rel=1e-10)

    def test_variance_nonnegative_everywhere(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            ts, params, noise = random_instance(rng)
            g = gp_fit(ts, params, noise)
            xq = rng.uniform(-5, 5, size=(40, ts.input_dim))
            _, var = g.predict(xq)
            assert np.all(var >= 0)

    def test_hetero_equal_matches_homo(self):
        rng = np.random.default_rng(5)
        ts, params, _ = random_instance(rng, hetero=False)
        homo = gp_fit(ts, params, Homoscedastic(0.02))
        hetero = gp_fit(ts, params, Heteroscedastic(np.full(ts.n_points, 0.02)))
        xq = rng.uniform(-3, 3, size=(9, ts.input_dim))
        m1, v1 = homo.predict(xq)
        m2, v2 = hetero.predict(xq)
        np.testing.assert_allclose(m1, m2, atol=1e-10)
        np.testing.assert_allclose(v1, v2, atol=1e-10)
        l1 = log_marginal_likelihood(ts, params, Homoscedastic(0.02))
        l2 = log_marginal_likelihood(
            ts, params, Heteroscedastic(np.full(ts.n_points, 0.02)))
        assert l1 == pytest.approx(l2, abs=1e-10)

    def test_duplicate_points_rescued_by_jitter(self):
        x = np.array([1.0, 1.0, 2.0])
        y = np.array([0.5, 0.5, 1.0])
        g = gp_fit(TrainingSet(x, y), KernelParams(1.0, [1.0]),
                   Homoscedastic(0.0))
        assert g.jitter > 0

    def test_noise_size_mismatch(self):
        ts = TrainingSet(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError, match="entries"):
            gp_fit(ts, KernelParams(1.0, [1.0]), Heteroscedastic([0.1] * 3))


class TestMarginalLikelihood:
    def test_single_point_closed_form(self):
        # one observation of 0 with unit total variance
        ts = TrainingSet(np.array([0.0]), np.array([0.0]))
        lml = log_marginal_likelihood(ts, KernelParams(0.6, [1.0]),
                                      Homoscedastic(0.4))
        assert lml == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        ts, params, noise = random_instance(rng, hetero=False)
        perm = rng.permutation(ts.n_points)
        ts_perm = TrainingSet(ts.inputs[perm], ts.targets[perm])
        a = log_marginal_likelihood(ts, params, noise)
        b = log_marginal_likelihood(ts_perm, params, noise)
        assert a == pytest.approx(b, rel=1e-12)

    def test_four_point_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-2, 2, size=(4, 1))
        y = rng.normal(size=4)
        params = KernelParams(1.2, [0.9])
        noise_diag = rng.uniform(0.01, 0.1, size=4)
        lml = log_marginal_likelihood(TrainingSet(x, y), params,
                                      Heteroscedastic(noise_diag))
        _, _, o_lml = dense_oracle(x, y, params, noise_diag, x)
        assert lml == pytest.approx(o_lml, rel=1e-8)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            n, d = 10, int(rng.integers(1, 3))
            x = rng.uniform(-2, 2, size=(n, d))
            y = rng.normal(size=n)
            ts = TrainingSet(x, y)
            params = KernelParams(rng.uniform(0.5, 2), rng.uniform(0.5, 2, d))
            noise = Homoscedastic(0.05)
            grad = lml_gradient(ts, params, noise, include_noise=True)
            theta = np.concatenate([
                [np.log(params.signal_variance)],
                np.log(params.lengthscale),
                [np.log(noise.variance)],
            ])
            h = 1e-5
            fd = np.empty_like(theta)
            for i in range(theta.size):
                for sign, store in ((1, "up"), (-1, "dn")):
                    t = theta.copy()
                    t[i] += sign * h
                    p = KernelParams(np.exp(t[0]), np.exp(t[1:1 + d]))
                    nz = Homoscedastic(np.exp(t[-1]))
                    val = log_marginal_likelihood(ts, p, nz)
                    if sign == 1:
                        up = val
                    else:
                        dn = val
                fd[i] = (up - dn) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


class TestOptimize:
    def test_recovers_known_lengthscale(self):
        rng = np.random.default_rng(42)
        x = np.linspace(0, 20, 200)
        true = KernelParams(1.0, [2.0])
        k = kernel_matrix(x, x, true) + 1e-10 * np.eye(200)
        y = np.linalg.cholesky(k) @ rng.normal(size=200)
        y += rng.normal(scale=0.1, size=200)
        ts = TrainingSet(x, y)
        fitted = optimize_hyperparams(ts, Homoscedastic(0.01),
                                      KernelParams(1.0, [1.0]), seed=0)
        assert 1.4 <= fitted.lengthscale[0] <= 2.8

    def test_constant_zero_targets_shrink_signal(self):
        ts = TrainingSet(np.linspace(0, 1, 10), np.zeros(10))
        fitted = optimize_hyperparams(ts, Homoscedastic(0.1),
                                      KernelParams(1.0, [1.0]), seed=0)
        assert fitted.signal_variance <= 1e-6

    def test_never_worse_than_init(self):
        rng = np.random.default_rng(9)
        ts, _, noise = random_instance(rng, hetero=False)
        init = KernelParams(0.7, np.full(ts.input_dim, 1.3))
        fitted = optimize_hyperparams(ts, noise, init, seed=1)
        assert (log_marginal_likelihood(ts, fitted, noise)
                >= log_marginal_likelihood(ts, init, noise) - 1e-9)

    def test_joint_noise_fit_finds_noise_scale(self):
        rng = np.random.default_rng(10)
        x = np.linspace(0, 10, 80)
        y = np.sin(x) + rng.normal(scale=0.2, size=80)
        params, noise = optimize_with_noise(TrainingSet(x, y),
                                            KernelParams(1.0, [1.0]), seed=0)
        assert 0.01 <= noise.variance <= 0.2

    def test_requires_two_points(self):
        ts = TrainingSet(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            optimize_hyperparams(ts, Homoscedastic(0.1),
                                 KernelParams(1.0, [1.0]))


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        ts, params, noise = random_instance(rng)
        g = gp_fit(ts, params, noise, prior_mean=0.3)
        path = tmp_path / "posterior.json"
        save_posterior(g, path)
        g2 = load_posterior(path)
        xq = rng.uniform(-2, 2, size=(5, ts.input_dim))
        np.testing.assert_allclose(g.predict(xq)[0], g2.predict(xq)[0],
                                   rtol=1e-12)
        np.testing.assert_allclose(g.predict(xq)[1], g2.predict(xq)[1],
                                   rtol=1e-12, atol=1e-15)
