import math

import numpy as np
import pytest
from scipy.optimize import approx_fprime

from rdesign import gp


def _rbf(Xa, Xb, ls, sf2):
    d = (Xa[:, None, :] - Xb[None, :, :]) / ls
    return sf2 * np.exp(-0.5 * (d**2).sum(-1))


def _dense_posterior(X, t, y, Xq, tq, ls, sf2, B, s2):
    """Textbook GP posterior with explicit inverse; independent of the library."""
    K = B[np.ix_(t, t)] * _rbf(X, X, ls, sf2) + s2 * np.eye(len(y))
    Ks = B[np.ix_(t, tq)] * _rbf(X, Xq, ls, sf2)
    Kss = B[np.ix_(tq, tq)] * _rbf(Xq, Xq, ls, sf2)
    Ki = np.linalg.inv(K)
    return Ks.T @ Ki @ y, Kss - Ks.T @ Ki @ Ks


def _random_instance(rng, n=None, d=None):
    n = n or int(rng.integers(1, 21))
    d = d or int(rng.integers(1, 7))
    X = rng.uniform(-2, 2, (n, d))
    t = rng.integers(0, 2, n)
    y = rng.normal(size=n)
    ls = rng.uniform(0.5, 2.0, d)
    sf2 = rng.uniform(0.5, 2.0)
    B = gp.CoregionalizationSpec.from_factors(rng.normal(size=3), rng.uniform(0.01, 0.5, 2)).B
    s2 = rng.uniform(0.01, 0.5)
    return X, t, y, ls, sf2, B, s2


def _model(X, t, y, ls, sf2, B, s2):
    return gp.GPModel(gp.KernelSpec("RBF", tuple(ls), sf2), gp.CoregionalizationSpec(B), s2, X, t, y)


# -- kernel_eval ---------------------------------------------------------------


def test_kernel_eval_same_point_same_arm():
    spec = gp.KernelSpec("RBF", (0.7, 1.3), 2.5)
    assert gp.kernel_eval(spec, gp.CoregionalizationSpec.identity(), ((0.1, 0.2), 1), ((0.1, 0.2), 1)) == pytest.approx(2.5)


def test_kernel_eval_identity_kills_cross_arm():
    spec = gp.KernelSpec("RBF", (1.0,))
    assert gp.kernel_eval(spec, gp.CoregionalizationSpec.identity(), ((0.3,), 0), ((0.3,), 1)) == 0.0


def test_kernel_eval_unit_distance():
    spec = gp.KernelSpec("RBF", (1.0,))
    v = gp.kernel_eval(spec, gp.CoregionalizationSpec.identity(), ((0.0,), 0), ((1.0,), 0))
    assert v == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_kernel_eval_dimension_mismatch():
    spec = gp.KernelSpec("RBF", (1.0, 1.0))
    with pytest.raises(gp.GPInputError):
        gp.kernel_eval(spec, gp.CoregionalizationSpec.identity(), ((0.0,), 0), ((1.0,), 0))


@pytest.mark.parametrize("family", gp.FAMILIES)
def test_kernel_matrix_symmetric_psd(family):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    t = rng.integers(0, 2, 30)
    coreg = gp.CoregionalizationSpec.from_factors([1.0, 0.4, 0.8], [0.1, 0.2])
    K = gp.kernel_matrix(gp.KernelSpec(family, (0.8, 1.1, 1.5), 1.3), coreg, X, t, X, t)
    assert np.abs(K - K.T).max() < 1e-12
    assert np.linalg.eigvalsh(K).min() > -1e-8


def test_kernel_spec_validation():
    with pytest.raises(gp.GPInputError):
        gp.KernelSpec("RBF", (1.0, -1.0))
    with pytest.raises(gp.GPInputError):
        gp.KernelSpec("RBF", (1.0,), 0.0)
    with pytest.raises(gp.GPInputError):
        gp.KernelSpec("Periodic", (1.0,))
    with pytest.raises(gp.GPInputError):
        gp.CoregionalizationSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))


# -- posterior -----------------------------------------------------------------


def test_posterior_matches_dense_oracle_three_points():
    rng = np.random.default_rng(0)
    X, t, y, ls, sf2, B, s2 = _random_instance(rng, n=3, d=2)
    Xq = rng.uniform(-2, 2, (2, 2))
    tq = np.array([0, 1])
    m = _model(X, t, y, ls, sf2, B, s2)
    post = m.posterior([gp.Latent(tuple(Xq[0]), 0), gp.Latent(tuple(Xq[1]), 1)])
    mu, S = _dense_posterior(X, t, y, Xq, tq, ls, sf2, B, s2)
    assert np.abs(post.mean - mu).max() < 1e-8
    assert np.abs(post.cov - S).max() < 1e-8


def test_posterior_near_interpolation():
    X = np.array([[0.0], [1.0], [2.5]])
    y = np.array([0.3, -1.2, 0.8])
    m = gp.GPModel(gp.KernelSpec("RBF", (1.0,)), gp.CoregionalizationSpec.shared(), 1e-8, X, [0, 0, 0], y)
    post = m.posterior([gp.Latent((1.0,), 0)])
    assert post.mean[0] == pytest.approx(-1.2, abs=1e-3)
    assert post.cov[0, 0] <= 1e-6


def test_posterior_prior_when_untrained():
    spec = gp.KernelSpec("Matern52", (0.5, 2.0), 1.7)
    coreg = gp.CoregionalizationSpec(np.array([[2.0, 0.3], [0.3, 0.5]]))
    m = gp.GPModel(spec, coreg, 0.1)
    q = ((0.2, -0.4), 1)
    post = m.posterior([gp.Latent(*q)])
    assert post.mean[0] == 0.0
    assert post.cov[0, 0] == pytest.approx(gp.kernel_eval(spec, coreg, q, q), abs=1e-14)


def test_posterior_empty_query_list():
    m = gp.GPModel(gp.KernelSpec("RBF", (1.0,)), None, 0.1)
    with pytest.raises(gp.GPInputError):
        m.posterior([])


def test_noisy_query_adds_noise_variance():
    rng = np.random.default_rng(3)
    m = _model(*_random_instance(rng, n=8, d=2))
    x = (0.1, 0.2)
    post = m.posterior([gp.Latent(x, 1), gp.Noisy(x, 1)])
    assert post.cov[1, 1] - post.cov[0, 0] == pytest.approx(m.noise_variance, abs=1e-12)
    assert post.cov[0, 1] == pytest.approx(post.cov[0, 0], abs=1e-12)


def test_posterior_covariance_well_formed():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = _model(*_random_instance(rng))
        d = m.kernel.dim
        qs = [gp.Latent(tuple(rng.uniform(-2, 2, d)), int(rng.integers(2))) for _ in range(6)]
        qs += [gp.Contrast(tuple(rng.uniform(-2, 2, d))) for _ in range(3)]
        cov = m.posterior(qs).cov
        assert np.abs(cov - cov.T).max() < 1e-10
        assert np.linalg.eigvalsh(cov).min() > -1e-8


def test_posterior_marginalization():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = _model(*_random_instance(rng))
        d = m.kernel.dim
        qs = [gp.Latent(tuple(rng.uniform(-2, 2, d)), int(rng.integers(2))) for _ in range(5)]
        qs += [gp.Noisy(tuple(rng.uniform(-2, 2, d)), 0), gp.Contrast(tuple(rng.uniform(-2, 2, d)))]
        full = m.posterior(qs)
        sub = [1, 4, 6]
        part = m.posterior([qs[i] for i in sub])
        assert np.abs(part.mean - full.mean[sub]).max() < 1e-10
        assert np.abs(part.cov - full.cov[np.ix_(sub, sub)]).max() < 1e-10


def test_contrast_variance_identity():
    rng = np.random.default_rng(6)
    for _ in range(10):
        m = _model(*_random_instance(rng))
        x = tuple(rng.uniform(-2, 2, m.kernel.dim))
        post = m.posterior([gp.Latent(x, 1), gp.Latent(x, 0), gp.Contrast(x)])
        direct = post.cov[0, 0] + post.cov[1, 1] - 2 * post.cov[0, 1]
        assert abs(post.cov[2, 2] - direct) < 1e-12
        mean_c, var_c = m.contrast_moments(np.array([x]))
        assert abs(var_c[0] - post.cov[2, 2]) < 1e-10
        assert abs(mean_c[0] - post.mean[2]) < 1e-10


def test_adding_training_point_never_increases_variance():
    rng = np.random.default_rng(7)
    for _ in range(10):
        X, t, y, ls, sf2, B, s2 = _random_instance(rng, n=10)
        Xq = rng.uniform(-2, 2, (15, X.shape[1]))
        tq = rng.integers(0, 2, 15)
        small = _model(X[:-1], t[:-1], y[:-1], ls, sf2, B, s2)
        big = _model(X, t, y, ls, sf2, B, s2)
        v_small = small.latent_moments(Xq, tq)[1]
        v_big = big.latent_moments(Xq, tq)[1]
        assert np.all(v_big <= v_small + 1e-8)


def test_vectorised_moments_agree_with_posterior():
    rng = np.random.default_rng(8)
    m = _model(*_random_instance(rng, n=12, d=3))
    Xq = rng.uniform(-2, 2, (4, 3))
    tq = np.array([0, 1, 1, 0])
    mean, var = m.latent_moments(Xq, tq)
    post = m.posterior([gp.Latent(tuple(x), int(a)) for x, a in zip(Xq, tq)])
    assert np.allclose(mean, post.mean, atol=1e-12)
    assert np.allclose(var, np.diag(post.cov), atol=1e-12)
    assert np.allclose(m.latent_mean(Xq, tq), mean, atol=1e-12)


# -- log marginal likelihood -----------------------------------------------------


def test_lml_scalar_case():
    m = gp.GPModel(gp.KernelSpec("RBF", (1.0,)), gp.CoregionalizationSpec.shared(), 0.0, [[0.0]], [0], [0.0])
    assert gp.log_marginal_likelihood(m) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_lml_zero_targets_drop_quadratic_term():
    rng = np.random.default_rng(9)
    X, t, y, ls, sf2, B, s2 = _random_instance(rng, n=6)
    m = _model(X, t, 0 * y, ls, sf2, B, s2)
    K = B[np.ix_(t, t)] * _rbf(X, X, ls, sf2) + s2 * np.eye(6)
    expect = -0.5 * np.linalg.slogdet(K)[1] - 3 * math.log(2 * math.pi)
    assert m.log_marginal_likelihood() == pytest.approx(expect, abs=1e-10)


def test_lml_two_point_dense_oracle():
    rng = np.random.default_rng(10)
    X, t, y, ls, sf2, B, s2 = _random_instance(rng, n=2, d=2)
    m = _model(X, t, y, ls, sf2, B, s2)
    K = B[np.ix_(t, t)] * _rbf(X, X, ls, sf2) + s2 * np.eye(2)
    expect = -0.5 * y @ np.linalg.solve(K, y) - 0.5 * np.log(np.linalg.det(K)) - math.log(2 * math.pi)
    assert abs(m.log_marginal_likelihood() - expect) < 1e-10


# -- fit -------------------------------------------------------------------------


def test_fit_recovers_lengthscale():
    found = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-2, 2, (100, 1))
        K = _rbf(X, X, np.array([0.5]), 1.0)
        f = np.linalg.cholesky(K + 1e-9 * np.eye(100)) @ rng.normal(size=100)
        y = f + 0.1 * rng.normal(size=100)
        m = gp.fit(X, np.zeros(100, int), y, learn_coreg=False, rng=seed)
        found.append(m.kernel.lengthscales[0] * m.x_scale[0])
    assert 0.25 <= np.median(found) <= 1.0


def test_fit_constant_targets():
    X = np.linspace(-2, 2, 15)[:, None]
    m = gp.fit(X, np.zeros(15, int), np.full(15, 4.2), learn_coreg=False, rng=0)
    assert np.abs(m.latent_mean(np.array([[-1.7], [0.3], [5.0]]), 0) - 4.2).max() < 1e-6


def test_fit_single_point():
    m = gp.fit([[0.5]], [1], [2.0], rng=0)
    assert math.isfinite(m.log_marginal_likelihood())
    assert m.noise_variance >= gp.NOISE_FLOOR


def test_fit_rejects_bad_input():
    with pytest.raises(gp.GPInputError):
        gp.fit([[0.0], [1.0]], [0, 1], [1.0, np.nan])
    with pytest.raises(gp.GPInputError):
        gp.fit(np.zeros((0, 1)), [], [])


def test_fit_improves_on_initial_hyperparameters():
    rng = np.random.default_rng(11)
    X = rng.uniform(-2, 2, (40, 2))
    t = rng.integers(0, 2, 40)
    y = np.sin(2 * X[:, 0]) + t * X[:, 1] + 0.1 * rng.normal(size=40)
    m = gp.fit(X, t, y, restarts=3, rng=0)
    start = m.with_hyperparameters(kernel=gp.KernelSpec("RBF", (1.0, 1.0)), coreg=gp.CoregionalizationSpec(np.eye(2)), noise_variance=0.5)
    assert m.log_marginal_likelihood() > start.log_marginal_likelihood()


@pytest.mark.parametrize("learn_coreg", [True, False])
@pytest.mark.parametrize("family", gp.FAMILIES)
def test_lml_gradient_matches_finite_differences(family, learn_coreg):
    rng = np.random.default_rng(12)
    n, d = 12, 2
    Z = rng.normal(size=(n, d))
    t = rng.integers(0, 2, n) if learn_coreg else np.zeros(n, int)
    r = rng.normal(size=n)
    D = np.moveaxis((Z[:, None, :] - Z[None, :, :]) ** 2, 2, 0)
    codec = gp._Codec(d, learn_coreg, 1.0)
    theta = codec.random_start(rng)
    args = (codec, Z, t, r, D, family, 1.5)
    _, grad = gp._neg_lml_and_grad(theta, *args)
    fd = approx_fprime(theta, lambda th: gp._neg_lml_and_grad(th, *args)[0], 1e-6)
    assert np.allclose(grad, fd, rtol=1e-4, atol=1e-5)


def test_jitter_rescues_singular_kernel():
    X = np.zeros((5, 1))
    m = gp.GPModel(gp.KernelSpec("RBF", (1.0,)), gp.CoregionalizationSpec.shared(), 0.0, X, [0] * 5, np.ones(5))
    assert m.jitter > 0
    assert np.isfinite(m.latent_mean([[0.0]], 0)).all()
