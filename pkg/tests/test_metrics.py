import numpy as np
import pytest

from rdesign import datagen as dg
from rdesign import metrics as mt


def test_pehe_cases():
    tau = np.array([0.3, -1.0, 2.0])
    assert mt.pehe(tau, tau) == 0.0
    assert mt.pehe(tau + 1.5, tau) == pytest.approx(2.25, abs=1e-14)
    assert mt.pehe([1, 2, 0], [0, 4, -1]) == pytest.approx(2.0, abs=1e-15)


def test_ape_cases():
    tau = np.array([1.0, -2.0, 0.5, -0.1])
    assert mt.ape(tau, tau) == 0.0
    assert mt.ape(-tau, tau) == 1.0
    assert mt.ape([1.0, 2.0, -0.5, -0.1], tau) == 0.5


def test_ties_count_as_control():
    assert mt.ape([0.0], [0.0]) == 0.0
    assert mt.ape([0.0], [1.0]) == 1.0
    assert mt.ape([1.0], [0.0]) == 1.0
    assert mt.avg_regret([1.0], [0.0]) == 0.0


def test_regret_cases():
    tau = np.array([2.0, -1.0])
    assert mt.avg_regret(tau, tau) == 0.0
    assert mt.avg_regret([-1.0], [2.0]) == 2.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = rng.normal(size=20)
        h = rng.normal(size=20)
        assert mt.avg_regret(h, t) <= np.abs(t).max() * mt.ape(h, t) + 1e-15


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        mt.pehe([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        mt.ape([], [])


def test_permutation_and_scale_invariance():
    rng = np.random.default_rng(1)
    t = rng.normal(size=50)
    h = t + rng.normal(size=50)
    p = rng.permutation(50)
    for f in (mt.pehe, mt.ape, mt.avg_regret):
        assert f(h[p], t[p]) == pytest.approx(f(h, t), abs=1e-15)
    for c in (0.01, 3.0, 1e6):
        assert mt.ape(c * h, t) == mt.ape(h, t)
        assert mt.avg_regret(c * h, t) == mt.avg_regret(h, t)


def test_zero_regret_iff_no_mismatch_off_zero():
    rng = np.random.default_rng(2)
    for _ in range(100):
        t = rng.integers(-2, 3, 10).astype(float)
        h = rng.integers(-2, 3, 10).astype(float)
        off = t != 0
        assert (mt.avg_regret(h, t) == 0) == (mt.ape(h[off], t[off]) == 0 if off.any() else True)


def test_eval_grid_from_env():
    env = dg.univariate_env(4)
    X = np.linspace(-2, 2, 9)[:, None]
    g = mt.EvalGrid.from_env(env, X)
    assert np.array_equal(g.tau, g.mu1 - g.mu0)
    assert np.allclose(g.tau, env.tau(X), atol=1e-14)
    assert mt.pehe(env.tau(X), g) < 1e-28
    rep = mt.report(np.zeros(9), g)
    assert rep.n_eval == 9 and 0 <= rep.ape <= 1 and rep.sqrt_pehe >= 0


def test_normalized_auc():
    assert mt.normalized_auc([(0, 2.0), (10, 2.0), (30, 2.0)]) == pytest.approx(1.0, abs=1e-15)
    assert mt.normalized_auc([(50, 4.0), (150, 0.0)]) == pytest.approx(0.5, abs=1e-15)
    curve = [(0, 1.0), (10, 0.6), (30, 0.2)]
    hand = (10 * (1.0 + 0.6) / 2 + 20 * (0.6 + 0.2) / 2) / (30 * 1.0)
    assert abs(mt.normalized_auc(curve) - hand) < 1e-12
    assert mt.normalized_auc(curve, anchor=2.0) == pytest.approx(hand / 2)


def test_normalized_auc_errors():
    with pytest.raises(ValueError):
        mt.normalized_auc([(0, 1.0)])
    with pytest.raises(ValueError):
        mt.normalized_auc([(10, 1.0), (5, 0.5)])
