import math

import numpy as np
import pytest
from scipy.special import ndtr

from rdesign import _scoring_py
from rdesign import acquisition as aq
from rdesign import datagen as dg
from rdesign import gp
from rdesign import models as cm

DETERMINISTIC = [n for n in aq.NAMES if n != "Random"]


def _base():
    return cm.BaseModel(lambda X: np.sin(X[:, 0]), lambda X: np.cos(X[:, 0]) + 0.3 * X[:, -1], "toy")


def _model(rng, n=8, d=2, arch="TSR", B=None, noise=None, ls=None):
    """Residual model with hand-set hyperparameters conditioned on random data."""
    X = rng.uniform(-2, 2, (n, d))
    t = rng.integers(0, 2, n)
    y = rng.normal(size=n)
    if B is None:
        B = gp.CoregionalizationSpec.from_factors(rng.normal(size=3), rng.uniform(0.05, 0.5, 2)).B
    kern = gp.KernelSpec("RBF", tuple(rng.uniform(0.5, 2.0, d)) if ls is None else ls)
    s2 = rng.uniform(0.05, 0.5) if noise is None else noise
    g = gp.GPModel(kern, gp.CoregionalizationSpec(B), s2, X, t, y)
    base = None if arch == "PureRCT" else _base()
    return cm.CausalModel(arch, base, g, dg.CausalDataset(X, t, y, "e"))


def _prior_model(B, noise=1.0, d=1, arch="TSR"):
    g = gp.GPModel(gp.KernelSpec("RBF", (1.0,) * d), gp.CoregionalizationSpec(np.asarray(B, float)), noise)
    return cm.CausalModel(arch, None if arch == "PureRCT" else cm.BaseModel.zero(), g, dg.CausalDataset.empty(d))


# -- closed-form examples ------------------------------------------------------------


def test_repig_tau_independent_target_is_zero():
    m = _model(np.random.default_rng(0), d=1)
    assert aq.score_repig_tau(m, (np.array([0.0]), 1), [[500.0]]) == 0.0


def test_gaussian_mi_closed_form():
    assert aq.gaussian_mi(0.75) == pytest.approx(0.5 * math.log(4), abs=1e-15)
    assert aq.gaussian_mi(0.0) == 0.0
    assert math.isfinite(aq.gaussian_mi(1.0))


def test_repig_tau_single_target_closed_form():
    m = _model(np.random.default_rng(1))
    c = (np.array([0.3, -0.2]), 0)
    x = np.array([[0.1, 0.4]])
    post = cm.estimand_posterior(m, c, x, ["tau_delta"])
    rho2 = post.cov[0, 1] ** 2 / (post.cov[0, 0] * post.cov[1, 1])
    assert aq.score_repig_tau(m, c, x) == pytest.approx(-0.5 * math.log(1 - rho2), abs=1e-14)


def test_repig_mu_zero_and_block_specialisation():
    vy = np.array([2.0])
    zero = np.zeros((1, 1))
    assert _scoring_py.repig_mu(vy, zero, zero, np.ones(1), np.ones(1), np.zeros(1), 1e-10, 1 - 1e-10)[0] == 0.0
    c1 = np.array([[0.9]])
    v1 = np.array([1.5])
    got = _scoring_py.repig_mu(vy, zero, c1, np.array([0.7]), v1, np.zeros(1), 1e-10, 1 - 1e-10)[0]
    assert abs(got - aq.gaussian_mi(0.81 / (2.0 * 1.5))) < 1e-9


def test_repig_mu_dominates_repig_tau():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m = _model(rng, n=int(rng.integers(0, 10)) or 1)
        c = (rng.uniform(-2, 2, 2), int(rng.integers(2)))
        T = rng.uniform(-2, 2, (1, 2))
        assert aq.score_repig_mu(m, c, T) >= aq.score_repig_tau(m, c, T) - 1e-9


def test_repig_pi_certain_sign():
    assert aq.policy_information(10.0, 1.0, 0.5, 1.0) < 1e-10


def test_repig_pi_no_covariance():
    assert abs(aq.policy_information(0.3, 1.0, 0.0, 2.0)) <= 1e-12


def _trapezoid_policy_information(mu, var_tau, cov, var_y, n=100_001):
    sd_y = math.sqrt(var_y)
    y = np.linspace(-8 * sd_y, 8 * sd_y, n)
    dens = np.exp(-0.5 * (y / sd_y) ** 2) / (sd_y * math.sqrt(2 * math.pi))
    sd_post = math.sqrt(var_tau - cov**2 / var_y)
    p = ndtr((mu + cov / var_y * y) / sd_post)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.nan_to_num(p * np.log(p)) - np.nan_to_num((1 - p) * np.log1p(-p))
    return aq.bernoulli_entropy(float(ndtr(mu / math.sqrt(var_tau)))) - np.trapezoid(h * dens, y)


def test_repig_pi_matches_trapezoid():
    got = aq.policy_information(0.0, 1.0, 0.8, 1.0)
    assert abs(got - _trapezoid_policy_information(0.0, 1.0, 0.8, 1.0)) < 1e-6


def test_repig_pi_monotone_in_covariance():
    rng = np.random.default_rng(3)
    for _ in range(5):
        mu, vt, vy = rng.normal(), rng.uniform(0.5, 2), rng.uniform(0.5, 2)
        grid = np.linspace(0, 0.99 * math.sqrt(vt * vy), 20)
        vals = [aq.policy_information(mu, vt, c, vy) for c in grid]
        assert np.all(np.diff(vals) >= -1e-12)
        neg = [aq.policy_information(mu, vt, -c, vy) for c in grid]
        assert np.all(np.diff(neg) >= -1e-12)


def test_bald_examples():
    v = 0.7
    m = _prior_model(v * np.eye(2))
    assert aq.score_bald_family(m, (np.array([0.0]), 0), "TauBALD") == pytest.approx(2 * v)
    m = _prior_model([[1.0, 0.0], [0.0, 2.0]])
    assert aq.score_bald_family(m, (np.array([0.0]), 1), "RhoBALD") == pytest.approx(0.5 * math.log(4), abs=1e-14)
    m = _prior_model([[1.0, 0.5], [0.5, 1.0]])
    assert aq.score_bald_family(m, (np.array([0.0]), 0), "MuRhoBALD") == pytest.approx(1.0, abs=1e-14)
    assert aq.score_bald_family(m, (np.array([0.0]), 0), "MuBALD") == pytest.approx(1.0, abs=1e-14)


def test_bald_counterfactual_floor():
    m = _prior_model([[1.0, 0.0], [0.0, 0.0]])
    s = aq.score_bald_family(m, (np.array([0.0]), 0), "RhoBALD")
    assert math.isfinite(s) and s == pytest.approx(0.5 * math.log1p(1.0 / aq.VAR_FLOOR))


def test_covariance_family_examples():
    m = _prior_model([[1.0, 0.0], [0.0, 1.0]], noise=1.0)
    c = (np.array([0.0]), 1)
    assert aq.score_covariance_family(m, c, None, "Leverage") == pytest.approx(0.5, abs=1e-15)
    assert aq.score_covariance_family(m, c, None, "ACE") == 0.0
    assert aq.score_covariance_family(m, c, [[500.0]], "ABC3") == 0.0


def test_policy_examples():
    assert aq.policy_score(0.0, 1.3, "SignBALD") == 0.25
    assert aq.policy_score(0.0, 1.3, "TypeS") == 0.5
    assert aq.policy_score(3.0, 1.0, "TypeS") == pytest.approx(0.0013498980316301, abs=1e-12)
    assert aq.policy_score(2.0, 1e-200, "SignBALD") < 1e-300
    assert aq.policy_score(2.0, 0.0, "SignBALD") == 0.0
    assert aq.policy_score(-2.0, 0.0, "TypeS") == 0.0


def test_sign_bald_scale_invariance():
    rng = np.random.default_rng(4)
    for _ in range(50):
        m, s, c = rng.normal(), rng.uniform(0.1, 3), rng.uniform(0.01, 100)
        assert aq.policy_score(c * m, c * s, "SignBALD") == pytest.approx(aq.policy_score(m, s, "SignBALD"), rel=1e-12)


def test_residual_criteria_need_tsr():
    rng = np.random.default_rng(5)
    for arch in ("PureRCT", "Kallus"):
        m = _model(rng, arch=arch)
        for name in aq.RESIDUAL_CRITERIA:
            with pytest.raises(aq.AcquisitionError):
                aq.build_score_table(m, rng.uniform(-2, 2, (3, 2)), aq.AcquisitionSpec(name), rng.uniform(-2, 2, (3, 2)))


def test_spec_validation():
    with pytest.raises(aq.AcquisitionError):
        aq.AcquisitionSpec("BAIT")
    with pytest.raises(aq.AcquisitionError):
        aq.AcquisitionSpec(gh_nodes=1)
    with pytest.raises(aq.AcquisitionError):
        aq.AcquisitionSpec(rho2_max=1.0)


# -- invariants ----------------------------------------------------------------------


def test_repig_tau_equals_epig_on_the_pair():
    rng = np.random.default_rng(6)
    for _ in range(20):
        m = _model(rng)
        xc, t = tuple(rng.uniform(-2, 2, 2)), int(rng.integers(2))
        T = rng.uniform(-2, 2, (4, 2))
        mis = []
        for x in T:
            P = m.trial_gp.posterior([gp.Noisy(xc, t), gp.Contrast(tuple(x))]).cov
            mis.append(aq.gaussian_mi(P[0, 1] ** 2 / (P[0, 0] * P[1, 1])))
        assert abs(aq.score_repig_tau(m, (np.array(xc), t), T) - np.mean(mis)) < 1e-10


@pytest.mark.parametrize("name", ["REPIGTau", "REPIGMu", "REPIGPi", "EPIG", "ABC3"])
def test_targeted_scores_nonnegative_and_order_free(name):
    rng = np.random.default_rng(7)
    spec = aq.AcquisitionSpec(name)
    for _ in range(5):
        m = _model(rng)
        c = (rng.uniform(-2, 2, 2), int(rng.integers(2)))
        T = rng.uniform(-2, 2, (6, 2))
        s = aq.score_candidate(m, c, T, spec)
        assert math.isfinite(s) and s >= 0
        assert aq.score_candidate(m, c, T[::-1], spec) == pytest.approx(s, rel=1e-12, abs=1e-15)


def test_mi_clamped_at_perfect_correlation():
    # arm 0 is degenerate, so tau_delta(x) = f(x, 1) = y(x, 1) exactly
    m = _prior_model([[0.0, 0.0], [0.0, 1.0]], noise=0.0)
    s = aq.score_repig_tau(m, (np.array([0.0]), 1), [[0.0]])
    assert s == pytest.approx(0.5 * math.log(1e10), rel=1e-6)


# -- score tables --------------------------------------------------------------------


@pytest.mark.parametrize("name", DETERMINISTIC)
def test_table_matches_per_candidate_route(name):
    rng = np.random.default_rng(8)
    arch = "TSR" if name in aq.RESIDUAL_CRITERIA else "Kallus"
    m = _model(rng, n=10, arch=arch)
    pool = rng.uniform(-2, 2, (7, 2))
    T = rng.uniform(-2, 2, (5, 2))
    spec = aq.AcquisitionSpec(name)
    table = aq.build_score_table(m, pool, spec, T, rng=0)
    if name in ("SignBALD", "TypeS"):
        want = np.array([[aq.score_policy_family(m, x, name)] * 2 for x in pool])
    else:
        want = np.array([[aq.score_candidate(m, (x, a), T, spec) for a in (0, 1)] for x in pool])
    assert np.abs(table.scores - want).max() < 1e-10
    if name in aq.ARM_FREE:
        assert np.array_equal(table.scores[:, 0], table.scores[:, 1])
    else:
        assert np.array_equal(table.chosen, (table.scores[:, 1] > table.scores[:, 0]).astype(int))
    assert np.array_equal(table.max_score, table.scores[np.arange(7), table.chosen])


def test_table_ties_go_to_arm_zero():
    m = _prior_model(np.eye(2))
    table = aq.build_score_table(m, np.zeros((4, 1)), aq.AcquisitionSpec("Leverage"))
    assert np.array_equal(table.chosen, np.zeros(4, int))


def test_random_table_reproducible():
    m = _model(np.random.default_rng(9))
    pool = np.random.default_rng(1).uniform(size=(50, 2))
    spec = aq.AcquisitionSpec("Random")
    a = aq.build_score_table(m, pool, spec, rng=42)
    b = aq.build_score_table(m, pool, spec, rng=42)
    assert a.scores.tobytes() == b.scores.tobytes()
    assert a.scores.min() >= 0 and a.scores.max() < 1
    assert not np.array_equal(a.scores, aq.build_score_table(m, pool, spec, rng=43).scores)


def test_target_subsampling_bounds_cost():
    T = np.arange(40.0).reshape(20, 2)
    sub = aq.subsample_targets(T, 5, 0)
    assert sub.shape == (5, 2)
    assert all(any(np.array_equal(r, x) for x in T) for r in sub)
    assert aq.subsample_targets(T, 50, 0) is not None and len(aq.subsample_targets(T, 50, 0)) == 20


def test_empty_pool_rejected():
    with pytest.raises(aq.AcquisitionError):
        aq.build_score_table(_model(np.random.default_rng(0)), np.zeros((0, 2)), aq.AcquisitionSpec("TauBALD"))


def test_gauss_hermite_pruning_is_harmless():
    z, w = aq.gauss_hermite(96)
    keep = aq._significant_nodes(w)
    assert w[~keep].sum() <= 1e-12
    assert abs(w.sum() - 1) < 1e-13
