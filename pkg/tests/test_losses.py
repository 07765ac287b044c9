import math

import numpy as np
import pytest
from scipy import stats

from tdslab.errors import ConfigError, DimensionError
from tdslab.losses import (LossWeights, bce_from_logits, gaussian_entropy, infonce_loss, infonce_side,
                           listnet_loss, mse, pred_loss_bce, prior_loss, prior_side, recon_loss, total_loss)
from tdslab.nn import Parameter, finite_diff_check
from tdslab.trainer import compute_loss
from toy import method_config, toy_problem


def brute_prior(z):
    """(1/J) sum_j ||z_j - zbar||^2 / d, averaged over samples, one side."""
    J, n, d = z.shape
    total = 0.0
    for b in range(n):
        zbar = [sum(z[j, b, k] for j in range(J)) / J for k in range(d)]
        total += sum(sum((z[j, b, k] - zbar[k]) ** 2 for k in range(d)) / d for j in range(J)) / J
    return total / n


def _fd_value_grad(fn, x):
    p = Parameter("x", x.copy())

    def loss():
        value, grad = fn(p.value)
        p.grad[...] = grad
        return value

    return finite_diff_check(loss, [p], tol=1e-6)


# -- pointwise / listwise -------------------------------------------------

def test_bce_examples():
    assert pred_loss_bce(np.full((2, 1), 0.5), [[0], [1]])[0] == pytest.approx(math.log(2), abs=1e-12)
    assert pred_loss_bce(np.array([[1.0], [0.0]]), [[1], [0]])[0] <= 1e-6


def test_bce_gradients():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, (6, 2))
    report = _fd_value_grad(lambda p: pred_loss_bce(p, y), rng.uniform(0.05, 0.95, (6, 2)))
    assert report.passed, report.worst()
    report = _fd_value_grad(lambda x: bce_from_logits(x, y), rng.standard_normal((6, 2)))
    assert report.passed, report.worst()


def test_listnet_examples():
    n = 5
    assert listnet_loss(np.zeros(n), np.ones(n), np.zeros(n))[0] == pytest.approx(math.log(n), abs=1e-12)
    labels = np.array([1.0, 0.0, 0.0, 1.0])
    target = np.exp(labels) / np.exp(labels).sum()
    entropy = -np.sum(target * np.log(target))
    assert listnet_loss(labels + 3.7, labels, np.zeros(4))[0] == pytest.approx(entropy, abs=1e-12)


def test_listnet_skips_unqualified_sessions():
    groups = np.array([0, 1, 1, 2, 2])  # singleton, no positive, qualifying
    labels = np.array([1.0, 0.0, 0.0, 1.0, 0.0])
    loss, grad = listnet_loss(np.zeros(5), labels, groups)
    assert loss == pytest.approx(math.log(2)) and not grad[:3].any()
    assert listnet_loss(np.zeros(2), np.zeros(2), np.zeros(2)) == (0.0, pytest.approx(np.zeros(2)))


def test_listnet_gradients():
    rng = np.random.default_rng(1)
    groups = np.repeat(np.arange(3), 4)
    labels = rng.integers(0, 2, 12).astype(float)
    labels[::4] = 1

    def fn(s):
        value, grad = listnet_loss(s[0], labels, groups)
        return value, grad[None]

    report = _fd_value_grad(fn, rng.standard_normal((1, 12)))
    assert report.passed, report.worst()


# -- reconstruction / prior ------------------------------------------------

def test_recon_examples():
    e = np.random.default_rng(2).standard_normal((4, 3))
    assert recon_loss(e, e, e, e)[0] == 0.0
    assert recon_loss(e + 1, e, e, e)[0] == pytest.approx(1.0)
    r = np.random.default_rng(3).standard_normal((4, 3))
    full = recon_loss(e + r, e, e + r, e)[0]
    assert recon_loss(e + r / 2, e, e + r / 2, e)[0] == pytest.approx(full / 4, rel=1e-12)
    with pytest.raises(DimensionError):
        mse(np.zeros((2, 3)), np.zeros((3, 2)))


def test_prior_worked_examples():
    z_u = np.array([[[1.0]], [[3.0]]])  # J=2, batch 1, d=1
    assert prior_loss(z_u, np.zeros_like(z_u))[0] == 1.0
    single = np.random.default_rng(4).standard_normal((1, 5, 3))
    assert prior_loss(single, single)[0] == 0.0
    same = np.repeat(single, 4, axis=0)
    assert prior_loss(same, same)[0] == 0.0


def test_prior_matches_brute_force():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        J, n, d = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 17)
        z = rng.standard_normal((J, n, d))
        worst = max(worst, abs(prior_side(z)[0] - brute_prior(z)))
    assert worst <= 1e-12


def test_prior_gradient_detached_equals_full():
    # the gradient with zbar held constant equals the full gradient of the
    # undetached expression, which finite differences measure
    z = np.random.default_rng(6).standard_normal((3, 4, 2))

    def fn(x):
        value, grad = prior_side(x.reshape(3, 4, 2))
        return value, grad.reshape(12, 2)

    report = _fd_value_grad(fn, z.reshape(12, 2))
    assert report.passed, report.worst()


# -- InfoNCE ----------------------------------------------------------------

def test_infonce_uniform_similarity_is_log_k_plus_one():
    n = 6  # k = 5 negatives
    anchor = np.tile([1.0, 0.0], (n, 1))
    views = np.tile([0.0, 1.0], (2, n, 1))  # every cosine is 0
    assert infonce_side(anchor, views, 0.1)[0] == pytest.approx(math.log(n), abs=1e-12)
    both = infonce_loss(anchor, views, anchor, views, 0.1)[0]
    assert both == pytest.approx(2 * math.log(n), abs=1e-12)


def test_infonce_saturates():
    anchor = np.array([[1.0, 0.0], [-1.0, 0.0]])
    views = anchor[None]  # positive cosine 1, negative cosine -1
    assert infonce_side(anchor, views, 0.05)[0] <= 0.01


def test_infonce_needs_two_samples():
    with pytest.raises(ConfigError):
        infonce_side(np.ones((1, 3)), np.ones((2, 1, 3)), 0.1)
    with pytest.raises(DimensionError):
        infonce_side(np.ones((3, 3)), np.ones((2, 4, 3)), 0.1)


def test_infonce_gradients():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = Parameter("a", rng.standard_normal((4, 3)))
        v = Parameter("v", rng.standard_normal((2 * 4, 3)))

        def loss():
            value, ga, gv = infonce_side(a.value, v.value.reshape(2, 4, 3), 0.5)
            a.grad[...] = ga
            v.grad[...] = gv.reshape(8, 3)
            return value

        report = finite_diff_check(loss, [a, v], tol=1e-4)
        assert report.passed, report.worst()


# -- assembly ----------------------------------------------------------------

def test_total_loss_arithmetic():
    assert total_loss(0.5, 0.2, 0.3, LossWeights(alpha=1.0)) == pytest.approx(1.0)
    assert total_loss(0.5, 0.2, 0.3, LossWeights(alpha=0.0)) == 0.5
    assert total_loss(0.5, 0.2, 0.3, LossWeights(alpha=0.0, listwise_enabled=True), listnet=0.25) == 0.75
    assert total_loss(0.5, 0.2, 0.3, LossWeights(alpha=0.0), listnet=0.25) == 0.5


def test_weights_validated():
    with pytest.raises(ConfigError):
        LossWeights(alpha=-1)
    with pytest.raises(ConfigError):
        LossWeights(tau=0)


def test_gaussian_entropy_matches_scipy():
    for d in (1, 4, 9):
        ref = stats.multivariate_normal(np.zeros(d), np.eye(d)).entropy()
        assert gaussian_entropy(d) == pytest.approx(ref, abs=1e-12)


def entropy_cancellation_gap(seed):
    """Max abs gradient difference between the objective with and without the
    Gaussian entropy of q(z|x) = N(mu, I), computed independently of the
    package from the live encoder means."""
    _, batch, model = toy_problem(seed)
    config = method_config("elbo_tds", seed=seed)
    compute_loss(model, batch, config, np.random.default_rng(seed))
    without = [p.grad.copy() for p in model.parameters()]

    def entropy():
        total = 0.0
        for side in ("user", "item"):
            _, mu, _ = model.encode(side, batch)
            total += sum(stats.multivariate_normal(m, np.eye(len(m))).entropy() for m in mu)
        return total

    model.zero_grad()
    compute_loss(model, batch, config, np.random.default_rng(seed))
    gap = 0.0  # objective with entropy is total - H
    for p, g0 in zip(model.parameters(), without):
        extra = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + 1e-4
            up = entropy()
            flat[k] = old - 1e-4
            down = entropy()
            flat[k] = old
            extra.reshape(-1)[k] = (up - down) / 2e-4
        gap = max(gap, float(np.max(np.abs(p.grad - extra - g0))))
    return gap


def test_entropy_constant_changes_no_gradient():
    for seed in range(3):
        assert entropy_cancellation_gap(seed) == 0.0
