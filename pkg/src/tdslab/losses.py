"""Objective terms. Every function returns the scalar loss followed by the
gradient(s) with respect to its array inputs."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.001
    tau: float = 0.1
    listwise_enabled: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")


def pred_loss_bce(probs, labels):
    """Mean binary cross-entropy over batch and tasks; returns (loss, d_probs)."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(probs.shape)
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = p.size
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / n
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    grad = np.where(inside, -(y / p - (1.0 - y) / (1.0 - p)) / n, 0.0)
    return float(loss), grad


def bce_from_logits(logits, labels):
    """BCE of sigmoid(logits) with the same clamping; returns (loss, d_logits)."""
    from .nn import sigmoid

    p = sigmoid(logits)
    loss, dp = pred_loss_bce(p, labels)
    return loss, dp * p * (1.0 - p)


def _softmax(x):
    x = x - x.max()
    e = np.exp(x)
    return e / e.sum()


def listnet_loss(scores, labels, groups):
    """ListNet top-1 cross entropy, averaged over sessions with >= 2 items and
    at least one positive label. Returns (loss, d_scores)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    groups = np.asarray(groups).reshape(-1)
    grad = np.zeros_like(scores)
    total = 0.0
    used = []
    for g in np.unique(groups):
        sel = np.flatnonzero(groups == g)
        if len(sel) < 2 or labels[sel].max() <= 0:
            continue
        target = _softmax(labels[sel])
        s = scores[sel] - scores[sel].max()
        log_q = s - np.log(np.exp(s).sum())
        total += -np.sum(target * log_q)
        used.append((sel, target, np.exp(log_q)))
    if not used:
        return 0.0, grad
    for sel, target, q in used:
        grad[sel] = (q - target) / len(used)
    return float(total / len(used)), grad


def mse(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred`` (target held constant)."""
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


def recon_loss(xhat_u, e_u, xhat_i, e_i):
    """Per-side MSE (over samples, views, coordinates) summed over sides."""
    lu, gu = mse(xhat_u, e_u)
    li, gi = mse(xhat_i, e_i)
    return lu + li, gu, gi


def prior_side(z):
    """Views ``z`` of shape (J, batch, d): mean squared deviation from the
    per-sample view mean. The mean is treated as a constant; the gradient is
    the same either way because deviations from the mean sum to zero."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise DimensionError("views must have shape (J, batch, d)")
    zbar = z.mean(axis=0, keepdims=True)
    return mse(z, np.broadcast_to(zbar, z.shape))


def prior_loss(z_u, z_i):
    lu, gu = prior_side(z_u)
    li, gi = prior_side(z_i)
    return lu + li, gu, gi


def _normalize(x):
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    norm = np.maximum(norm, 1e-12)
    return x / norm, norm


def _normalize_backward(xhat, norm, grad_hat):
    return (grad_hat - np.sum(grad_hat * xhat, axis=-1, keepdims=True) * xhat) / norm


def infonce_side(anchor, views, tau):
    """In-batch InfoNCE with cosine similarity.

    ``anchor`` (B, d) are base-sample latents, ``views`` (J, B, d) augmented
    latents. For anchor b and view j the positive is views[j, b]; negatives are
    views[j, c] for c != b. Mean over anchors and views.
    Returns (loss, d_anchor, d_views).
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    views = np.asarray(views, dtype=np.float64)
    if views.ndim == 2:
        views = views[None]
    n = anchor.shape[0]
    if n < 2:
        raise ConfigError("InfoNCE needs a batch of at least 2 for in-batch negatives")
    if views.shape[1:] != anchor.shape:
        raise DimensionError("views must have shape (J, batch, d) matching the anchors")
    J = views.shape[0]
    a_hat, a_norm = _normalize(anchor)
    v_hat, v_norm = _normalize(views)
    total = 0.0
    d_a_hat = np.zeros_like(a_hat)
    d_v_hat = np.zeros_like(v_hat)
    idx = np.arange(n)
    for j in range(J):
        logits = a_hat @ v_hat[j].T / tau
        logits = logits - logits.max(axis=1, keepdims=True)
        log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        total += -log_p[idx, idx].sum()
        d_logits = np.exp(log_p)
        d_logits[idx, idx] -= 1.0
        d_logits /= n * J * tau
        d_a_hat += d_logits @ v_hat[j]
        d_v_hat[j] = d_logits.T @ a_hat
    loss = total / (n * J)
    return float(loss), _normalize_backward(a_hat, a_norm, d_a_hat), _normalize_backward(v_hat, v_norm, d_v_hat)


def infonce_loss(anchor_u, views_u, anchor_i, views_i, tau=0.1):
    lu, gau, gvu = infonce_side(anchor_u, views_u, tau)
    li, gai, gvi = infonce_side(anchor_i, views_i, tau)
    return lu + li, (gau, gvu), (gai, gvi)


def gaussian_entropy(d, n=1):
    """Entropy of n independent N(mu, I_d) posteriors; independent of mu."""
    return n * 0.5 * d * (1.0 + math.log(2.0 * math.pi))


def total_loss(pred, recon, prior, weights, listnet=0.0):
    """pred (+ listnet when enabled) + alpha * (recon + prior)."""
    value = pred + weights.alpha * (recon + prior)
    if weights.listwise_enabled:
        value += listnet
    return value
