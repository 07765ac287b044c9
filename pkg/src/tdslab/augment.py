"""Feature-type-specific augmentations producing J views per mini-batch.

Each view draws, per sample, a random subset of ceil(p * F) feature columns;
only those columns are perturbed:

* statistical (bucketized) columns: bucket shifted by a uniform integer in
  [-r, r], clamped to [1, n_buckets];
* sequential columns: each present id replaced by 0 with probability p_seq;
* categorical columns: embedding zeroed with probability p_cate.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_VIEW_STREAM = 0xA5


@dataclass(frozen=True)
class AugmentConfig:
    p: float = 0.2
    r: int = 2
    p_seq: float = 0.2
    p_cate: float = 0.2
    J: int = 4
    seed: int = 0

    def __post_init__(self):
        for name in ("p", "p_seq", "p_cate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.r < 0:
            raise ConfigError("r must be >= 0")
        if self.J < 1:
            raise ConfigError("J must be >= 1")


@dataclass
class AugmentedViews:
    views: list
    eligible: list  # per view: (batch, F) bool, columns in schema.features() order

    def __len__(self):
        return len(self.views)


def perturb_bucket(bucket, r, b_max, rng):
    if bucket == 0:
        return 0
    eps = int(rng.integers(-r, r + 1))
    return min(max(bucket + eps, 1), b_max)


def perturb_buckets(buckets, r, b_max, rng):
    """Vectorized ``perturb_bucket``; absent entries (0) are left alone."""
    buckets = np.asarray(buckets, dtype=np.int64)
    eps = rng.integers(-r, r + 1, size=buckets.shape)
    out = np.clip(buckets + eps, 1, b_max)
    return np.where(buckets == 0, 0, out)


def mask_sequence(seq, p_seq, rng):
    seq = np.asarray(seq, dtype=np.int64)
    hit = rng.random(seq.shape) < p_seq
    return np.where(hit, 0, seq)


def categorical_drop_mask(n_features, p_cate, rng):
    return rng.random(n_features) < p_cate


def n_eligible(n_features, p):
    return min(n_features, math.ceil(p * n_features - 1e-12))


def select_perturbed_features(schema, p, rng, n_samples=None):
    """Uniform random subset of ceil(p*F) of the F feature columns.

    Returns a (F,) mask, or (n_samples, F) with an independent subset per row.
    """
    n_features = len(schema.features())
    k = n_eligible(n_features, p)
    rows = 1 if n_samples is None else n_samples
    keys = rng.random((rows, n_features))
    ranks = np.argsort(np.argsort(keys, axis=1, kind="stable"), axis=1, kind="stable")
    mask = ranks < k
    return mask[0] if n_samples is None else mask


def view_rng(seed, span, batch_index, view):
    return np.random.default_rng(np.random.SeedSequence([int(seed), _VIEW_STREAM, int(span), int(batch_index), int(view)]))


def make_view(batch, schema, config, rng):
    n = len(batch)
    eligible = select_perturbed_features(schema, config.p, rng, n_samples=n)
    col = {f.name: k for k, f in enumerate(schema.features())}
    feats = dict(batch.features)
    drop = dict(batch.drop)
    for f in schema.stat:
        elig = eligible[:, col[f.name]]
        moved = perturb_buckets(feats[f.name], config.r, f.n_buckets, rng)
        feats[f.name] = np.where(elig, moved, feats[f.name])
    for f in schema.seq:
        elig = eligible[:, col[f.name]]
        masked = mask_sequence(feats[f.name], config.p_seq, rng)
        feats[f.name] = np.where(elig[:, None], masked, feats[f.name])
    for f in schema.cate:
        elig = eligible[:, col[f.name]]
        hit = categorical_drop_mask(n, config.p_cate, rng) & elig
        prev = drop.get(f.name)
        drop[f.name] = hit if prev is None else (prev | hit)
    return batch.replace_features(feats, drop), eligible


def make_views(batch, schema, config):
    """J independent views; deterministic in (seed, span, batch index, view index)."""
    if config.J < 1:
        raise ConfigError("J must be >= 1")
    span = int(batch.span[0]) if len(batch) else 0
    views, eligible = [], []
    for j in range(config.J):
        v, e = make_view(batch, schema, config, view_rng(config.seed, span, batch.index, j))
        views.append(v)
        eligible.append(e)
    return AugmentedViews(views, eligible)
