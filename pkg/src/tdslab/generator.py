"""Span-partitioned synthetic interactions from a causal graph.

Stable factors s (per user / item, drawn once) and time-varying factors v
(AR(1) across spans) mix linearly into latents z = s A + v B. Observed
features are generated from them:

* statistical: offset + scale * (z . w_k) + noise, per record;
* categorical: prototype cluster of s, flipped with probability growing with
  |v| to a category drawn from a slowly drifting global popularity;
* sequential: L ids drawn without replacement from softmax(s . s_other / T(t))
  with a drifting temperature T(t).

Labels: y ~ Bernoulli(sigmoid(z_u . z_i / sqrt(d_z) + beta * v_u . v_i + b0)),
where the beta term is a spurious time-varying pathway and b0 is set by
bisection so the span-0 positive rate matches ``target_rate``.

Every random draw comes from a substream keyed by (seed, purpose, span, ...),
so spans never depend on how many spans are generated after them.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Manifest, SpanDataset, default_schema, write_manifest, write_span
from .errors import ConfigError, SpanIOError
from .nn import sigmoid

_STRUCT, _V0, _EVOLVE, _GLOBAL, _ENTITY, _EMIT, _PAIRS = range(1, 8)


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 1000
    n_items: int = 500
    interactions_per_user: int = 20
    n_spans: int = 8
    d_s: int = 8
    d_v: int = 4
    d_z: int = 8
    rho: float = 0.6
    beta: float = 0.5
    shock_span: int = None
    shock_scale: float = 1.0
    seed: int = 0
    # feature layout
    n_stat: int = 3
    n_seq: int = 1
    n_cate: int = 3
    n_buckets: int = 10
    seq_len: int = 8
    cate_vocab: int = 8
    # emission knobs
    v_weight: float = 1.0
    stat_scale: float = 1.5
    stat_noise: float = 0.5
    flip_rate: float = 0.3
    temperature: float = 1.0
    temp_drift: float = 0.1
    pop_drift: float = 0.3
    stat_drift: float = 0.0
    label_scale: float = 1.0
    target_rate: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.shock_span is not None and not 0 <= self.shock_span < self.n_spans:
            raise ConfigError("shock_span must be < n_spans")
        if self.shock_scale < 1.0:
            raise ConfigError("shock_scale must be >= 1")
        if min(self.n_users, self.n_items, self.n_spans, self.interactions_per_user) < 1:
            raise ConfigError("counts must be positive")
        if self.interactions_per_user > self.n_items:
            raise ConfigError("interactions_per_user cannot exceed n_items")
        if not 0.0 < self.target_rate < 1.0:
            raise ConfigError("target_rate must lie in (0, 1)")

    @property
    def schema(self):
        return default_schema(self.n_users, self.n_items, self.n_stat, self.n_seq, self.n_cate,
                              self.n_buckets, self.seq_len, self.cate_vocab)

    def echo(self):
        return {k: ("none" if v is None else v) for k, v in self.__dict__.items()}


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in key]]))


@dataclass
class StableFactors:
    s_user: np.ndarray
    s_item: np.ndarray


@dataclass
class VaryingFactors:
    v_user: np.ndarray
    v_item: np.ndarray
    span: int = 0


@dataclass
class Structure:
    """Everything drawn once per seed: stable factors and fixed maps."""

    stable: StableFactors
    A: dict
    B: dict
    stat_w: dict  # feature name -> (d_z,)
    prototypes: dict  # cate feature name -> (vocab, d_s)
    bias: float = 0.0


@dataclass
class GlobalState:
    """Slowly drifting population-level state of one span."""

    span: int
    log_temp: float
    popularity: dict = field(default_factory=dict)  # cate feature -> (vocab,) logits
    stat_offset: dict = field(default_factory=dict)  # stat feature -> scalar shift


def draw_structure(config):
    rng = _rng(config.seed, _STRUCT)
    stable = StableFactors(rng.standard_normal((config.n_users, config.d_s)),
                           rng.standard_normal((config.n_items, config.d_s)))
    A = {side: rng.normal(0, 1 / np.sqrt(config.d_s), (config.d_s, config.d_z)) for side in ("user", "item")}
    B = {side: rng.normal(0, config.v_weight / np.sqrt(config.d_v), (config.d_v, config.d_z))
         for side in ("user", "item")}
    schema = config.schema
    stat_w = {}
    for f in schema.stat:
        w = rng.standard_normal(config.d_z)
        stat_w[f.name] = w / np.linalg.norm(w)
    prototypes = {f.name: rng.standard_normal((f.vocab_size, config.d_s)) for f in schema.cate}
    return Structure(stable, A, B, stat_w, prototypes)


def initial_varying(config):
    rng = _rng(config.seed, _V0)
    return VaryingFactors(rng.standard_normal((config.n_users, config.d_v)),
                          rng.standard_normal((config.n_items, config.d_v)), 0)


def evolve_varying_factors(prev, rho, rng):
    """AR(1): v(t+1) = rho v(t) + sqrt(1 - rho^2) eta."""
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    k = np.sqrt(1.0 - rho * rho)
    return VaryingFactors(rho * prev.v_user + k * rng.standard_normal(prev.v_user.shape),
                          rho * prev.v_item + k * rng.standard_normal(prev.v_item.shape),
                          prev.span + 1)


def initial_global(config):
    schema = config.schema
    return GlobalState(0, 0.0, {f.name: np.zeros(f.vocab_size) for f in schema.cate},
                       {f.name: 0.0 for f in schema.stat})


def evolve_global(prev, config):
    # drift shares the persistence knob: rho = 1 freezes the population state too
    k = np.sqrt(1.0 - config.rho * config.rho)
    rng = _rng(config.seed, _GLOBAL, prev.span + 1)
    pop = {name: v + k * config.pop_drift * rng.standard_normal(v.shape)
           for name, v in sorted(prev.popularity.items())}
    log_temp = prev.log_temp + k * config.temp_drift * rng.standard_normal()
    offsets = {name: v + k * config.stat_drift * rng.standard_normal()
               for name, v in sorted(prev.stat_offset.items())}
    return GlobalState(prev.span + 1, log_temp, pop, offsets)


def factor_chain(config, n_spans=None):
    """Yield (VaryingFactors, GlobalState) for spans 0..n_spans-1."""
    n_spans = config.n_spans if n_spans is None else n_spans
    v = initial_varying(config)
    g = initial_global(config)
    for t in range(n_spans):
        if t > 0:
            v = evolve_varying_factors(v, config.rho, _rng(config.seed, _EVOLVE, t))
            g = evolve_global(g, config)
        yield v, g


def emitted_varying(varying, config):
    """The v actually used at emission; multiplied at the shock span."""
    if config.shock_span is not None and varying.span == config.shock_span:
        return VaryingFactors(varying.v_user * config.shock_scale, varying.v_item * config.shock_scale,
                              varying.span)
    return varying


def latents(structure, side, ids, v):
    s = structure.stable.s_user if side == "user" else structure.stable.s_item
    return s[ids] @ structure.A[side] + v[ids] @ structure.B[side]


def label_logits(structure, config, users, items, varying):
    zu = latents(structure, "user", users, varying.v_user)
    zi = latents(structure, "item", items, varying.v_item)
    dot = np.sum(zu * zi, axis=1) * config.label_scale / np.sqrt(config.d_z)
    spur = config.beta * np.sum(varying.v_user[users] * varying.v_item[items], axis=1)
    return dot + spur


def entity_features(structure, config, side, ids, varying, gstate, rng):
    """Per-(entity, span) categorical and sequential features for ``ids``."""
    schema = config.schema
    s_all = structure.stable.s_user if side == "user" else structure.stable.s_item
    s_other = structure.stable.s_item if side == "user" else structure.stable.s_user
    v = varying.v_user if side == "user" else varying.v_item
    s = s_all[ids]
    vnorm = np.linalg.norm(v[ids], axis=1) / np.sqrt(config.d_v)
    out = {}
    for f in schema.cate:
        if f.side != side:
            continue
        base = np.argmax(s @ structure.prototypes[f.name].T, axis=1) + 1
        p_flip = np.minimum(1.0, config.flip_rate * vnorm)
        flip = rng.random(len(ids)) < p_flip
        pop = gstate.popularity[f.name]
        pop = np.exp(pop - pop.max())
        dest = rng.choice(f.vocab_size, size=len(ids), p=pop / pop.sum()) + 1
        out[f.name] = np.where(flip, dest, base)
    temp = config.temperature * np.exp(gstate.log_temp)
    for f in schema.seq:
        if f.side != side:
            continue
        logits = (s @ s_other.T) / (temp * np.sqrt(config.d_s))
        gumbel = -np.log(-np.log(rng.random(logits.shape)))
        top = np.argsort(-(logits + gumbel), axis=1, kind="stable")[:, :f.max_len]
        out[f.name] = top + 1
    return out


def record_stat_features(structure, config, side, ids, v, rng, gstate=None):
    schema = config.schema
    z = latents(structure, side, ids, v)
    out = {}
    for f in schema.stat:
        if f.side != side:
            continue
        mid = 0.5 * (f.lo + f.hi)
        if gstate is not None:
            mid += gstate.stat_offset.get(f.name, 0.0)
        out[f.name] = mid + config.stat_scale * (z @ structure.stat_w[f.name]) + config.stat_noise * rng.standard_normal(len(ids))
    return out


def sample_pairs(config, span):
    rng = _rng(config.seed, _PAIRS, span)
    keys = rng.random((config.n_users, config.n_items))
    items = np.argsort(keys, axis=1, kind="stable")[:, :config.interactions_per_user]
    items = np.sort(items, axis=1)
    users = np.repeat(np.arange(config.n_users), config.interactions_per_user)
    return users, items.reshape(-1)


def calibrate_bias(structure, config, varying0, tol=1e-10, max_iter=200):
    """Bisection on the label offset so span-0 mean click probability hits target_rate."""
    users, items = sample_pairs(config, 0)
    base = label_logits(structure, config, users, items, emitted_varying(varying0, config))
    lo, hi = -30.0, 30.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        rate = sigmoid(base + mid).mean()
        if rate < config.target_rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def emit_span(structure, config, varying, gstate):
    """All records of one span."""
    t = varying.span
    v = emitted_varying(varying, config)
    users, items = sample_pairs(config, t)
    schema = config.schema
    ent_rng = _rng(config.seed, _ENTITY, t)
    uids = np.arange(config.n_users)
    iids = np.arange(config.n_items)
    ufeat = entity_features(structure, config, "user", uids, v, gstate, ent_rng)
    ifeat = entity_features(structure, config, "item", iids, v, gstate, ent_rng)
    rec_rng = _rng(config.seed, _EMIT, t)
    feats = {}
    feats.update(record_stat_features(structure, config, "user", users, v.v_user, rec_rng, gstate))
    feats.update(record_stat_features(structure, config, "item", items, v.v_item, rec_rng, gstate))
    for f in list(schema.cate) + list(schema.seq):
        src, ids = (ufeat, users) if f.side == "user" else (ifeat, items)
        feats[f.name] = src[f.name][ids]
    logits = label_logits(structure, config, users, items, v) + structure.bias
    y = (rec_rng.random(len(users)) < sigmoid(logits)).astype(np.int64)
    group = t * config.n_users + users
    return SpanDataset(t, users.astype(np.int64), items.astype(np.int64), group.astype(np.int64),
                       y.reshape(-1, 1), feats)


def emit_sample(user, item, span, structure, varying, gstate, config, rng):
    """One raw record for (user, item) at ``span``; deterministic given ``rng``."""
    v = emitted_varying(varying, config)
    u = np.array([user])
    i = np.array([item])
    rec = {}
    rec.update(entity_features(structure, config, "user", u, v, gstate, rng))
    rec.update(entity_features(structure, config, "item", i, v, gstate, rng))
    rec.update(record_stat_features(structure, config, "user", u, v.v_user, rng, gstate))
    rec.update(record_stat_features(structure, config, "item", i, v.v_item, rng, gstate))
    logit = label_logits(structure, config, u, i, v) + structure.bias
    rec = {k: val[0] for k, val in rec.items()}
    rec["label"] = int(rng.random() < sigmoid(logit)[0])
    rec.update(user=int(user), item=int(item), span=int(span))
    return rec


def iter_spans(config, n_spans=None):
    """Yield SpanDataset for each span in order (in memory)."""
    structure = draw_structure(config)
    chain = factor_chain(config, n_spans)
    for t, (v, g) in enumerate(chain):
        if t == 0:
            structure.bias = calibrate_bias(structure, config, v)
        yield emit_span(structure, config, v, g)


def generate_dataset(config, out_dir):
    """Write ``manifest.txt`` and one span file per span; returns the Manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schema = config.schema
    files = []
    for span in iter_spans(config):
        name = f"span_{span.span:03d}.txt"
        try:
            write_span(out / name, span, schema)
        except OSError as exc:
            raise SpanIOError(f"span {span.span}: {exc}") from exc
        files.append(name)
    manifest = Manifest(schema, files, config.seed, config.echo(), out)
    write_manifest(out / "manifest.txt", manifest)
    return manifest


def config_from_echo(echo):
    """Rebuild a GeneratorConfig from a manifest config echo (string values)."""
    base = GeneratorConfig()
    kwargs = {}
    for k, v in echo.items():
        if not hasattr(base, k):
            continue
        cur = getattr(base, k)
        if v == "none":
            kwargs[k] = None
        elif isinstance(cur, bool):
            kwargs[k] = v in ("True", "true", "1")
        elif isinstance(cur, int) or k == "shock_span":
            kwargs[k] = int(v)
        else:
            kwargs[k] = float(v)
    return replace(base, **kwargs)
