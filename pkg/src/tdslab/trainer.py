"""Single-pass incremental training over chronological spans.

Four objectives share every component except loss assembly:

``erm``       BCE on the base batch.
``aug``       BCE averaged over the base batch and its J augmented views.
``infonce``   BCE on the base batch + alpha * InfoNCE between base and view means.
``elbo_tds``  BCE on the base batch (predicting from means) + alpha * (recon + prior)
              on the J views with z = mu + eps.
"""
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, make_views
from .checkpoint import read_checkpoint, write_checkpoint
from .dataset import SIDES, SampleBatch, batch_order, take_batch
from .errors import ConfigError, FormatError, NumericError
from .losses import (LossWeights, bce_from_logits, infonce_side, listnet_loss, mse, prior_side,
                     total_loss)
from .metrics import collapse_probe, ranking_report
from .model import TowerConfig, TwinTower
from .nn import Adam

METHODS = ("erm", "aug", "infonce", "elbo_tds")
_RUN_STREAM = 0x5EED
_NOISE_STREAM = 0x0E5


@dataclass(frozen=True)
class TrainConfig:
    method: str = "elbo_tds"
    batch_size: int = 256
    augment: AugmentConfig = AugmentConfig()
    weights: LossWeights = LossWeights()
    lr: float = 3e-3
    seed: int = 0
    eval_every_span: bool = True
    tower: TowerConfig = TowerConfig()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.method == "infonce" and self.batch_size < 2:
            raise ConfigError("infonce needs batch_size >= 2 for in-batch negatives")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tower = {k: tuple(v) if isinstance(v, list) else v for k, v in d.pop("tower", {}).items()}
        return cls(augment=AugmentConfig(**d.pop("augment", {})),
                   weights=LossWeights(**d.pop("weights", {})),
                   tower=TowerConfig(**tower), **d)


def concat_batches(batches):
    """Stack several SampleBatches row-wise (views are stacked view-major)."""
    feats = {k: np.concatenate([b.features[k] for b in batches]) for k in batches[0].features}
    drop_keys = set().union(*(b.drop.keys() for b in batches))
    drop = {}
    for k in sorted(drop_keys):
        drop[k] = np.concatenate([b.drop.get(k, np.zeros(len(b), dtype=bool)) for b in batches])
    return SampleBatch(
        features=feats,
        labels=np.concatenate([b.labels for b in batches]),
        group=np.concatenate([b.group for b in batches]),
        span=np.concatenate([b.span for b in batches]),
        rows=np.concatenate([b.rows for b in batches]),
        drop=drop,
        index=batches[0].index,
    )


def _pred_terms(model, mu_u, mu_i, labels, groups, weights):
    """Predictive loss (BCE, plus ListNet when enabled) and d_logits."""
    logits = model.logits(mu_u, mu_i)
    pred, d_logits = bce_from_logits(logits, labels)
    listnet = 0.0
    if weights.listwise_enabled:
        listnet, d_scores = listnet_loss(logits[:, 0], labels[:, 0], groups)
        d_logits = d_logits.copy()
        d_logits[:, 0] += d_scores
    return pred, listnet, d_logits


def compute_loss(model, batch, config, noise_rng, views=None, recon_targets=None):
    """Forward + backward for one batch; accumulates into parameter grads.

    Returns a dict of loss components including ``total``. ``recon_targets``
    is an optional dict: the first call stores the (gradient-detached)
    reconstruction targets per side, later calls reuse them. Finite-difference
    checks need this to hold the targets fixed the way backward does.
    """
    w = config.weights
    method = config.method
    out = {"pred": 0.0, "listnet": 0.0, "recon": 0.0, "prior": 0.0, "infonce": 0.0}
    if method != "erm" and views is None:
        aug = replace(config.augment, seed=config.seed)
        views = make_views(batch, model.schema, aug).views

    if method == "aug":
        stacked = concat_batches([batch, *views])
        _, mu_u, cu = model.encode("user", stacked)
        _, mu_i, ci = model.encode("item", stacked)
        pred, listnet, d_logits = _pred_terms(model, mu_u, mu_i, stacked.labels, stacked.group, w)
        d_mu_u, d_mu_i = model.logits_backward(mu_u, mu_i, d_logits)
        model.encode_backward("user", cu, d_mu_u)
        model.encode_backward("item", ci, d_mu_i)
        out.update(pred=pred, listnet=listnet)
        out["total"] = total_loss(pred, 0.0, 0.0, replace(w, alpha=0.0), listnet)
        return out

    # base sample: prediction always uses deterministic means
    _, mu_u, cu = model.encode("user", batch)
    _, mu_i, ci = model.encode("item", batch)
    pred, listnet, d_logits = _pred_terms(model, mu_u, mu_i, batch.labels, batch.group, w)
    d_mu_u, d_mu_i = model.logits_backward(mu_u, mu_i, d_logits)
    out.update(pred=pred, listnet=listnet)

    if method == "erm":
        model.encode_backward("user", cu, d_mu_u)
        model.encode_backward("item", ci, d_mu_i)
        out["total"] = total_loss(pred, 0.0, 0.0, replace(w, alpha=0.0), listnet)
        return out

    J = len(views)
    n = len(batch)
    stacked = concat_batches(views)
    base_mu = {"user": mu_u, "item": mu_i}
    base_grad = {"user": d_mu_u, "item": d_mu_i}
    if method == "infonce":
        nce = 0.0
        for side in SIDES:
            _, mu_v, cv = model.encode(side, stacked)
            loss, d_anchor, d_views = infonce_side(base_mu[side], mu_v.reshape(J, n, -1), w.tau)
            nce += loss
            base_grad[side] = base_grad[side] + w.alpha * d_anchor
            model.encode_backward(side, cv, w.alpha * d_views.reshape(J * n, -1))
        out["infonce"] = nce
        out["total"] = pred + (listnet if w.listwise_enabled else 0.0) + w.alpha * nce
    else:  # elbo_tds
        recon = prior = 0.0
        for side in SIDES:
            e_v, mu_v, cv = model.encode(side, stacked)
            if recon_targets is not None:
                e_v = recon_targets.setdefault(side, e_v.copy())
            z, _ = model.sample_latent(mu_v, noise_rng)
            xhat, dec_cache = model.decode(side, z)
            l_rec, d_xhat = mse(xhat, e_v)  # target e_v is a constant
            l_pri, d_zp = prior_side(z.reshape(J, n, -1))
            recon += l_rec
            prior += l_pri
            d_z = model.decode_backward(side, dec_cache, w.alpha * d_xhat)
            d_z += w.alpha * d_zp.reshape(J * n, -1)
            model.encode_backward(side, cv, d_z)
        out.update(recon=recon, prior=prior)
        out["total"] = total_loss(pred, recon, prior, w, listnet)
    model.encode_backward("user", cu, base_grad["user"])
    model.encode_backward("item", ci, base_grad["item"])
    return out


def evaluate(model, span, schema, chunk=8192):
    """AUC / GAUC per task of ``model`` on every record of ``span``."""
    indexed = span.index_form(schema)
    n = len(span)
    scores = []
    for a in range(0, n, chunk):
        rows = np.arange(a, min(n, a + chunk))
        scores.append(model.predict_logits(take_batch(span, indexed, rows)))
    scores = np.concatenate(scores) if scores else np.zeros((0, schema.n_tasks))
    return ranking_report(scores, span.labels, span.group)


def collapse_diagnostics(model, span, schema, augment, n_samples=2000, seed=0):
    """View variance of latent means across augmented views and held-out
    linear-probe error reconstructing the base embedded input."""
    indexed = span.index_form(schema)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(span), size=min(n_samples, len(span)), replace=False))
    batch = take_batch(span, indexed, rows)
    views = make_views(batch, schema, replace(augment, seed=seed, J=max(2, augment.J))).views
    vv, pe = 0.0, 0.0
    for side in SIDES:
        e, _, _ = model.encode(side, batch)
        z = np.stack([model.encode(side, v)[1] for v in views])
        v_side, p_side = collapse_probe(z, e)
        vv += v_side
        pe += p_side
    return vv, pe


class RunLog:
    """Append-only list of metric records, serialized as NDJSON."""

    def __init__(self, path=None):
        self.records = []
        self.path = Path(path) if path else None

    def append(self, **record):
        self.records.append(record)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def values(self, metric, method=None):
        return {r["span"]: r["value"] for r in self.records
                if r["metric"] == metric and (method is None or r["method"] == method)}

    @staticmethod
    def read(path):
        log = RunLog()
        log.records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return log


class Trainer:
    def __init__(self, schema, config):
        self.schema = schema
        self.config = config
        self.model = TwinTower(schema, config.tower, seed=config.seed)
        self.optimizer = Adam(self.model.parameters(), lr=config.lr)
        self.rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), _RUN_STREAM]))
        self.trained_spans = []
        self.steps = 0
        self.visits = {}

    # -- one step ------------------------------------------------------------
    def train_step(self, batch, noise_rng):
        self.optimizer.zero_grad()
        comps = compute_loss(self.model, batch, self.config, noise_rng)
        if not np.isfinite(comps["total"]):
            raise NumericError(f"non-finite loss at step {self.steps}")
        for p in self.optimizer.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {p.name} at step {self.steps}")
        self.optimizer.step()
        self.steps += 1
        return comps

    def train_span(self, span):
        """Exactly one pass over ``span``; returns mean loss components."""
        span_seed = int(self.rng.integers(0, 2**63 - 1))
        indexed = span.index_form(self.schema)
        visits = np.zeros(len(span), dtype=np.int64)
        order = batch_order(span.group, self.config.batch_size, span_seed, self.config.weights.listwise_enabled)
        totals = {}
        for k, rows in enumerate(order):
            if np.any(visits[rows]):
                raise RuntimeError("record revisited within a span")
            visits[rows] += 1
            batch = take_batch(span, indexed, rows, index=k)
            noise_rng = np.random.default_rng(np.random.SeedSequence([span_seed, _NOISE_STREAM, k]))
            comps = self.train_step(batch, noise_rng)
            for name, v in comps.items():
                totals[name] = totals.get(name, 0.0) + v * len(rows)
        self.visits[span.span] = visits
        self.trained_spans.append(span.span)
        return {k: v / max(len(span), 1) for k, v in totals.items()}

    # -- persistence -------------------------------------------------------------
    def state_blobs(self):
        blobs = {p.name: p.value for p in self.optimizer.params}
        for p in self.optimizer.params:
            blobs[f"adam.m/{p.name}"] = self.optimizer.states[p.name].m
            blobs[f"adam.v/{p.name}"] = self.optimizer.states[p.name].v
        return blobs

    def state_meta(self):
        return {
            "format": "tdslab-checkpoint",
            "schema_hash": self.schema.hash(),
            "rng_state": self.rng.bit_generator.state,
            "trained_spans": list(self.trained_spans),
            "steps": self.steps,
            "adam_steps": {p.name: self.optimizer.states[p.name].step for p in self.optimizer.params},
            "method": self.config.method,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
        }

    def save(self, path):
        write_checkpoint(path, self.state_blobs(), self.state_meta())

    def load(self, path):
        blobs, meta = read_checkpoint(path, expect_schema_hash=self.schema.hash())
        names = [p.name for p in self.optimizer.params]
        missing = [n for n in names if n not in blobs]
        if missing:
            raise FormatError(f"{path}: checkpoint lacks parameters {missing[:3]}")
        for p in self.optimizer.params:
            if blobs[p.name].shape != p.value.shape:
                raise FormatError(f"{path}: {p.name} has shape {blobs[p.name].shape}, expected {p.value.shape}")
            p.value[...] = blobs[p.name]
            st = self.optimizer.states[p.name]
            st.m[...] = blobs[f"adam.m/{p.name}"]
            st.v[...] = blobs[f"adam.v/{p.name}"]
            st.step = int(meta["adam_steps"][p.name])
        self.rng.bit_generator.state = meta["rng_state"]
        self.trained_spans = list(meta["trained_spans"])
        self.steps = int(meta["steps"])
        return meta


def checkpoint_lineage(path):
    _, meta = read_checkpoint(path)
    return meta["trained_spans"]


def train_incremental(manifest, config, out_dir=None, resume=None, stop_after=None, collapse=False):
    """Algorithm: for t = 0..T-1 train one pass on span t, then evaluate on t+1.

    The last span of the manifest is only ever evaluated. Returns
    ``(runlog, trainer)``. With ``out_dir`` a checkpoint per span, the RunLog
    (``runlog.ndjson``) and wall times (``timings.ndjson``) are written there.
    """
    schema = manifest.schema
    trainer = Trainer(schema, config)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    log = RunLog(out / "runlog.ndjson" if out else None)
    if resume is not None:
        trainer.load(resume)
        start = max(trainer.trained_spans) + 1 if trainer.trained_spans else 0
    else:
        start = 0
        if out and (out / "runlog.ndjson").exists():
            (out / "runlog.ndjson").unlink()
        if out and (out / "timings.ndjson").exists():
            (out / "timings.ndjson").unlink()
    last_train = manifest.n_spans - 2
    if last_train < 0:
        raise ConfigError("need at least two spans (train + next-span evaluation)")
    base = {"method": config.method, "seed": config.seed}
    for t in range(start, last_train + 1):
        if trainer.trained_spans and t <= max(trainer.trained_spans):
            raise RuntimeError(f"span {t} already trained")
        clock = time.perf_counter()
        span = manifest.load_span(t)
        comps = trainer.train_span(span)
        for name in ("total", "pred", "listnet", "recon", "prior", "infonce"):
            log.append(span=t, metric=f"train.{name}", value=comps.get(name, 0.0), **base)
        lineage = list(trainer.trained_spans)
        if out:
            ckpt = out / f"ckpt_span{t:03d}.bin"
            trainer.save(ckpt)
            lineage = checkpoint_lineage(ckpt)
        if config.eval_every_span:
            ev_span = t + 1
            if max(lineage) >= ev_span:
                raise RuntimeError(f"evaluation on span {ev_span} with a model trained on it")
            ev = manifest.load_span(ev_span)
            report = evaluate(trainer.model, ev, schema)
            if collapse:
                vv, pe = collapse_diagnostics(trainer.model, ev, schema, config.augment, seed=config.seed)
                report.view_variance, report.probe_error = vv, pe
            for metric, value in report.rows():
                log.append(span=ev_span, metric=metric, value=value, trained_through=t, **base)
        if out:
            with (out / "timings.ndjson").open("a") as fh:
                fh.write(json.dumps({"span": t, "seconds": time.perf_counter() - clock, **base}) + "\n")
        if stop_after is not None and t >= stop_after:
            break
    if out:
        final = out / "final.bin"
        trainer.save(final)
    return log, trainer
