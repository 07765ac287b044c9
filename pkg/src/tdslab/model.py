"""Twin-tower model: per-side embedding + encoder producing latent means,
reparameterized sampling with unit variance, per-side decoders, and a
dot-product predictor on the means."""
from dataclasses import dataclass

import numpy as np

from .dataset import SIDES
from .errors import DimensionError
from .nn import EmbeddingTable, MLP, Parameter, sigmoid


@dataclass(frozen=True)
class TowerConfig:
    embed_dim: int = 8
    encoder_hidden: tuple = (32,)
    d_z: int = 16
    decoder_hidden: tuple = (32,)
    zero_init_decoder: bool = False
    embed_scale: float = 0.1


class TwinTower:
    def __init__(self, schema, config=TowerConfig(), seed=0):
        self.schema = schema
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x70E7]))
        d = config.embed_dim
        self.embeddings = {}
        for f in schema.stat:
            self.embeddings[f.name] = EmbeddingTable(f"emb.{f.name}", f.n_buckets + 1, d, rng, config.embed_scale)
        for f in schema.seq:
            self.embeddings[f.name] = EmbeddingTable(f"emb.{f.name}", f.vocab_size + 1, d, rng, config.embed_scale)
        for f in schema.cate:
            self.embeddings[f.name] = EmbeddingTable(f"emb.{f.name}", f.vocab_size + 1, d, rng, config.embed_scale)
        self.side_features = {side: schema.side(side) for side in SIDES}
        self.encoders, self.decoders = {}, {}
        for side in SIDES:
            width = d * len(self.side_features[side])
            if width == 0:
                raise DimensionError(f"{side} side has no features")
            self.encoders[side] = MLP(f"{side}.enc", [width, *config.encoder_hidden, config.d_z], rng)
            self.decoders[side] = MLP(
                f"{side}.dec", [config.d_z, *config.decoder_hidden, width], rng,
                zero_last=config.zero_init_decoder,
            )
        self.bias = Parameter("pred.bias", np.zeros((1, schema.n_tasks)))

    def input_width(self, side):
        return self.config.embed_dim * len(self.side_features[side])

    def parameters(self, include_decoders=True):
        params = [e.table for e in self.embeddings.values()]
        for side in SIDES:
            params += self.encoders[side].parameters()
        if include_decoders:
            for side in SIDES:
                params += self.decoders[side].parameters()
        params.append(self.bias)
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- encoder ----------------------------------------------------------
    def embed(self, side, batch):
        parts, caches = [], []
        for f in self.side_features[side]:
            table = self.embeddings[f.name]
            x = batch.features[f.name]
            if x.ndim == 2:
                out, c = table.pool(x)
                caches.append(("pool", c))
            else:
                out, c = table.forward(x, batch.drop.get(f.name))
                caches.append(("row", c))
            parts.append(out)
        return np.hstack(parts), caches

    def embed_backward(self, side, caches, grad_e):
        d = self.config.embed_dim
        for k, (f, (kind, c)) in enumerate(zip(self.side_features[side], caches)):
            g = grad_e[:, k * d:(k + 1) * d]
            table = self.embeddings[f.name]
            if kind == "pool":
                table.pool_backward(c, g)
            else:
                table.backward(c, g)

    def encode(self, side, batch):
        """Return ``(e, mu, cache)``: embedded input (reconstruction target) and latent mean."""
        e, emb_cache = self.embed(side, batch)
        mu, enc_cache = self.encoders[side].forward(e)
        return e, mu, (emb_cache, enc_cache)

    def encode_backward(self, side, cache, grad_mu):
        emb_cache, enc_cache = cache
        grad_e = self.encoders[side].backward(enc_cache, grad_mu)
        self.embed_backward(side, emb_cache, grad_e)

    # -- sampling / decoding ----------------------------------------------
    @staticmethod
    def sample_latent(mu, rng=None, eps=None):
        """z = mu + eps with eps ~ N(0, I); returns ``(z, eps)``."""
        if eps is None:
            eps = rng.standard_normal(mu.shape)
        elif eps.shape != mu.shape:
            raise DimensionError("noise shape must match mu")
        return mu + eps, eps

    def decode(self, side, z):
        if z.ndim != 2 or z.shape[1] != self.config.d_z:
            raise DimensionError(f"latent width {z.shape} != d_z={self.config.d_z}")
        return self.decoders[side].forward(z)

    def decode_backward(self, side, cache, grad_xhat):
        return self.decoders[side].backward(cache, grad_xhat)

    # -- prediction ---------------------------------------------------------
    def logits(self, mu_u, mu_i):
        if mu_u.shape != mu_i.shape:
            raise DimensionError("user and item means must have the same shape")
        dot = np.sum(mu_u * mu_i, axis=1, keepdims=True)
        return dot + self.bias.value

    def logits_backward(self, mu_u, mu_i, grad_logits):
        """Accumulate the bias grad; return (grad_mu_u, grad_mu_i)."""
        self.bias.grad += grad_logits.sum(axis=0, keepdims=True)
        g = grad_logits.sum(axis=1, keepdims=True)
        return g * mu_i, g * mu_u

    def predict_logits(self, batch):
        _, mu_u, _ = self.encode("user", batch)
        _, mu_i, _ = self.encode("item", batch)
        return self.logits(mu_u, mu_i)

    def predict(self, batch):
        """Click probability per task from the deterministic latent means."""
        return sigmoid(self.predict_logits(batch))


def predict_from_means(mu_u, mu_i, bias):
    """sigmoid(mu_u . mu_i + bias) on bare arrays."""
    dot = np.sum(np.asarray(mu_u) * np.asarray(mu_i), axis=1, keepdims=True)
    return sigmoid(dot + np.reshape(bias, (1, -1)))
