"""Small deterministic dense-network substrate.

Matrices are 2-D float64 numpy arrays. Layers expose ``forward`` returning the
output together with a cache, and ``backward(cache, grad_out)`` which
accumulates parameter gradients and returns the input gradient.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError

ACTIVATIONS = ("identity", "relu", "sigmoid")


def check_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what}")
    return x


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Parameter:
    """A trainable matrix with its gradient buffer."""

    def __init__(self, name, value):
        value = np.array(value, dtype=np.float64)
        if value.ndim != 2:
            raise DimensionError(f"{name}: parameters are 2-D, got shape {value.shape}")
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Dense:
    def __init__(self, name, n_in, n_out, activation="identity", rng=None, zero_init=False):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        if zero_init or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            # He for relu, Glorot otherwise
            scale = np.sqrt(2.0 / n_in) if activation == "relu" else np.sqrt(1.0 / n_in)
            w = rng.normal(0.0, scale, size=(n_in, n_out))
        self.W = Parameter(f"{name}.W", w)
        self.b = Parameter(f"{name}.b", np.zeros((1, n_out)))

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise DimensionError(f"{self.W.name}: input {x.shape} vs weight {self.W.shape}")
        pre = x @ self.W.value + self.b.value
        if self.activation == "relu":
            out = np.maximum(pre, 0.0)
        elif self.activation == "sigmoid":
            out = sigmoid(pre)
        else:
            out = pre
        check_finite(out, f"output of {self.W.name}")
        return out, (x, pre, out)

    def backward(self, cache, grad_out):
        x, pre, out = cache
        if self.activation == "relu":
            grad_pre = grad_out * (pre > 0)
        elif self.activation == "sigmoid":
            grad_pre = grad_out * out * (1.0 - out)
        else:
            grad_pre = grad_out
        self.W.grad += x.T @ grad_pre
        self.b.grad += grad_pre.sum(axis=0, keepdims=True)
        return grad_pre @ self.W.value.T


class MLP:
    """Stack of Dense layers; hidden layers use relu, the last layer is linear."""

    def __init__(self, name, sizes, rng, zero_last=False):
        self.layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            self.layers.append(
                Dense(
                    f"{name}.{k}",
                    n_in,
                    n_out,
                    activation="identity" if last else "relu",
                    rng=rng,
                    zero_init=last and zero_last,
                )
            )

    @property
    def n_in(self):
        return self.layers[0].W.shape[0]

    @property
    def n_out(self):
        return self.layers[-1].W.shape[1]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, grad):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(c, grad)
        return grad


class EmbeddingTable:
    """Lookup table whose row 0 is the reserved absent/padding row."""

    def __init__(self, name, vocab_size, dim, rng=None, scale=0.1):
        if rng is None:
            w = np.zeros((vocab_size, dim))
        else:
            w = rng.normal(0.0, scale, size=(vocab_size, dim))
        w[0] = 0.0
        self.table = Parameter(name, w)

    @property
    def vocab_size(self):
        return self.table.shape[0]

    @property
    def dim(self):
        return self.table.shape[1]

    def parameters(self):
        return [self.table]

    def _check(self, idx):
        # one reduction: negative ids wrap to huge unsigned values
        if idx.size and idx.view(np.uint64).max() >= self.vocab_size:
            raise IndexError(f"{self.table.name}: index out of range [0, {self.vocab_size})")

    def forward(self, indices, drop_mask=None):
        idx = np.asarray(indices, dtype=np.int64)
        self._check(idx)
        if drop_mask is not None:
            drop_mask = np.asarray(drop_mask, dtype=bool)
            if drop_mask.shape != idx.shape:
                raise DimensionError("drop mask must match indices")
            idx = np.where(drop_mask, 0, idx)
        rows = self.table.value[idx]
        rows[idx == 0] = 0.0  # padding is a constant, not a trainable row
        return rows, idx

    def backward(self, cache, grad_out):
        kernels.scatter_add_rows(self.table.grad, cache, np.ascontiguousarray(grad_out))

    def pool(self, ids):
        """Masked mean over the nonzero ids of each row of ``ids`` (shape N x L)."""
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        self._check(ids)
        pooled, counts = kernels.seq_pool(self.table.value, ids)
        return pooled, (ids, counts)

    def pool_backward(self, cache, grad_out):
        ids, counts = cache
        kernels.seq_pool_backward(self.table.grad, ids, np.ascontiguousarray(grad_out), counts)


def dense_apply(x, W, b, activation="identity"):
    """Functional form of a dense layer on bare arrays; returns ``(out, backward)``.

    ``backward(grad_out)`` returns ``(grad_x, grad_W, grad_b)``.
    """
    layer = Dense("dense", W.shape[0], W.shape[1], activation)
    layer.W.value[...] = W
    layer.b.value[...] = np.reshape(b, (1, -1))
    out, cache = layer.forward(np.asarray(x, dtype=np.float64))

    def backward(grad_out):
        gx = layer.backward(cache, grad_out)
        return gx, layer.W.grad.copy(), layer.b.grad.copy()

    return out, backward


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros_like(param.value), np.zeros_like(param.value), 0, lr, beta1, beta2, eps)


def adam_step(param, state):
    """One bias-corrected Adam update of ``param.value`` in place."""
    if state.m.shape != param.value.shape:
        raise DimensionError(f"{param.name}: Adam state shape mismatch")
    g = param.grad
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    param.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    check_finite(param.value, f"{param.name} after Adam step")
    return param


class Adam:
    """Adam over a fixed list of parameters; state is keyed by parameter name."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.states = {p.name: AdamState.for_param(p, lr, beta1, beta2, eps) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            adam_step(p, self.states[p.name])


@dataclass
class GradCheckReport:
    rel_errors: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def max_error(self):
        return max((float(e.max()) for e in self.rel_errors.values() if e.size), default=0.0)

    @property
    def passed(self):
        return self.max_error <= self.tol

    def worst(self):
        name = max(self.rel_errors, key=lambda k: self.rel_errors[k].max() if self.rel_errors[k].size else 0)
        return name, float(self.rel_errors[name].max())


def finite_diff_check(loss_fn, params, h=1e-5, tol=1e-6, max_coords=None, rng=None):
    """Compare analytic gradients against central differences.

    ``loss_fn()`` must recompute the loss from the current parameter values and
    fill ``param.grad`` for every parameter; it returns the scalar loss. Relative
    error per coordinate is |ga - gf| / max(1e-12, |ga| + |gf|).

    ``max_coords`` limits the number of probed coordinates per parameter
    (sampled with ``rng``) for large parameters.
    """
    for p in params:
        p.zero_grad()
    base = loss_fn()
    if not np.isfinite(base):
        raise NumericError("non-finite loss")
    analytic = {p.name: p.grad.copy() for p in params}
    report = GradCheckReport(tol=tol)
    for p in params:
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        errs = np.empty(len(coords))
        ga_flat = analytic[p.name].reshape(-1)
        for k, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + h
            up = loss_fn()
            flat[c] = old - h
            down = loss_fn()
            flat[c] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss probing {p.name}[{c}]")
            gf = (up - down) / (2.0 * h)
            ga = ga_flat[c]
            errs[k] = abs(ga - gf) / max(1e-12, abs(ga) + abs(gf))
        report.rel_errors[p.name] = errs
    # leave grads as the analytic values at the unperturbed point
    for p in params:
        p.grad[...] = analytic[p.name]
    return report
