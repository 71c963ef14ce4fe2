"""Parameter registry and the small neural building blocks.

Parameters are named tensors living in a single ``ParamStore`` per model.
Shared parameters (the fusion gate) are registered once and referenced from
every call site, so gradient accumulation on the tape sums their per-site
contributions. Initialization draws from the store's generator in
registration order, which makes model construction deterministic per seed.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


class ParamStore:
    def __init__(self, seed=0, dtype=np.float32):
        self._params: dict[str, ad.Tensor] = {}
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype

    def add(self, name, array):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name: {name}")
        t = ad.Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def xavier(self, name, shape, fan_in=None, fan_out=None):
        fan_in = shape[0] if fan_in is None else fan_in
        fan_out = shape[-1] if fan_out is None else fan_out
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def normal(self, name, shape, std):
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def named_parameters(self):
        return list(self._params.items())

    def arrays(self):
        """name -> ndarray view, for checkpointing."""
        return {name: t.data for name, t in self._params.items()}

    def load_arrays(self, arrays):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ConfigError(
                f"checkpoint/model parameter mismatch: missing={sorted(missing)[:3]} "
                f"extra={sorted(extra)[:3]}"
            )
        for name, arr in arrays.items():
            t = self._params[name]
            if t.data.shape != arr.shape:
                raise ConfigError(
                    f"parameter {name}: checkpoint shape {arr.shape} != model {t.data.shape}"
                )
            t.data = arr.astype(self.dtype)

    def zero_grads(self):
        for t in self._params.values():
            t.grad = None


class Dense:
    def __init__(self, store, prefix, fan_in, fan_out):
        self.w = store.xavier(f"{prefix}.w", (fan_in, fan_out))
        self.b = store.zeros(f"{prefix}.b", (fan_out,))

    def __call__(self, x):
        return ad.dense(x, self.w, self.b)


class LayerNorm:
    def __init__(self, store, prefix, dim):
        self.gamma = store.ones(f"{prefix}.gamma", (dim,))
        self.beta = store.zeros(f"{prefix}.beta", (dim,))

    def __call__(self, x):
        return ad.layer_norm(x, self.gamma, self.beta)


class FeedForward:
    def __init__(self, store, prefix, dim, hidden):
        self.fc1 = Dense(store, f"{prefix}.fc1", dim, hidden)
        self.fc2 = Dense(store, f"{prefix}.fc2", hidden, dim)

    def __call__(self, x):
        return self.fc2(ad.relu(self.fc1(x)))


class MultiHeadAttention:
    """Projected multi-head attention over (N, L, dim) sequences.

    ``inner`` sets the total projection width (the position self-attention
    block runs at half width); the output projection maps back to ``dim``.
    """

    def __init__(self, store, prefix, dim, heads, inner=None):
        inner = dim if inner is None else inner
        if inner % heads != 0:
            raise ConfigError(f"attention width {inner} not divisible by {heads} heads")
        self.heads = heads
        self.inner = inner
        self.head_dim = inner // heads
        self.wq = Dense(store, f"{prefix}.q", dim, inner)
        self.wk = Dense(store, f"{prefix}.k", dim, inner)
        self.wv = Dense(store, f"{prefix}.v", dim, inner)
        self.wo = Dense(store, f"{prefix}.out", inner, dim)

    def _split(self, x, length):
        n = x.shape[0]
        return ad.transpose(ad.reshape(x, (n, length, self.heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, q, k, v, mask=None):
        n, lq = q.shape[0], q.shape[1]
        lk = k.shape[1]
        qh = self._split(self.wq(q), lq)
        kh = self._split(self.wk(k), lk)
        vh = self._split(self.wv(v), lk)
        out, weights = ad.scaled_dot_attention(qh, kh, vh, mask)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (n, lq, self.inner))
        return self.wo(out), weights


class AttentionBlock:
    """Post-norm transformer sublayer pair: MHA + residual/LN, FFN + residual/LN."""

    def __init__(self, store, prefix, dim, heads, ffn_hidden, inner=None):
        self.attn = MultiHeadAttention(store, f"{prefix}.attn", dim, heads, inner)
        self.ln1 = LayerNorm(store, f"{prefix}.ln1", dim)
        self.ffn = FeedForward(store, f"{prefix}.ffn", dim, ffn_hidden)
        self.ln2 = LayerNorm(store, f"{prefix}.ln2", dim)

    def __call__(self, q, k, v, mask=None):
        attended, weights = self.attn(q, k, v, mask)
        x = self.ln1(ad.add(q, attended))
        x = self.ln2(ad.add(x, self.ffn(x)))
        return x, weights
