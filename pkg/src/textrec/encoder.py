"""The three encoder-side feature branches.

Visual: a small residual conv stack downsampling height and width by 8,
flattened row-major into a length P = H*W/64 sequence and refined by a
post-norm transformer encoder. Semantic: learned character embeddings laid
out [START, c1..cL, END, PAD...]. Position: a content-free code with the
constant 1/L at channel i of step i, plus the sinusoidal embedding, mapped
through a two-layer MLP. Training builds full-length sequences in one shot;
inference rebuilds the position code (constant 1/t) and appends to the
semantic ids step by step.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DecodeStateError, LengthError
from .params import AttentionBlock, Dense, ParamStore
from .vocab import END_ID, PAD_ID, START_ID


def sinusoid(length, channels):
    """Classic sin/cos position table: sin at even channels, cos at odd."""
    if channels % 2 != 0:
        raise ConfigError(f"sinusoid needs an even channel count, got {channels}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    k = np.arange(channels // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / channels)
    table = np.empty((length, channels), dtype=np.float32)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def conv3x3(x, w, b, stride):
    """3x3 convolution (pad 1) expressed as im2col + affine.

    Weights are stored flat as (C_in*9, C_out) to feed the matmul directly.
    """
    n = x.shape[0]
    cols, oh, ow = ad.im2col(x, ksize=3, stride=stride, pad=1)
    out = ad.dense(cols, w, b)
    out = ad.transpose(ad.reshape(out, (n, oh, ow, w.shape[-1])), (0, 3, 1, 2))
    return out


class VisualEncoder:
    """Conv backbone (3 stride-2 residual stages) + transformer refinement."""

    def __init__(self, store: ParamStore, prefix, img_h, img_w, channels, heads, layers, ffn_hidden):
        if img_h % 8 != 0 or img_w % 8 != 0:
            raise ConfigError(f"image dims must be divisible by 8, got {img_h}x{img_w}")
        if len(channels) != 3:
            raise ConfigError(f"expected 3 conv stage widths, got {channels}")
        self.img_h, self.img_w = img_h, img_w
        self.e_dim = channels[-1]
        self.feat_h, self.feat_w = img_h // 8, img_w // 8
        self.seq_len = self.feat_h * self.feat_w
        self.stages = []
        c_in = 1
        for i, c_out in enumerate(channels):
            down_w = store.xavier(f"{prefix}.conv{i}.down.w", (c_in * 9, c_out))
            down_b = store.zeros(f"{prefix}.conv{i}.down.b", (c_out,))
            res_w = store.xavier(f"{prefix}.conv{i}.res.w", (c_out * 9, c_out))
            res_b = store.zeros(f"{prefix}.conv{i}.res.b", (c_out,))
            self.stages.append((down_w, down_b, res_w, res_b))
            c_in = c_out
        self.position = sinusoid(self.seq_len, self.e_dim)
        self.blocks = [
            AttentionBlock(store, f"{prefix}.tr{i}", self.e_dim, heads, ffn_hidden)
            for i in range(layers)
        ]

    def __call__(self, images):
        """images: (N, H, W) or (N, 1, H, W) floats in [0,1] -> (N, P, E)."""
        arr = images.data if isinstance(images, ad.Tensor) else np.asarray(images, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[:, None]
        n, _, h, w = arr.shape
        if h != self.img_h or w != self.img_w:
            raise ConfigError(f"expected {self.img_h}x{self.img_w} images, got {h}x{w}")
        x = ad.Tensor(arr)
        for down_w, down_b, res_w, res_b in self.stages:
            x = ad.relu(conv3x3(x, down_w, down_b, stride=2))
            x = ad.add(x, ad.relu(conv3x3(x, res_w, res_b, stride=1)))
        x = ad.reshape(ad.transpose(x, (0, 2, 3, 1)), (n, self.seq_len, self.e_dim))
        x = ad.add(x, ad.Tensor(self.position))
        for block in self.blocks:
            x, _ = block(x, x, x)
        return x


class SemanticEncoder:
    """Learned embedding table over the vocabulary, trained end to end."""

    def __init__(self, store: ParamStore, prefix, vocab_size, e_dim):
        self.table = store.normal(f"{prefix}.embed", (vocab_size, e_dim), std=1.0 / np.sqrt(e_dim))

    def __call__(self, ids):
        return ad.embedding(self.table, np.asarray(ids, dtype=np.int64))


def semantic_ids(label_ids, max_len):
    """One training row: [START, c1..cL, END, PAD...] padded to max_len."""
    if len(label_ids) > max_len - 2:
        raise LengthError(
            f"label of length {len(label_ids)} does not fit: max is {max_len - 2} "
            f"(START and END occupy two of {max_len} slots)"
        )
    row = [START_ID, *label_ids, END_ID]
    row.extend([PAD_ID] * (max_len - len(row)))
    return row


def target_ids(label_ids, max_len):
    """Per-step targets: position i predicts character i, END at index L."""
    row = [*label_ids, END_ID]
    row.extend([PAD_ID] * (max_len - len(row)))
    return row


def append_step(prev_ids, decoded_id):
    """Extend an inference-side semantic row with the just-decoded token."""
    if prev_ids and prev_ids[-1] == END_ID:
        raise DecodeStateError("cannot append after END was decoded")
    return [*prev_ids, int(decoded_id)]


class PositionEncoder:
    """Content-free position embedding: 1/L index code + sinusoid + 2-layer MLP."""

    def __init__(self, store: ParamStore, prefix, e_dim, max_len):
        if max_len > e_dim:
            raise ConfigError(
                f"max length {max_len} exceeds {e_dim} channels; the index code would not fit"
            )
        self.e_dim = e_dim
        self.max_len = max_len
        self.table = sinusoid(max_len, e_dim)
        self.fc1 = Dense(store, f"{prefix}.mlp1", e_dim, e_dim)
        self.fc2 = Dense(store, f"{prefix}.mlp2", e_dim, e_dim)

    def _mlp(self, x):
        return self.fc2(ad.relu(self.fc1(x)))

    def _code(self, steps, inverse_length):
        code = np.zeros((steps, self.e_dim), dtype=np.float32)
        code[np.arange(steps), np.arange(steps)] = inverse_length
        return code + self.table[:steps]

    def train_embedding(self, lengths, steps):
        """(N,) per-sample lengths -> (N, steps, E); constant is 1/length."""
        if steps > self.max_len:
            raise LengthError(f"{steps} steps exceed configured maximum {self.max_len}")
        rows = np.stack([self._code(steps, 1.0 / int(l)) for l in np.atleast_1d(lengths)])
        return self._mlp(ad.Tensor(rows))

    def infer_embedding(self, t):
        """Step-t inference code: length t, constant 1/t."""
        if t < 1 or t > self.max_len:
            raise LengthError(f"step {t} outside 1..{self.max_len}")
        return self._mlp(ad.Tensor(self._code(t, 1.0 / t)[None]))
