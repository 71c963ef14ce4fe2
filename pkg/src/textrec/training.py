"""Training loop, schedule, synthetic glyph corpus, metrics, ablation harness.

The learning rate follows lr = d_model^-0.5 * min(n^-0.5, n * warm_n^-1.5):
linear warm-up to the peak at n = warm_n, then inverse square root decay.
The optimizer is gradient descent with adaptive moments (beta 0.9/0.98,
eps 1e-9), the standard companion to that schedule.

The synthetic corpus renders procedurally derived 5x3 dot-matrix glyphs so a
desk-scale model can be trained and evaluated without any external data:
every charset character gets a distinct pattern and the rendered label is
recoverable by construction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, EvalError, NumericError
from .model import ModelConfig, Recognizer
from .vocab import PAD_ID

GLYPH_ROWS, GLYPH_COLS = 5, 3


# ---------------------------------------------------------------------------
# learning-rate schedule and optimizer


def lr_at(n, warm_n, d_model):
    """Warm-up/decay schedule value at iteration n (1-based)."""
    if n < 1:
        raise ConfigError(f"iteration must be >= 1, got {n}")
    return d_model ** -0.5 * min(n ** -0.5, n * warm_n ** -1.5)


@dataclass
class LrSchedule:
    d_model: int = 512
    warm_n: int = 10000
    scale: float = 1.0

    def __call__(self, n):
        return self.scale * lr_at(n, self.warm_n, self.d_model)


@dataclass
class ConstantLr:
    value: float = 1e-5

    def __call__(self, n):
        return self.value


class Adam:
    """Adaptive-moment gradient descent over a ParamStore."""

    def __init__(self, store, beta1=0.9, beta2=0.98, eps=1e-9):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in store.named_parameters()}
        self._v = {name: np.zeros_like(t.data) for name, t in store.named_parameters()}

    def step(self, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in self.store.named_parameters():
            g = tensor.grad
            if g is None:
                continue
            m = self._m[name] = b1 * self._m[name] + (1 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            tensor.data = tensor.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def grad_norm(store):
    total = 0.0
    for _, tensor in store.named_parameters():
        if tensor.grad is not None:
            total += float((tensor.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def train_step(model, batch, optimizer, lr, step_n):
    """One teacher-forced update; PAD positions are ignored by the loss."""
    images, labels = batch
    logits, targets = model.forward_train(images, labels)
    loss = ad.cross_entropy(logits, targets, ignore_id=PAD_ID)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss {value} at step {step_n} (lr={lr:.4g}, "
            f"grad norm before update={grad_norm(model.store):.4g})"
        )
    ad.backward(loss)
    optimizer.step(lr)
    model.store.zero_grads()
    return value


def fit(model, samples, steps, batch_size, schedule, seed=0, eval_every=0,
        eval_samples=None, log=None, start_step=1):
    """Train over an in-memory corpus; returns CSV-able history rows.

    Rows are dicts {step, lr, loss[, acc]}. Batches are drawn deterministically
    from the seed; eval_every > 0 interleaves sequence-accuracy measurements.
    """
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.store)
    images = np.stack([img for img, _ in samples])
    labels = [label for _, label in samples]
    history = []
    for i in range(steps):
        step_n = start_step + i
        lr = schedule(step_n)
        if batch_size >= len(samples):
            batch_idx = np.arange(len(samples))
        else:
            batch_idx = rng.choice(len(samples), size=batch_size, replace=False)
        batch = (images[batch_idx], [labels[j] for j in batch_idx])
        loss = train_step(model, batch, optimizer, lr, step_n)
        row = {"step": step_n, "lr": lr, "loss": loss}
        if eval_every and (i + 1) % eval_every == 0:
            report = evaluate(model, eval_samples or samples,
                              casefold=model.cfg.casefold_eval)
            row["acc"] = report["sequence_accuracy"]
        history.append(row)
        if log:
            log(row)
    return history


# ---------------------------------------------------------------------------
# synthetic glyph corpus


@dataclass
class SynthSpec:
    charset: str = "abcdefghij"
    canvas_h: int = 16
    canvas_w: int = 64
    max_len: int = 5
    glyph_scale: int = 2
    jitter: int = 1

    @property
    def glyph_h(self):
        return GLYPH_ROWS * self.glyph_scale

    @property
    def glyph_w(self):
        return GLYPH_COLS * self.glyph_scale

    @property
    def advance(self):
        return self.glyph_w + self.glyph_scale

    def validate(self):
        if self.glyph_h > self.canvas_h:
            raise ConfigError(
                f"canvas height {self.canvas_h} cannot hold {self.glyph_h}px glyphs"
            )
        needed = 2 * (1 + self.jitter) + self.max_len * self.advance
        if needed > self.canvas_w:
            raise ConfigError(
                f"canvas width {self.canvas_w} cannot hold {self.max_len} glyphs "
                f"(needs {needed}px)"
            )

    @classmethod
    def fit(cls, charset, canvas_h, canvas_w, max_len):
        """Largest glyph scale that fits the canvas at the requested length."""
        last_error = None
        for scale in (2, 1):
            spec = cls(charset=charset, canvas_h=canvas_h, canvas_w=canvas_w,
                       max_len=max_len, glyph_scale=scale)
            try:
                spec.validate()
                return spec
            except ConfigError as exc:
                last_error = exc
        raise last_error


def _glyph_pattern(char):
    """Deterministic 5x3 dot pattern; rehash until at least 5 dots are set."""
    salt = 0
    while True:
        digest = hashlib.sha256(f"{char}:{salt}".encode("utf-8")).digest()
        bits = np.unpackbits(np.frombuffer(digest[:2], dtype=np.uint8))
        cells = np.concatenate([bits, np.unpackbits(np.frombuffer(digest[2:3], dtype=np.uint8))])
        pattern = cells[: GLYPH_ROWS * GLYPH_COLS].reshape(GLYPH_ROWS, GLYPH_COLS).astype(bool)
        if pattern.sum() >= 5:
            return pattern
        salt += 1


def glyph_table(charset):
    """char -> distinct 5x3 pattern; collisions resolved by re-salting."""
    table = {}
    used = set()
    for char in charset:
        salt = 0
        pattern = _glyph_pattern(char)
        while pattern.tobytes() in used:
            salt += 1
            pattern = _glyph_pattern(f"{char}#{salt}")
        used.add(pattern.tobytes())
        table[char] = pattern
    return table


def render_label(spec, label, x_offsets=None):
    spec.validate()
    table = glyph_table(spec.charset)
    img = np.zeros((spec.canvas_h, spec.canvas_w), dtype=np.float32)
    y0 = (spec.canvas_h - spec.glyph_h) // 2
    base_x = 1 + spec.jitter
    for i, char in enumerate(label):
        dx = 0 if x_offsets is None else int(x_offsets[i])
        x0 = base_x + i * spec.advance + dx
        glyph = np.kron(table[char], np.ones((spec.glyph_scale, spec.glyph_scale)))
        img[y0 : y0 + spec.glyph_h, x0 : x0 + spec.glyph_w] = glyph
    return img


def synth_sample(spec, rng):
    """Random-length label rendered with per-character horizontal jitter."""
    length = int(rng.integers(1, spec.max_len + 1))
    label = "".join(rng.choice(list(spec.charset), size=length))
    offsets = rng.integers(-spec.jitter, spec.jitter + 1, size=length) if spec.jitter else None
    return render_label(spec, label, offsets), label


def make_corpus(spec, count, seed=0):
    rng = np.random.default_rng(seed)
    return [synth_sample(spec, rng) for _ in range(count)]


# ---------------------------------------------------------------------------
# evaluation


def normalize_text(text):
    """Case-insensitive alphanumeric filtering for sequence accuracy."""
    return "".join(c for c in text.lower() if c.isalnum())


def evaluate(model, samples, beam_width=1, casefold=True):
    """Sequence accuracy = exact full-string matches / total."""
    if not samples:
        raise EvalError("nothing to evaluate: empty sample set")
    results = []
    hits = 0
    for img, label in samples:
        if beam_width > 1:
            pred = model.decode_beam(img, width=beam_width)
        else:
            pred, _ = model.decode_greedy(img)
        a, b = (normalize_text(pred), normalize_text(label)) if casefold else (pred, label)
        ok = a == b
        hits += ok
        results.append({"label": label, "prediction": pred, "correct": bool(ok)})
    return {"sequence_accuracy": hits / len(samples), "results": results}


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class Variant:
    name: str
    self_attn: tuple = ("pos",)
    cross: tuple = ("ps", "pv")
    fusion: str = "gate"
    layers: int = 3


def default_grid():
    """The standard toggle grid: 14 wiring/fusion rows plus a depth sweep."""
    rows = [
        Variant("sae_none", self_attn=()),
        Variant("sae_sem", self_attn=("sem",)),
        Variant("sae_vis", self_attn=("vis",)),
        Variant("sae_sem_vis", self_attn=("sem", "vis")),
        Variant("sae_all", self_attn=("sem", "vis", "pos")),
        Variant("cross_pv_only", cross=("pv",)),
        Variant("cross_sv_only", cross=("sv",)),
        Variant("cross_sv_ps", cross=("sv", "ps")),
        Variant("cross_sv_pv", cross=("sv", "pv")),
        Variant("cross_pv_sp", cross=("sp", "pv")),
        Variant("fusion_add", fusion="add"),
        Variant("fusion_dot", fusion="dot"),
        Variant("fusion_gate_unshared", fusion="gate_unshared"),
        Variant("full"),
        Variant("depth_1", layers=1),
        Variant("depth_2", layers=2),
        Variant("depth_3", layers=3),
        Variant("depth_4", layers=4),
    ]
    return rows


NOT_COMPARABLE_NOTE = "desk-scale synthetic corpus; not comparable to published benchmark accuracies"


def run_ablation(grid, base_cfg=None, corpus=None, steps=60, batch_size=8,
                 seed=0, schedule=None, log=None):
    """Train every variant with a shared corpus/seed/budget; emit report rows."""
    base_cfg = base_cfg or ModelConfig()
    if corpus is None:
        spec = SynthSpec(charset=base_cfg.charset,
                         canvas_h=base_cfg.img_h, canvas_w=base_cfg.img_w)
        corpus = make_corpus(spec, count=16, seed=seed)
    schedule = schedule or LrSchedule(d_model=base_cfg.e_dim, warm_n=max(steps // 4, 1))
    report = []
    for variant in grid:
        cfg = base_cfg.scaled(
            self_attn=variant.self_attn, cross=variant.cross,
            fusion=variant.fusion, layers=variant.layers, seed=seed,
        )
        model = Recognizer(cfg)
        history = fit(model, corpus, steps=steps, batch_size=batch_size,
                      schedule=schedule, seed=seed)
        acc = evaluate(model, corpus, casefold=cfg.casefold_eval)["sequence_accuracy"]
        row = {
            "name": variant.name,
            "self_attn": "+".join(variant.self_attn) or "none",
            "cross": "+".join(variant.cross),
            "fusion": variant.fusion,
            "layers": variant.layers,
            "steps": steps,
            "final_loss": history[-1]["loss"],
            "sequence_accuracy": acc,
            "note": NOT_COMPARABLE_NOTE,
        }
        report.append(row)
        if log:
            log(row)
    return report


def parse_grid(path):
    """Grid file: 'name self=pos,sem cross=ps,pv fusion=gate layers=3' per line."""
    rows = []
    for lineno, line in enumerate(open(path, encoding="utf-8"), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        variant = Variant(tokens[0])
        for token in tokens[1:]:
            if "=" not in token:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {token!r}")
            key, value = token.split("=", 1)
            if key == "self":
                variant.self_attn = () if value == "none" else tuple(value.split(","))
            elif key == "cross":
                variant.cross = tuple(value.split(","))
            elif key == "fusion":
                variant.fusion = value
            elif key == "layers":
                variant.layers = int(value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown toggle {key!r}")
        rows.append(variant)
    return rows
