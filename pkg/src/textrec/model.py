"""End-to-end recognizer: encoder branches, decoder stack, classifier, decoding.

Training runs one teacher-forced pass: query position i predicts character i
(0-based), with END expected at index L (the label length). Inference is
autoregressive: at step t the position code is rebuilt at length t (constant
1/t), the semantic row holds START plus the t-1 decoded characters, and the
classifier reads the last carrier row. Decoding recomputes the full prefix
each step; there is no key/value cache (correctness over speed at this
scale -- caching is a known follow-up).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .decoder import DecoderStack, validate_toggles
from .encoder import (
    PositionEncoder,
    SemanticEncoder,
    VisualEncoder,
    append_step,
    semantic_ids,
    target_ids,
)
from .errors import ConfigError, LengthError
from .params import Dense, ParamStore
from .vocab import END_ID, START_ID, Vocabulary


@dataclass
class ModelConfig:
    charset: str = "abcdefghij"
    e_dim: int = 64
    heads: int = 2
    layers: int = 3
    enc_layers: int = 3
    max_len: int = 25
    img_h: int = 16
    img_w: int = 64
    enc_ffn: int = 128
    dec_ffn: int = 64
    conv_channels: tuple = ()
    self_attn: tuple = ("pos",)
    cross: tuple = ("ps", "pv")
    fusion: str = "gate"
    beam_width: int = 10
    casefold_eval: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.conv_channels:
            self.conv_channels = (self.e_dim // 4, self.e_dim // 2, self.e_dim)
        self.self_attn = tuple(self.self_attn)
        self.cross = tuple(self.cross)
        self.conv_channels = tuple(self.conv_channels)

    def validate(self):
        if self.e_dim < self.max_len:
            raise ConfigError(
                f"e_dim {self.e_dim} must be >= max_len {self.max_len} for the index code"
            )
        if self.e_dim % self.heads != 0:
            raise ConfigError(f"e_dim {self.e_dim} not divisible by {self.heads} heads")
        if self.img_h % 8 or self.img_w % 8:
            raise ConfigError(f"image dims must be divisible by 8, got {self.img_h}x{self.img_w}")
        if self.conv_channels[-1] != self.e_dim:
            raise ConfigError("last conv stage width must equal e_dim")
        if self.beam_width < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.beam_width}")
        validate_toggles(self.self_attn, self.cross, self.fusion)

    @classmethod
    def paper_scale(cls, charset):
        """Full-size setting: E=512, 8 heads, 3+3 layers, 32x128 input, T=25."""
        return cls(
            charset=charset, e_dim=512, heads=8, layers=3, enc_layers=3,
            max_len=25, img_h=32, img_w=128, enc_ffn=1024, dec_ffn=512,
        )

    def scaled(self, **kwargs):
        return replace(self, **kwargs)


@dataclass
class BeamHypothesis:
    tokens: tuple = ()
    log_prob: float = 0.0
    finished: bool = False
    end_step: int | None = None

    def sort_key(self):
        # best first: highest score, then earlier END, then lexicographic ids
        return (-self.log_prob, self.end_step if self.end_step is not None else np.inf, self.tokens)


class Recognizer:
    def __init__(self, config: ModelConfig):
        config.validate()
        self.cfg = config
        self.vocab = Vocabulary(config.charset)
        self.store = ParamStore(config.seed)
        self.visual = VisualEncoder(
            self.store, "enc.vis", config.img_h, config.img_w,
            config.conv_channels, config.heads, config.enc_layers, config.enc_ffn,
        )
        self.semantic = SemanticEncoder(self.store, "enc.sem", self.vocab.size, config.e_dim)
        self.position = PositionEncoder(self.store, "enc.pos", config.e_dim, config.max_len)
        self.decoder = DecoderStack(
            self.store, "dec", config.layers, config.e_dim, config.heads, config.dec_ffn,
            config.self_attn, config.cross, config.fusion,
        )
        self.classifier = Dense(self.store, "cls", config.e_dim, self.vocab.size)
        # tokens the decoder may emit: the charset plus END
        self._allowed = np.zeros(self.vocab.size, dtype=bool)
        self._allowed[END_ID] = True
        self._allowed[3:] = True

    # ------------------------------------------------------------------ train

    def prepare_labels(self, labels):
        """Texts or id-lists -> (semantic rows, targets, position lengths)."""
        t_max = self.cfg.max_len
        sem, tgt, lengths = [], [], []
        for i, label in enumerate(labels):
            ids = self.vocab.encode(label) if isinstance(label, str) else list(label)
            if len(ids) > t_max - 2:
                raise LengthError(f"sample {i}: label length {len(ids)} exceeds {t_max - 2}")
            sem.append(semantic_ids(ids, t_max))
            tgt.append(target_ids(ids, t_max))
            lengths.append(len(ids) + 1)  # END is predicted too
        return np.array(sem), np.array(tgt), np.array(lengths)

    def forward_train(self, images, labels, return_trace=False):
        """Teacher-forced pass -> (logits Tensor (N,T,V), targets (N,T))."""
        sem_rows, targets, lengths = self.prepare_labels(labels)
        f_vis = self.visual(images)
        f_sem = self.semantic(sem_rows)
        f_pos = self.position.train_embedding(lengths, self.cfg.max_len)
        mask = ad.CausalMask.causal(self.cfg.max_len)
        out, traces = self.decoder(f_pos, f_vis, f_sem, mask)
        logits = self.classifier(out)
        if return_trace:
            return logits, targets, traces
        return logits, targets

    def classify(self, features):
        """Affine map E -> V; raw logits (softmax only where scores are needed)."""
        return self.classifier(features)

    # ------------------------------------------------------------------ decode

    def _step_logits(self, f_vis, sem_ids, t):
        """Logits over the vocab for decode step t given the semantic prefix."""
        f_sem = self.semantic(np.asarray([sem_ids]))
        f_pos = self.position.infer_embedding(t)
        mask = ad.CausalMask.causal(t)
        out, traces = self.decoder(f_pos, f_vis, f_sem, mask)
        logits = self.classifier(out)
        return logits.data[0, -1], traces[-1]

    def decode_greedy(self, image, return_steps=False, max_steps=None):
        """Argmax decoding; returns (text, per-step attention records)."""
        cap = self.cfg.max_len if max_steps is None else min(max_steps, self.cfg.max_len)
        f_vis = self.visual(np.asarray(image)[None])
        sem = [START_ID]
        steps = []
        for t in range(1, cap + 1):
            logits, trace = self._step_logits(f_vis, sem, t)
            masked = np.where(self._allowed, logits, -np.inf)
            tok = int(masked.argmax())
            steps.append({
                "step": t,
                "token": tok,
                "logits": logits,
                "vis_weights": trace.get("vis"),
                "sem_weights": trace.get("sem"),
            })
            if tok == END_ID:
                break
            sem = append_step(sem, tok)
        text = self.vocab.decode([s["token"] for s in steps])
        if return_steps:
            return text, steps
        return text, [s["vis_weights"] for s in steps]

    def decode_beam(self, image, width=None, max_steps=None):
        """Length-capped beam search over per-step log-softmax scores.

        Scores are raw cumulative log-probs (no length normalization); ties
        break toward the earlier END, then lexicographic token order.
        """
        width = self.cfg.beam_width if width is None else width
        if width < 1:
            raise ConfigError(f"beam width must be >= 1, got {width}")
        cap = self.cfg.max_len if max_steps is None else min(max_steps, self.cfg.max_len)
        f_vis = self.visual(np.asarray(image)[None])
        beam = [BeamHypothesis()]
        for t in range(1, cap + 1):
            if all(h.finished for h in beam):
                break
            candidates = [h for h in beam if h.finished]
            for hyp in beam:
                if hyp.finished:
                    continue
                logits, _ = self._step_logits(f_vis, [START_ID, *hyp.tokens], t)
                logp = ad.log_softmax_data(logits)
                for tok in np.flatnonzero(self._allowed):
                    tok = int(tok)
                    candidates.append(BeamHypothesis(
                        tokens=hyp.tokens + (tok,),
                        log_prob=hyp.log_prob + float(logp[tok]),
                        finished=tok == END_ID,
                        end_step=t if tok == END_ID else None,
                    ))
            candidates.sort(key=BeamHypothesis.sort_key)
            beam = candidates[:width]
        best = min(beam, key=BeamHypothesis.sort_key)
        return self.vocab.decode(best.tokens)
