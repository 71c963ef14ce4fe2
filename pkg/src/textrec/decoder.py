"""Decoder stack: position-queried dual-branch blocks with gated fusion.

Each block refines a carrier stream (initially the position embedding) with
masked self-attention at half width, uses it to query the visual and the
semantic branches in parallel, and fuses the two queried streams through a
sigmoid gate whose convolution weights are a single tensor shared by every
block and time step. The fused output becomes the next block's carrier; the
last carrier feeds the classifier.

The wiring is parameterized so the ablation harness can reconfigure it:
self-attention may be applied to any subset of {pos, sem, vis}, the cross
streams are drawn from {pv, ps, sv, sp} (query -> key/value), and fusion is
one of {gate, add, dot, gate_unshared}. Defaults reproduce the primary
architecture.
"""

from __future__ import annotations

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .params import AttentionBlock, ParamStore

SELF_ATTN_SITES = ("pos", "sem", "vis")
CROSS_WIRINGS = ("pv", "ps", "sv", "sp")
FUSION_MODES = ("gate", "add", "dot", "gate_unshared")


class SharedGate:
    """Sigmoid gate over concatenated streams; one instance serves all blocks."""

    def __init__(self, store: ParamStore, prefix, channels):
        self.w = store.xavier(f"{prefix}.w", (2 * channels, channels))
        self.b = store.zeros(f"{prefix}.b", (channels,))

    def __call__(self, first, second):
        if first.shape != second.shape:
            raise ShapeError(f"gate inputs disagree: {first.shape} vs {second.shape}")
        gate = ad.sigmoid(ad.dense(ad.concat([first, second], axis=-1), self.w, self.b))
        keep = ad.sub(ad.Tensor(1.0), gate)
        return ad.add(ad.mul(gate, first), ad.mul(keep, second)), gate.data


def validate_toggles(self_attn, cross, fusion):
    for site in self_attn:
        if site not in SELF_ATTN_SITES:
            raise ConfigError(f"unknown self-attention site {site!r}; expected {SELF_ATTN_SITES}")
    if not cross:
        raise ConfigError("at least one cross wiring is required")
    for name in cross:
        if name not in CROSS_WIRINGS:
            raise ConfigError(f"unknown cross wiring {name!r}; expected {CROSS_WIRINGS}")
    if len(cross) > 2:
        raise ConfigError(f"at most two cross streams can be fused, got {cross}")
    if fusion not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {fusion!r}; expected {FUSION_MODES}")


class DecoderBlock:
    def __init__(self, store, prefix, e_dim, heads, ffn_hidden,
                 self_attn=("pos",), cross=("ps", "pv"), fusion="gate", shared_gate=None):
        validate_toggles(self_attn, cross, fusion)
        if "pos" in self_attn and (e_dim // 2) % heads != 0:
            raise ConfigError(f"half width {e_dim // 2} not divisible by {heads} heads")
        self.self_attn = tuple(self_attn)
        self.cross = tuple(cross)
        self.fusion = fusion
        # the carrier self-attention runs at half width to stay cheap
        if "pos" in self_attn:
            self.pos_self = AttentionBlock(store, f"{prefix}.self_pos", e_dim, heads,
                                           ffn_hidden, inner=e_dim // 2)
        if "sem" in self_attn:
            self.sem_self = AttentionBlock(store, f"{prefix}.self_sem", e_dim, heads,
                                           ffn_hidden, inner=e_dim // 2)
        if "vis" in self_attn:
            self.vis_self = AttentionBlock(store, f"{prefix}.self_vis", e_dim, heads,
                                           ffn_hidden, inner=e_dim // 2)
        self.cross_blocks = {
            name: AttentionBlock(store, f"{prefix}.cross_{name}", e_dim, heads, ffn_hidden)
            for name in self.cross
        }
        # single-stream configs pass through unfused and need no gate
        self.gate = None
        if len(self.cross) == 2:
            if fusion == "gate":
                if shared_gate is None:
                    raise ConfigError("gate fusion needs the shared gate instance")
                self.gate = shared_gate
            elif fusion == "gate_unshared":
                self.gate = SharedGate(store, f"{prefix}.gate", e_dim)

    def __call__(self, carrier, vis, sem, mask):
        """Returns (next_carrier, trace) with exported attention weights."""
        trace = {}
        if "pos" in self.self_attn:
            carrier, _ = self.pos_self(carrier, carrier, carrier, mask)
        if "sem" in self.self_attn:
            sem, _ = self.sem_self(sem, sem, sem, mask)
        if "vis" in self.self_attn:
            vis, _ = self.vis_self(vis, vis, vis)
        streams = []
        for name in self.cross:
            block = self.cross_blocks[name]
            if name == "pv":
                out, w = block(carrier, vis, vis)
                trace["vis"] = w
            elif name == "ps":
                out, w = block(carrier, sem, sem, mask)
                trace["sem"] = w
            elif name == "sv":
                out, w = block(sem, vis, vis)
                trace["vis"] = w
            else:  # sp
                out, w = block(sem, carrier, carrier, mask)
                trace["sem"] = w
            streams.append(out)
        if len(streams) == 1:
            fused = streams[0]
        elif self.fusion == "add":
            fused = ad.add(streams[0], streams[1])
        elif self.fusion == "dot":
            fused = ad.mul(streams[0], streams[1])
        else:
            fused, gate_values = self.gate(streams[0], streams[1])
            trace["gate"] = gate_values
        return fused, trace


class DecoderStack:
    def __init__(self, store, prefix, layers, e_dim, heads, ffn_hidden,
                 self_attn=("pos",), cross=("ps", "pv"), fusion="gate"):
        if layers < 1:
            raise ConfigError(f"decoder needs at least one block, got {layers}")
        validate_toggles(self_attn, cross, fusion)
        self.shared_gate = None
        if fusion == "gate" and len(cross) == 2:
            self.shared_gate = SharedGate(store, f"{prefix}.gate", e_dim)
        self.blocks = [
            DecoderBlock(store, f"{prefix}.{i}", e_dim, heads, ffn_hidden,
                         self_attn, cross, fusion, shared_gate=self.shared_gate)
            for i in range(layers)
        ]

    def __call__(self, position, vis, sem, mask):
        carrier = position
        traces = []
        for block in self.blocks:
            carrier, trace = block(carrier, vis, sem, mask)
            traces.append(trace)
        return carrier, traces
