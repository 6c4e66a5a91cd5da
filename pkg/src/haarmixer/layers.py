"""Attention-free encoder/decoder layers and the baseline attention mixer.

Both layer kinds share the same pre-norm residual skeleton:

    1. normalise input            4. residual + dropout
    2. token mixer                5. normalise again
    3.                            6. feed-forward network
                                  7. residual + dropout

The token mixer is either the multi-scale wavelet module (decompose,
then gated-sum combine) or standard multi-head self-attention for the
baseline comparison.  The decoder layer is structurally identical to
the encoder layer: it has no cross-attention and no encoder input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aggregation import AggregationParams, combine, init_agg_params
from .autodiff import (
    Tensor,
    accumulate_grad,
    add,
    concat_last,
    embedding_lookup,
    layer_norm,
    linear,
    matmul,
    record_op,
    scale,
    softmax_rows,
    transpose_last2,
)
from .errors import ShapeError
from .wavelet import ScaleParams, init_scale_params, multiscale_decompose


def positional_encoding(t: int, d: int) -> Tensor:
    """Sinusoidal encoding: PE[t, 2k] = sin(t / 10000^(2k/d)), odd columns cos."""
    if d % 2 != 0:
        raise ValueError(f"positional encoding needs an even dimension, got {d}")
    pos = np.arange(t, dtype=np.float64)[:, None]
    k = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * k / d)
    pe = np.zeros((t, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return Tensor(pe)


def embed(tokens, table: Tensor, pe: Tensor | None = None) -> Tensor:
    """Row lookup plus positional encoding; pe defaults to the matching sinusoid."""
    looked = embedding_lookup(table, tokens)
    if pe is None:
        pe = positional_encoding(looked.data.shape[-2], looked.data.shape[-1])
    return add(looked, pe)


def dropout(x: Tensor, p: float, rng, training: bool = True) -> Tensor:
    """Zero elements with probability p and rescale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    mask *= 1.0 / (1.0 - p)          # scaled keep-mask, reused in backward
    out = Tensor(x.data * mask)

    def grads():
        if out.grad is not None:
            accumulate_grad(x, out.grad * mask)

    record_op((x,), (out,), grads)
    return out


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class WaveletMixerParams:
    """Per-level scale parameters plus the aggregation that fuses them."""

    scales: list[ScaleParams]
    agg: AggregationParams

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for sp in self.scales:
            out += sp.named(f"{prefix}.scale{sp.level}")
        out += self.agg.named(f"{prefix}.agg")
        return out


@dataclass
class AttentionParams:
    """Per-head projections for the baseline self-attention mixer (d_k = d_v = d/h)."""

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor

    @property
    def heads(self) -> int:
        return len(self.w_q)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i in range(self.heads):
            out += [(f"{prefix}.head{i}.w_q", self.w_q[i]),
                    (f"{prefix}.head{i}.w_k", self.w_k[i]),
                    (f"{prefix}.head{i}.w_v", self.w_v[i])]
        out.append((f"{prefix}.w_o", self.w_o))
        return out


@dataclass
class LayerParams:
    """Everything one encoder/decoder layer owns."""

    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    mixer: WaveletMixerParams | AttentionParams
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    dropout_p: float

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.ln1.gain", self.ln1_gain), (f"{prefix}.ln1.bias", self.ln1_bias),
               (f"{prefix}.ln2.gain", self.ln2_gain), (f"{prefix}.ln2.bias", self.ln2_bias)]
        out += self.mixer.named(f"{prefix}.mixer")
        out += [(f"{prefix}.ffn.w1", self.ffn_w1), (f"{prefix}.ffn.b1", self.ffn_b1),
                (f"{prefix}.ffn.w2", self.ffn_w2), (f"{prefix}.ffn.b2", self.ffn_b2)]
        return out


def init_attention_params(d: int, heads: int, rng) -> AttentionParams:
    if d % heads != 0:
        raise ValueError(f"model dimension {d} must be divisible by {heads} heads")
    dk = d // heads
    bound = math.sqrt(3.0 / d)

    def mat(rows, cols):
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)

    return AttentionParams(
        w_q=[mat(d, dk) for _ in range(heads)],
        w_k=[mat(d, dk) for _ in range(heads)],
        w_v=[mat(d, dk) for _ in range(heads)],
        w_o=mat(heads * dk, d),
    )


def init_wavelet_mixer_params(d: int, levels: int, rng,
                              sigma: float = 0.01) -> WaveletMixerParams:
    scales = [init_scale_params(d, level, sigma, rng, with_inverse=False)
              for level in range(levels)]
    return WaveletMixerParams(scales=scales, agg=init_agg_params(d, levels, rng))


def init_layer_params(d: int, d_ff: int, rng, mixer: str = "wavelet",
                      levels: int = 3, heads: int = 4, dropout_p: float = 0.1,
                      sigma: float = 0.01) -> LayerParams:
    if mixer == "wavelet":
        mix = init_wavelet_mixer_params(d, levels, rng, sigma)
    elif mixer == "attention":
        mix = init_attention_params(d, heads, rng)
    else:
        raise ValueError(f"unknown mixer kind {mixer!r}; use 'wavelet' or 'attention'")
    bound1 = math.sqrt(3.0 / d)
    bound2 = math.sqrt(3.0 / d_ff)
    return LayerParams(
        ln1_gain=Tensor(np.ones(d), requires_grad=True),
        ln1_bias=Tensor(np.zeros(d), requires_grad=True),
        ln2_gain=Tensor(np.ones(d), requires_grad=True),
        ln2_bias=Tensor(np.zeros(d), requires_grad=True),
        mixer=mix,
        ffn_w1=Tensor(rng.uniform(-bound1, bound1, size=(d, d_ff)), requires_grad=True),
        ffn_b1=Tensor(np.zeros(d_ff), requires_grad=True),
        ffn_w2=Tensor(rng.uniform(-bound2, bound2, size=(d_ff, d)), requires_grad=True),
        ffn_b2=Tensor(np.zeros(d), requires_grad=True),
        dropout_p=dropout_p,
    )


# ---------------------------------------------------------------------------
# mixers


def self_attention(x: Tensor, p: AttentionParams, causal: bool = False) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated, projected."""
    dk = p.w_q[0].data.shape[-1]
    t = x.data.shape[-2]
    mask = None
    if causal:
        # -1e9 above the diagonal blocks attention to future positions
        mask = Tensor(np.triu(np.full((t, t), -1e9), k=1))
    heads_out = []
    for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v):
        q = matmul(x, wq)
        k = matmul(x, wk)
        v = matmul(x, wv)
        scores = scale(matmul(q, transpose_last2(k)), 1.0 / math.sqrt(dk))
        if mask is not None:
            scores = add(scores, mask)
        heads_out.append(matmul(softmax_rows(scores), v))
    merged = heads_out[0] if len(heads_out) == 1 else concat_last(heads_out)
    return matmul(merged, p.w_o)


def wavelet_mixer(x: Tensor, p: WaveletMixerParams) -> Tensor:
    """Multi-scale decomposition followed by the gated-sum combine."""
    return combine(multiscale_decompose(x, p.scales), p.agg)


def apply_mixer(x: Tensor, mixer: WaveletMixerParams | AttentionParams) -> Tensor:
    if isinstance(mixer, WaveletMixerParams):
        return wavelet_mixer(x, mixer)
    if isinstance(mixer, AttentionParams):
        return self_attention(x, mixer)
    raise TypeError(f"unknown mixer parameter type {type(mixer).__name__}")


# ---------------------------------------------------------------------------
# layers


def ffn(x: Tensor, p: LayerParams) -> Tensor:
    """Position-wise ReLU(x W1 + b1) W2 + b2."""
    return linear(linear(x, p.ffn_w1, p.ffn_b1, activation="relu"),
                  p.ffn_w2, p.ffn_b2)


def lmw_encoder_layer(x: Tensor, p: LayerParams, rng, training: bool = True) -> Tensor:
    """Pre-norm residual layer with the token mixer in place of self-attention.

    The caller is responsible for the sequence length being divisible by
    2^L when the mixer is the wavelet module (pad_sequence otherwise).
    """
    mixed = apply_mixer(layer_norm(x, p.ln1_gain, p.ln1_bias), p.mixer)
    x_res = add(x, dropout(mixed, p.dropout_p, rng, training))
    refined = ffn(layer_norm(x_res, p.ln2_gain, p.ln2_bias), p)
    return add(x_res, dropout(refined, p.dropout_p, rng, training))


def lmw_decoder_layer(y_target: Tensor, p: LayerParams, rng,
                      training: bool = True) -> Tensor:
    """Decoder layer: same structure, applied to the target sequence only.

    There is no cross-attention and no encoder input; the layer is
    non-causal as written.  Autoregressive use goes through the
    pad-and-rerun generation helper in the model module.
    """
    return lmw_encoder_layer(y_target, p, rng, training)


def layer_parameter_count(p: LayerParams) -> dict[str, int]:
    """Parameter counts per sub-layer group (norms / mixer / ffn)."""
    counts = {"layer_norms": 0, "mixer": 0, "ffn": 0}
    for name, t in p.named(""):
        if ".ln1." in name or ".ln2." in name:
            counts["layer_norms"] += t.data.size
        elif ".mixer." in name:
            counts["mixer"] += t.data.size
        else:
            counts["ffn"] += t.data.size
    return counts
