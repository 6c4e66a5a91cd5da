"""Fuse a multi-scale decomposition back into a full-length sequence.

Coefficients from every scale are repetition-upsampled to the original
length, combined as a gated sum (one learnable gate per scale, plus one
for the final approximation), and projected by a square output matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, accumulate_grad, linear, record_op
from .errors import ShapeError
from .wavelet import MultiScaleDecomposition


@dataclass
class AggregationParams:
    """Gated-sum fusion parameters.

    scale_gates[l] weights detail scale l; the last gate weights the
    final approximation.  w_out is d x d so the fused sequence keeps the
    model dimension.
    """

    scale_gates: Tensor   # length L + 1
    w_out: Tensor         # (d, d)
    b_out: Tensor         # (d,)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.scale_gates", self.scale_gates),
                (f"{prefix}.w_out", self.w_out),
                (f"{prefix}.b_out", self.b_out)]


def init_agg_params(d: int, levels: int, rng) -> AggregationParams:
    """Uniform gates 1/(L+1), Xavier-style w_out (variance 1/d), zero bias."""
    gates = Tensor(np.full(levels + 1, 1.0 / (levels + 1)), requires_grad=True)
    bound = np.sqrt(3.0 / d)
    w_out = Tensor(rng.uniform(-bound, bound, size=(d, d)), requires_grad=True)
    b_out = Tensor(np.zeros(d), requires_grad=True)
    return AggregationParams(scale_gates=gates, w_out=w_out, b_out=b_out)


def upsample_repeat(x: Tensor, factor: int) -> Tensor:
    """Repeat each row ``factor`` consecutive times along the sequence axis."""
    if factor < 1:
        raise ValueError(f"repeat factor must be >= 1, got {factor}")
    if x.data.ndim < 2:
        raise ShapeError(f"upsample_repeat needs rank >= 2, got shape {x.data.shape}")
    if factor == 1:
        return x
    out = Tensor(np.repeat(x.data, factor, axis=-2))
    m, d = x.data.shape[-2], x.data.shape[-1]
    lead = x.data.shape[:-2]

    def grads():
        g = out.grad
        if g is None:
            return
        # each source row receives the sum over its `factor` copies
        accumulate_grad(x, g.reshape(*lead, m, factor, d).sum(axis=-2))

    record_op((x,), (out,), grads)
    return out


def gate_value(gates: Tensor, index: int) -> Tensor:
    """Pick one gate as a rank-0 tensor; gradient scatters back to the vector."""
    if gates.data.ndim != 1:
        raise ShapeError(f"gates must be rank 1, got shape {gates.data.shape}")
    if not 0 <= index < gates.data.shape[0]:
        raise IndexError(f"gate index {index} out of range for {gates.data.shape[0]} gates")
    out = Tensor(gates.data[index])

    def grads():
        g = out.grad
        if g is None:
            return
        gv = np.zeros_like(gates.data)
        gv[index] = g
        accumulate_grad(gates, gv)

    record_op((gates,), (out,), grads)
    return out


def combine(dec: MultiScaleDecomposition, p: AggregationParams) -> Tensor:
    """Gated sum of upsampled coefficients, then the output projection.

    Y = (sum_l gate_l * repeat(detail_l, 2^(l+1))
         + gate_L * repeat(final_approx, 2^L)) @ w_out + b_out
    """
    levels = dec.levels
    t = dec.original_length
    if p.scale_gates.data.shape[0] != levels + 1:
        raise ShapeError(
            f"combine: {levels + 1} gates required for {levels} levels, "
            f"got {p.scale_gates.data.shape[0]}"
        )
    for l, det in enumerate(dec.details):
        if det.data.shape[-2] * (1 << (l + 1)) != t:
            raise ShapeError(
                f"combine: detail level {l} has {det.data.shape[-2]} rows, "
                f"inconsistent with original length {t}"
            )
    if dec.final_approx.data.shape[-2] * (1 << levels) != t:
        raise ShapeError(
            f"combine: final approximation has {dec.final_approx.data.shape[-2]} rows, "
            f"inconsistent with original length {t}"
        )

    parts = list(dec.details) + [dec.final_approx]
    factors = [1 << (l + 1) for l in range(levels)] + [1 << levels]
    fused = _gated_sum_upsample(parts, factors, p.scale_gates, t)
    return linear(fused, p.w_out, p.b_out)


def _gated_sum_upsample(parts: list[Tensor], factors: list[int],
                        gates: Tensor, t: int) -> Tensor:
    """Fused sum_i gate_i * upsample_repeat(parts[i], factors[i]).

    One tape entry; repetition is realised by broadcasting into a
    reshaped view of the accumulator instead of materialising repeats.
    """
    lead = parts[0].data.shape[:-2]
    d = parts[0].data.shape[-1]
    acc = np.zeros(lead + (t, d), dtype=parts[0].data.dtype)
    for part, factor, gate in zip(parts, factors, gates.data):
        view = acc.reshape(lead + (t // factor, factor, d))
        view += gate * part.data[..., :, None, :]
    out = Tensor(acc)

    def grads():
        g = out.grad
        if g is None:
            return
        g_gates = np.zeros_like(gates.data) if gates.tracked() else None
        for i, (part, factor) in enumerate(zip(parts, factors)):
            blocks = g.reshape(lead + (t // factor, factor, d)).sum(axis=-2)
            if part.tracked():
                accumulate_grad(part, gates.data[i] * blocks)
            if g_gates is not None:
                spec = "md,md->" if blocks.ndim == 2 else "bmd,bmd->"
                g_gates[i] = np.einsum(spec, blocks, part.data)
        if g_gates is not None:
            accumulate_grad(gates, g_gates)

    record_op(tuple(parts) + (gates,), (out,), grads)
    return out
