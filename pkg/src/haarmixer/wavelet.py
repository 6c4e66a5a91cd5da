"""Classical and learnable Haar transforms, single level and multi-scale.

The classical transform pairs adjacent samples into a scaled sum
(approximation) and difference (detail).  The learnable variant replaces
the two fixed +-1/sqrt(2) constants with four per-dimension parameter
vectors per decomposition level, so the mixing weights can be trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    accumulate_grad,
    add,
    interleave,
    mul_elementwise,
    record_op,
)
from .errors import ShapeError

HAAR = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# classical transform on plain 1-D signals


def haar_forward_classical(x) -> tuple[np.ndarray, np.ndarray]:
    """One level: a_i = (x_2i + x_2i+1)/sqrt2, d_i = (x_2i - x_2i+1)/sqrt2."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D signal, got shape {x.shape}")
    if x.size % 2 != 0:
        raise ValueError(f"signal length must be even, got {x.size}; pad first")
    even, odd = x[0::2], x[1::2]
    return (even + odd) * HAAR, (even - odd) * HAAR


def haar_inverse_classical(approx, detail) -> np.ndarray:
    """Perfect reconstruction: x_2i = (a+d)/sqrt2, x_2i+1 = (a-d)/sqrt2."""
    a = np.asarray(approx, dtype=np.float64)
    d = np.asarray(detail, dtype=np.float64)
    if a.shape != d.shape or a.ndim != 1:
        raise ShapeError(f"approx {a.shape} and detail {d.shape} must be equal 1-D")
    out = np.empty(2 * a.size, dtype=np.float64)
    out[0::2] = (a + d) * HAAR
    out[1::2] = (a - d) * HAAR
    return out


def haar_multilevel_forward(x, levels: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Recursive classical transform; returns (details per level, final approx)."""
    x = np.asarray(x, dtype=np.float64)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if x.size % (1 << levels) != 0:
        raise ValueError(
            f"signal length {x.size} is not divisible by 2^{levels}; pad first"
        )
    details = []
    cur = x
    for _ in range(levels):
        cur, det = haar_forward_classical(cur)
        details.append(det)
    return details, cur


def haar_multilevel_inverse(details, approx) -> np.ndarray:
    """Invert haar_multilevel_forward."""
    cur = np.asarray(approx, dtype=np.float64)
    for det in reversed(list(details)):
        cur = haar_inverse_classical(cur, det)
    return cur


# ---------------------------------------------------------------------------
# learnable transform


@dataclass
class ScaleParams:
    """Learnable mixing vectors for one decomposition level.

    Forward: A_i = alpha * x_2i + beta * x_2i+1, D_i = gamma * x_2i + delta * x_2i+1
    (elementwise per feature dimension).  Inverse vectors are optional;
    they are used for round-trip reconstruction, not in the model path.
    """

    level: int
    alpha: Tensor
    beta: Tensor
    gamma: Tensor
    delta: Tensor
    alpha_inv: Tensor | None = None
    beta_inv: Tensor | None = None
    gamma_inv: Tensor | None = None
    delta_inv: Tensor | None = None

    @property
    def dim(self) -> int:
        return self.alpha.data.shape[0]

    def has_inverse(self) -> bool:
        return self.alpha_inv is not None

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = [(f"{prefix}.alpha", self.alpha), (f"{prefix}.beta", self.beta),
               (f"{prefix}.gamma", self.gamma), (f"{prefix}.delta", self.delta)]
        if self.has_inverse():
            out += [(f"{prefix}.alpha_inv", self.alpha_inv),
                    (f"{prefix}.beta_inv", self.beta_inv),
                    (f"{prefix}.gamma_inv", self.gamma_inv),
                    (f"{prefix}.delta_inv", self.delta_inv)]
        return out


@dataclass
class MultiScaleDecomposition:
    """Detail sequences per level plus the final approximation."""

    details: list[Tensor]       # details[l] has T / 2^(l+1) rows
    final_approx: Tensor        # T / 2^L rows
    original_length: int

    @property
    def levels(self) -> int:
        return len(self.details)


def init_scale_params(d: int, level: int, sigma: float, rng,
                      with_inverse: bool = True) -> ScaleParams:
    """Haar constants plus N(0, sigma^2) noise per element.

    sigma=0 gives the exact classical transform; the default training
    init uses a small sigma so every dimension starts near Haar.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")

    def vec(center):
        noise = sigma * rng.standard_normal(d) if sigma > 0 else np.zeros(d)
        return Tensor(center + noise, requires_grad=True)

    inv = {}
    if with_inverse:
        inv = dict(alpha_inv=vec(HAAR), beta_inv=vec(HAAR),
                   gamma_inv=vec(HAAR), delta_inv=vec(-HAAR))
    return ScaleParams(level=level, alpha=vec(HAAR), beta=vec(HAAR),
                       gamma=vec(HAAR), delta=vec(-HAAR), **inv)


def classical_scale_params(d: int, level: int = 0) -> ScaleParams:
    """Exact Haar constants (the sigma=0 initialisation)."""
    rng = np.random.default_rng(0)  # unused at sigma=0
    return init_scale_params(d, level, 0.0, rng)


def _check_dim(x: Tensor, p: ScaleParams, opname: str) -> None:
    if x.data.ndim < 2:
        raise ShapeError(f"{opname} needs rank >= 2 input, got shape {x.data.shape}")
    if x.data.shape[-1] != p.dim:
        raise ShapeError(
            f"{opname}: input feature size {x.data.shape[-1]} does not match "
            f"parameter length {p.dim}"
        )


def _sum_to_vector(g: np.ndarray, v: np.ndarray) -> np.ndarray:
    """sum over all leading axes of g * v, one pass (strided inputs welcome)."""
    spec = "td,td->d" if g.ndim == 2 else "btd,btd->d"
    return np.einsum(spec, g, v)


def learnable_haar_forward(x: Tensor, p: ScaleParams) -> tuple[Tensor, Tensor]:
    """One level of the learnable transform; differentiable in x and params.

    Fused kernel: reads the even/odd rows as strided views and records a
    single tape entry (equivalent to split + four ⊙ + two adds).
    """
    _check_dim(x, p, "learnable_haar_forward")
    n = x.data.shape[-2]
    if n % 2 != 0:
        raise ShapeError(
            f"learnable_haar_forward needs an even row count, got {n}; "
            f"pad the sequence first"
        )
    even = x.data[..., 0::2, :]
    odd = x.data[..., 1::2, :]
    a_buf = even * p.alpha.data
    a_buf += odd * p.beta.data
    d_buf = even * p.gamma.data
    d_buf += odd * p.delta.data
    approx = Tensor(a_buf)
    detail = Tensor(d_buf)

    def grads():
        ga, gd = approx.grad, detail.grad
        if ga is None and gd is None:
            return
        if x.tracked():
            gx = np.zeros_like(x.data)
            if ga is not None:
                gx[..., 0::2, :] += ga * p.alpha.data
                gx[..., 1::2, :] += ga * p.beta.data
            if gd is not None:
                gx[..., 0::2, :] += gd * p.gamma.data
                gx[..., 1::2, :] += gd * p.delta.data
            accumulate_grad(x, gx)
        if ga is not None:
            accumulate_grad(p.alpha, _sum_to_vector(ga, even))
            accumulate_grad(p.beta, _sum_to_vector(ga, odd))
        if gd is not None:
            accumulate_grad(p.gamma, _sum_to_vector(gd, even))
            accumulate_grad(p.delta, _sum_to_vector(gd, odd))

    record_op((x, p.alpha, p.beta, p.gamma, p.delta), (approx, detail), grads)
    return approx, detail


def learnable_haar_inverse(approx: Tensor, detail: Tensor, p: ScaleParams) -> Tensor:
    """Learnable inverse: even rows from (alpha_inv, gamma_inv), odd from (beta_inv, delta_inv)."""
    if not p.has_inverse():
        raise ValueError("scale parameters carry no inverse vectors")
    _check_dim(approx, p, "learnable_haar_inverse")
    if approx.data.shape != detail.data.shape:
        raise ShapeError(
            f"approx {approx.data.shape} and detail {detail.data.shape} must match"
        )
    even = add(mul_elementwise(approx, p.alpha_inv), mul_elementwise(detail, p.gamma_inv))
    odd = add(mul_elementwise(approx, p.beta_inv), mul_elementwise(detail, p.delta_inv))
    return interleave(even, odd)


def multiscale_decompose(x: Tensor, params: list[ScaleParams]) -> MultiScaleDecomposition:
    """Recursive learnable transform: each level consumes the previous approximation."""
    levels = len(params)
    if levels < 1:
        raise ValueError("need at least one level of scale parameters")
    t = x.data.shape[-2] if x.data.ndim >= 2 else 0
    if x.data.ndim < 2 or t % (1 << levels) != 0:
        raise ShapeError(
            f"sequence length {t} is not divisible by 2^{levels}; "
            f"call pad_sequence first"
        )
    details = []
    cur = x
    for p in params:
        cur, det = learnable_haar_forward(cur, p)
        details.append(det)
    return MultiScaleDecomposition(details=details, final_approx=cur, original_length=t)


def pad_sequence(x: Tensor, target: int) -> tuple[Tensor, int]:
    """Append zero rows up to ``target`` rows; returns (padded, original length).

    Downstream losses should mask the padded positions using the
    returned original length.
    """
    if x.data.ndim < 2:
        raise ShapeError(f"pad_sequence needs rank >= 2 input, got shape {x.data.shape}")
    t = x.data.shape[-2]
    if target < t:
        raise ValueError(f"target length {target} is smaller than current length {t}")
    if target == t:
        return x, t
    width = [(0, 0)] * x.data.ndim
    width[-2] = (0, target - t)
    out = Tensor(np.pad(x.data, width))

    def grads():
        if out.grad is not None:
            accumulate_grad(x, out.grad[..., :t, :])

    record_op((x,), (out,), grads)
    return out, t


def next_multiple(n: int, block: int) -> int:
    """Smallest multiple of ``block`` that is >= n."""
    return ((n + block - 1) // block) * block
