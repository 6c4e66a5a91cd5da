"""Empirical and exact-count complexity comparison of the two mixers.

The wavelet mixer costs O(T d): each decomposition level halves the
sequence, so the per-level costs form a geometric series summing to
(2 - 2^(1-L)) * T.  Dense attention costs O(T^2 d_k) from the
query-key product.  Two kinds of evidence are produced:

* exact multiply-add counts from instrumented forward kernels, checked
  against closed-form predictors (deterministic), and
* wall-clock timings over a ladder of sequence lengths with a fitted
  log-log slope (hardware-noisy, so gated loosely).

Counting convention: a length-n fused multiply-accumulate chain costs
2 n operations (n multiplies + n adds), the standard FLOP convention.
Elementwise kernels cost their output size.  The per-category terms:

  wavelet  transform   8 d T (1 - 2^-L)         (the geometric series)
           combine     2 T d (L + 1)            (gate mult + accumulate per scale)
           projection  2 T d^2 + T d            (output matmul + bias)
  attention qkv_projection 6 T d^2              (3 projections over all heads)
            scores         2 T^2 d              (h * 2 T^2 d_k, the quadratic term)
            softmax        5 h T^2               (scale, max-shift, exp, sum, divide)
            attend         2 T^2 d
            output_projection 2 T d^2

Timed and counted code paths are the same functions; the counter is
simply None while timing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - present in the dev environment
    threadpool_limits = None


class OpCounter:
    """Tallies multiply-add counts per named kernel category."""

    def __init__(self):
        self.by_category: dict[str, int] = {}

    def add(self, category: str, count: int) -> None:
        self.by_category[category] = self.by_category.get(category, 0) + int(count)

    def total(self) -> int:
        return sum(self.by_category.values())


# ---------------------------------------------------------------------------
# closed-form predictors


def wavelet_mixer_op_counts(t: int, d: int, levels: int) -> dict[str, int]:
    """Exact multiply-add counts for the wavelet mixer forward pass."""
    if t % (1 << levels) != 0:
        raise ValueError(f"T={t} must be divisible by 2^{levels}")
    transform = 8 * d * t - (8 * d * t) // (1 << levels)   # 8 d T (1 - 2^-L)
    combine = 2 * t * d * (levels + 1)
    projection = 2 * t * d * d + t * d
    return {"transform": transform, "combine": combine, "projection": projection}


def attention_op_counts(t: int, d: int, heads: int) -> dict[str, int]:
    """Exact multiply-add counts for the attention mixer forward pass."""
    if d % heads != 0:
        raise ValueError(f"d={d} must be divisible by heads={heads}")
    dk = d // heads
    return {
        "qkv_projection": 3 * heads * 2 * t * d * dk,
        "scores": heads * 2 * t * t * dk,
        "softmax": heads * 5 * t * t,
        "attend": heads * 2 * t * t * dk,
        "output_projection": 2 * t * (heads * dk) * d,
    }


# ---------------------------------------------------------------------------
# instrumented forward kernels (plain numpy, no tape)


def _counted_matmul(a: np.ndarray, b: np.ndarray, counter: OpCounter | None,
                    category: str) -> np.ndarray:
    if counter is not None:
        batch = int(np.prod(a.shape[:-2], dtype=np.int64)) if a.ndim > 2 else 1
        counter.add(category, 2 * batch * a.shape[-2] * a.shape[-1] * b.shape[-1])
    return a @ b


def wavelet_mixer_forward(x: np.ndarray, scales, agg,
                          counter: OpCounter | None = None) -> np.ndarray:
    """Forward-only wavelet mixer on raw arrays.

    ``scales`` is a list of (alpha, beta, gamma, delta) vectors and
    ``agg`` a (gates, w_out, b_out) triple, e.g. from make_wavelet_arrays.
    """
    t, d = x.shape[-2], x.shape[-1]
    levels = len(scales)
    if t % (1 << levels) != 0:
        raise ShapeError(f"T={t} must be divisible by 2^{levels}")
    gates, w_out, b_out = agg

    details = []
    cur = x
    for alpha, beta, gamma, delta in scales:
        even, odd = cur[..., 0::2, :], cur[..., 1::2, :]
        approx = alpha * even + beta * odd
        detail = gamma * even + delta * odd
        if counter is not None:
            # each output element is a length-2 dot product: 4 ops
            counter.add("transform", 4 * approx.size + 4 * detail.size)
        details.append(detail)
        cur = approx

    # accumulate through a reshaped view: upsample-by-repetition without
    # materialising the repeats
    acc = np.zeros_like(x)
    lead = x.shape[:-2]
    for l, det in enumerate(details):
        factor = 1 << (l + 1)
        view = acc.reshape(lead + (t // factor, factor, d))
        view += gates[l] * det[..., :, None, :]
        if counter is not None:
            counter.add("combine", 2 * t * d)   # gate multiply + accumulate
    view = acc.reshape(lead + (t // (1 << levels), 1 << levels, d))
    view += gates[levels] * cur[..., :, None, :]
    if counter is not None:
        counter.add("combine", 2 * t * d)

    out = _counted_matmul(acc, w_out, counter, "projection")
    out += b_out
    if counter is not None:
        counter.add("projection", t * d)
    return out


def attention_forward(x: np.ndarray, heads, w_o: np.ndarray,
                      counter: OpCounter | None = None) -> np.ndarray:
    """Forward-only multi-head attention on raw arrays.

    ``heads`` is a list of (w_q, w_k, w_v) triples, e.g. from
    make_attention_arrays.
    """
    t = x.shape[-2]
    dk = heads[0][0].shape[-1]
    outs = []
    for w_q, w_k, w_v in heads:
        q = _counted_matmul(x, w_q, counter, "qkv_projection")
        k = _counted_matmul(x, w_k, counter, "qkv_projection")
        v = _counted_matmul(x, w_v, counter, "qkv_projection")
        scores = _counted_matmul(q, np.swapaxes(k, -1, -2), counter, "scores")
        scores *= 1.0 / math.sqrt(dk)
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        if counter is not None:
            counter.add("softmax", 5 * t * t)   # scale, max-shift, exp, sum, divide
        outs.append(_counted_matmul(scores, v, counter, "attend"))
    merged = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=-1)
    return _counted_matmul(merged, w_o, counter, "output_projection")


def make_wavelet_arrays(d: int, levels: int, rng, dtype=np.float32):
    """Random near-Haar scale vectors and aggregation arrays for benchmarking."""
    haar = 1.0 / math.sqrt(2.0)
    scales = []
    for _ in range(levels):
        noise = lambda c: (c + 0.01 * rng.standard_normal(d)).astype(dtype)
        scales.append((noise(haar), noise(haar), noise(haar), noise(-haar)))
    bound = math.sqrt(3.0 / d)
    gates = np.full(levels + 1, 1.0 / (levels + 1), dtype=dtype)
    w_out = rng.uniform(-bound, bound, size=(d, d)).astype(dtype)
    b_out = np.zeros(d, dtype=dtype)
    return scales, (gates, w_out, b_out)


def make_attention_arrays(d: int, heads: int, rng, dtype=np.float32):
    if d % heads != 0:
        raise ValueError(f"d={d} must be divisible by heads={heads}")
    dk = d // heads
    bound = math.sqrt(3.0 / d)
    mats = [tuple(rng.uniform(-bound, bound, size=(d, dk)).astype(dtype)
                  for _ in range(3)) for _ in range(heads)]
    w_o = rng.uniform(-bound, bound, size=(heads * dk, d)).astype(dtype)
    return mats, w_o


# ---------------------------------------------------------------------------
# timing harness


@dataclass
class BenchRow:
    t: int
    rep: int
    seconds: float
    mulads: int


@dataclass
class BenchReport:
    mixer: str
    d: int
    levels: int
    heads: int
    reps: int
    rows: list[BenchRow] = field(default_factory=list)
    medians: dict[int, float] = field(default_factory=dict)       # T -> median seconds
    op_counts: dict[int, dict[str, int]] = field(default_factory=dict)
    slope: float = float("nan")
    slope_ci: tuple[float, float] = (float("nan"), float("nan"))

    @property
    def t_values(self) -> list[int]:
        return sorted(self.medians)


def _validate_t_list(t_list, levels: int, mixer: str) -> list[int]:
    ts = [int(t) for t in t_list]
    if sorted(ts) != ts or len(set(ts)) != len(ts):
        raise ValueError(f"T values must be strictly increasing, got {ts}")
    for t in ts:
        if t < 2 or (t & (t - 1)) != 0:
            raise ValueError(f"T values must be powers of two >= 2, got {t}")
        if mixer == "wavelet" and t % (1 << levels) != 0:
            raise ValueError(f"T={t} is not divisible by 2^{levels}")
    return ts


def bench_mixer(kind: str, t_list, d: int = 64, levels: int = 3, heads: int = 4,
                reps: int = 5, seed: int = 0, dtype=np.float32,
                single_thread: bool = True) -> BenchReport:
    """Median forward wall-time per T after 2 warmup runs, plus exact op counts.

    Runs pinned single-threaded by default (via threadpoolctl when
    available) to stabilise timings.
    """
    if kind not in ("wavelet", "attention"):
        raise ValueError(f"unknown mixer kind {kind!r}")
    if reps < 5:
        raise ValueError(f"reps must be >= 5, got {reps}")
    ts = _validate_t_list(t_list, levels, kind)
    report = BenchReport(mixer=kind, d=d, levels=levels, heads=heads, reps=reps)
    rng = np.random.default_rng(seed)

    if kind == "wavelet":
        scales, agg = make_wavelet_arrays(d, levels, rng, dtype)
        run = lambda x, c=None: wavelet_mixer_forward(x, scales, agg, c)
        predict = lambda t: wavelet_mixer_op_counts(t, d, levels)
    else:
        mats, w_o = make_attention_arrays(d, heads, rng, dtype)
        run = lambda x, c=None: attention_forward(x, mats, w_o, c)
        predict = lambda t: attention_op_counts(t, d, heads)

    def measure():
        for t in ts:
            x = rng.standard_normal((t, d)).astype(dtype)
            counter = OpCounter()
            run(x, counter)
            report.op_counts[t] = dict(counter.by_category)
            assert counter.by_category == predict(t), "instrumented counts diverged"
            mulads = counter.total()
            for _ in range(2):
                run(x)
            # calibrate an inner loop so each timed sample spans ~4 ms;
            # short forwards are otherwise lost in timer and scheduler noise
            start = time.perf_counter()
            run(x)
            once = time.perf_counter() - start
            loops = max(1, min(64, int(0.004 / max(once, 1e-9))))
            times = []
            for rep in range(reps):
                start = time.perf_counter()
                for _ in range(loops):
                    run(x)
                times.append((time.perf_counter() - start) / loops)
            for rep, sec in enumerate(times):
                report.rows.append(BenchRow(t=t, rep=rep, seconds=sec, mulads=mulads))
            report.medians[t] = float(np.median(times))

    if single_thread and threadpool_limits is not None:
        with threadpool_limits(limits=1):
            measure()
    else:
        measure()

    if len(ts) >= 4:
        report.slope, report.slope_ci = fit_scaling_exponent(report)
    return report


def fit_scaling_exponent(report: BenchReport, n_boot: int = 1000,
                         seed: int = 0) -> tuple[float, tuple[float, float]]:
    """Least-squares slope of log(median time) vs log(T), bootstrap 95% CI."""
    ts = report.t_values
    if len(ts) < 4:
        raise ValueError(f"need at least 4 distinct T values, got {len(ts)}")
    by_t = {t: [r.seconds for r in report.rows if r.t == t] for t in ts}
    log_t = np.log(np.asarray(ts, dtype=np.float64))
    medians = np.asarray([np.median(by_t[t]) for t in ts])
    slope = float(np.polyfit(log_t, np.log(medians), 1)[0])

    rng = np.random.default_rng(seed)
    boot = np.empty(n_boot)
    for i in range(n_boot):
        resampled = [np.median(rng.choice(by_t[t], size=len(by_t[t]), replace=True))
                     for t in ts]
        boot[i] = np.polyfit(log_t, np.log(resampled), 1)[0]
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return slope, (float(lo), float(hi))


def slope_from_times(t_values, times) -> float:
    """Plain log-log slope for already-aggregated (T, time) pairs."""
    t = np.asarray(t_values, dtype=np.float64)
    y = np.asarray(times, dtype=np.float64)
    if t.size < 4:
        raise ValueError(f"need at least 4 distinct T values, got {t.size}")
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])
