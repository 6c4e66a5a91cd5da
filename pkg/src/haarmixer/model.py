"""End-to-end toy sequence models, synthetic tasks, and the training loop.

Models are per-position taggers: embed + positional encoding, a stack of
mixer layers (encoder and optionally decoder layers, both attention-free
when the wavelet mixer is selected), and a linear vocabulary head.
Training uses Adam with linear warmup followed by inverse square root
decay, and label-smoothed cross entropy.  Everything is deterministic
given the seed.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    cross_entropy_label_smoothed,
    matmul,
    zero_grad,
)
from .layers import (
    LayerParams,
    embed,
    init_layer_params,
    lmw_decoder_layer,
    lmw_encoder_layer,
    positional_encoding,
)

MIXERS = ("wavelet", "attention")
TASKS = ("copy", "reverse", "pair-sum-parity")

CHECKPOINT_VERSION = 1
TRACE_HEADER = ["step", "loss", "token_acc", "lr"]


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ModelConfig:
    """Architecture hyperparameters (desk-scale defaults)."""

    vocab: int = 16
    seq_len: int = 32
    d_model: int = 64
    d_ff: int = 256
    heads: int = 4            # baseline attention only; unused by the wavelet mixer
    levels: int = 3
    encoder_layers: int = 2
    decoder_layers: int = 0
    dropout_p: float = 0.1
    mixer: str = "wavelet"
    task: str = "copy"

    def validate(self) -> None:
        if self.mixer not in MIXERS:
            raise ValueError(f"unknown mixer {self.mixer!r}; choose from {MIXERS}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.d_model % 2 != 0:
            raise ValueError(f"d_model must be even for positional encoding, got {self.d_model}")
        if self.mixer == "wavelet" and self.seq_len % (1 << self.levels) != 0:
            raise ValueError(
                f"seq_len {self.seq_len} must be divisible by 2^levels = {1 << self.levels}"
            )
        if self.mixer == "attention" and self.d_model % self.heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by heads {self.heads}"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")


@dataclass
class TrainConfig:
    """Optimizer and data settings."""

    batch_size: int = 32
    warmup_steps: int = 400
    label_smoothing: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")


def config_to_dict(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    flat = asdict(model_cfg)
    flat.update(asdict(train_cfg))
    return flat


def config_from_dict(doc: dict) -> tuple[ModelConfig, TrainConfig]:
    """Build configs from a flat key-value document; unknown keys are rejected."""
    model_fields = {f for f in ModelConfig.__dataclass_fields__}
    train_fields = {f for f in TrainConfig.__dataclass_fields__}
    unknown = set(doc) - model_fields - train_fields
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    model_cfg = ModelConfig(**{k: v for k, v in doc.items() if k in model_fields})
    train_cfg = TrainConfig(**{k: v for k, v in doc.items() if k in train_fields})
    model_cfg.validate()
    train_cfg.validate()
    return model_cfg, train_cfg


def load_config(path: str) -> tuple[ModelConfig, TrainConfig]:
    with open(path, "r", encoding="utf-8") as f:
        return config_from_dict(json.load(f))


def save_config(path: str, model_cfg: ModelConfig, train_cfg: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(model_cfg, train_cfg), f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# model


class SequenceModel:
    """Embedding, mixer-layer stack, and vocabulary head."""

    def __init__(self, config: ModelConfig, rng):
        config.validate()
        self.config = config
        d, v = config.d_model, config.vocab
        self.embedding = Tensor(rng.standard_normal((v, d)), requires_grad=True)
        self.pos = positional_encoding(config.seq_len, d)

        def make_layer():
            return init_layer_params(
                d, config.d_ff, rng, mixer=config.mixer, levels=config.levels,
                heads=config.heads, dropout_p=config.dropout_p)

        self.encoder: list[LayerParams] = [make_layer() for _ in range(config.encoder_layers)]
        self.decoder: list[LayerParams] = [make_layer() for _ in range(config.decoder_layers)]
        bound = math.sqrt(3.0 / d)
        self.head_w = Tensor(rng.uniform(-bound, bound, size=(d, v)), requires_grad=True)
        self.head_b = Tensor(np.zeros(v), requires_grad=True)

    def forward(self, tokens, rng=None, training: bool = False) -> Tensor:
        """Logits of shape tokens.shape + (vocab,).  rng is needed only when training."""
        if training and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        x = embed(tokens, self.embedding, self.pos)
        for p in self.encoder:
            x = lmw_encoder_layer(x, p, rng, training)
        for p in self.decoder:
            x = lmw_decoder_layer(x, p, rng, training)
        return add(matmul(x, self.head_w), self.head_b)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("embedding", self.embedding)]
        for i, p in enumerate(self.encoder):
            out += p.named(f"encoder.{i}")
        for i, p in enumerate(self.decoder):
            out += p.named(f"decoder.{i}")
        out += [("head.w", self.head_w), ("head.b", self.head_b)]
        return out


# ---------------------------------------------------------------------------
# synthetic tasks


def make_batch(task: str, vocab: int, seq_len: int, batch_size: int, rng):
    """Sample (inputs, targets, mask) for one synthetic task.

    copy: targets equal inputs.  reverse: targets[t] = inputs[T-1-t].
    pair-sum-parity: targets[2i] = targets[2i+1] = (inputs[2i] + inputs[2i+1]) mod 2.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    inputs = rng.integers(0, vocab, size=(batch_size, seq_len))
    if task == "copy":
        targets = inputs.copy()
    elif task == "reverse":
        targets = inputs[:, ::-1].copy()
    else:
        if seq_len % 2 != 0:
            raise ValueError(f"pair-sum-parity needs an even seq_len, got {seq_len}")
        parity = (inputs[:, 0::2] + inputs[:, 1::2]) % 2
        targets = np.repeat(parity, 2, axis=1)
    mask = np.ones((batch_size, seq_len))
    return inputs, targets, mask


# ---------------------------------------------------------------------------
# loss and metrics


@dataclass
class Metrics:
    loss: float
    perplexity: float
    token_accuracy: float


def compute_metrics(logits: np.ndarray, targets, mask, smoothed_loss: float) -> Metrics:
    """Perplexity from unsmoothed NLL; accuracy = argmax hit rate over the mask."""
    ids = np.asarray(targets)
    m = np.asarray(mask, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(logp, ids[..., None], axis=-1)[..., 0]
    total = m.sum()
    mean_nll = float((nll * m).sum() / total)
    correct = (logits.argmax(axis=-1) == ids).astype(np.float64)
    acc = float((correct * m).sum() / total)
    return Metrics(loss=smoothed_loss, perplexity=math.exp(mean_nll), token_accuracy=acc)


def forward_loss(model: SequenceModel, batch, smoothing: float, rng=None,
                 training: bool = False) -> tuple[Tensor, Metrics]:
    """Smoothed mean cross entropy over unmasked tokens, plus evaluation metrics."""
    inputs, targets, mask = batch
    logits = model.forward(inputs, rng, training)
    loss = cross_entropy_label_smoothed(logits, targets, smoothing, mask)
    metrics = compute_metrics(logits.data, targets, mask, float(loss.data))
    return loss, metrics


# ---------------------------------------------------------------------------
# optimizer


def lr_schedule(step: int, d_model: int, warmup: int) -> float:
    """Linear warmup then inverse square root decay; peaks at step == warmup."""
    if step < 1:
        raise ValueError(f"schedule steps start at 1, got {step}")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class OptimizerState:
    """Adam moments keyed by parameter name, plus the shared step counter."""

    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    label_smoothing: float = 0.1
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: list[tuple[str, Tensor]], state: OptimizerState,
              d_model: int) -> float:
    """One Adam update with bias correction; returns the learning rate used."""
    state.step += 1
    lr = lr_schedule(state.step, d_model, state.warmup_steps)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, t in params:
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
        g = t.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(t.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return lr


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainReport:
    steps: list[int]
    losses: list[float]
    token_accs: list[float]
    lrs: list[float]
    final_metrics: Metrics
    trace_path: str | None = None
    checkpoint_path: str | None = None


def evaluate(model: SequenceModel, batches, smoothing: float = 0.1) -> Metrics:
    """Aggregate metrics over batches with dropout off (pure inference)."""
    batches = list(batches)
    if not batches:
        raise ValueError("evaluate needs at least one batch")
    loss_sum = nll_sum = correct = total = 0.0
    for batch in batches:
        inputs, targets, mask = batch
        logits = model.forward(inputs, training=False)
        loss = cross_entropy_label_smoothed(logits, targets, smoothing, mask)
        metrics = compute_metrics(logits.data, targets, mask, float(loss.data))
        weight = float(np.asarray(mask).sum())
        loss_sum += metrics.loss * weight
        nll_sum += math.log(metrics.perplexity) * weight
        correct += metrics.token_accuracy * weight
        total += weight
    return Metrics(loss=loss_sum / total, perplexity=math.exp(nll_sum / total),
                   token_accuracy=correct / total)


def _eval_batches(config: ModelConfig, train_cfg: TrainConfig, n_batches: int = 4):
    # held-out stream: same seed family as training, distinct child key
    rng = np.random.default_rng([train_cfg.seed, 991])
    return [make_batch(config.task, config.vocab, config.seq_len,
                       train_cfg.batch_size, rng) for _ in range(n_batches)]


def train(config: ModelConfig, train_cfg: TrainConfig, steps: int,
          out_dir: str | None = None) -> tuple[SequenceModel, TrainReport]:
    """Train from scratch for ``steps`` updates; deterministic given the seed.

    Writes step,loss,token_acc,lr to trace.csv and a JSON checkpoint when
    ``out_dir`` is given.  With steps == 0 the report carries only the
    initial evaluation metrics.
    """
    config.validate()
    train_cfg.validate()
    rng = np.random.default_rng(train_cfg.seed)
    model = SequenceModel(config, rng)
    state = OptimizerState(warmup_steps=train_cfg.warmup_steps,
                           label_smoothing=train_cfg.label_smoothing)
    params = model.named_parameters()
    tensors = [t for _, t in params]

    report = TrainReport(steps=[], losses=[], token_accs=[], lrs=[],
                         final_metrics=Metrics(0.0, 1.0, 0.0))
    for _ in range(steps):
        batch = make_batch(config.task, config.vocab, config.seq_len,
                           train_cfg.batch_size, rng)
        with Tape():
            loss, metrics = forward_loss(model, batch, train_cfg.label_smoothing,
                                         rng, training=True)
        backward(loss)
        lr = adam_step(params, state, config.d_model)
        zero_grad(tensors)
        report.steps.append(state.step)
        report.losses.append(metrics.loss)
        report.token_accs.append(metrics.token_accuracy)
        report.lrs.append(lr)

    report.final_metrics = evaluate(model, _eval_batches(config, train_cfg),
                                    train_cfg.label_smoothing)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        report.trace_path = os.path.join(out_dir, "trace.csv")
        write_trace(report.trace_path, report)
        report.checkpoint_path = os.path.join(out_dir, "checkpoint.json")
        save_checkpoint(report.checkpoint_path, model, train_cfg)
    return model, report


def write_trace(path: str, report: TrainReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        for s, l, a, r in zip(report.steps, report.losses, report.token_accs, report.lrs):
            writer.writerow([s, repr(l), repr(a), repr(r)])


def moving_average(values, window: int = 100) -> np.ndarray:
    """Trailing moving average; entry i averages the last `window` values up to i."""
    v = np.asarray(values, dtype=np.float64)
    out = np.empty_like(v)
    csum = np.cumsum(v)
    for i in range(len(v)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str, model: SequenceModel,
                    train_cfg: TrainConfig | None = None) -> None:
    """Versioned JSON document: config plus name -> {shape, values} (decimal f64)."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": config_to_dict(model.config, train_cfg or TrainConfig()),
        "params": {
            name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in model.named_parameters()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str) -> tuple[SequenceModel, TrainConfig]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {doc.get('format_version')!r} in {path}"
        )
    config, train_cfg = config_from_dict(doc["config"])
    model = SequenceModel(config, np.random.default_rng(train_cfg.seed))
    stored = doc["params"]
    for name, t in model.named_parameters():
        if name not in stored:
            raise ValueError(f"checkpoint {path} is missing parameter {name!r}")
        entry = stored[name]
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != t.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {arr.shape}, "
                f"model expects {t.data.shape}"
            )
        t.data = arr
    return model, train_cfg


# ---------------------------------------------------------------------------
# generation (causal-pad mode)


def generate(model: SequenceModel, prompt, n_tokens: int, pad_id: int = 0):
    """Greedy autoregressive decoding by re-running on the padded prefix.

    At each step the prefix is padded with ``pad_id`` up to the model's
    sequence length, the stack runs once, and the logits at the last
    real position choose the next token.  This is the causal-pad mode:
    the layers themselves are non-causal.
    """
    tokens = list(prompt)
    t_max = model.config.seq_len
    if len(tokens) + n_tokens > t_max:
        raise ValueError(
            f"prompt ({len(tokens)}) + new tokens ({n_tokens}) exceed seq_len {t_max}"
        )
    for _ in range(n_tokens):
        padded = np.full(t_max, pad_id, dtype=np.int64)
        padded[:len(tokens)] = tokens
        logits = model.forward(padded, training=False)
        tokens.append(int(logits.data[len(tokens) - 1].argmax()))
    return tokens
