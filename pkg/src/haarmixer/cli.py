"""Command-line entry point.

Subcommands: train, eval, bench, haar, export-coeffs.  Numeric outputs
are CSV; structured summaries are JSON.  Exit codes: 0 ok, 2 usage,
3 input validation, 4 numeric failure.  HAARMIXER_OUT sets the default
output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import model as model_mod
from .autodiff import layer_norm
from .errors import NumericError, ShapeError
from .layers import embed, lmw_encoder_layer
from .wavelet import (
    haar_multilevel_forward,
    haar_multilevel_inverse,
    multiscale_decompose,
    next_multiple,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4

_META_KIND = "meta"


def _default_out() -> str:
    return os.environ.get("HAARMIXER_OUT", ".")


# ---------------------------------------------------------------------------
# train / eval


def cmd_train(args) -> int:
    config, train_cfg = model_mod.load_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    out_dir = args.out or _default_out()
    _, report = model_mod.train(config, train_cfg, args.steps, out_dir=out_dir)
    m = report.final_metrics
    print(f"trained {args.steps} steps on task={config.task} mixer={config.mixer}")
    print(f"final: loss={m.loss:.6f} ppl={m.perplexity:.4f} acc={m.token_accuracy:.4f}")
    print(f"trace: {report.trace_path}")
    print(f"checkpoint: {report.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, train_cfg = model_mod.load_checkpoint(args.checkpoint)
    if args.config is not None:
        config, train_cfg = model_mod.load_config(args.config)
        if model_mod.config_to_dict(config, train_cfg) != \
                model_mod.config_to_dict(model.config, train_cfg):
            raise ValueError("config file disagrees with the checkpoint's stored config")
    seed = args.seed if args.seed is not None else train_cfg.seed
    rng = np.random.default_rng([seed, 991])
    batches = [model_mod.make_batch(model.config.task, model.config.vocab,
                                    model.config.seq_len, train_cfg.batch_size, rng)
               for _ in range(args.batches)]
    metrics = model_mod.evaluate(model, batches, train_cfg.label_smoothing)
    doc = {"loss": metrics.loss, "perplexity": metrics.perplexity,
           "token_accuracy": metrics.token_accuracy}
    print(json.dumps(doc, sort_keys=True))
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True)
            f.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    t_list = []
    t = args.tmin
    while t <= args.tmax:
        t_list.append(t)
        t *= 2
    report = bench_mod.bench_mixer(args.mixer, t_list, d=args.d, levels=args.levels,
                                   heads=args.heads, reps=args.reps, seed=args.seed)
    out_csv = args.out
    with open(out_csv, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["mixer", "T", "rep", "seconds", "mulads"])
        for row in report.rows:
            writer.writerow([report.mixer, row.t, row.rep, repr(row.seconds), row.mulads])
    summary = {
        "mixer": report.mixer, "d": report.d, "levels": report.levels,
        "heads": report.heads, "reps": report.reps,
        "median_seconds": {str(t): report.medians[t] for t in report.t_values},
        "mulads": {str(t): report.op_counts[t] for t in report.t_values},
        "slope": report.slope,
        "slope_ci95": list(report.slope_ci),
    }
    summary_path = os.path.splitext(out_csv)[0] + "_summary.json"
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"{report.mixer}: slope={report.slope:.3f} "
          f"ci95=({report.slope_ci[0]:.3f}, {report.slope_ci[1]:.3f})")
    print(f"rows: {out_csv}")
    print(f"summary: {summary_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# classical haar on a CSV signal


def _read_signal_csv(path: str) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(float(text.split(",")[0]))
            except ValueError:
                if line_no == 1:
                    continue      # header row
                raise ValueError(f"{path}:{line_no}: not a number: {text!r}") from None
    if not values:
        raise ValueError(f"{path}: no numeric rows found")
    return np.asarray(values, dtype=np.float64)


def cmd_haar(args) -> int:
    if args.inverse:
        return _haar_inverse(args)
    signal = _read_signal_csv(args.input)
    original = signal.size
    block = 1 << args.levels
    padded_len = next_multiple(max(original, block), block)
    if padded_len != original:
        signal = np.concatenate([signal, np.zeros(padded_len - original)])
    details, approx = haar_multilevel_forward(signal, args.levels)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "level", "index", "value"])
        writer.writerow([_META_KIND, args.levels, 0, original])
        for level, det in enumerate(details):
            for i, v in enumerate(det):
                writer.writerow(["detail", level, i, repr(float(v))])
        for i, v in enumerate(approx):
            writer.writerow(["approx", args.levels - 1, i, repr(float(v))])
    print(f"levels={args.levels} signal_length={original} -> {args.out}")
    return EXIT_OK


def _haar_inverse(args) -> int:
    rows = []
    with open(args.input, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["kind", "level", "index", "value"]:
            raise ValueError(f"{args.input}: not a haar coefficient file (bad header)")
        rows = list(reader)
    meta = [r for r in rows if r[0] == _META_KIND]
    if len(meta) != 1:
        raise ValueError(f"{args.input}: expected exactly one meta row")
    levels, original = int(meta[0][1]), int(float(meta[0][3]))
    details = [[] for _ in range(levels)]
    approx = []
    for kind, level, index, value in rows:
        if kind == "detail":
            details[int(level)].append((int(index), float(value)))
        elif kind == "approx":
            approx.append((int(index), float(value)))
    det_arrays = [np.asarray([v for _, v in sorted(level_rows)]) for level_rows in details]
    approx_arr = np.asarray([v for _, v in sorted(approx)])
    signal = haar_multilevel_inverse(det_arrays, approx_arr)[:original]
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["value"])
        for v in signal:
            writer.writerow([repr(float(v))])
    print(f"reconstructed {original} samples -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# coefficient export


def _read_tokens_csv(path: str) -> np.ndarray:
    values = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            field = text.split(",")[0]
            try:
                values.append(int(field))
            except ValueError:
                if line_no == 1:
                    continue      # header row
                raise ValueError(f"{path}:{line_no}: not a token id: {field!r}") from None
    if not values:
        raise ValueError(f"{path}: no token rows found")
    return np.asarray(values, dtype=np.int64)


def export_coefficients(model, tokens: np.ndarray, layer_index: int = 0):
    """Detail magnitudes and final approximation of one layer's mixer input.

    Returns (header, matrix) where the matrix has d rows and one column
    block per scale (widths T/2^(l+1)) plus the approximation block
    (width T/2^L), matching the trained model's decomposition.
    """
    config = model.config
    if config.mixer != "wavelet":
        raise ValueError("coefficient export needs a wavelet-mixer checkpoint")
    stack = model.encoder + model.decoder
    if not 0 <= layer_index < len(stack):
        raise ValueError(f"layer index {layer_index} out of range ({len(stack)} layers)")
    if tokens.size != config.seq_len:
        raise ValueError(
            f"token sequence length {tokens.size} must equal seq_len {config.seq_len}"
        )
    x = embed(tokens, model.embedding, model.pos)
    for p in stack[:layer_index]:
        x = lmw_encoder_layer(x, p, None, training=False)
    layer = stack[layer_index]
    normed = layer_norm(x, layer.ln1_gain, layer.ln1_bias)
    dec = multiscale_decompose(normed, layer.mixer.scales)

    header = []
    blocks = []
    for l, det in enumerate(dec.details):
        mags = np.abs(det.data).T          # d rows, T/2^(l+1) columns
        blocks.append(mags)
        header += [f"detail{l}_p{i}" for i in range(mags.shape[1])]
    approx = dec.final_approx.data.T
    blocks.append(approx)
    header += [f"approx_p{i}" for i in range(approx.shape[1])]
    matrix = np.concatenate(blocks, axis=1)
    if not np.isfinite(matrix).all():
        raise NumericError("coefficient export produced non-finite values")
    return header, matrix


def cmd_export_coeffs(args) -> int:
    model, _ = model_mod.load_checkpoint(args.checkpoint)
    if args.config is not None:
        config, train_cfg = model_mod.load_config(args.config)
        if model_mod.config_to_dict(config, train_cfg) != \
                model_mod.config_to_dict(model.config, train_cfg):
            raise ValueError("config file disagrees with the checkpoint's stored config")
    tokens = _read_tokens_csv(args.input)
    header, matrix = export_coefficients(model, tokens, args.layer)
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["feature"] + header)
        for j in range(matrix.shape[0]):
            writer.writerow([j] + [repr(float(v)) for v in matrix[j]])
    print(f"wrote {matrix.shape[0]} x {matrix.shape[1]} coefficient map -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haarmixer",
        description="Train, evaluate and benchmark wavelet-mixer sequence models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("config", help="flat JSON config file")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory (default: $HAARMIXER_OUT or .)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on fresh task batches")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None, help="optional config file to cross-check")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batches", type=int, default=8)
    p.add_argument("--out", default=None, help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time a mixer over a ladder of sequence lengths")
    p.add_argument("--mixer", choices=("wavelet", "attention"), required=True)
    p.add_argument("--tmin", type=int, default=256)
    p.add_argument("--tmax", type=int, default=8192)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="per-repetition CSV path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("haar", help="classical multi-level transform of a 1-column CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--levels", type=int, default=1)
    p.add_argument("--inverse", action="store_true",
                   help="treat input as coefficients and reconstruct the signal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_haar)

    p = sub.add_parser("export-coeffs", help="per-scale coefficient heatmap CSV")
    p.add_argument("checkpoint")
    p.add_argument("--config", default=None, help="optional config file to cross-check")
    p.add_argument("--input", required=True, help="token id CSV, one id per row")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_coeffs)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShapeError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
