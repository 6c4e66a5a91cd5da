"""Sequence models whose token mixer is a learnable multi-scale Haar transform.

The package is a small framework-free stack: a tape-based autodiff
engine (`autodiff`), classical and learnable Haar transforms (`wavelet`),
multi-scale fusion (`aggregation`), attention-free layers plus a
baseline attention mixer (`layers`), toy training (`model`), a
complexity benchmark (`bench`), and a CLI (`cli`).
"""

from .aggregation import AggregationParams, combine, init_agg_params, upsample_repeat
from .autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    cross_entropy_label_smoothed,
    finite_difference_gradient,
    interleave,
    layer_norm,
    matmul,
    mul_elementwise,
    relu,
    softmax_rows,
    split_even_odd,
    sum_all,
    zero_grad,
)
from .bench import BenchReport, attention_op_counts, bench_mixer, fit_scaling_exponent, wavelet_mixer_op_counts
from .errors import GraphError, NumericError, ShapeError
from .layers import (
    AttentionParams,
    LayerParams,
    WaveletMixerParams,
    dropout,
    embed,
    ffn,
    init_layer_params,
    lmw_decoder_layer,
    lmw_encoder_layer,
    positional_encoding,
    self_attention,
    wavelet_mixer,
)
from .model import (
    Metrics,
    ModelConfig,
    OptimizerState,
    SequenceModel,
    TrainConfig,
    TrainReport,
    adam_step,
    evaluate,
    forward_loss,
    generate,
    load_checkpoint,
    lr_schedule,
    make_batch,
    save_checkpoint,
    train,
)
from .wavelet import (
    MultiScaleDecomposition,
    ScaleParams,
    classical_scale_params,
    haar_forward_classical,
    haar_inverse_classical,
    haar_multilevel_forward,
    haar_multilevel_inverse,
    init_scale_params,
    learnable_haar_forward,
    learnable_haar_inverse,
    multiscale_decompose,
    pad_sequence,
)

__version__ = "0.1.0"
