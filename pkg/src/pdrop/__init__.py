"""Staged attention-ranked visual-token pruning in a toy multimodal
decoder, with an exact FLOPs cost model and experiment harness."""

from .costmodel import (
    CostReport,
    layer_flops,
    schedule_cost,
    staged_flops,
    strategy_cost,
    tera,
    theoretical_saving,
)
from .errors import BoundsError, ConfigError, InputError, PdropError, ShapeError
from .layout import (
    MultimodalSequence,
    TokenRole,
    build_sequence,
    image_indices,
    last_instruction_index,
    load_sequence,
    sequence_from_json,
)
from .numkernel import RngState, arg_topk, gaussian_init, matmul, rmsnorm, rope_rotate, softmax_rows
from .pruner import (
    PruneDecision,
    PyramidDrop,
    RandomDrop,
    SimilarityScores,
    SingleEarlyDrop,
    StageSchedule,
    UniformCompression,
    Vanilla,
    apply_strategy,
    build_schedule,
    decide,
    keep_all_schedule,
    rank_image_tokens,
    single_drop_schedule,
)
from .toymodel import (
    TOY_CONFIG,
    DecoderWeights,
    ForwardTrace,
    ModelConfig,
    build_marker_model,
    forward_full,
    forward_pruned,
    init_model,
    inject_at_boundary,
    load_weights,
    save_weights,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
