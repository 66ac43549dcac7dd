"""Staged pruning core: schedules, similarity ranking, drop decisions,
and the baseline strategies used for cost comparison.

The drop count at the end of each stage is ceil((1 - keep_ratio) * count);
the survivors feed the next stage, so the image-token count shrinks
roughly exponentially stage by stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigError, ShapeError
from .numkernel import RngState, arg_topk, derive_seed


def _drop_count(count: int, keep_ratio: float) -> int:
    # snap the float ratio to its intended rational so e.g. 0.4 * 345 does
    # not ceil to 139 through binary rounding noise
    ratio = Fraction(keep_ratio).limit_denominator(1_000_000)
    return math.ceil((1 - ratio) * count)


@dataclass(frozen=True)
class StageSchedule:
    """Drop boundaries and per-stage image-token counts for one forward."""

    num_layers: int
    num_stages: int
    keep_ratio: float
    boundary_layers: tuple[int, ...]  # 1-based; drop applied after that layer
    stage_layer_counts: tuple[int, ...]
    stage_token_counts: tuple[int, ...]

    def per_layer_counts(self) -> np.ndarray:
        out = []
        for layers, tokens in zip(self.stage_layer_counts, self.stage_token_counts):
            out.extend([tokens] * layers)
        return np.asarray(out, dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "boundaries": list(self.boundary_layers),
            "stage_layers": list(self.stage_layer_counts),
            "stage_tokens": list(self.stage_token_counts),
            "lambda": self.keep_ratio,
            "stages": self.num_stages,
        }


def build_schedule(num_layers: int, num_stages: int, keep_ratio: float, num_image_tokens: int) -> StageSchedule:
    """Split layers into stages as evenly as possible (remainder goes to the
    last stage) and iterate the ceiling-drop recurrence on token counts."""
    if num_layers < 1 or num_stages < 1 or num_stages > num_layers:
        raise ConfigError(f"need 1 <= stages <= layers, got S={num_stages}, J={num_layers}")
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    if num_image_tokens < 0:
        raise ConfigError(f"negative image-token count {num_image_tokens}")
    base = num_layers // num_stages
    layer_counts = [base] * (num_stages - 1) + [num_layers - base * (num_stages - 1)]
    boundaries = tuple(int(b) for b in np.cumsum(layer_counts[:-1]))
    tokens = [num_image_tokens]
    for _ in range(num_stages - 1):
        tokens.append(tokens[-1] - _drop_count(tokens[-1], keep_ratio))
    return StageSchedule(
        num_layers=num_layers,
        num_stages=num_stages,
        keep_ratio=keep_ratio,
        boundary_layers=boundaries,
        stage_layer_counts=tuple(layer_counts),
        stage_token_counts=tuple(tokens),
    )


def single_drop_schedule(num_layers: int, drop_layer: int, keep_count: int, num_image_tokens: int) -> StageSchedule:
    """Two-stage schedule: full width through drop_layer, keep_count after."""
    if not 1 <= drop_layer < num_layers:
        raise ConfigError(f"drop layer {drop_layer} must be in [1, {num_layers})")
    if not 0 <= keep_count <= num_image_tokens:
        raise ConfigError(f"keep count {keep_count} out of range for {num_image_tokens} tokens")
    ratio = keep_count / num_image_tokens if num_image_tokens else 1.0
    return StageSchedule(
        num_layers=num_layers,
        num_stages=2,
        keep_ratio=ratio,
        boundary_layers=(drop_layer,),
        stage_layer_counts=(drop_layer, num_layers - drop_layer),
        stage_token_counts=(num_image_tokens, keep_count),
    )


def keep_all_schedule(num_layers: int, num_image_tokens: int) -> StageSchedule:
    return build_schedule(num_layers, 1, 1.0, num_image_tokens)


@dataclass
class SimilarityScores:
    """Per surviving image token, one ranking score at one boundary."""

    values: np.ndarray
    boundary_layer: int
    positions: np.ndarray  # original positions of the surviving tokens

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.values.shape != self.positions.shape:
            raise ShapeError(
                f"{self.values.shape[0]} scores for {self.positions.shape[0]} positions"
            )


@dataclass(frozen=True)
class PruneDecision:
    boundary_layer: int
    kept: np.ndarray  # ascending, original position space
    dropped: np.ndarray


def rank_image_tokens(
    q_last: np.ndarray,
    k_image: np.ndarray,
    head_dim: int,
    boundary_layer: int = 0,
    positions=None,
) -> SimilarityScores:
    """Mean over heads of dot(q, k) / sqrt(head_dim); no softmax, the
    ranking only needs a monotone score."""
    q_last = np.asarray(q_last, dtype=np.float64)
    k_image = np.asarray(k_image, dtype=np.float64)
    if q_last.ndim != 2 or k_image.ndim != 3 or q_last.shape[0] != k_image.shape[0]:
        raise ShapeError(f"bad head shapes: q {q_last.shape}, k {k_image.shape}")
    if q_last.shape[1] != head_dim or k_image.shape[2] != head_dim:
        raise ShapeError(f"head_dim {head_dim} does not match q {q_last.shape} / k {k_image.shape}")
    if q_last.shape[0] == 0:
        raise ShapeError("need at least one attention head")
    per_head = np.einsum("hd,hnd->hn", q_last, k_image) / math.sqrt(head_dim)
    values = per_head.mean(axis=0)
    if positions is None:
        positions = np.arange(values.shape[0], dtype=np.int64)
    return SimilarityScores(values, boundary_layer, positions)


def decide(scores: SimilarityScores, schedule: StageSchedule, stage: int) -> PruneDecision:
    if not 0 <= stage < schedule.num_stages - 1:
        raise ConfigError(f"stage {stage} has no drop boundary (S={schedule.num_stages})")
    expected = schedule.stage_token_counts[stage]
    if scores.values.shape[0] != expected:
        raise ConfigError(
            f"{scores.values.shape[0]} scores at stage {stage}, schedule expects {expected}"
        )
    keep = schedule.stage_token_counts[stage + 1]
    kept_local = arg_topk(scores.values, keep)
    mask = np.zeros(expected, dtype=bool)
    mask[kept_local] = True
    return PruneDecision(
        boundary_layer=scores.boundary_layer,
        kept=scores.positions[mask],
        dropped=scores.positions[~mask],
    )


# --- strategies ------------------------------------------------------------


@dataclass(frozen=True)
class Vanilla:
    name = "vanilla"


@dataclass(frozen=True)
class PyramidDrop:
    stages: int = 4
    keep_ratio: float = 0.5
    name = "pdrop"


@dataclass(frozen=True)
class SingleEarlyDrop:
    """FastV-style cost schedule: full width for drop_layer layers, then a
    single cut down to floor(keep_ratio * V0)."""

    drop_layer: int = 2
    keep_ratio: float = 0.5
    name = "fastv"


@dataclass(frozen=True)
class UniformCompression:
    """Q-former-style cost schedule: a constant compressed token count."""

    token_count: int = 288
    name = "uniform"


@dataclass(frozen=True)
class RandomDrop:
    """PyramidDrop counts with uniformly random kept-sets; isolates the
    value of attention ranking."""

    stages: int = 4
    keep_ratio: float = 0.5
    seed: int = 0
    name = "random"


Strategy = Vanilla | PyramidDrop | SingleEarlyDrop | UniformCompression | RandomDrop


def apply_strategy(strategy: Strategy, num_layers: int, num_image_tokens: int) -> np.ndarray:
    """Effective per-layer image-token counts (length num_layers)."""
    if isinstance(strategy, Vanilla):
        return np.full(num_layers, num_image_tokens, dtype=np.int64)
    if isinstance(strategy, (PyramidDrop, RandomDrop)):
        return build_schedule(num_layers, strategy.stages, strategy.keep_ratio, num_image_tokens).per_layer_counts()
    if isinstance(strategy, SingleEarlyDrop):
        if not 0.0 <= strategy.keep_ratio <= 1.0:
            raise ConfigError(f"keep_ratio must be in [0, 1], got {strategy.keep_ratio}")
        if not 1 <= strategy.drop_layer < num_layers:
            raise ConfigError(f"drop layer {strategy.drop_layer} must be in [1, {num_layers})")
        after = math.floor(strategy.keep_ratio * num_image_tokens)
        return np.asarray(
            [num_image_tokens] * strategy.drop_layer + [after] * (num_layers - strategy.drop_layer),
            dtype=np.int64,
        )
    if isinstance(strategy, UniformCompression):
        if strategy.token_count < 0:
            raise ConfigError(f"negative token count {strategy.token_count}")
        return np.full(num_layers, strategy.token_count, dtype=np.int64)
    raise ConfigError(f"unknown strategy {strategy!r}")


def random_ranker(seed: int):
    """Ranker callable producing seeded uniform scores; the per-stage stream
    is derived from (seed, stage) so row order never matters."""

    def rank(q_last, k_image, head_dim, boundary_layer, positions, stage):
        rng = RngState(derive_seed(seed, stage))
        values = rng.uniforms(len(positions))
        return SimilarityScores(values, boundary_layer, np.asarray(positions))

    return rank


def attention_ranker(q_last, k_image, head_dim, boundary_layer, positions, stage):
    """Default ranker: last-instruction query against surviving image keys."""
    return rank_image_tokens(q_last, k_image, head_dim, boundary_layer, positions)
