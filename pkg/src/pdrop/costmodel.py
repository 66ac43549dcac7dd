"""Closed-form FLOPs accounting for the image-token part of a decoder
forward: 4nd^2 + 2n^2d + 3ndm per layer, summed per stage for staged
pruning. Text tokens contribute zero by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .pruner import StageSchedule, Strategy, apply_strategy


def layer_flops(n: int, d: int, m: int) -> int:
    """Attention + three-linear FFN cost of one layer at n image tokens."""
    n, d, m = int(n), int(d), int(m)
    return 4 * n * d * d + 2 * n * n * d + 3 * n * d * m


@dataclass(frozen=True)
class CostReport:
    per_stage: tuple[int, ...]
    total: int
    vanilla: int
    ratio: float
    avg_tokens: float

    def to_json(self) -> dict:
        return {
            "per_stage": list(self.per_stage),
            "total": self.total,
            "vanilla": self.vanilla,
            "ratio": self.ratio,
            "avg_tokens": self.avg_tokens,
            "unit": "FLOPs",
        }


def tera(flops: int, sig_figs: int = 3) -> float:
    """FLOPs in units of 1e12, rounded to sig_figs significant figures
    (the paper-table convention)."""
    t = flops / 1e12
    if t == 0:
        return 0.0
    from math import floor, log10
    return round(t, sig_figs - 1 - floor(log10(abs(t))))


def staged_flops(stage_layer_counts, stage_token_counts, d: int, m: int) -> CostReport:
    stage_layer_counts = [int(k) for k in stage_layer_counts]
    stage_token_counts = [int(n) for n in stage_token_counts]
    if len(stage_layer_counts) != len(stage_token_counts):
        raise ConfigError(
            f"{len(stage_layer_counts)} stage layer counts vs "
            f"{len(stage_token_counts)} token counts"
        )
    num_layers = sum(stage_layer_counts)
    if num_layers < 1:
        raise ConfigError("schedule covers no layers")
    per_stage = tuple(
        k * layer_flops(n, d, m) for k, n in zip(stage_layer_counts, stage_token_counts)
    )
    total = sum(per_stage)
    vanilla = num_layers * layer_flops(stage_token_counts[0], d, m)
    return CostReport(
        per_stage=per_stage,
        total=total,
        vanilla=vanilla,
        ratio=total / vanilla if vanilla else 1.0,
        avg_tokens=sum(k * n for k, n in zip(stage_layer_counts, stage_token_counts)) / num_layers,
    )


def schedule_cost(schedule: StageSchedule, d: int, m: int) -> CostReport:
    return staged_flops(schedule.stage_layer_counts, schedule.stage_token_counts, d, m)


def theoretical_saving(keep_ratio: float, num_stages: int) -> float:
    """Staged/vanilla cost fraction under a linear per-layer cost and pure
    exponential token counts: (1 - r^S) / (S (1 - r)); 1 at r = 1."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ConfigError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    if num_stages < 1:
        raise ConfigError(f"need at least one stage, got {num_stages}")
    if keep_ratio == 1.0:
        return 1.0
    return (1.0 - keep_ratio**num_stages) / (num_stages * (1.0 - keep_ratio))


def strategy_cost(strategy: Strategy, num_layers: int, num_image_tokens: int, d: int, m: int) -> CostReport:
    counts = apply_strategy(strategy, num_layers, num_image_tokens)
    # group consecutive equal counts into stages for reporting
    stage_layers, stage_tokens = [], []
    for n in counts:
        if stage_tokens and stage_tokens[-1] == n:
            stage_layers[-1] += 1
        else:
            stage_layers.append(1)
            stage_tokens.append(int(n))
    report = staged_flops(stage_layers, stage_tokens, d, m)
    # the vanilla reference is always the uncompressed count, even for
    # strategies (like uniform compression) that never run at full width
    vanilla = num_layers * layer_flops(num_image_tokens, d, m)
    return CostReport(
        per_stage=report.per_stage,
        total=report.total,
        vanilla=vanilla,
        ratio=report.total / vanilla if vanilla else 1.0,
        avg_tokens=float(np.mean(counts)),
    )
