"""Experiment driver: layer sweeps, strategy comparisons, marker-recall
evaluation, and machine-readable reports.

Marker recall (fraction of planted instruction-relevant image tokens that
survive to the final stage) is the task metric: it is cheap, exact, and
directly controlled by the dropping rule.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .costmodel import CostReport, strategy_cost
from .errors import ConfigError, InputError
from .layout import MultimodalSequence, build_sequence, load_sequence
from .numkernel import RngState, derive_seed
from .pruner import (
    PruneDecision,
    PyramidDrop,
    RandomDrop,
    SimilarityScores,
    SingleEarlyDrop,
    Strategy,
    UniformCompression,
    Vanilla,
    build_schedule,
    decide,
    random_ranker,
    single_drop_schedule,
)
from .toymodel import (
    DecoderWeights,
    ModelConfig,
    build_marker_model,
    forward_full,
    forward_pruned,
)


@dataclass(frozen=True)
class FixtureSpec:
    """Generator parameters for a planted marker fixture."""

    image_tokens: int = 64
    marked_count: int = 4
    instruction_length: int = 4
    answer_length: int = 1
    marker_dims: tuple[int, ...] = (0, 1, 2, 3)
    marked_placement: str = "high"  # "high" | "low" | "random"
    noise: float = 0.01
    amplitude: float = 1.0


@dataclass
class ExperimentSpec:
    model: ModelConfig
    seed: int = 0
    fixture: FixtureSpec | None = None
    fixture_path: str | None = None
    strategy: Strategy | None = None
    strategies: list[Strategy] = field(default_factory=list)
    sweep_layers: list[int] = field(default_factory=list)
    sweep_ratios: list[float] = field(default_factory=list)
    margin_onset_layer: int = 1


@dataclass(frozen=True)
class SweepRow:
    layer: int
    keep_ratio: float
    recall: float
    kept_count: int
    flops: int


@dataclass
class RunReport:
    strategy: str
    kept_masks: list[tuple[int, np.ndarray]]
    recall: float
    cost: CostReport
    digest: str

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "stages": [
                {"boundary": int(layer), "kept": [int(p) for p in kept]}
                for layer, kept in self.kept_masks
            ],
            "recall": self.recall,
            "cost": self.cost.to_json(),
            "digest": self.digest,
        }


# --- spec / strategy parsing ----------------------------------------------


def strategy_from_json(obj) -> Strategy:
    if isinstance(obj, str):
        obj = {"name": obj}
    try:
        name = obj["name"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"strategy needs a name: {obj!r}") from exc
    if name == "vanilla":
        return Vanilla()
    if name in ("pdrop", "pyramiddrop"):
        return PyramidDrop(stages=int(obj.get("stages", 4)),
                           keep_ratio=float(obj.get("keep_ratio", 0.5)))
    if name == "fastv":
        return SingleEarlyDrop(drop_layer=int(obj.get("drop_layer", 2)),
                               keep_ratio=float(obj.get("keep_ratio", 0.5)))
    if name in ("uniform", "qformer"):
        return UniformCompression(token_count=int(obj.get("token_count", 288)))
    if name == "random":
        return RandomDrop(stages=int(obj.get("stages", 4)),
                          keep_ratio=float(obj.get("keep_ratio", 0.5)),
                          seed=int(obj.get("seed", 0)))
    raise ConfigError(f"unknown strategy {name!r}")


def spec_from_json(obj: dict) -> ExperimentSpec:
    try:
        model = ModelConfig(**obj["model"]).validate()
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad model config: {exc}") from exc
    fixture = None
    fixture_path = None
    fx = obj.get("fixture", {})
    if isinstance(fx, dict) and "path" in fx:
        fixture_path = fx["path"]
    elif fx:
        try:
            fx = dict(fx)
            if "marker_dims" in fx:
                fx["marker_dims"] = tuple(fx["marker_dims"])
            fixture = FixtureSpec(**fx)
        except TypeError as exc:
            raise ConfigError(f"bad fixture spec: {exc}") from exc
    else:
        fixture = FixtureSpec()
    sweep = obj.get("sweep", {})
    return ExperimentSpec(
        model=model,
        seed=int(obj.get("seed", 0)),
        fixture=fixture,
        fixture_path=fixture_path,
        strategy=strategy_from_json(obj["strategy"]) if "strategy" in obj else None,
        strategies=[strategy_from_json(s) for s in obj.get("strategies", [])],
        sweep_layers=[int(x) for x in sweep.get("layers", [])],
        sweep_ratios=[float(x) for x in sweep.get("ratios", [])],
        margin_onset_layer=int(obj.get("margin_onset_layer", 1)),
    )


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return spec_from_json(obj)


# --- fixtures --------------------------------------------------------------


def make_marker_sequence(
    cfg: ModelConfig, fixture: FixtureSpec, seed: int
) -> tuple[MultimodalSequence, np.ndarray]:
    """Planted fixture: unmarked image tokens are small noise, marked ones
    carry the marker subspace. Returns the sequence and the marked original
    positions."""
    v0, km = fixture.image_tokens, fixture.marked_count
    if km > v0:
        raise ConfigError(f"cannot mark {km} of {v0} image tokens")
    d = cfg.hidden_size
    rng = RngState(derive_seed(seed, 101))
    emb = fixture.noise * rng.normals(v0 * d).reshape(v0, d) if v0 else np.zeros((0, d))
    if fixture.marked_placement == "high":
        marked = np.arange(v0 - km, v0)
    elif fixture.marked_placement == "low":
        marked = np.arange(km)
    elif fixture.marked_placement == "random":
        marked = np.sort(np.argsort(rng.uniforms(v0), kind="stable")[:km])
    else:
        raise ConfigError(f"unknown placement {fixture.marked_placement!r}")
    for p in marked:
        emb[p, list(fixture.marker_dims)] += fixture.amplitude
    instruction = 1 + np.arange(fixture.instruction_length) % (cfg.vocab_size - 1)
    answer = 1 + np.arange(fixture.answer_length) % (cfg.vocab_size - 1)
    return build_sequence(emb, instruction, answer), marked.astype(np.int64)


def prepare(spec: ExperimentSpec) -> tuple[DecoderWeights, MultimodalSequence, np.ndarray]:
    """Resolve (weights, sequence, marked positions) for a run."""
    if spec.fixture_path is not None:
        seq = load_sequence(spec.fixture_path)
        if seq.num_image_tokens and seq.image_embeddings.shape[1] != spec.model.hidden_size:
            raise InputError(
                f"fixture embedding dim {seq.image_embeddings.shape[1]} "
                f"!= model hidden size {spec.model.hidden_size}"
            )
        weights = build_marker_model(
            spec.model, FixtureSpec().marker_dims, margin_onset_layer=spec.margin_onset_layer
        )
        return weights, seq, np.empty(0, dtype=np.int64)
    fixture = spec.fixture or FixtureSpec()
    seq, marked = make_marker_sequence(spec.model, fixture, spec.seed)
    weights = build_marker_model(
        spec.model, fixture.marker_dims, margin_onset_layer=spec.margin_onset_layer
    )
    return weights, seq, marked


def marker_recall(kept_masks, marked: np.ndarray, num_image_tokens: int) -> float:
    if marked.size == 0:
        return 1.0
    final = set(kept_masks[-1][1].tolist()) if kept_masks else set(range(num_image_tokens))
    return sum(1 for p in marked if int(p) in final) / marked.size


# --- runs ------------------------------------------------------------------


def run_strategy(
    weights: DecoderWeights,
    seq: MultimodalSequence,
    strategy: Strategy,
    marked: np.ndarray,
    seed: int,
) -> RunReport:
    cfg = weights.config
    v0 = seq.num_image_tokens
    if isinstance(strategy, Vanilla):
        trace = forward_full(weights, seq)
    elif isinstance(strategy, PyramidDrop):
        schedule = build_schedule(cfg.num_layers, strategy.stages, strategy.keep_ratio, v0)
        trace = forward_pruned(weights, seq, schedule)
    elif isinstance(strategy, SingleEarlyDrop):
        keep = int(np.floor(strategy.keep_ratio * v0))
        schedule = single_drop_schedule(cfg.num_layers, strategy.drop_layer, keep, v0)
        trace = forward_pruned(weights, seq, schedule)
    elif isinstance(strategy, RandomDrop):
        schedule = build_schedule(cfg.num_layers, strategy.stages, strategy.keep_ratio, v0)
        trace = forward_pruned(
            weights, seq, schedule, ranker=random_ranker(derive_seed(seed, strategy.seed))
        )
    elif isinstance(strategy, UniformCompression):
        raise ConfigError("uniform compression has no forward semantics; it is cost-only")
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    digest = hashlib.sha256(
        np.ascontiguousarray(trace.hidden[-1]).tobytes()
        + np.ascontiguousarray(trace.positions).tobytes()
    ).hexdigest()
    return RunReport(
        strategy=strategy.name,
        kept_masks=trace.kept_masks,
        recall=marker_recall(trace.kept_masks, marked, v0),
        cost=strategy_cost(strategy, cfg.num_layers, v0, cfg.hidden_size, cfg.ffn_intermediate),
        digest=digest,
    )


def run_single(spec: ExperimentSpec) -> RunReport:
    weights, seq, marked = prepare(spec)
    strategy = spec.strategy or PyramidDrop()
    return run_strategy(weights, seq, strategy, marked, spec.seed)


def run_compare(spec: ExperimentSpec) -> list[RunReport]:
    if not spec.strategies:
        raise ConfigError("compare needs at least one strategy")
    weights, seq, marked = prepare(spec)
    return [run_strategy(weights, seq, s, marked, spec.seed) for s in spec.strategies]


def run_layer_sweep(spec: ExperimentSpec) -> list[SweepRow]:
    if not spec.sweep_layers or not spec.sweep_ratios:
        raise ConfigError("sweep needs nonempty layer and ratio grids")
    weights, seq, marked = prepare(spec)
    cfg = spec.model
    v0 = seq.num_image_tokens
    rows = []
    for layer in spec.sweep_layers:
        if layer >= cfg.num_layers:
            raise ConfigError(f"sweep layer {layer} >= num_layers {cfg.num_layers}")
        for ratio in spec.sweep_ratios:
            keep = int(np.floor(ratio * v0))
            if keep >= v0:
                trace = forward_full(weights, seq)
                kept_count = v0
            else:
                schedule = single_drop_schedule(cfg.num_layers, layer, keep, v0)
                trace = forward_pruned(weights, seq, schedule)
                kept_count = keep
            cost = strategy_cost(
                SingleEarlyDrop(drop_layer=layer, keep_ratio=ratio),
                cfg.num_layers, v0, cfg.hidden_size, cfg.ffn_intermediate,
            )
            rows.append(SweepRow(
                layer=layer,
                keep_ratio=ratio,
                recall=marker_recall(trace.kept_masks, marked, v0),
                kept_count=kept_count,
                flops=cost.total,
            ))
    return rows


def simulate_random_recall(
    v0: int, stages: int, keep_ratio: float, marked: np.ndarray, seed: int
) -> float:
    """Recall of a random-drop selection walk without running the model;
    the selection path (random scores into decide) matches RandomDrop."""
    schedule = build_schedule(stages, stages, keep_ratio, v0)
    surviving = np.arange(v0, dtype=np.int64)
    for stage in range(stages - 1):
        rng = RngState(derive_seed(seed, stage))
        scores = SimilarityScores(rng.uniforms(surviving.size), stage, surviving)
        surviving = decide(scores, schedule, stage).kept
    final = set(surviving.tolist())
    if marked.size == 0:
        return 1.0
    return sum(1 for p in marked if int(p) in final) / marked.size


# --- output ----------------------------------------------------------------

SWEEP_COLUMNS = ["layer", "keep_ratio", "recall", "kept_count", "flops"]


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for r in rows:
            writer.writerow([r.layer, r.keep_ratio, r.recall, r.kept_count, r.flops])


def emit_masks(report: RunReport, path) -> None:
    """Per-stage kept-index masks for retention-map plotting."""
    if not report.kept_masks:
        raise ConfigError("report has no drop stages to emit")
    obj = {
        "stages": [
            {"boundary": int(layer), "kept": [int(p) for p in kept]}
            for layer, kept in report.kept_masks
        ]
    }
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
