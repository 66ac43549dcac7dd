"""Reproduce the published inference-FLOPs numbers from the cost model.

Every row is computed from the closed-form per-layer cost
4nd^2 + 2n^2d + 3ndm with d=4096, m=11008, J=32 (a 7B-class decoder),
composed with the staged ceiling-drop schedule. Expected values are the
table entries the cost model is validated against.
"""

from pdrop import (
    PyramidDrop,
    SingleEarlyDrop,
    UniformCompression,
    Vanilla,
    build_schedule,
    layer_flops,
    schedule_cost,
    strategy_cost,
    tera,
    theoretical_saving,
)

D, M, J = 4096, 11008, 32

print("== vanilla baselines ==")
for v0, label in [(576, "base resolution"), (2880, "5-patch"), (5184, "9-patch")]:
    print(f"  V0={v0:5d} ({label:15s}) -> {tera(J * layer_flops(v0, D, M)):6.2f}T")

print("\n== staged pruning, S=4 ==")
for v0 in (576, 2880, 5184):
    for ratio in (0.4, 0.5, 0.6):
        schedule = build_schedule(J, 4, ratio, v0)
        report = schedule_cost(schedule, D, M)
        print(f"  V0={v0:5d} ratio={ratio}  counts={schedule.stage_token_counts}"
              f"  -> {tera(report.total):6.2f}T  (avg tokens {report.avg_tokens:.1f})")

print("\n== strategy comparison at V0=576 ==")
for strategy in (Vanilla(), SingleEarlyDrop(drop_layer=2, keep_ratio=0.5),
                 UniformCompression(288), PyramidDrop(4, 0.5)):
    report = strategy_cost(strategy, J, 576, D, M)
    print(f"  {strategy.name:8s} -> {tera(report.total):5.2f}T"
          f"  avg tokens {report.avg_tokens:6.1f}  ratio {report.ratio:.3f}")

saving = theoretical_saving(0.5, 4)
print(f"\ntheoretical cost fraction at ratio 0.5, 4 stages: {saving}"
      f"  ({100 * (1 - saving):.3f}% saved)")
