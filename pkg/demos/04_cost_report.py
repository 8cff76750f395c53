"""FLOPs/parameter accounting, before and after a plan.

Convention: one multiply-accumulate = one FLOP; batchnorm, activations and
pooling are FLOP-free (batchnorm still counts its learnable parameters).
"""
from infoprune import (PruningRates, build_plan, count_costs,
                       evaluate_plan_costs, score_model)
from common import toy_network

manifest, tensors = toy_network()

baseline = count_costs(manifest)
print(f"baseline: {baseline.total_flops:,} FLOPs, {baseline.total_params:,} params")

plan = build_plan(manifest, score_model(manifest, tensors),
                  PruningRates(global_rate=0.5))
report = evaluate_plan_costs(manifest, plan)
print()
print(report.to_text())
print(f"\noverall pruning ratios: FLOPs {report.flops_pr:.1f}%, "
      f"params {report.params_pr:.1f}%")
