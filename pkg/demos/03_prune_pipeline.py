"""The full pipeline: score -> plan -> apply -> verify.

Verification runs both networks through the built-in forward engine: the
structurally pruned model must match the original with the removed channels
zeroed post-activation (masked-equivalence).
"""
import numpy as np

from infoprune import (ChannelMask, PruningRates, apply_plan, build_plan,
                       forward, score_model)
from common import toy_network

manifest, tensors = toy_network()

table = score_model(manifest, tensors)
rates = PruningRates(global_rate=0.5)  # final fc is protected by default
plan = build_plan(manifest, table, rates)
for lid, kept in plan.kept_out.items():
    print(f"{lid}: keep {kept}")

pruned = apply_plan(manifest, tensors, plan)
print("\npruned tensor shapes:")
for name in ("conv1.weight", "conv2.weight", "fc.weight"):
    print(f"  {name:<14} {tensors[name].shape} -> {pruned.tensors[name].shape}")

mask = ChannelMask.from_plan(manifest, plan)
rng = np.random.default_rng(1)
worst = 0.0
for _ in range(10):
    x = rng.standard_normal(manifest.input_shape).astype(np.float32)
    masked = forward(manifest, tensors, x, mask)
    got = forward(pruned.manifest, pruned.tensors, x)
    worst = max(worst, float(np.abs(masked - got).max()))
print(f"\nmasked-vs-pruned max |delta| over 10 inputs: {worst:.2e}")
