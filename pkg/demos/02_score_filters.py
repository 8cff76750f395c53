"""Score every prunable filter: information capacity from the entropy of the
kernel-distance softmax, information independence from filter-to-filter
distances, combined with weight sigma (default 0.8) after per-layer min-max
normalization.
"""
import numpy as np

from infoprune import ScoringConfig, score_model
from infoprune.scoring import (filter_entropy, kernel_probabilities,
                               kernel_similarity)
from common import toy_network

manifest, tensors = toy_network()

# the ingredients, on one filter
filt = tensors["conv1.weight"].data[0]          # [in_channels, k, k]
sim = kernel_similarity(filt)                   # distance sums per kernel
p = kernel_probabilities(sim)                   # softmax distribution
print(f"one filter: sims={np.round(sim, 3)}")
print(f"            probs={np.round(p, 3)}  entropy={filter_entropy(p):.4f}")

# the whole model
table = score_model(manifest, tensors, ScoringConfig(sigma=0.8))
for lid, scores in table.layers.items():
    print(f"\nlayer {lid}:")
    print(f"  capacity (norm):     {np.round(scores.capacity_norm, 3)}")
    print(f"  independence (norm): {np.round(scores.independence_norm, 3)}")
    print(f"  combined importance: {np.round(scores.combined, 3)}")

# sigma sweep: 1.0 is capacity-only, 0.0 independence-only
for sigma in (0.0, 0.5, 0.8, 1.0):
    t = score_model(manifest, tensors, ScoringConfig(sigma=sigma))
    order = np.argsort(-t.layers["conv1"].combined)
    print(f"sigma={sigma}: conv1 filters by importance: {order.tolist()}")
