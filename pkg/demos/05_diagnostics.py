"""Feature-map diagnostics: matrix-based Renyi entropy and numerical rank of
captured feature maps, and their Pearson correlation with the filter
entropies computed from weights alone.
"""
import numpy as np

from infoprune import (capture_feature_maps, correlate, feature_rank,
                       renyi_matrix_entropy, score_model)
from common import toy_network

manifest, tensors = toy_network()
rng = np.random.default_rng(2)
images = rng.standard_normal((8, 3, 8, 8)).astype(np.float32)

maps = capture_feature_maps(manifest, tensors, images, "conv1")
print(f"captured conv1 maps: {maps.shape}  (channels, samples, h, w)")

fm_entropy = [renyi_matrix_entropy(ch, alpha=2) for ch in maps]
ranks = [feature_rank(ch) for ch in maps]
print(f"per-channel Renyi entropy: {np.round(fm_entropy, 3)}")
print(f"per-channel rank:          {ranks}")

filter_h = score_model(manifest, tensors).layers["conv1"].entropy
r = correlate(filter_h, fm_entropy)
print(f"\nPearson r (filter entropy vs feature-map entropy): {r:.3f}")

# degenerate cases the estimator is pinned to
identical = np.tile(images[:1, 0], (8, 1, 1))
print(f"identical samples -> entropy {renyi_matrix_entropy(identical):.2e}")
outer = np.stack([np.outer(np.arange(1, 5), np.arange(1, 5))] * 4).astype(float)
print(f"outer-product map -> rank {feature_rank(outer)}")
