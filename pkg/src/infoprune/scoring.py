"""Filter importance scoring.

Two per-filter metrics, combined with a weight sigma after per-layer
min-max normalization:

  * information capacity: 1 minus the Shannon entropy of a softmax
    distribution over each kernel's summed Euclidean distance to its
    sibling kernels inside the filter;
  * information independence: the summed distance from a filter to every
    other filter in its layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archive import ModelManifest, TensorRecord

DISTANCE_METRICS = ("euclidean", "manhattan", "chebyshev", "cosine")


class ScoringError(ValueError):
    pass


@dataclass
class ScoringConfig:
    sigma: float = 0.8
    m_nearest: int | str = "exact"   # int M, clamped per layer to n_in - 1
    metric: str = "euclidean"        # independence distance

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ScoringError(f"sigma must be in [0, 1], got {self.sigma}")
        if self.m_nearest != "exact" and (not isinstance(self.m_nearest, int)
                                          or self.m_nearest < 1):
            raise ScoringError(f"m_nearest must be 'exact' or a positive integer, "
                               f"got {self.m_nearest!r}")
        if self.metric not in DISTANCE_METRICS:
            raise ScoringError(f"metric must be one of {DISTANCE_METRICS}, got {self.metric!r}")

    def to_json(self) -> dict:
        return {"sigma": self.sigma, "m_nearest": self.m_nearest, "metric": self.metric}


def kernel_similarity(filter_weights: np.ndarray, m_nearest: int | str = "exact") -> np.ndarray:
    """Per-kernel summed Euclidean distance to its (M nearest) sibling kernels.

    filter_weights: [n_in, k, k] (or [n_in, d]); kernels are flattened.
    """
    flat = np.asarray(filter_weights, dtype=np.float64).reshape(len(filter_weights), -1)
    n = len(flat)
    diff = flat[:, None, :] - flat[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    if m_nearest == "exact" or int(m_nearest) >= n - 1:
        return dist.sum(axis=1)  # self distance is 0
    m = int(m_nearest)
    # drop the self pair before picking the M nearest
    others = dist[~np.eye(n, dtype=bool)].reshape(n, n - 1)
    others.sort(axis=1)
    return others[:, :m].sum(axis=1)


def kernel_probabilities(sim: np.ndarray) -> np.ndarray:
    """Softmax over similarity sums, shifted by the max for overflow safety."""
    sim = np.asarray(sim, dtype=np.float64)
    shifted = np.exp(sim - sim.max())
    return shifted / shifted.sum()


def filter_entropy(p: np.ndarray) -> float:
    """Shannon entropy in bits; 0*log2(0) counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log2(nz)))


def information_capacity(filter_weights: np.ndarray, m_nearest: int | str = "exact") -> float:
    """1 - H_f; may be negative, only per-layer order matters downstream."""
    sim = kernel_similarity(filter_weights, m_nearest)
    return 1.0 - filter_entropy(kernel_probabilities(sim))


def _pairwise_distances(flat: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        diff = flat[:, None, :] - flat[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if metric == "manhattan":
        return np.abs(flat[:, None, :] - flat[None, :, :]).sum(axis=-1)
    if metric == "chebyshev":
        return np.abs(flat[:, None, :] - flat[None, :, :]).max(axis=-1)
    if metric == "cosine":
        norms = np.linalg.norm(flat, axis=1)
        dist = np.ones((len(flat), len(flat)))  # zero-norm filters: maximally dissimilar
        ok = norms > 0.0
        unit = flat[ok] / norms[ok, None]
        dist[np.ix_(ok, ok)] = 1.0 - unit @ unit.T
        np.fill_diagonal(dist, 0.0)
        return dist
    raise ScoringError(f"unknown metric '{metric}'")


def information_independence(filters: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Summed distance from each filter to all other filters, filters flattened.

    filters: [n_filters, ...]; returns an array over filters.
    """
    flat = np.asarray(filters, dtype=np.float64).reshape(len(filters), -1)
    dist = _pairwise_distances(flat, metric)
    np.fill_diagonal(dist, 0.0)
    return dist.sum(axis=1)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Per-layer min-max; a constant array maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


@dataclass
class LayerScores:
    entropy: np.ndarray
    capacity_raw: np.ndarray
    independence_raw: np.ndarray
    capacity_norm: np.ndarray
    independence_norm: np.ndarray
    combined: np.ndarray

    def to_json(self) -> dict:
        return {name: getattr(self, name).tolist() for name in
                ("entropy", "capacity_raw", "independence_raw",
                 "capacity_norm", "independence_norm", "combined")}


def score_layer(filters: np.ndarray, config: ScoringConfig) -> LayerScores:
    """Score one prunable layer; filters is [n_filters, n_in, k, k] (k may be 1)."""
    filters = np.asarray(filters, dtype=np.float64)
    entropy = np.array([filter_entropy(kernel_probabilities(
        kernel_similarity(f, config.m_nearest))) for f in filters])
    capacity_raw = 1.0 - entropy
    independence_raw = information_independence(filters, config.metric)
    capacity_norm = minmax_normalize(capacity_raw)
    independence_norm = minmax_normalize(independence_raw)
    combined = config.sigma * capacity_norm + (1.0 - config.sigma) * independence_norm
    return LayerScores(entropy=entropy, capacity_raw=capacity_raw,
                       independence_raw=independence_raw, capacity_norm=capacity_norm,
                       independence_norm=independence_norm, combined=combined)


@dataclass
class ScoreTable:
    layers: dict[str, LayerScores]
    config: ScoringConfig = field(default_factory=ScoringConfig)

    def to_json(self) -> dict:
        return {"config": self.config.to_json(),
                "layers": {lid: ls.to_json() for lid, ls in sorted(self.layers.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreTable":
        config = ScoringConfig(**obj["config"])
        layers = {lid: LayerScores(**{k: np.asarray(v, dtype=np.float64)
                                      for k, v in entry.items()})
                  for lid, entry in obj["layers"].items()}
        return cls(layers=layers, config=config)


def layer_filters(spec, tensors: dict[str, TensorRecord]) -> np.ndarray:
    """Weight tensor of a prunable layer as [n_filters, n_in, k, k].

    Each output neuron of a linear layer is treated as a filter of 1x1 kernels.
    """
    weight = tensors[spec.params["weight"]].data
    if spec.kind == "conv2d":
        return weight
    if spec.kind == "linear":
        out_f, in_f = weight.shape
        return weight.reshape(out_f, in_f, 1, 1)
    raise ScoringError(f"layer '{spec.id}' ({spec.kind}) is not scorable")


def score_model(manifest: ModelManifest, tensors: dict[str, TensorRecord],
                config: ScoringConfig | None = None) -> ScoreTable:
    """Score every prunable layer of the model."""
    config = config or ScoringConfig()
    layers = {spec.id: score_layer(layer_filters(spec, tensors), config)
              for spec in manifest.layers if spec.prunable}
    return ScoreTable(layers=layers, config=config)
