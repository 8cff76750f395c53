"""FLOPs/parameter accounting and information-theoretic diagnostics.

Convention: one multiply-accumulate = one FLOP; batchnorm, activations and
pooling contribute zero FLOPs (batchnorm still counts its 2*channels
learnable parameters). Stated in every report header.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archive import ArchiveError, ModelManifest, propagate_shapes, topological_order
from .planner import PruningPlan

FLOP_CONVENTION = "1 MAC = 1 FLOP; batchnorm/activation/pool excluded from FLOPs"


class DiagnosticsError(ValueError):
    pass


@dataclass
class LayerCost:
    id: str
    kind: str
    params: int
    flops: int


@dataclass
class CostReport:
    layers: list[LayerCost]
    total_params: int = 0
    total_flops: int = 0

    def __post_init__(self):
        self.total_params = sum(lc.params for lc in self.layers)
        self.total_flops = sum(lc.flops for lc in self.layers)

    def to_json(self) -> dict:
        return {"convention": FLOP_CONVENTION,
                "layers": [{"id": lc.id, "kind": lc.kind, "params": lc.params,
                            "flops": lc.flops} for lc in self.layers],
                "total_params": self.total_params,
                "total_flops": self.total_flops}


def _pruned_counts(manifest: ModelManifest, plan: PruningPlan) -> dict[str, tuple[int, int]]:
    """Per conv/linear layer: (effective out, effective in) under the plan."""
    counts = {}
    for spec in manifest.layers:
        p = spec.params
        if spec.kind == "conv2d":
            out = len(plan.kept_out.get(spec.id, range(p["out_channels"])))
            inn = len(plan.kept_in.get(spec.id, range(p["in_channels"])))
        elif spec.kind == "linear":
            out = len(plan.kept_out.get(spec.id, range(p["out_features"])))
            inn = len(plan.kept_in.get(spec.id, range(p["in_features"])))
        elif spec.kind == "batchnorm2d":
            out = inn = len(plan.kept_in.get(spec.id, range(p["channels"])))
        else:
            continue
        counts[spec.id] = (out, inn)
    return counts


def count_costs(manifest: ModelManifest, plan: PruningPlan | None = None) -> CostReport:
    """FLOPs and parameter counts per layer; optionally on plan-derived shapes."""
    if len(manifest.input_shape) != 3:
        raise ArchiveError("missing input_shape")
    shapes = propagate_shapes(manifest)
    pruned = _pruned_counts(manifest, plan) if plan is not None else {}

    layers = []
    for spec in topological_order(manifest):
        p = spec.params
        params = flops = 0
        if spec.kind == "conv2d":
            out, inn = pruned.get(spec.id, (p["out_channels"], p["in_channels"]))
            _, _, ho, wo = shapes[spec.id]
            params = out * inn * p["kernel"] ** 2 + (out if p["has_bias"] else 0)
            flops = out * inn * p["kernel"] ** 2 * ho * wo
        elif spec.kind == "linear":
            out, inn = pruned.get(spec.id, (p["out_features"], p["in_features"]))
            params = out * inn + (out if p["has_bias"] else 0)
            flops = out * inn
        elif spec.kind == "batchnorm2d":
            channels, _ = pruned.get(spec.id, (p["channels"], p["channels"]))
            params = 2 * channels
        layers.append(LayerCost(id=spec.id, kind=spec.kind, params=params, flops=flops))
    return CostReport(layers=layers)


@dataclass
class PlanCostReport:
    baseline: CostReport
    pruned: CostReport
    flops_pr: float = field(init=False)
    params_pr: float = field(init=False)

    def __post_init__(self):
        self.flops_pr = _pr(self.pruned.total_flops, self.baseline.total_flops)
        self.params_pr = _pr(self.pruned.total_params, self.baseline.total_params)

    def to_json(self) -> dict:
        return {"convention": FLOP_CONVENTION,
                "baseline": self.baseline.to_json(),
                "pruned": self.pruned.to_json(),
                "flops_pr_percent": self.flops_pr,
                "params_pr_percent": self.params_pr}

    def to_text(self) -> str:
        lines = [f"# {FLOP_CONVENTION}",
                 f"{'layer':<16} {'FLOPs[M] / PR[%]':>24} | {'Params[M] / PR[%]':>24}"]
        base = {lc.id: lc for lc in self.baseline.layers}
        for lc in self.pruned.layers:
            b = base[lc.id]
            lines.append(f"{lc.id:<16} "
                         f"{lc.flops / 1e6:>12.3f} / {_pr(lc.flops, b.flops):>7.2f} | "
                         f"{lc.params / 1e6:>12.4f} / {_pr(lc.params, b.params):>7.2f}")
        lines.append(f"{'total':<16} "
                     f"{self.pruned.total_flops / 1e6:>12.3f} / {self.flops_pr:>7.2f} | "
                     f"{self.pruned.total_params / 1e6:>12.4f} / {self.params_pr:>7.2f}")
        return "\n".join(lines)


def _pr(pruned: int, baseline: int) -> float:
    if baseline == 0:
        return 0.0
    return 100.0 * (1.0 - pruned / baseline)


def evaluate_plan_costs(manifest: ModelManifest, plan: PruningPlan) -> PlanCostReport:
    return PlanCostReport(baseline=count_costs(manifest),
                          pruned=count_costs(manifest, plan))


# --- feature-map diagnostics -------------------------------------------------

def gram_entropy(gram: np.ndarray, alpha: float = 2.0) -> float:
    """Renyi alpha-entropy (bits) of a PSD Gram matrix, normalized to unit trace."""
    if alpha <= 0 or alpha == 1.0:
        raise DiagnosticsError(f"alpha must be positive and != 1, got {alpha}")
    gram = np.asarray(gram, dtype=np.float64)
    eigvals = np.linalg.eigvalsh(gram)
    if eigvals.min() < -1e-8 * max(eigvals.max(), 1.0):
        raise DiagnosticsError(f"Gram matrix is not PSD (min eigenvalue {eigvals.min():.3e}); "
                               f"check the kernel width")
    eigvals = np.clip(eigvals, 0.0, None)
    eigvals = eigvals / eigvals.sum()
    nz = eigvals[eigvals > 0.0]
    return float(np.log2(np.sum(nz ** alpha)) / (1.0 - alpha))


def renyi_matrix_entropy(sample: np.ndarray, alpha: float = 2.0,
                         kernel_width: float | None = None) -> float:
    """Matrix-based Renyi entropy of s feature-map samples.

    sample: [s, h, w] (or [s, d]); Gaussian kernel over flattened per-image
    maps; width defaults to the median pairwise distance heuristic.
    """
    sample = np.asarray(sample, dtype=np.float64)
    s = len(sample)
    if s < 2:
        raise DiagnosticsError("s >= 2 required")
    flat = sample.reshape(s, -1)
    diff = flat[:, None, :] - flat[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    if kernel_width is None:
        pair = np.sqrt(sq[np.triu_indices(s, k=1)])
        positive = pair[pair > 0.0]
        kernel_width = float(np.median(positive)) if positive.size else 1.0
    if kernel_width <= 0:
        raise DiagnosticsError(f"kernel_width must be positive, got {kernel_width}")
    gram = np.exp(-sq / (2.0 * kernel_width ** 2))
    return gram_entropy(gram, alpha)


def feature_rank(sample: np.ndarray, tol: float = 1e-6) -> int:
    """Numerical rank of the per-image-averaged map (sv > tol * max_sv)."""
    sample = np.asarray(sample, dtype=np.float64)
    if sample.ndim != 3 or len(sample) < 2:
        raise DiagnosticsError("sample must be [s, h, w] with s >= 2")
    mean_map = sample.mean(axis=0)
    sv = np.linalg.svd(mean_map, compute_uv=False)
    if sv.size == 0 or sv.max() == 0.0:
        return 0
    return int(np.sum(sv > tol * sv.max()))


def correlate(x, y) -> float:
    """Pearson correlation coefficient; errors on zero-variance input."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DiagnosticsError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.std() == 0.0 or y.std() == 0.0:
        raise DiagnosticsError("zero-variance input to correlate")
    xc, yc = x - x.mean(), y - y.mean()
    return float(np.sum(xc * yc) / np.sqrt(np.sum(xc * xc) * np.sum(yc * yc)))
