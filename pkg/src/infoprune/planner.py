"""Turn per-filter scores plus pruning rates into a whole-network plan:
kept output-filter sets per layer (coupling groups share one set) and the
derived input-channel / FC-column removals for every consumer.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .archive import ModelManifest, manifest_hash, topological_order
from .scoring import ScoreTable

STRATEGIES = ("least_important", "most_important", "random")

# guards float noise in (1-p)*n, e.g. 0.3*10 -> 3.0000000000000004
_CEIL_EPS = 1e-9


class PlanError(ValueError):
    pass


def keep_count(rate: float, n: int) -> int:
    """Number of filters kept at pruning rate `rate`: ceil((1-rate)*n), >= 1."""
    if not 0.0 <= rate < 1.0:
        raise PlanError(f"pruning rate must be in [0, 1), got {rate}")
    if n < 1:
        raise PlanError(f"filter count must be >= 1, got {n}")
    return max(1, math.ceil((1.0 - rate) * n - _CEIL_EPS))


def select_filters(scores, keep: int, strategy: str = "least_important",
                   seed: int | None = None) -> list[int]:
    """Kept filter indices, sorted ascending. Ties keep the smaller index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if not 0 < keep <= n:
        raise PlanError(f"keep must be in [1, {n}], got {keep}")
    if strategy == "least_important":
        order = sorted(range(n), key=lambda i: (-scores[i], i))
    elif strategy == "most_important":
        order = sorted(range(n), key=lambda i: (scores[i], i))
    elif strategy == "random":
        order = list(np.random.default_rng(seed).permutation(n))
    else:
        raise PlanError(f"unknown strategy '{strategy}'")
    return sorted(int(i) for i in order[:keep])


@dataclass
class PruningRates:
    global_rate: float = 0.0
    layer_rates: dict[str, float] = field(default_factory=dict)
    protected_layers: set[str] = field(default_factory=set)

    def rate_for(self, layer_id: str) -> float:
        if layer_id in self.protected_layers:
            return 0.0
        return self.layer_rates.get(layer_id, self.global_rate)

    def to_json(self) -> dict:
        return {"global_rate": self.global_rate,
                "layer_rates": dict(sorted(self.layer_rates.items())),
                "protected_layers": sorted(self.protected_layers)}

    @classmethod
    def from_json(cls, obj: dict) -> "PruningRates":
        extra = set(obj) - {"global_rate", "layer_rates", "protected_layers"}
        if extra:
            raise PlanError(f"rates config has unknown fields: {sorted(extra)}")
        return cls(global_rate=float(obj.get("global_rate", 0.0)),
                   layer_rates={k: float(v) for k, v in obj.get("layer_rates", {}).items()},
                   protected_layers=set(obj.get("protected_layers", [])))


@dataclass
class PruningPlan:
    kept_out: dict[str, list[int]]   # every prunable layer -> kept output indices
    kept_in: dict[str, list[int]]    # consumer layer -> kept input channels / FC columns
    strategy: str
    config: dict                     # sigma, m_nearest, metric, seed, rates snapshot
    manifest_hash: str

    def to_json(self) -> dict:
        return {"kept_out": {k: list(v) for k, v in sorted(self.kept_out.items())},
                "kept_in": {k: list(v) for k, v in sorted(self.kept_in.items())},
                "strategy": self.strategy,
                "config": self.config,
                "manifest_hash": self.manifest_hash}

    @classmethod
    def from_json(cls, obj: dict) -> "PruningPlan":
        return cls(kept_out={k: [int(i) for i in v] for k, v in obj["kept_out"].items()},
                   kept_in={k: [int(i) for i in v] for k, v in obj["kept_in"].items()},
                   strategy=obj["strategy"], config=obj["config"],
                   manifest_hash=obj["manifest_hash"])


def plan_json_text(plan: PruningPlan) -> str:
    return json.dumps(plan.to_json(), indent=2, sort_keys=True) + "\n"


def default_protected(manifest: ModelManifest) -> set[str]:
    """The final linear layer (class count must survive), if any."""
    linear = [spec.id for spec in topological_order(manifest) if spec.kind == "linear"]
    return {linear[-1]} if linear else set()


def build_plan(manifest: ModelManifest, scores: ScoreTable, rates: PruningRates,
               strategy: str = "least_important", seed: int | None = None) -> PruningPlan:
    """One-shot whole-network plan over the manifest graph."""
    if strategy not in STRATEGIES:
        raise PlanError(f"unknown strategy '{strategy}'")
    order = topological_order(manifest)
    prunable = [spec for spec in order if spec.prunable]

    protected = set(rates.protected_layers) or default_protected(manifest)
    effective = PruningRates(global_rate=rates.global_rate,
                             layer_rates=rates.layer_rates,
                             protected_layers=protected)

    group_of: dict[str, frozenset] = {}
    for group in manifest.coupling_groups:
        fg = frozenset(group)
        for lid in fg:
            group_of[lid] = fg

    def out_count(spec):
        return (spec.params["out_channels"] if spec.kind == "conv2d"
                else spec.params["out_features"])

    kept_out: dict[str, list[int]] = {}
    done_groups: set[frozenset] = set()
    for spec in prunable:
        unit = group_of.get(spec.id, frozenset({spec.id}))
        if unit in done_groups:
            continue
        done_groups.add(unit)
        members = sorted(unit)
        member_rates = {lid: effective.rate_for(lid) for lid in members}
        if len(set(member_rates.values())) > 1:
            raise PlanError(f"conflicting rates inside coupling group {members}: "
                            f"{member_rates}")
        rate = member_rates[members[0]]
        n = out_count(manifest.layer(members[0]))
        keep = keep_count(rate, n)
        if rate == 0.0:
            indices = list(range(n))
        else:
            combined = np.zeros(n)
            for lid in members:
                if lid not in scores.layers:
                    raise PlanError(f"missing score row for prunable layer '{lid}'")
                combined += scores.layers[lid].combined
            indices = select_filters(combined, keep, strategy, seed)
        for lid in members:
            kept_out[lid] = indices

    # propagate surviving channel indices through the graph
    by_id = {spec.id: spec for spec in manifest.layers}
    survived: dict[str, list[int]] = {}
    kept_in: dict[str, list[int]] = {}
    input_channels = list(range(manifest.input_shape[0]))
    for spec in order:
        ins = [survived[i] for i in spec.inputs] if spec.inputs else [input_channels]
        if spec.kind == "conv2d":
            kept_in[spec.id] = list(ins[0])
            survived[spec.id] = kept_out.get(spec.id, list(range(spec.params["out_channels"])))
        elif spec.kind == "batchnorm2d":
            kept_in[spec.id] = list(ins[0])
            survived[spec.id] = ins[0]
        elif spec.kind == "flatten":
            h, w = spec.params["height"], spec.params["width"]
            block = h * w
            survived[spec.id] = [c * block + off for c in ins[0] for off in range(block)]
        elif spec.kind == "add":
            if ins[0] != ins[1]:
                raise PlanError(f"layer '{spec.id}': add inputs prune to different channel "
                                f"sets; couple their producers")
            survived[spec.id] = ins[0]
        elif spec.kind == "linear":
            kept_in[spec.id] = list(ins[0])
            survived[spec.id] = kept_out.get(spec.id, list(range(spec.params["out_features"])))
        else:  # relu, pools: channelwise pass-through
            survived[spec.id] = ins[0]

    config = {"sigma": scores.config.sigma,
              "m_nearest": scores.config.m_nearest,
              "metric": scores.config.metric,
              "seed": seed,
              "rates": effective.to_json()}
    return PruningPlan(kept_out=kept_out, kept_in=kept_in, strategy=strategy,
                       config=config, manifest_hash=manifest_hash(manifest))
