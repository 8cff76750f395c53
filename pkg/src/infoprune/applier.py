"""Execute a pruning plan on the tensor set: slice conv/BN/FC tensors along
output and input dimensions and emit a new, smaller, valid archive.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archive import (ModelManifest, TensorRecord, manifest_hash, save_archive,
                      validate)
from .planner import PruningPlan, plan_json_text


class ApplyError(ValueError):
    pass


@dataclass
class PrunedModel:
    manifest: ModelManifest
    tensors: dict[str, TensorRecord]
    provenance: dict


def plan_hash(plan: PruningPlan) -> str:
    return hashlib.sha256(plan_json_text(plan).encode()).hexdigest()


def _check_indices(indices, limit, what, layer_id):
    if any(i < 0 or i >= limit for i in indices):
        raise ApplyError(f"layer '{layer_id}': {what} index out of range "
                         f"(stale plan? limit {limit}, got {indices})")


def apply_plan(manifest: ModelManifest, tensors: dict[str, TensorRecord],
               plan: PruningPlan) -> PrunedModel:
    """Structurally prune; kept indices preserve ascending original order."""
    source_hash = manifest_hash(manifest)
    if plan.manifest_hash != source_hash:
        raise ApplyError("plan/archive mismatch: plan was built against a different manifest")

    new_layers = []
    new_tensors: dict[str, TensorRecord] = {}

    def slice_tensor(name, rows=None, cols=None):
        data = tensors[name].data
        if rows is not None and cols is not None:
            data = data[np.ix_(rows, cols)]
        elif rows is not None:
            data = data[np.asarray(rows, dtype=int)]
        new_tensors[name] = TensorRecord(name=name, shape=data.shape, data=data.copy())

    for spec in manifest.layers:
        new_spec = copy.deepcopy(spec)
        p = new_spec.params
        if spec.kind == "conv2d":
            rows = plan.kept_out.get(spec.id, list(range(p["out_channels"])))
            cols = plan.kept_in.get(spec.id, list(range(p["in_channels"])))
            _check_indices(rows, p["out_channels"], "output", spec.id)
            _check_indices(cols, p["in_channels"], "input", spec.id)
            slice_tensor(p["weight"], rows, cols)
            if p["has_bias"]:
                slice_tensor(p["bias"], rows)
            p["out_channels"], p["in_channels"] = len(rows), len(cols)
        elif spec.kind == "linear":
            rows = plan.kept_out.get(spec.id, list(range(p["out_features"])))
            cols = plan.kept_in.get(spec.id, list(range(p["in_features"])))
            _check_indices(rows, p["out_features"], "output", spec.id)
            _check_indices(cols, p["in_features"], "input", spec.id)
            slice_tensor(p["weight"], rows, cols)
            if p["has_bias"]:
                slice_tensor(p["bias"], rows)
            p["out_features"], p["in_features"] = len(rows), len(cols)
        elif spec.kind == "batchnorm2d":
            kept = plan.kept_in.get(spec.id, list(range(p["channels"])))
            _check_indices(kept, p["channels"], "channel", spec.id)
            for key in ("gamma", "beta", "mean", "var"):
                slice_tensor(p[key], kept)
            p["channels"] = len(kept)
        new_layers.append(new_spec)

    new_manifest = ModelManifest(layers=new_layers,
                                 input_shape=manifest.input_shape,
                                 coupling_groups=manifest.coupling_groups)
    validate(new_manifest, new_tensors)
    provenance = {"plan_hash": plan_hash(plan),
                  "source_manifest_hash": source_hash,
                  "plan_config": plan.config,
                  "strategy": plan.strategy}
    return PrunedModel(manifest=new_manifest, tensors=new_tensors, provenance=provenance)


def save_pruned(pruned: PrunedModel, path) -> None:
    """Write the pruned archive plus provenance.json."""
    path = Path(path)
    save_archive(pruned.manifest, pruned.tensors, path)
    (path / "provenance.json").write_text(
        json.dumps(pruned.provenance, indent=2, sort_keys=True) + "\n")
