"""Minimal deterministic forward-pass engine for manifest networks.

Used to verify that structural pruning is equivalent to zeroing the removed
channels post-activation in the original network, and to capture feature
maps for the diagnostics module. Convolution uses the cross-correlation
convention with zero padding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .archive import ModelManifest, TensorRecord, topological_order
from .planner import PruningPlan


class ForwardError(ValueError):
    pass


@dataclass
class ChannelMask:
    """Per prunable layer: boolean keep-vector of length n_out."""
    keep: dict[str, np.ndarray]

    @classmethod
    def from_plan(cls, manifest: ModelManifest, plan: PruningPlan) -> "ChannelMask":
        keep = {}
        for spec in manifest.layers:
            if spec.id not in plan.kept_out:
                continue
            n = (spec.params["out_channels"] if spec.kind == "conv2d"
                 else spec.params["out_features"])
            vec = np.zeros(n, dtype=bool)
            vec[plan.kept_out[spec.id]] = True
            keep[spec.id] = vec
        return cls(keep=keep)


def _conv2d(x, weight, bias, stride, padding):
    k = weight.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # accumulate input-channel-ascending, kernel row-major
    out = np.tensordot(weight, windows, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        out = out + bias[:, None, None]
    return out.astype(np.float32)


def _pool(x, kernel, stride, reducer):
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return reducer(windows, axis=(3, 4)).astype(np.float32)


def _node_value(spec, ins, tensors):
    p = spec.params
    if spec.kind == "conv2d":
        weight = tensors[p["weight"]].data
        bias = tensors[p["bias"]].data if p["has_bias"] else None
        return _conv2d(ins[0], weight, bias, p["stride"], p["padding"])
    if spec.kind == "batchnorm2d":
        gamma = tensors[p["gamma"]].data[:, None, None]
        beta = tensors[p["beta"]].data[:, None, None]
        mean = tensors[p["mean"]].data[:, None, None]
        var = tensors[p["var"]].data[:, None, None]
        return ((ins[0] - mean) / np.sqrt(var + p["epsilon"]) * gamma + beta).astype(np.float32)
    if spec.kind == "relu":
        return np.maximum(ins[0], np.float32(0.0))
    if spec.kind == "maxpool2d":
        return _pool(ins[0], p["kernel"], p["stride"], np.max)
    if spec.kind == "avgpool2d":
        return _pool(ins[0], p["kernel"], p["stride"], np.mean)
    if spec.kind == "flatten":
        return ins[0].reshape(-1)  # channel-major, then row-major spatial
    if spec.kind == "add":
        return (ins[0] + ins[1]).astype(np.float32)
    if spec.kind == "linear":
        weight = tensors[p["weight"]].data
        out = weight @ ins[0]
        if p["has_bias"]:
            out = out + tensors[p["bias"]].data
        return out.astype(np.float32)
    raise ForwardError(f"layer '{spec.id}': unknown kind '{spec.kind}'")


def forward(manifest: ModelManifest, tensors: dict[str, TensorRecord],
            image: np.ndarray, mask: ChannelMask | None = None) -> np.ndarray:
    """Run the network on one input [channels, height, width].

    With a mask, removed channels are zeroed at the prunable layer's output
    and re-zeroed through its batchnorm/relu/pool chain, so every downstream
    consumer sees exact zeros on masked channels (post-activation masking).
    """
    image = np.asarray(image, dtype=np.float32)
    if image.shape != tuple(manifest.input_shape):
        raise ForwardError(f"input shape {image.shape} != manifest input_shape "
                           f"{tuple(manifest.input_shape)}")
    outs: dict[str, np.ndarray] = {}
    dropped: dict[str, np.ndarray | None] = {}  # masked-out channel indices per node
    result = None
    for spec in topological_order(manifest):
        ins = [outs[i] for i in spec.inputs] if spec.inputs else [image]
        try:
            value = _node_value(spec, ins, tensors)
        except ValueError as exc:
            raise ForwardError(f"shape mismatch at node '{spec.id}': {exc}") from exc

        drop = None
        if mask is not None:
            if spec.kind in ("conv2d", "linear") and spec.id in mask.keep:
                drop = np.flatnonzero(~mask.keep[spec.id])
            elif spec.kind in ("batchnorm2d", "relu", "maxpool2d", "avgpool2d"):
                drop = dropped.get(spec.inputs[0])
            elif spec.kind == "add":
                d0 = dropped.get(spec.inputs[0])
                d1 = dropped.get(spec.inputs[1])
                if d0 is not None and d1 is not None:
                    drop = np.intersect1d(d0, d1)
        if drop is not None and len(drop):
            value = value.copy()
            value[drop] = 0.0
        dropped[spec.id] = drop
        outs[spec.id] = value
        result = value
    return result


def capture_feature_maps(manifest: ModelManifest, tensors: dict[str, TensorRecord],
                         images: np.ndarray, layer_id: str) -> np.ndarray:
    """Post-conv (pre-activation) maps at one layer, per channel: [n_j, s, h, w]."""
    images = np.asarray(images, dtype=np.float32)
    if len(images) < 2:
        raise ForwardError("s >= 2 required")
    spec = manifest.layer(layer_id)
    if spec.kind not in ("conv2d", "batchnorm2d"):
        raise ForwardError(f"layer '{layer_id}' has no spatial feature maps")
    per_image = []
    for image in images:
        outs: dict[str, np.ndarray] = {}
        for node in topological_order(manifest):
            ins = [outs[i] for i in node.inputs] if node.inputs else [image]
            outs[node.id] = _node_value(node, ins, tensors)
            if node.id == layer_id:
                break
        per_image.append(outs[layer_id])
    stacked = np.stack(per_image)  # [s, n_j, h, w]
    return np.transpose(stacked, (1, 0, 2, 3))
