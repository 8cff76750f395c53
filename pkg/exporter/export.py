#!/usr/bin/env python3
"""Convert a PyTorch image classifier into an infoprune model archive.

Writes the archive format directly (manifest.json + one little-endian
float32 .bin per tensor); all pruning intelligence stays in the core
package. Residual `add` nodes get coupling groups covering the convs that
produce their operands.

Usage:
    export.py <model-name> <out-dir>

Model names: toyconv | toyvgg | toyresnet (randomly initialized, seeded).
Programmatic use: export_model(model, input_shape, out_dir).
"""
from __future__ import annotations

import json
import operator
import sys
from pathlib import Path

import numpy as np
import torch
import torch.fx
import torch.nn as nn
from torch.fx.passes.shape_prop import ShapeProp


class ExportError(ValueError):
    pass


def _pair(value, what, layer):
    if isinstance(value, (tuple, list)):
        if value[0] != value[1]:
            raise ExportError(f"unsupported: non-square {what} on {layer}")
        return int(value[0])
    return int(value)


def _np(t):
    return t.detach().cpu().numpy().astype("<f4")


class _UnionFind(dict):
    def find(self, x):
        while self.setdefault(x, x) != x:
            self[x] = self[self[x]]
            x = self[x]
        return x

    def union(self, a, b):
        self[self.find(a)] = self.find(b)


def export_model(model: nn.Module, input_shape, out_dir) -> Path:
    """Trace, convert and write the archive; returns the archive path."""
    model = model.eval()
    gm = torch.fx.symbolic_trace(model)
    ShapeProp(gm).propagate(torch.zeros(1, *input_shape))
    modules = dict(gm.named_modules())

    layers: list[dict] = []
    tensors: dict[str, np.ndarray] = {}
    placeholder = None
    output_node = None
    kind_of: dict[str, str] = {}
    inputs_of: dict[str, list[str]] = {}

    def in_shape(node):
        return tuple(node.args[0].meta["tensor_meta"].shape)

    def node_inputs(node, args):
        ids = []
        for arg in args:
            if arg.name == placeholder:
                continue
            ids.append(arg.name)
        return ids

    def emit(node, kind, params, prunable=False):
        ins = node_inputs(node, [a for a in node.args if isinstance(a, torch.fx.Node)])
        layers.append({"id": node.name, "kind": kind, "inputs": ins,
                       "params": params, "prunable": prunable})
        kind_of[node.name] = kind
        inputs_of[node.name] = ins

    for node in gm.graph.nodes:
        if node.op == "placeholder":
            if placeholder is not None:
                raise ExportError("model must take a single input tensor")
            placeholder = node.name
        elif node.op == "output":
            output_node = node
        elif node.op == "call_module":
            mod = modules[node.target]
            if isinstance(mod, nn.Conv2d):
                if mod.groups != 1:
                    raise ExportError(f"unsupported: grouped conv at '{node.name}'")
                if _pair(mod.dilation, "dilation", node.name) != 1:
                    raise ExportError(f"unsupported: dilated conv at '{node.name}'")
                params = {"out_channels": mod.out_channels,
                          "in_channels": mod.in_channels,
                          "kernel": _pair(mod.kernel_size, "kernel", node.name),
                          "stride": _pair(mod.stride, "stride", node.name),
                          "padding": _pair(mod.padding, "padding", node.name),
                          "has_bias": mod.bias is not None,
                          "weight": f"{node.name}.weight"}
                tensors[f"{node.name}.weight"] = _np(mod.weight)
                if mod.bias is not None:
                    params["bias"] = f"{node.name}.bias"
                    tensors[f"{node.name}.bias"] = _np(mod.bias)
                emit(node, "conv2d", params, prunable=True)
            elif isinstance(mod, nn.BatchNorm2d):
                params = {"channels": mod.num_features, "epsilon": mod.eps,
                          "gamma": f"{node.name}.gamma", "beta": f"{node.name}.beta",
                          "mean": f"{node.name}.mean", "var": f"{node.name}.var"}
                tensors[f"{node.name}.gamma"] = _np(mod.weight)
                tensors[f"{node.name}.beta"] = _np(mod.bias)
                tensors[f"{node.name}.mean"] = _np(mod.running_mean)
                tensors[f"{node.name}.var"] = _np(mod.running_var)
                emit(node, "batchnorm2d", params)
            elif isinstance(mod, nn.ReLU):
                emit(node, "relu", {})
            elif isinstance(mod, (nn.MaxPool2d, nn.AvgPool2d)):
                if _pair(mod.padding, "pool padding", node.name) != 0:
                    raise ExportError(f"unsupported: padded pooling at '{node.name}'")
                kind = "maxpool2d" if isinstance(mod, nn.MaxPool2d) else "avgpool2d"
                stride = mod.stride if mod.stride is not None else mod.kernel_size
                emit(node, kind, {"kernel": _pair(mod.kernel_size, "kernel", node.name),
                                  "stride": _pair(stride, "stride", node.name)})
            elif isinstance(mod, nn.Flatten):
                _, _, h, w = in_shape(node)
                emit(node, "flatten", {"height": int(h), "width": int(w)})
            elif isinstance(mod, nn.Linear):
                params = {"out_features": mod.out_features,
                          "in_features": mod.in_features,
                          "has_bias": mod.bias is not None,
                          "weight": f"{node.name}.weight"}
                tensors[f"{node.name}.weight"] = _np(mod.weight)
                if mod.bias is not None:
                    params["bias"] = f"{node.name}.bias"
                    tensors[f"{node.name}.bias"] = _np(mod.bias)
                emit(node, "linear", params, prunable=True)
            else:
                raise ExportError(f"unsupported layer kind at '{node.name}': "
                                  f"{type(mod).__name__}")
        elif node.op == "call_function":
            if node.target in (operator.add, torch.add):
                emit(node, "add", {})
            elif node.target in (torch.relu, nn.functional.relu):
                emit(node, "relu", {})
            elif node.target is torch.flatten:
                _, _, h, w = in_shape(node)
                emit(node, "flatten", {"height": int(h), "width": int(w)})
            else:
                raise ExportError(f"unsupported function at '{node.name}': {node.target}")
        elif node.op == "call_method":
            if node.target == "relu":
                emit(node, "relu", {})
            elif node.target in ("flatten", "view", "reshape"):
                _, _, h, w = in_shape(node)
                emit(node, "flatten", {"height": int(h), "width": int(w)})
            else:
                raise ExportError(f"unsupported method at '{node.name}': {node.target}")
        else:
            raise ExportError(f"unsupported graph node '{node.name}' ({node.op})")

    if output_node is None or placeholder is None:
        raise ExportError("traced graph has no input or no output")

    coupling_groups = _derive_coupling_groups(kind_of, inputs_of, placeholder)

    manifest = {"input_shape": [int(s) for s in input_shape],
                "layers": layers,
                "coupling_groups": [sorted(g) for g in coupling_groups]}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name, data in tensors.items():
        (out_dir / f"{name}.bin").write_bytes(np.ascontiguousarray(data).tobytes())
    return out_dir


def _derive_coupling_groups(kind_of, inputs_of, placeholder):
    """Convs feeding a residual add (through channelwise ops) share a group."""
    passthrough = {"batchnorm2d", "relu", "maxpool2d", "avgpool2d"}

    def channel_source(lid):
        while kind_of.get(lid) in passthrough:
            lid = inputs_of[lid][0] if inputs_of[lid] else placeholder
        return lid

    uf = _UnionFind()
    for lid, kind in kind_of.items():
        if kind != "add":
            continue
        operands = inputs_of[lid] or [placeholder]
        for op_id in operands:
            uf.union(lid, channel_source(op_id))
        if len(operands) < 2:
            uf.union(lid, placeholder)

    classes: dict[str, set] = {}
    for lid in list(uf):
        classes.setdefault(uf.find(lid), set()).add(lid)
    groups = []
    for members in classes.values():
        convs = {m for m in members if kind_of.get(m) == "conv2d"}
        if not any(kind_of.get(m) == "add" for m in members):
            continue
        if placeholder in members:
            raise ExportError("residual add is fed directly by the network input; "
                              "its channels cannot be pruned consistently")
        if len(convs) >= 2:
            groups.append(convs)
        elif convs:
            raise ExportError(f"residual add has a single conv producer {sorted(convs)}; "
                              f"cannot derive a coupling group")
    return groups


# --- toy model zoo ------------------------------------------------------------


class ToyConv(nn.Module):
    """Two convs and a classifier head; the minimal round-trip model."""

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(8, 4, 3, padding=1)
        self.relu2 = nn.ReLU()
        self.flat = nn.Flatten()
        self.fc = nn.Linear(4 * 8 * 8, 10)

    def forward(self, x):
        x = self.relu1(self.conv1(x))
        x = self.relu2(self.conv2(x))
        return self.fc(self.flat(x))


ToyConv.input_shape = (3, 8, 8)


class ToyVGG(nn.Module):
    def __init__(self):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), nn.BatchNorm2d(16), nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(16, 32, 3, padding=1), nn.BatchNorm2d(32), nn.ReLU(),
            nn.MaxPool2d(2),
        )
        self.flat = nn.Flatten()
        self.classifier = nn.Linear(32 * 8 * 8, 10)

    def forward(self, x):
        return self.classifier(self.flat(self.features(x)))


ToyVGG.input_shape = (3, 32, 32)


class _BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.relu = nn.ReLU()
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.down = None
        if stride != 1 or in_ch != out_ch:
            self.down = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch))

    def forward(self, x):
        identity = self.down(x) if self.down is not None else x
        out = self.bn2(self.conv2(self.relu(self.bn1(self.conv1(x)))))
        return torch.relu(out + identity)


class ToyResNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.stem = nn.Conv2d(3, 8, 3, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(8)
        self.stem_relu = nn.ReLU()
        self.block1 = _BasicBlock(8, 8)
        self.block2 = _BasicBlock(8, 16, stride=2)
        self.pool = nn.AvgPool2d(8)
        self.flat = nn.Flatten()
        self.fc = nn.Linear(16, 10)

    def forward(self, x):
        x = self.stem_relu(self.stem_bn(self.stem(x)))
        x = self.block1(x)
        x = self.block2(x)
        return self.fc(self.flat(self.pool(x)))


ToyResNet.input_shape = (3, 16, 16)

MODELS = {"toyconv": ToyConv, "toyvgg": ToyVGG, "toyresnet": ToyResNet}


def build_model(name: str) -> nn.Module:
    if name not in MODELS:
        raise ExportError(f"unknown model '{name}'; choose from {sorted(MODELS)}")
    torch.manual_seed(0)
    model = MODELS[name]()
    # give batchnorms non-trivial running stats
    with torch.no_grad():
        for mod in model.modules():
            if isinstance(mod, nn.BatchNorm2d):
                mod.running_mean.normal_(0, 0.1)
                mod.running_var.uniform_(0.5, 1.5)
    return model


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    name, out_dir = argv
    try:
        model = build_model(name)
        export_model(model, model.input_shape, out_dir)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"exported '{name}' to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
