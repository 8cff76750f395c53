"""Model archive format: a directory holding manifest.json plus one raw
little-endian float32 .bin file per tensor, with full structural validation.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ArchiveError(ValueError):
    """Any malformed archive, manifest, or tensor set."""


LAYER_KINDS = {
    "conv2d", "linear", "batchnorm2d", "relu",
    "maxpool2d", "avgpool2d", "flatten", "add",
}

# per-kind param fields; unknown fields are rejected
_REQUIRED_PARAMS = {
    "conv2d": {"out_channels", "in_channels", "kernel", "stride", "padding",
               "has_bias", "weight"},
    "linear": {"out_features", "in_features", "has_bias", "weight"},
    "batchnorm2d": {"channels", "gamma", "beta", "mean", "var", "epsilon"},
    "relu": set(),
    "maxpool2d": {"kernel", "stride"},
    "avgpool2d": {"kernel", "stride"},
    "flatten": {"height", "width"},
    "add": set(),
}
_OPTIONAL_PARAMS = {
    "conv2d": {"bias", "groups"},
    "linear": {"bias"},
}


@dataclass
class TensorRecord:
    """Named dense float32 array, row-major."""
    name: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.data = np.asarray(self.data, dtype=np.float32).reshape(self.shape)

    def validate(self):
        if not (1 <= len(self.shape) <= 4):
            raise ArchiveError(f"tensor '{self.name}': shape must have 1-4 dims, got {self.shape}")
        if any(s <= 0 for s in self.shape):
            raise ArchiveError(f"tensor '{self.name}': non-positive dim in {self.shape}")
        if int(np.prod(self.shape)) != self.data.size:
            raise ArchiveError(f"tensor '{self.name}': size mismatch, shape {self.shape} "
                               f"vs {self.data.size} values")
        if not np.all(np.isfinite(self.data)):
            raise ArchiveError(f"tensor '{self.name}': non-finite weight")


@dataclass
class LayerSpec:
    id: str
    kind: str
    inputs: list[str]
    params: dict
    prunable: bool = False

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind, "inputs": list(self.inputs),
                "params": dict(self.params), "prunable": self.prunable}

    @classmethod
    def from_json(cls, obj: dict) -> "LayerSpec":
        extra = set(obj) - {"id", "kind", "inputs", "params", "prunable"}
        if extra:
            raise ArchiveError(f"layer entry has unknown fields: {sorted(extra)}")
        for key in ("id", "kind", "inputs", "params"):
            if key not in obj:
                raise ArchiveError(f"layer entry missing field '{key}'")
        return cls(id=obj["id"], kind=obj["kind"], inputs=list(obj["inputs"]),
                   params=dict(obj["params"]), prunable=bool(obj.get("prunable", False)))


@dataclass
class ModelManifest:
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    coupling_groups: list[set[str]] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.coupling_groups = [set(g) for g in self.coupling_groups]

    def layer(self, layer_id: str) -> LayerSpec:
        for spec in self.layers:
            if spec.id == layer_id:
                return spec
        raise ArchiveError(f"unknown layer id '{layer_id}'")

    def to_json(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [spec.to_json() for spec in self.layers],
            "coupling_groups": [sorted(g) for g in self.coupling_groups],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelManifest":
        extra = set(obj) - {"input_shape", "layers", "coupling_groups"}
        if extra:
            raise ArchiveError(f"manifest has unknown fields: {sorted(extra)}")
        if "input_shape" not in obj or "layers" not in obj:
            raise ArchiveError("manifest missing 'input_shape' or 'layers'")
        return cls(layers=[LayerSpec.from_json(entry) for entry in obj["layers"]],
                   input_shape=tuple(obj["input_shape"]),
                   coupling_groups=[set(g) for g in obj.get("coupling_groups", [])])


def topological_order(manifest: ModelManifest) -> list[LayerSpec]:
    """Topological order of the layer graph; raises on cycles."""
    by_id = {spec.id: spec for spec in manifest.layers}
    indeg = {spec.id: 0 for spec in manifest.layers}
    consumers: dict[str, list[str]] = {spec.id: [] for spec in manifest.layers}
    for spec in manifest.layers:
        for src in spec.inputs:
            if src not in by_id:
                raise ArchiveError(f"layer '{spec.id}': unknown input '{src}'")
            indeg[spec.id] += 1
            consumers[src].append(spec.id)
    ready = [spec.id for spec in manifest.layers if indeg[spec.id] == 0]
    order = []
    while ready:
        lid = ready.pop(0)
        order.append(by_id[lid])
        for nxt in consumers[lid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(manifest.layers):
        cyclic = sorted(lid for lid, d in indeg.items() if d > 0)
        raise ArchiveError(f"cyclic layer graph involving {cyclic}")
    return order


def propagate_shapes(manifest: ModelManifest) -> dict[str, tuple]:
    """Output shape at every layer: ('map', c, h, w) or ('vec', n).

    Also enforces all graph-structural invariants (channel agreement, add
    arity, flatten metadata, pooling feasibility).
    """
    by_id = {spec.id: spec for spec in manifest.layers}
    shapes: dict[str, tuple] = {}
    sources = [spec for spec in manifest.layers if not spec.inputs]
    if len(sources) != 1:
        raise ArchiveError(f"graph must have a single source, found "
                           f"{sorted(s.id for s in sources)}")
    consumed = {src for spec in manifest.layers for src in spec.inputs}
    sinks = [spec for spec in manifest.layers if spec.id not in consumed]
    if len(sinks) != 1:
        raise ArchiveError(f"graph must have a single sink, found "
                           f"{sorted(s.id for s in sinks)}")

    input_shape = ("map",) + manifest.input_shape
    for spec in topological_order(manifest):
        ins = [shapes[i] for i in spec.inputs] if spec.inputs else [input_shape]
        shapes[spec.id] = _layer_output_shape(spec, ins)
    return shapes


def _layer_output_shape(spec: LayerSpec, ins: list[tuple]) -> tuple:
    p = spec.params
    kind = spec.kind

    def one_map():
        if len(ins) != 1 or ins[0][0] != "map":
            raise ArchiveError(f"layer '{spec.id}' ({kind}): expects one spatial input")
        return ins[0][1:]

    if kind == "conv2d":
        c, h, w = one_map()
        if p.get("groups", 1) != 1:
            raise ArchiveError(f"layer '{spec.id}': unsupported: grouped conv")
        if c != p["in_channels"]:
            raise ArchiveError(f"layer '{spec.id}': in_channels {p['in_channels']} "
                               f"!= producer channels {c}")
        k, s, pad = p["kernel"], p["stride"], p["padding"]
        ho = (h + 2 * pad - k) // s + 1
        wo = (w + 2 * pad - k) // s + 1
        if ho < 1 or wo < 1:
            raise ArchiveError(f"layer '{spec.id}': kernel exceeds padded input")
        return ("map", p["out_channels"], ho, wo)
    if kind == "batchnorm2d":
        c, h, w = one_map()
        if c != p["channels"]:
            raise ArchiveError(f"layer '{spec.id}': batchnorm channels {p['channels']} "
                               f"!= producer channels {c}")
        return ("map", c, h, w)
    if kind == "relu":
        if len(ins) != 1:
            raise ArchiveError(f"layer '{spec.id}': relu expects one input")
        return ins[0]
    if kind in ("maxpool2d", "avgpool2d"):
        c, h, w = one_map()
        k, s = p["kernel"], p["stride"]
        ho = (h - k) // s + 1
        wo = (w - k) // s + 1
        if ho < 1 or wo < 1:
            raise ArchiveError(f"layer '{spec.id}': pool kernel exceeds input")
        return ("map", c, ho, wo)
    if kind == "flatten":
        c, h, w = one_map()
        if (h, w) != (p["height"], p["width"]):
            raise ArchiveError(f"layer '{spec.id}': flatten expects {p['height']}x{p['width']} "
                               f"spatial, got {h}x{w}")
        return ("vec", c * h * w)
    if kind == "add":
        if len(ins) != 2:
            raise ArchiveError(f"layer '{spec.id}': add needs exactly two inputs")
        if ins[0] != ins[1]:
            if ins[0][0] == ins[1][0] == "map" and ins[0][1] != ins[1][1]:
                raise ArchiveError(f"layer '{spec.id}': add channel mismatch "
                                   f"({ins[0][1]} vs {ins[1][1]})")
            raise ArchiveError(f"layer '{spec.id}': add shape mismatch ({ins[0]} vs {ins[1]})")
        return ins[0]
    if kind == "linear":
        if len(ins) != 1 or ins[0][0] != "vec":
            raise ArchiveError(f"layer '{spec.id}': linear expects one flattened input")
        if ins[0][1] != p["in_features"]:
            raise ArchiveError(f"layer '{spec.id}': in_features {p['in_features']} "
                               f"!= producer features {ins[0][1]}")
        return ("vec", p["out_features"])
    raise ArchiveError(f"layer '{spec.id}': unknown kind '{kind}'")


def expected_tensor_shapes(manifest: ModelManifest) -> dict[str, tuple[int, ...]]:
    """Map of every referenced tensor name to its shape implied by layer params."""
    shapes: dict[str, tuple[int, ...]] = {}

    def record(name, shape, owner):
        if name in shapes and shapes[name] != shape:
            raise ArchiveError(f"tensor '{name}' referenced with conflicting shapes "
                               f"(at layer '{owner}')")
        shapes[name] = shape

    for spec in manifest.layers:
        p = spec.params
        if spec.kind == "conv2d":
            record(p["weight"], (p["out_channels"], p["in_channels"],
                                 p["kernel"], p["kernel"]), spec.id)
            if p["has_bias"]:
                if "bias" not in p:
                    raise ArchiveError(f"layer '{spec.id}': has_bias without bias tensor name")
                record(p["bias"], (p["out_channels"],), spec.id)
        elif spec.kind == "linear":
            record(p["weight"], (p["out_features"], p["in_features"]), spec.id)
            if p["has_bias"]:
                if "bias" not in p:
                    raise ArchiveError(f"layer '{spec.id}': has_bias without bias tensor name")
                record(p["bias"], (p["out_features"],), spec.id)
        elif spec.kind == "batchnorm2d":
            for key in ("gamma", "beta", "mean", "var"):
                record(p[key], (p["channels"],), spec.id)
    return shapes


def validate_structure(manifest: ModelManifest) -> dict[str, tuple]:
    """Validate everything that does not need tensor data; returns shapes."""
    seen = set()
    for spec in manifest.layers:
        if spec.id in seen:
            raise ArchiveError(f"duplicate layer id '{spec.id}'")
        seen.add(spec.id)
        if spec.kind not in LAYER_KINDS:
            raise ArchiveError(f"layer '{spec.id}': unknown kind '{spec.kind}'")
        required = _REQUIRED_PARAMS[spec.kind]
        allowed = required | _OPTIONAL_PARAMS.get(spec.kind, set())
        got = set(spec.params)
        if not required <= got:
            raise ArchiveError(f"layer '{spec.id}': missing params {sorted(required - got)}")
        if not got <= allowed:
            raise ArchiveError(f"layer '{spec.id}': unknown params {sorted(got - allowed)}")
        if spec.prunable and spec.kind not in ("conv2d", "linear"):
            raise ArchiveError(f"layer '{spec.id}': only conv2d/linear may be prunable")

    if len(manifest.input_shape) != 3 or any(s <= 0 for s in manifest.input_shape):
        raise ArchiveError(f"input_shape must be [channels, height, width], "
                           f"got {manifest.input_shape}")

    shapes = propagate_shapes(manifest)

    by_id = {spec.id: spec for spec in manifest.layers}
    for spec in manifest.layers:
        if spec.kind == "batchnorm2d":
            producer = by_id[spec.inputs[0]]
            if producer.kind != "conv2d":
                raise ArchiveError(f"layer '{spec.id}': batchnorm input must be a conv2d, "
                                   f"got '{producer.kind}'")

    seen_members: set[str] = set()
    for group in manifest.coupling_groups:
        counts = set()
        for lid in group:
            if lid not in by_id:
                raise ArchiveError(f"coupling group references unknown layer '{lid}'")
            spec = by_id[lid]
            if not spec.prunable:
                raise ArchiveError(f"coupling group member '{lid}' is not prunable")
            if lid in seen_members:
                raise ArchiveError(f"layer '{lid}' appears in more than one coupling group")
            seen_members.add(lid)
            counts.add(spec.params["out_channels"] if spec.kind == "conv2d"
                       else spec.params["out_features"])
        if len(counts) > 1:
            raise ArchiveError(f"coupling group {sorted(group)} mixes out-channel "
                               f"counts {sorted(counts)}")
    return shapes


def validate(manifest: ModelManifest, tensors: dict[str, TensorRecord]) -> None:
    """Full validation of a manifest plus its tensor set."""
    validate_structure(manifest)
    expected = expected_tensor_shapes(manifest)
    for name, shape in expected.items():
        if name not in tensors:
            raise ArchiveError(f"dangling reference: tensor '{name}' not in archive")
        rec = tensors[name]
        if rec.name != name:
            raise ArchiveError(f"tensor map key '{name}' != record name '{rec.name}'")
        rec.validate()
        if rec.shape != shape:
            raise ArchiveError(f"tensor '{name}': shape {rec.shape} inconsistent with "
                               f"manifest (expected {shape})")
    extras = set(tensors) - set(expected)
    if extras:
        raise ArchiveError(f"unreferenced tensors in archive: {sorted(extras)}")


def load_archive(path) -> tuple[ModelManifest, dict[str, TensorRecord]]:
    """Load and fully validate an archive directory."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise ArchiveError(f"missing file: {manifest_path}")
    try:
        manifest = ModelManifest.from_json(json.loads(manifest_path.read_text()))
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"manifest.json is not valid JSON: {exc}") from exc

    validate_structure(manifest)
    tensors: dict[str, TensorRecord] = {}
    for name, shape in expected_tensor_shapes(manifest).items():
        bin_path = path / f"{name}.bin"
        if not bin_path.is_file():
            raise ArchiveError(f"missing file: {bin_path}")
        raw = np.fromfile(bin_path, dtype="<f4")
        n_expected = int(np.prod(shape))
        if raw.size != n_expected:
            raise ArchiveError(f"tensor '{name}': size mismatch, shape {shape} needs "
                               f"{n_expected} floats but file has {raw.size}")
        tensors[name] = TensorRecord(name=name, shape=shape, data=raw.reshape(shape))
    validate(manifest, tensors)
    return manifest, tensors


def save_archive(manifest: ModelManifest, tensors: dict[str, TensorRecord], path) -> None:
    """Write a validated archive; round-trips bit-exactly through load_archive."""
    validate(manifest, tensors)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "manifest.json").write_text(manifest_json_text(manifest))
    for name, rec in tensors.items():
        (path / f"{name}.bin").write_bytes(
            np.ascontiguousarray(rec.data, dtype="<f4").tobytes())


def manifest_json_text(manifest: ModelManifest) -> str:
    return json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n"


def manifest_hash(manifest: ModelManifest) -> str:
    """Stable identity for plan/archive matching."""
    return hashlib.sha256(manifest_json_text(manifest).encode()).hexdigest()
