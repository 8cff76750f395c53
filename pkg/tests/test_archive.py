import json

import numpy as np
import pytest

from infoprune import (ArchiveError, ModelManifest, load_archive, save_archive,
                       validate)
from infoprune.archive import LayerSpec

from nets import conv, fill_tensors, flatten, linear, tensor, toy_chain


def minimal_manifest():
    layers = [conv("c1", [], 4, 3, prunable=True)]
    return ModelManifest(layers=layers, input_shape=(3, 8, 8))


def test_minimal_archive_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    manifest = minimal_manifest()
    tensors = fill_tensors(manifest, rng)
    save_archive(manifest, tensors, tmp_path / "arc")
    loaded_manifest, loaded = load_archive(tmp_path / "arc")
    assert len(loaded_manifest.layers) == 1
    assert loaded_manifest.layers[0].prunable
    assert loaded_manifest.layers[0].params["out_channels"] == 4
    for name in tensors:
        assert loaded[name].data.tobytes() == tensors[name].data.tobytes()


def test_two_layer_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    manifest, tensors = toy_chain(rng)
    save_archive(manifest, tensors, tmp_path / "a")
    m2, t2 = load_archive(tmp_path / "a")
    save_archive(m2, t2, tmp_path / "b")
    assert (tmp_path / "a" / "manifest.json").read_bytes() == \
           (tmp_path / "b" / "manifest.json").read_bytes()
    for name in tensors:
        assert (tmp_path / "a" / f"{name}.bin").read_bytes() == \
               (tmp_path / "b" / f"{name}.bin").read_bytes()


def test_size_mismatch(tmp_path):
    rng = np.random.default_rng(3)
    manifest = minimal_manifest()
    tensors = fill_tensors(manifest, rng)
    save_archive(manifest, tensors, tmp_path / "arc")
    # 108 floats expected for [4,3,3,3]; truncate to 107
    path = tmp_path / "arc" / "c1.weight.bin"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ArchiveError, match="size mismatch"):
        load_archive(tmp_path / "arc")


def test_add_channel_mismatch():
    layers = [
        conv("a", [], 16, 3),
        conv("b", [], 8, 3),
        LayerSpec(id="sum", kind="add", inputs=["a", "b"], params={}),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8))
    with pytest.raises(ArchiveError, match="single source"):
        validate(manifest, {})
    # same with a shared source so only the add invariant trips
    layers = [
        conv("src", [], 3, 3),
        conv("a", ["src"], 16, 3),
        conv("b", ["src"], 8, 3),
        LayerSpec(id="sum", kind="add", inputs=["a", "b"], params={}),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8))
    with pytest.raises(ArchiveError, match="add channel mismatch"):
        validate(manifest, {})


def test_nan_rejected():
    rng = np.random.default_rng(4)
    manifest = minimal_manifest()
    tensors = fill_tensors(manifest, rng)
    tensors["c1.weight"].data[0, 0, 0, 0] = np.nan
    with pytest.raises(ArchiveError, match="non-finite weight"):
        validate(manifest, tensors)


def test_empty_tensor_map_is_dangling():
    with pytest.raises(ArchiveError, match="dangling reference"):
        validate(minimal_manifest(), {})


def test_cycle_detected():
    layers = [
        conv("a", ["b"], 3, 3),
        conv("b", ["a"], 3, 3),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8))
    with pytest.raises(ArchiveError, match="cyclic|single source"):
        validate(manifest, {})


def test_grouped_conv_rejected():
    spec = conv("c1", [], 4, 4)
    spec.params["groups"] = 2
    manifest = ModelManifest(layers=[spec], input_shape=(4, 8, 8))
    with pytest.raises(ArchiveError, match="grouped conv"):
        validate(manifest, {})


def test_unknown_manifest_field_rejected(tmp_path):
    rng = np.random.default_rng(5)
    manifest = minimal_manifest()
    save_archive(manifest, fill_tensors(manifest, rng), tmp_path / "arc")
    obj = json.loads((tmp_path / "arc" / "manifest.json").read_text())
    obj["surprise"] = 1
    (tmp_path / "arc" / "manifest.json").write_text(json.dumps(obj))
    with pytest.raises(ArchiveError, match="unknown fields"):
        load_archive(tmp_path / "arc")


def test_bn_must_follow_conv():
    layers = [
        conv("c1", [], 4, 3),
        LayerSpec(id="r", kind="relu", inputs=["c1"], params={}),
        LayerSpec(id="b", kind="batchnorm2d", inputs=["r"],
                  params={"channels": 4, "epsilon": 1e-5, "gamma": "b.g",
                          "beta": "b.b", "mean": "b.m", "var": "b.v"}),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8))
    with pytest.raises(ArchiveError, match="batchnorm input must be a conv2d"):
        validate(manifest, {})


def test_flatten_spatial_mismatch():
    layers = [
        conv("c1", [], 4, 3),
        flatten("f", ["c1"], 4, 4),  # actual spatial is 8x8
        linear("fc", ["f"], 10, 64),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8))
    with pytest.raises(ArchiveError, match="flatten expects"):
        validate(manifest, {})


def test_coupling_group_count_mismatch():
    layers = [
        conv("a", [], 8, 3),
        conv("b", ["a"], 4, 8),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8),
                             coupling_groups=[{"a", "b"}])
    with pytest.raises(ArchiveError, match="out-channel"):
        validate(manifest, {})


def test_coupling_groups_disjoint():
    layers = [
        conv("a", [], 8, 3),
        conv("b", ["a"], 8, 8),
        conv("c", ["b"], 8, 8),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8),
                             coupling_groups=[{"a", "b"}, {"b", "c"}])
    with pytest.raises(ArchiveError, match="more than one coupling group"):
        validate(manifest, {})


def test_save_rejects_nan(tmp_path):
    rng = np.random.default_rng(6)
    manifest = minimal_manifest()
    tensors = fill_tensors(manifest, rng)
    tensors["c1.bias"].data[0] = np.inf
    with pytest.raises(ArchiveError, match="non-finite weight"):
        save_archive(manifest, tensors, tmp_path / "arc")
