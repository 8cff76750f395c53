"""Synthetic network builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from infoprune.archive import LayerSpec, ModelManifest, TensorRecord


def tensor(name, data):
    data = np.asarray(data, dtype=np.float32)
    return TensorRecord(name=name, shape=data.shape, data=data)


def conv(lid, inputs, out_ch, in_ch, k=3, stride=1, padding=1, bias=True,
         prunable=True):
    params = {"out_channels": out_ch, "in_channels": in_ch, "kernel": k,
              "stride": stride, "padding": padding, "has_bias": bias,
              "weight": f"{lid}.weight"}
    if bias:
        params["bias"] = f"{lid}.bias"
    return LayerSpec(id=lid, kind="conv2d", inputs=inputs, params=params,
                     prunable=prunable)


def bn(lid, inputs, channels, eps=1e-5):
    params = {"channels": channels, "epsilon": eps,
              "gamma": f"{lid}.gamma", "beta": f"{lid}.beta",
              "mean": f"{lid}.mean", "var": f"{lid}.var"}
    return LayerSpec(id=lid, kind="batchnorm2d", inputs=inputs, params=params)


def relu(lid, inputs):
    return LayerSpec(id=lid, kind="relu", inputs=inputs, params={})


def pool(lid, inputs, kind="maxpool2d", k=2, stride=2):
    return LayerSpec(id=lid, kind=kind, inputs=inputs,
                     params={"kernel": k, "stride": stride})


def flatten(lid, inputs, h, w):
    return LayerSpec(id=lid, kind="flatten", inputs=inputs,
                     params={"height": h, "width": w})


def add(lid, inputs):
    return LayerSpec(id=lid, kind="add", inputs=inputs, params={})


def linear(lid, inputs, out_f, in_f, bias=True, prunable=True):
    params = {"out_features": out_f, "in_features": in_f, "has_bias": bias,
              "weight": f"{lid}.weight"}
    if bias:
        params["bias"] = f"{lid}.bias"
    return LayerSpec(id=lid, kind="linear", inputs=inputs, params=params,
                     prunable=prunable)


def fill_tensors(manifest, rng, scale=0.5):
    """Random float32 tensors matching the manifest's expected shapes."""
    from infoprune.archive import expected_tensor_shapes
    tensors = {}
    for name, shape in expected_tensor_shapes(manifest).items():
        if name.endswith(".gamma") or name.endswith(".var"):
            data = rng.uniform(0.5, 1.5, shape)
        elif name.endswith(".mean") or name.endswith(".beta"):
            data = rng.standard_normal(shape) * 0.1
        else:
            data = rng.standard_normal(shape) * scale
        tensors[name] = tensor(name, data)
    return tensors


def toy_chain(rng, c_in=3, spatial=8, mid=8, narrow=4, classes=10):
    """conv(mid)->bn->relu->conv(narrow)->relu->flatten->fc."""
    layers = [
        conv("conv1", [], mid, c_in),
        bn("bn1", ["conv1"], mid),
        relu("relu1", ["bn1"]),
        conv("conv2", ["relu1"], narrow, mid),
        relu("relu2", ["conv2"]),
        flatten("flat", ["relu2"], spatial, spatial),
        linear("fc", ["flat"], classes, narrow * spatial * spatial),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(c_in, spatial, spatial))
    return manifest, fill_tensors(manifest, rng)


def toy_residual(rng, c_in=3, spatial=8, width=8, classes=10):
    """stem -> residual block (identity shortcut) -> head conv -> fc.

    The stem conv and the block-output conv must share one kept-index set.
    """
    layers = [
        conv("stem", [], width, c_in),
        bn("stem_bn", ["stem"], width),
        relu("stem_relu", ["stem_bn"]),
        conv("blk_conv1", ["stem_relu"], width, width),
        bn("blk_bn1", ["blk_conv1"], width),
        relu("blk_relu1", ["blk_bn1"]),
        conv("blk_conv2", ["blk_relu1"], width, width),
        bn("blk_bn2", ["blk_conv2"], width),
        add("res_add", ["stem_relu", "blk_bn2"]),
        relu("res_relu", ["res_add"]),
        conv("head", ["res_relu"], width, width),
        relu("head_relu", ["head"]),
        flatten("flat", ["head_relu"], spatial, spatial),
        linear("fc", ["flat"], classes, width * spatial * spatial),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(c_in, spatial, spatial),
                             coupling_groups=[{"stem", "blk_conv2"}])
    return manifest, fill_tensors(manifest, rng)


def random_toy_net(rng):
    """Random chain or residual topology with a conv->flatten->fc boundary."""
    if rng.integers(2) == 0:
        mid = int(rng.integers(4, 13))
        narrow = int(rng.integers(4, 9))
        return toy_chain(rng, mid=mid, narrow=narrow)
    width = int(rng.integers(4, 13))
    return toy_residual(rng, width=width)


def vgg16_cifar_manifest():
    """VGG-16 with batchnorm for 32x32 inputs, FC head 512-512-10."""
    cfg = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
           512, 512, 512, "M", 512, 512, 512, "M"]
    layers = []
    prev = None
    in_ch, idx = 3, 0
    for item in cfg:
        if item == "M":
            lid = f"pool{idx}"
            layers.append(pool(lid, [prev]))
        else:
            lid = f"conv{idx}"
            layers.append(conv(lid, [prev] if prev else [], item, in_ch))
            layers.append(bn(f"bn{idx}", [lid], item))
            layers.append(relu(f"relu{idx}", [f"bn{idx}"]))
            in_ch = item
            lid = f"relu{idx}"
        prev = lid
        idx += 1
    layers.append(flatten("flat", [prev], 1, 1))
    layers.append(linear("fc1", ["flat"], 512, 512))
    layers.append(relu("fc1_relu", ["fc1"]))
    layers.append(linear("fc2", ["fc1_relu"], 10, 512))
    return ModelManifest(layers=layers, input_shape=(3, 32, 32))


def resnet56_manifest():
    """CIFAR ResNet-56: stem + 3 stages x 9 blocks (16/32/64), 1x1 conv shortcuts."""
    layers = [conv("stem", [], 16, 3, bias=False),
              bn("stem_bn", ["stem"], 16),
              relu("stem_relu", ["stem_bn"])]
    groups = []
    prev, in_ch = "stem_relu", 16
    for stage, width in enumerate((16, 32, 64)):
        group = {"stem"} if stage == 0 else set()
        for block in range(9):
            tag = f"s{stage}b{block}"
            stride = 2 if (stage > 0 and block == 0) else 1
            layers += [
                conv(f"{tag}_conv1", [prev], width, in_ch, stride=stride, bias=False),
                bn(f"{tag}_bn1", [f"{tag}_conv1"], width),
                relu(f"{tag}_relu1", [f"{tag}_bn1"]),
                conv(f"{tag}_conv2", [f"{tag}_relu1"], width, width, bias=False),
                bn(f"{tag}_bn2", [f"{tag}_conv2"], width),
            ]
            if stride == 2 or in_ch != width:
                layers += [
                    conv(f"{tag}_down", [prev], width, in_ch, k=1, stride=stride,
                         padding=0, bias=False),
                    bn(f"{tag}_down_bn", [f"{tag}_down"], width),
                ]
                shortcut = f"{tag}_down_bn"
                group.add(f"{tag}_down")
            else:
                shortcut = prev
            layers += [add(f"{tag}_add", [shortcut, f"{tag}_bn2"]),
                       relu(f"{tag}_relu2", [f"{tag}_add"])]
            group.add(f"{tag}_conv2")
            prev, in_ch = f"{tag}_relu2", width
        groups.append(group)
    layers += [pool("gap", [prev], kind="avgpool2d", k=8, stride=8),
               flatten("flat", ["gap"], 1, 1),
               linear("fc", ["flat"], 10, 64)]
    return ModelManifest(layers=layers, input_shape=(3, 32, 32),
                         coupling_groups=groups)
