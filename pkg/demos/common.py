"""Small synthetic network shared by the demo scripts."""
import numpy as np

from infoprune.archive import (LayerSpec, ModelManifest, TensorRecord,
                               expected_tensor_shapes)


def toy_network(seed=0):
    """conv(3->8) -> bn -> relu -> conv(8->4) -> relu -> flatten -> fc(10)."""
    layers = [
        LayerSpec("conv1", "conv2d", [], {
            "out_channels": 8, "in_channels": 3, "kernel": 3, "stride": 1,
            "padding": 1, "has_bias": True, "weight": "conv1.weight",
            "bias": "conv1.bias"}, prunable=True),
        LayerSpec("bn1", "batchnorm2d", ["conv1"], {
            "channels": 8, "epsilon": 1e-5, "gamma": "bn1.gamma",
            "beta": "bn1.beta", "mean": "bn1.mean", "var": "bn1.var"}),
        LayerSpec("relu1", "relu", ["bn1"], {}),
        LayerSpec("conv2", "conv2d", ["relu1"], {
            "out_channels": 4, "in_channels": 8, "kernel": 3, "stride": 1,
            "padding": 1, "has_bias": True, "weight": "conv2.weight",
            "bias": "conv2.bias"}, prunable=True),
        LayerSpec("relu2", "relu", ["conv2"], {}),
        LayerSpec("flat", "flatten", ["relu2"], {"height": 8, "width": 8}),
        LayerSpec("fc", "linear", ["flat"], {
            "out_features": 10, "in_features": 256, "has_bias": True,
            "weight": "fc.weight", "bias": "fc.bias"}, prunable=True),
    ]
    manifest = ModelManifest(layers=layers, input_shape=(3, 8, 8))
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_tensor_shapes(manifest).items():
        if name.endswith(".var") or name.endswith(".gamma"):
            data = rng.uniform(0.5, 1.5, shape)
        else:
            data = rng.standard_normal(shape) * 0.5
        tensors[name] = TensorRecord(name=name, shape=shape, data=data)
    return manifest, tensors
