"""Target classical architectures, flat parameter layout, forward pass and loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import diffcore as dc

ACTIVATIONS = (None, "relu", "tanh")


@dataclass(frozen=True)
class Conv:
    in_ch: int
    out_ch: int
    kernel: int
    padding: str = "valid"
    act: str | None = "relu"


@dataclass(frozen=True)
class MaxPool2:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    d_in: int
    d_out: int
    act: str | None = None


Layer = Union[Conv, MaxPool2, Flatten, Dense]


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    input_shape: tuple[int, ...]  # (C, H, W)
    layers: tuple[Layer, ...]

    def __post_init__(self):
        shape_chain(self)  # raises on inconsistency

    @property
    def n_outputs(self) -> int:
        return shape_chain(self)[-1][0]


def shape_chain(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    """Per-sample shape after each layer, starting with the input shape."""
    shape = tuple(spec.input_shape)
    out = [shape]
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            if len(shape) != 3 or shape[0] != layer.in_ch:
                raise ValueError(f"layer {i}: conv expects {layer.in_ch} channels, got {shape}")
            if layer.padding == "same":
                h, w = shape[1], shape[2]
            else:
                h, w = shape[1] - layer.kernel + 1, shape[2] - layer.kernel + 1
            if h < 1 or w < 1:
                raise ValueError(f"layer {i}: conv kernel larger than input {shape}")
            shape = (layer.out_ch, h, w)
        elif isinstance(layer, MaxPool2):
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ValueError(f"layer {i}: maxpool needs a (C,H,W) input with H,W >= 2, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif isinstance(layer, Flatten):
            shape = (math.prod(shape),)
        elif isinstance(layer, Dense):
            if shape != (layer.d_in,):
                raise ValueError(f"layer {i}: dense expects ({layer.d_in},), got {shape}")
            shape = (layer.d_out,)
        else:
            raise TypeError(f"unknown layer {layer!r}")
        if getattr(layer, "act", None) not in ACTIVATIONS:
            raise ValueError(f"layer {i}: unknown activation {layer.act!r}")
        out.append(shape)
    return out


@dataclass(frozen=True)
class Slot:
    layer: int
    kind: str  # "weight" | "bias"
    start: int
    stop: int
    shape: tuple[int, ...]


def param_layout(spec: ArchitectureSpec) -> list[Slot]:
    """Contiguous slices of theta: layer order, weight then bias.

    Conv kernels are (out, in, row, col); dense weights are (out, in).
    """
    slots, off = [], 0
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            wshape = (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel)
            bshape = (layer.out_ch,)
        elif isinstance(layer, Dense):
            wshape, bshape = (layer.d_out, layer.d_in), (layer.d_out,)
        else:
            continue
        for kind, shape in (("weight", wshape), ("bias", bshape)):
            n = math.prod(shape)
            slots.append(Slot(i, kind, off, off + n, shape))
            off += n
    return slots


def param_count(spec: ArchitectureSpec) -> int:
    total = 0
    for layer in spec.layers:
        if isinstance(layer, Conv):
            total += layer.out_ch * layer.in_ch * layer.kernel ** 2 + layer.out_ch
        elif isinstance(layer, Dense):
            total += layer.d_out * layer.d_in + layer.d_out
    return total


# ---------------------------------------------------------------- shipped specs

def mnist_cnn_spec() -> ArchitectureSpec:
    return ArchitectureSpec("mnist_cnn", (1, 28, 28), (
        Conv(1, 8, 5), MaxPool2(), Conv(8, 12, 5), MaxPool2(), Flatten(),
        Dense(192, 20, "relu"), Dense(20, 10)))


def cifar_cnn_spec() -> ArchitectureSpec:
    return ArchitectureSpec("cifar_cnn", (3, 32, 32), (
        Conv(3, 16, 5, "same"), MaxPool2(), Conv(16, 32, 5, "same"), MaxPool2(), Flatten(),
        Dense(2048, 128, "relu"), Dense(128, 64, "relu"), Dense(64, 10)))


def qcml_mnist_part1_spec() -> ArchitectureSpec:
    return ArchitectureSpec("qcml_mnist_part1", (1, 28, 28), (
        Conv(1, 8, 5), MaxPool2(), Conv(8, 12, 5), MaxPool2(), Flatten(),
        Dense(192, 10, "relu"), Dense(10, 13)))


def qcml_cifar_part1_spec() -> ArchitectureSpec:
    return ArchitectureSpec("qcml_cifar_part1", (3, 32, 32), (
        Conv(3, 16, 5, "same"), MaxPool2(), Conv(16, 32, 5, "same"), MaxPool2(), Flatten(),
        Dense(2048, 64, "relu"), Dense(64, 10, "relu"), Dense(10, 13)))


def qcml_part2_spec(n_qubits: int = 13, n_classes: int = 10) -> ArchitectureSpec:
    name = f"qcml_part2_{n_qubits}" + ("" if n_classes == 10 else f"_{n_classes}")
    return ArchitectureSpec(name, (n_qubits,), (Dense(n_qubits, n_classes),))


def toy_mlp_32_spec() -> ArchitectureSpec:
    """8x8 input, two pools -> 4 features -> 2 -> 4 -> 2 classes (32 params)."""
    return ArchitectureSpec("toy_mlp_32", (1, 8, 8), (
        MaxPool2(), MaxPool2(), Flatten(), Dense(4, 2, "tanh"), Dense(2, 4, "tanh"), Dense(4, 2)))


def toy_mlp_100_spec() -> ArchitectureSpec:
    """8x8 input, two pools -> 4 -> 6 -> 6 -> 4 classes (100 params)."""
    return ArchitectureSpec("toy_mlp_100", (1, 8, 8), (
        MaxPool2(), MaxPool2(), Flatten(), Dense(4, 6, "tanh"), Dense(6, 6, "tanh"), Dense(6, 4)))


def toy_mlp_178_spec() -> ArchitectureSpec:
    """8x8 input, one pool -> 16 -> 5 -> 10 -> 3 classes (178 params)."""
    return ArchitectureSpec("toy_mlp_178", (1, 8, 8), (
        MaxPool2(), Flatten(), Dense(16, 5, "tanh"), Dense(5, 10, "tanh"), Dense(10, 3)))


def toy_qcml_part1_spec() -> ArchitectureSpec:
    """8x8 input, two pools -> 4 tanh features for a 4-qubit hybrid circuit (20 params)."""
    return ArchitectureSpec("toy_qcml_part1", (1, 8, 8), (
        MaxPool2(), MaxPool2(), Flatten(), Dense(4, 4, "tanh")))


ARCHITECTURES = {
    "mnist_cnn": mnist_cnn_spec,
    "cifar_cnn": cifar_cnn_spec,
    "qcml_mnist_part1": qcml_mnist_part1_spec,
    "qcml_cifar_part1": qcml_cifar_part1_spec,
    "toy_mlp_32": toy_mlp_32_spec,
    "toy_mlp_100": toy_mlp_100_spec,
    "toy_mlp_178": toy_mlp_178_spec,
    "toy_qcml_part1": toy_qcml_part1_spec,
}


def get_spec(name: str) -> ArchitectureSpec:
    if name.startswith("qcml_part2_"):
        dims = [int(v) for v in name[len("qcml_part2_"):].split("_")]
        return qcml_part2_spec(*dims)
    try:
        return ARCHITECTURES[name]()
    except KeyError:
        raise ValueError(f"unknown architecture {name!r}; known: {sorted(ARCHITECTURES)}") from None


def init_theta(spec: ArchitectureSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, weights and biases."""
    theta = np.empty(param_count(spec))
    for slot in param_layout(spec):
        layer = spec.layers[slot.layer]
        fan_in = layer.in_ch * layer.kernel ** 2 if isinstance(layer, Conv) else layer.d_in
        bound = 1.0 / math.sqrt(fan_in)
        theta[slot.start:slot.stop] = rng.uniform(-bound, bound, slot.stop - slot.start)
    return theta


# ---------------------------------------------------------------- model

@dataclass(frozen=True)
class TargetModel:
    spec: ArchitectureSpec
    params: tuple[np.ndarray, ...]  # one entry per layout slot

    def flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params])

    def logits(self, images, chunk: int = 1000) -> np.ndarray:
        return forward(self, images, chunk)


def inject(theta, spec: ArchitectureSpec) -> TargetModel:
    theta = np.asarray(theta, dtype=np.float64)
    M = param_count(spec)
    if theta.shape != (M,):
        raise ValueError(f"theta has shape {theta.shape}, {spec.name} needs ({M},)")
    params = tuple(theta[s.start:s.stop].reshape(s.shape).copy() for s in param_layout(spec))
    for p in params:
        p.setflags(write=False)
    return TargetModel(spec, params)


def inject_graph(theta: dc.Tensor, spec: ArchitectureSpec) -> list[dc.Tensor]:
    """Layout slices of a flat theta tensor, differentiable back to theta."""
    M = param_count(spec)
    if theta.shape != (M,):
        raise ValueError(f"theta has shape {theta.shape}, {spec.name} needs ({M},)")
    return [dc.take(theta, s.start, s.stop, s.shape) for s in param_layout(spec)]


def _activate(h, act):
    if act == "relu":
        return dc.relu(h)
    if act == "tanh":
        return dc.tanh(h)
    return h


def forward_graph(spec: ArchitectureSpec, params: Sequence[dc.Tensor], x: dc.Tensor) -> dc.Tensor:
    expected = (x.shape[0],) + tuple(spec.input_shape)
    if x.shape != expected:
        raise ValueError(f"input batch has shape {x.shape}, expected {expected}")
    it = iter(params)
    h = x
    for layer in spec.layers:
        if isinstance(layer, Conv):
            w, b = next(it), next(it)
            h = _activate(dc.add_bias(dc.conv2d(h, w, layer.padding), b), layer.act)
        elif isinstance(layer, MaxPool2):
            h = dc.maxpool2d(h)
        elif isinstance(layer, Flatten):
            h = dc.flatten(h)
        else:
            w, b = next(it), next(it)
            h = _activate(dc.add_bias(dc.matmul(h, dc.transpose(w)), b), layer.act)
    return h


def forward(model: TargetModel, images, chunk: int = 1000) -> np.ndarray:
    """Logits for a batch of images, evaluated in chunks of ``chunk`` samples."""
    images = np.asarray(images, dtype=np.float64)
    params = [dc.tensor(p) for p in model.params]
    if images.ndim != len(model.spec.input_shape) + 1:
        raise ValueError(f"images have shape {images.shape}, expected (B,)+{model.spec.input_shape}")
    outs = [forward_graph(model.spec, params, dc.tensor(images[i:i + chunk])).data
            for i in range(0, images.shape[0], chunk)]
    if not outs:
        return np.zeros((0, model.spec.n_outputs))
    return np.concatenate(outs)


def cross_entropy(logits, labels) -> float:
    """Mean -log softmax(logits)[label]."""
    return float(dc.softmax_cross_entropy(dc.tensor(logits), np.asarray(labels)).data)


def accuracy(logits, labels) -> float:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(labels)))
