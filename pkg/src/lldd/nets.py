"""Small image-to-image enhancement networks.

Three shape-preserving architectures over single-channel images:

* ``srcnn_lite``: conv-relu, conv-relu, conv (kernels 9-1-5);
* ``redcnn_lite``: a residual encoder-decoder with padded stride-1 convs and
  two symmetric skip additions;
* ``edsr_lite``: head conv, residual blocks, tail conv plus a global skip.

No normalization or dropout anywhere, so forward passes are deterministic.
Parameters are ordered lists of named graph leaves; identical (spec, seed)
pairs always rebuild bit-identical parameters.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from ._rng import np_generator

ARCHS = ("srcnn_lite", "redcnn_lite", "edsr_lite")


@dataclass(frozen=True)
class NetworkSpec:
    arch: str
    channels: tuple[int, ...] = ()
    kernels: tuple[int, ...] = ()
    depth: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")

    @property
    def min_input(self) -> int:
        return max(self.kernels)


def srcnn_lite(channels: tuple[int, int] = (16, 8),
               kernels: tuple[int, int, int] = (9, 1, 5)) -> NetworkSpec:
    return NetworkSpec("srcnn_lite", tuple(channels), tuple(kernels), depth=3)


def redcnn_lite(width: int = 12, kernel: int = 5, depth: int = 3) -> NetworkSpec:
    return NetworkSpec("redcnn_lite", (width,), (kernel,), depth=depth)


def edsr_lite(width: int = 16, kernel: int = 3, blocks: int = 2) -> NetworkSpec:
    return NetworkSpec("edsr_lite", (width,), (kernel,), depth=blocks)


def spec_from_name(name: str) -> NetworkSpec:
    """Default-configured spec for an architecture name."""
    return {"srcnn_lite": srcnn_lite,
            "redcnn_lite": redcnn_lite,
            "edsr_lite": edsr_lite}[name]()


def _layer_table(spec: NetworkSpec) -> list[tuple[str, int, int, int]]:
    """(name, in_channels, out_channels, kernel) for every conv, in order."""
    if spec.arch == "srcnn_lite":
        c1, c2 = spec.channels
        k1, k2, k3 = spec.kernels
        return [("extract", 1, c1, k1),
                ("map", c1, c2, k2),
                ("reconstruct", c2, 1, k3)]
    if spec.arch == "redcnn_lite":
        w, k, d = spec.channels[0], spec.kernels[0], spec.depth
        layers = []
        for i in range(d):
            layers.append((f"enc{i + 1}", 1 if i == 0 else w, w, k))
        for i in range(d - 1):
            layers.append((f"dec{i + 1}", w, w, k))
        layers.append((f"dec{d}", w, 1, k))
        return layers
    if spec.arch == "edsr_lite":
        w, k, blocks = spec.channels[0], spec.kernels[0], spec.depth
        layers = [("head", 1, w, k)]
        for i in range(blocks):
            layers.append((f"block{i + 1}a", w, w, k))
            layers.append((f"block{i + 1}b", w, w, k))
        layers.append(("tail", w, 1, k))
        return layers
    raise ValueError(spec.arch)


def param_count(spec: NetworkSpec) -> int:
    return sum(o * c * k * k + o for _, c, o, k in _layer_table(spec))


@dataclass
class ParamSet:
    """Ordered named parameters of one network instance."""

    spec: NetworkSpec
    params: list[tuple[str, ad.DiffNode]]

    def nodes(self) -> list[ad.DiffNode]:
        return [p for _, p in self.params]

    def names(self) -> list[str]:
        return [n for n, _ in self.params]

    def node(self, name: str) -> ad.DiffNode:
        for n, p in self.params:
            if n == name:
                return p
        raise KeyError(name)

    @property
    def size(self) -> int:
        return sum(p.value.size for _, p in self.params)

    def copy_values(self) -> list[np.ndarray]:
        return [p.value.copy() for _, p in self.params]

    def set_values(self, values: list[np.ndarray]) -> None:
        for (_, p), v in zip(self.params, values):
            if p.value.shape != v.shape:
                raise ad.ShapeError("set_values", "shape mismatch",
                                    p.value.shape, v.shape)
            p.value[...] = v

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params:
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()


def build(spec: NetworkSpec, seed: int, dtype=np.float32) -> ParamSet:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases."""
    gen = np_generator(seed, "net-init", spec.arch)
    params: list[tuple[str, ad.DiffNode]] = []
    for name, c_in, c_out, k in _layer_table(spec):
        std = np.sqrt(2.0 / (c_in * k * k))
        w = gen.standard_normal((c_out, c_in, k, k)) * std
        params.append((f"{name}.w", ad.leaf(w.astype(dtype))))
        params.append((f"{name}.b", ad.leaf(np.zeros(c_out, dtype=dtype))))
    return ParamSet(spec, params)


def _conv(ps: ParamSet, name: str, x: ad.DiffNode, k: int) -> ad.DiffNode:
    return ad.conv2d(x, ps.node(f"{name}.w"), ps.node(f"{name}.b"),
                     padding=k // 2)


def forward(spec: NetworkSpec, params: ParamSet, x: ad.DiffNode) -> ad.DiffNode:
    """Run the network; input and output are [N, 1, h, w]."""
    if x.value.ndim != 4 or x.value.shape[1] != 1:
        raise ad.ShapeError("forward", "input must be [N, 1, h, w]", x.value.shape)
    h, w = x.value.shape[2:]
    if min(h, w) < spec.min_input:
        raise ad.ShapeError(
            "forward", f"spatial size must be >= {spec.min_input}", x.value.shape)

    if spec.arch == "srcnn_lite":
        k1, k2, k3 = spec.kernels
        t = ad.relu(_conv(params, "extract", x, k1))
        t = ad.relu(_conv(params, "map", t, k2))
        return _conv(params, "reconstruct", t, k3)

    if spec.arch == "redcnn_lite":
        k, d = spec.kernels[0], spec.depth
        enc = [x]
        t = x
        for i in range(d):
            t = ad.relu(_conv(params, f"enc{i + 1}", t, k))
            enc.append(t)
        # decoder mirrors the encoder; skips pair dec i with enc (d - i)
        for i in range(1, d):
            t = ad.relu(ad.add(_conv(params, f"dec{i}", t, k), enc[d - i]))
        return _conv(params, f"dec{d}", t, k)

    if spec.arch == "edsr_lite":
        k, blocks = spec.kernels[0], spec.depth
        head = _conv(params, "head", x, k)
        t = head
        for i in range(blocks):
            branch = _conv(params, f"block{i + 1}b",
                           ad.relu(_conv(params, f"block{i + 1}a", t, k)), k)
            t = ad.add(t, branch)
        return ad.add(_conv(params, "tail", t, k), x)

    raise ValueError(spec.arch)
