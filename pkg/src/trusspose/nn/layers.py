"""Layer objects and the static computation graph built from them.

A Graph is a DAG of named nodes. Wiring is validated once at build time
(cycle rejection plus shape inference over batchless shapes); afterwards
forward passes execute in a fixed topological order on the autodiff tape.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatch, Tensor


class CyclicGraph(ValueError):
    """The node wiring contains a cycle."""


class UnknownLayer(KeyError):
    """Requested node name does not exist in the graph."""


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base layer: parameter container plus shape inference and forward."""

    def parameters(self) -> list[Tensor]:
        return []

    def out_shape(self, in_shapes: list[tuple]) -> tuple:
        raise NotImplementedError

    def forward(self, inputs: list[Tensor]) -> Tensor:
        raise NotImplementedError

    def _expect_arity(self, in_shapes, arity):
        if len(in_shapes) != arity:
            raise ShapeMismatch(
                f"{type(self).__name__} takes {arity} input(s), wired to {len(in_shapes)}"
            )


class Conv2d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1,
                 rng=None, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        rng = rng or np.random.default_rng()
        fan_in = in_channels * kernel_size * kernel_size
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        self.weight = Tensor(he_uniform(rng, shape, fan_in, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shapes):
        self._expect_arity(in_shapes, 1)
        c, h, w = in_shapes[0]
        if c != self.in_channels:
            raise ShapeMismatch(
                f"Conv2d expects {self.in_channels} channels, producer emits {c}"
            )
        k, s, p = self.kernel_size, self.stride, self.padding
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeMismatch(f"Conv2d kernel {k} larger than padded input {h}x{w}")
        return (self.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def forward(self, inputs):
        return T.conv2d(inputs[0], self.weight, self.bias, self.stride, self.padding)


class MaxPool2(Layer):
    def out_shape(self, in_shapes):
        self._expect_arity(in_shapes, 1)
        c, h, w = in_shapes[0]
        return (c, (h + 1) // 2, (w + 1) // 2)

    def forward(self, inputs):
        return T.maxpool2(inputs[0])


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng()
        self.weight = Tensor(
            he_uniform(rng, (in_features, out_features), in_features, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shapes):
        self._expect_arity(in_shapes, 1)
        if len(in_shapes[0]) != 1:
            raise ShapeMismatch(f"Dense expects a flat input, got shape {in_shapes[0]}")
        if in_shapes[0][0] != self.in_features:
            raise ShapeMismatch(
                f"Dense expects {self.in_features} features, producer emits {in_shapes[0][0]}"
            )
        return (self.out_features,)

    def forward(self, inputs):
        return T.dense(inputs[0], self.weight, self.bias)


class ReLU(Layer):
    def out_shape(self, in_shapes):
        self._expect_arity(in_shapes, 1)
        return in_shapes[0]

    def forward(self, inputs):
        return T.relu(inputs[0])


class Flatten(Layer):
    def out_shape(self, in_shapes):
        self._expect_arity(in_shapes, 1)
        return (int(np.prod(in_shapes[0])),)

    def forward(self, inputs):
        return T.flatten(inputs[0])


class Concat(Layer):
    """Concatenate two producers along the feature axis (axis 1 with batch)."""

    def out_shape(self, in_shapes):
        self._expect_arity(in_shapes, 2)
        a, b = in_shapes
        if len(a) != len(b):
            raise ShapeMismatch(f"Concat: rank mismatch {a} vs {b}")
        if tuple(a[1:]) != tuple(b[1:]):
            raise ShapeMismatch(f"Concat: trailing dims differ, {a} vs {b}")
        return (a[0] + b[0],) + tuple(a[1:])

    def forward(self, inputs):
        return T.concat(inputs[0], inputs[1], axis=1)


class _Node:
    __slots__ = ("name", "layer", "inputs", "shape")

    def __init__(self, name, layer, inputs):
        self.name = name
        self.layer = layer
        self.inputs = inputs
        self.shape = None


class Graph:
    """Named DAG of layers with build-time validation.

    Shapes are batchless, e.g. an image input is (C, H, W); forward feeds are
    batched arrays (N, C, H, W).
    """

    def __init__(self):
        self._nodes: dict[str, _Node] = {}
        self._input_shapes: dict[str, tuple] = {}
        self._outputs: list[str] = []
        self._order: list[str] | None = None

    def add_input(self, name: str, shape: tuple) -> str:
        if name in self._nodes or name in self._input_shapes:
            raise ValueError(f"duplicate node name {name!r}")
        self._input_shapes[name] = tuple(shape)
        return name

    def add(self, name: str, layer: Layer, inputs) -> str:
        if name in self._nodes or name in self._input_shapes:
            raise ValueError(f"duplicate node name {name!r}")
        if isinstance(inputs, str):
            inputs = [inputs]
        self._nodes[name] = _Node(name, layer, list(inputs))
        self._order = None
        return name

    def set_outputs(self, names) -> None:
        self._outputs = [names] if isinstance(names, str) else list(names)

    @property
    def outputs(self):
        return list(self._outputs)

    def build(self) -> "Graph":
        """Validate wiring: unknown references, cycles, and shape agreement."""
        for node in self._nodes.values():
            for ref in node.inputs:
                if ref not in self._nodes and ref not in self._input_shapes:
                    raise UnknownLayer(f"node {node.name!r} consumes unknown node {ref!r}")
        for name in self._outputs:
            if name not in self._nodes and name not in self._input_shapes:
                raise UnknownLayer(f"output {name!r} is not a node")

        indegree = {name: 0 for name in self._nodes}
        consumers: dict[str, list[str]] = {}
        for node in self._nodes.values():
            for ref in node.inputs:
                if ref in self._nodes:
                    indegree[node.name] += 1
                    consumers.setdefault(ref, []).append(node.name)
        ready = sorted(name for name, deg in indegree.items() if deg == 0)
        order = []
        while ready:
            name = ready.pop(0)
            order.append(name)
            for consumer in consumers.get(name, []):
                indegree[consumer] -= 1
                if indegree[consumer] == 0:
                    ready.append(consumer)
        if len(order) != len(self._nodes):
            cyclic = sorted(name for name, deg in indegree.items() if deg > 0)
            raise CyclicGraph(f"cyclic wiring through nodes {cyclic}")

        shapes = dict(self._input_shapes)
        for name in order:
            node = self._nodes[name]
            node.shape = node.layer.out_shape([shapes[ref] for ref in node.inputs])
            shapes[name] = node.shape
        self._order = order
        return self

    def _require_built(self):
        if self._order is None:
            raise RuntimeError("graph not built; call build() after wiring")

    def input_names(self):
        return list(self._input_shapes)

    def input_shape(self, name: str) -> tuple:
        return self._input_shapes[name]

    def node_names(self):
        self._require_built()
        return list(self._order)

    def node(self, name: str) -> _Node:
        if name not in self._nodes:
            raise UnknownLayer(f"no node named {name!r}")
        return self._nodes[name]

    def shape_of(self, name: str) -> tuple:
        self._require_built()
        if name in self._input_shapes:
            return self._input_shapes[name]
        return self.node(name).shape

    def conv_node_names(self):
        self._require_built()
        return [n for n in self._order if isinstance(self._nodes[n].layer, Conv2d)]

    def parameters(self) -> list[Tensor]:
        self._require_built()
        params = []
        for name in self._order:
            params.extend(self._nodes[name].layer.parameters())
        return params

    def forward(self, feeds: dict[str, np.ndarray], keep_all: bool = False):
        """Run the graph on batched input arrays.

        Returns {output name: Tensor}; with keep_all=True every node's output
        tensor is included (used by activation heatmaps).
        """
        self._require_built()
        values: dict[str, Tensor] = {}
        for name, shape in self._input_shapes.items():
            if name not in feeds:
                raise KeyError(f"missing feed for input {name!r}")
            arr = np.asarray(feeds[name])
            if tuple(arr.shape[1:]) != shape:
                raise ShapeMismatch(
                    f"feed {name!r} has shape {arr.shape[1:]}, declared {shape}"
                )
            values[name] = arr if isinstance(arr, Tensor) else Tensor(arr)
        for name in self._order:
            node = self._nodes[name]
            values[name] = node.layer.forward([values[ref] for ref in node.inputs])
        if keep_all:
            return values
        return {name: values[name] for name in self._outputs}

    def state_dict(self) -> dict[str, np.ndarray]:
        self._require_built()
        state = {}
        for name in self._order:
            layer = self._nodes[name].layer
            if isinstance(layer, (Conv2d, Dense)):
                state[f"{name}.weight"] = layer.weight.data
                state[f"{name}.bias"] = layer.bias.data
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self._require_built()
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name in self._order:
            layer = self._nodes[name].layer
            if isinstance(layer, (Conv2d, Dense)):
                for attr in ("weight", "bias"):
                    tensor = getattr(layer, attr)
                    incoming = np.asarray(state[f"{name}.{attr}"])
                    if incoming.shape != tensor.data.shape:
                        raise ShapeMismatch(
                            f"{name}.{attr}: checkpoint shape {incoming.shape} != "
                            f"model shape {tensor.data.shape}"
                        )
                    tensor.data = np.ascontiguousarray(incoming, dtype=tensor.data.dtype)
