"""Graph IR for small feed-forward inference models.

A model is a ``Graph`` (topologically ordered operator nodes plus input
specs and output ids) and a ``WeightStore`` (a plain dict mapping string
keys to read-only float32 arrays). Activations are float32 throughout,
rank-1 vectors on the fully-connected path and rank-4 NHWC tensors with
batch fixed to 1 on the convolutional path. Conv kernels are OHWI;
depthwise kernels are (multiplier, kh, kw, in_channels) with output
channel index ``c_in * multiplier + m``.

Node inputs are integer refs: a non-negative ref is the id of a producer
node, a negative ref addresses a graph input (``input_ref(k) == -k - 1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Union

import numpy as np

__all__ = [
    "OperatorKind",
    "LINEAR_KINDS",
    "WEIGHTLESS_KINDS",
    "Activation",
    "relu_activation",
    "bounded_activation",
    "ConvParams",
    "PoolParams",
    "ReshapeParams",
    "BoundParams",
    "OperatorNode",
    "Graph",
    "WeightStore",
    "ShapeError",
    "Issue",
    "ValidationReport",
    "Edge",
    "DEFAULT_BOUND",
    "input_ref",
    "is_graph_input",
    "graph_input_index",
    "conv_output_shape",
    "pool_output_shape",
    "infer_shapes",
    "validate",
    "consumer_map",
    "data_edges",
    "fresh_node_id",
    "freeze_store",
    "store_tensor",
]

DEFAULT_BOUND = 6.0


class OperatorKind(str, Enum):
    CONV2D = "conv2d"
    DEPTHWISE_CONV2D = "depthwise_conv2d"
    FULLY_CONNECTED = "fully_connected"
    OBF_LINEAR = "obf_linear"
    RELU = "relu"
    RELU_BOUNDED = "relu_bounded"
    SOFTMAX = "softmax"
    ADD = "add"
    MAX_POOL = "max_pool"
    AVG_POOL = "avg_pool"
    RESHAPE = "reshape"

    def __str__(self) -> str:  # json-friendly
        return self.value


# Kinds that carry a weight tensor; all of them are linear maps of their
# single data input, which is what makes scale coupling possible.
LINEAR_KINDS = frozenset(
    {
        OperatorKind.CONV2D,
        OperatorKind.DEPTHWISE_CONV2D,
        OperatorKind.FULLY_CONNECTED,
        OperatorKind.OBF_LINEAR,
    }
)

WEIGHTLESS_KINDS = frozenset(k for k in OperatorKind if k not in LINEAR_KINDS)

ALL_KIND_NAMES = tuple(k.value for k in OperatorKind)


@dataclass(frozen=True)
class Activation:
    """Fused activation applied inside a node after its linear part."""

    kind: str  # "relu" | "relu_bounded"
    beta: float = DEFAULT_BOUND

    def __post_init__(self) -> None:
        if self.kind not in ("relu", "relu_bounded"):
            raise ValueError(f"unknown fused activation {self.kind!r}")
        if self.kind == "relu_bounded" and not self.beta > 0:
            raise ValueError("bounded activation needs beta > 0")


def relu_activation() -> Activation:
    return Activation("relu", 0.0)


def bounded_activation(beta: float = DEFAULT_BOUND) -> Activation:
    return Activation("relu_bounded", float(beta))


@dataclass(frozen=True)
class ConvParams:
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)


@dataclass(frozen=True)
class PoolParams:
    window: tuple[int, int]
    stride: tuple[int, int]


@dataclass(frozen=True)
class ReshapeParams:
    shape: tuple[int, ...]


@dataclass(frozen=True)
class BoundParams:
    beta: float = DEFAULT_BOUND


Params = Union[ConvParams, PoolParams, ReshapeParams, BoundParams, None]

# Required params type per kind (None means the node takes no params).
_PARAMS_FOR_KIND: dict[OperatorKind, type | None] = {
    OperatorKind.CONV2D: ConvParams,
    OperatorKind.DEPTHWISE_CONV2D: ConvParams,
    OperatorKind.FULLY_CONNECTED: None,
    OperatorKind.OBF_LINEAR: None,
    OperatorKind.RELU: None,
    OperatorKind.RELU_BOUNDED: BoundParams,
    OperatorKind.SOFTMAX: None,
    OperatorKind.ADD: None,
    OperatorKind.MAX_POOL: PoolParams,
    OperatorKind.AVG_POOL: PoolParams,
    OperatorKind.RESHAPE: ReshapeParams,
}

_ARITY = {OperatorKind.ADD: 2}  # every other kind takes exactly one input


@dataclass(frozen=True)
class OperatorNode:
    id: int
    public_name: str
    kind: OperatorKind
    input_ids: tuple[int, ...]
    params: Params = None
    weight_ref: str | None = None
    bias_ref: str | None = None
    fused_activation: Activation | None = None
    is_obfuscating: bool = False


@dataclass(frozen=True)
class Graph:
    nodes: tuple[OperatorNode, ...]
    input_specs: tuple[tuple[int, ...], ...]
    output_ids: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {n.id: n for n in self.nodes})

    def node(self, node_id: int) -> OperatorNode:
        return self._by_id[node_id]  # type: ignore[attr-defined]

    def has_node(self, node_id: int) -> bool:
        return node_id in self._by_id  # type: ignore[attr-defined]

    def replace_node(self, node: OperatorNode) -> "Graph":
        nodes = tuple(node if n.id == node.id else n for n in self.nodes)
        return replace(self, nodes=nodes)


WeightStore = dict[str, np.ndarray]


def store_tensor(values: Iterable[float] | np.ndarray, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Build a read-only float32 array suitable for a WeightStore."""
    arr = np.asarray(values, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def freeze_store(store: WeightStore) -> WeightStore:
    return {k: store_tensor(v) for k, v in store.items()}


def input_ref(index: int) -> int:
    """Ref addressing graph input ``index`` from a node's input_ids."""
    if index < 0:
        raise ValueError("graph input index must be non-negative")
    return -index - 1


def is_graph_input(ref: int) -> bool:
    return ref < 0


def graph_input_index(ref: int) -> int:
    if ref >= 0:
        raise ValueError(f"{ref} is a node ref, not a graph input ref")
    return -ref - 1


class ShapeError(ValueError):
    """Raised when an operator cannot produce a geometrically valid output."""


def conv_output_shape(
    input_hw: tuple[int, int],
    kernel_hw: tuple[int, int],
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
    dilation: tuple[int, int] = (1, 1),
) -> tuple[int, int]:
    """Spatial output extent of a 2-D convolution.

    Per axis: floor((in + 2*pad - dilation*(kernel - 1) - 1) / stride) + 1.
    Raises ShapeError when either extent would drop below 1.
    """
    out = []
    for axis in (0, 1):
        i, k = input_hw[axis], kernel_hw[axis]
        s, p, d = stride[axis], padding[axis], dilation[axis]
        if i < 1 or k < 1 or s < 1 or d < 1 or p < 0:
            raise ShapeError(
                f"bad conv geometry on axis {axis}: in={i} kernel={k} stride={s} pad={p} dilation={d}"
            )
        ext = (i + 2 * p - d * (k - 1) - 1) // s + 1
        if ext < 1:
            raise ShapeError(
                f"conv output extent {ext} < 1 on axis {axis} "
                f"(in={i} kernel={k} stride={s} pad={p} dilation={d})"
            )
        out.append(ext)
    return out[0], out[1]


def pool_output_shape(input_hw: tuple[int, int], params: PoolParams) -> tuple[int, int]:
    # Pooling uses the same floor arithmetic with no padding or dilation.
    return conv_output_shape(input_hw, params.window, params.stride, (0, 0), (1, 1))


def _node_output_shape(
    node: OperatorNode,
    in_shapes: list[tuple[int, ...]],
    store: WeightStore,
) -> tuple[int, ...]:
    kind = node.kind
    arity = _ARITY.get(kind, 1)
    if len(in_shapes) != arity:
        raise ShapeError(f"{kind.value} takes {arity} input(s), got {len(in_shapes)}")
    x = in_shapes[0]

    if kind in (OperatorKind.CONV2D, OperatorKind.DEPTHWISE_CONV2D):
        if len(x) != 4 or x[0] != 1:
            raise ShapeError(f"{kind.value} needs a rank-4 input with batch 1, got {x}")
        if node.weight_ref is None or node.weight_ref not in store:
            raise ShapeError(f"{kind.value} weights missing")
        w = store[node.weight_ref].shape
        if len(w) != 4:
            raise ShapeError(f"{kind.value} kernel must be rank 4, got {w}")
        p = node.params if isinstance(node.params, ConvParams) else ConvParams()
        hw = conv_output_shape((x[1], x[2]), (w[1], w[2]), p.stride, p.padding, p.dilation)
        if kind is OperatorKind.CONV2D:
            if w[3] != x[3]:
                raise ShapeError(f"conv kernel expects {w[3]} input channels, input has {x[3]}")
            return (1, hw[0], hw[1], w[0])
        if w[3] != x[3]:
            raise ShapeError(f"depthwise kernel expects {w[3]} input channels, input has {x[3]}")
        return (1, hw[0], hw[1], x[3] * w[0])

    if kind is OperatorKind.FULLY_CONNECTED:
        if len(x) != 1:
            raise ShapeError(f"fully_connected needs a rank-1 input, got {x}")
        if node.weight_ref is None or node.weight_ref not in store:
            raise ShapeError("fully_connected weights missing")
        w = store[node.weight_ref].shape
        if len(w) != 2 or w[0] != x[0]:
            raise ShapeError(f"fully_connected weights {w} do not match input {x}")
        return (w[1],)

    if kind is OperatorKind.OBF_LINEAR:
        if node.weight_ref is None or node.weight_ref not in store:
            raise ShapeError("obf_linear weights missing")
        w = store[node.weight_ref].shape
        if len(w) != 2 or w[0] != w[1]:
            raise ShapeError(f"obf_linear weights must be square, got {w}")
        if not x or x[-1] != w[0]:
            raise ShapeError(f"obf_linear weights {w} do not match input {x}")
        return x

    if kind in (OperatorKind.RELU, OperatorKind.RELU_BOUNDED, OperatorKind.SOFTMAX):
        return x

    if kind is OperatorKind.ADD:
        if in_shapes[0] != in_shapes[1]:
            raise ShapeError(f"add needs equal shapes, got {in_shapes[0]} and {in_shapes[1]}")
        return x

    if kind in (OperatorKind.MAX_POOL, OperatorKind.AVG_POOL):
        if len(x) != 4 or x[0] != 1:
            raise ShapeError(f"{kind.value} needs a rank-4 input with batch 1, got {x}")
        if not isinstance(node.params, PoolParams):
            raise ShapeError(f"{kind.value} needs pool params")
        hw = pool_output_shape((x[1], x[2]), node.params)
        return (1, hw[0], hw[1], x[3])

    if kind is OperatorKind.RESHAPE:
        if not isinstance(node.params, ReshapeParams):
            raise ShapeError("reshape needs a target shape")
        target = tuple(node.params.shape)
        if int(np.prod(x)) != int(np.prod(target)):
            raise ShapeError(f"reshape {x} -> {target} changes element count")
        return target

    raise ShapeError(f"unknown kind {kind!r}")


def infer_shapes(graph: Graph, store: WeightStore) -> dict[int, tuple[int, ...]]:
    """Output shape per node id. Raises ShapeError on the first bad node."""
    shapes: dict[int, tuple[int, ...]] = {}

    def ref_shape(ref: int) -> tuple[int, ...]:
        if is_graph_input(ref):
            return tuple(graph.input_specs[graph_input_index(ref)])
        return shapes[ref]

    for node in graph.nodes:
        in_shapes = [ref_shape(r) for r in node.input_ids]
        shapes[node.id] = _node_output_shape(node, in_shapes, store)
    return shapes


@dataclass(frozen=True)
class Issue:
    code: str
    node_id: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[Issue, ...]

    def codes(self) -> set[str]:
        return {i.code for i in self.issues}


def validate(graph: Graph, store: WeightStore) -> ValidationReport:
    """Structural and shape checks. Collects issues, never raises."""
    issues: list[Issue] = []

    def flag(code: str, node_id: int | None, message: str) -> None:
        issues.append(Issue(code, node_id, message))

    seen_ids: set[int] = set()
    seen_names: set[str] = set()
    for node in graph.nodes:
        if node.id < 0:
            flag("bad-id", node.id, "node ids must be non-negative")
        if node.id in seen_ids:
            flag("dup-id", node.id, f"node id {node.id} appears twice")
        seen_ids.add(node.id)
        if node.public_name in seen_names:
            flag("dup-name", node.id, f"public name {node.public_name!r} appears twice")
        seen_names.add(node.public_name)

    if not graph.input_specs:
        flag("no-inputs", None, "graph declares no inputs")
    for spec in graph.input_specs:
        if not spec or any(d < 1 for d in spec):
            flag("bad-input-spec", None, f"input spec {spec} has a dim < 1")

    # Topological order doubles as the acyclicity check: every node ref must
    # point at an earlier node, so no cycle can be expressed.
    position = {n.id: i for i, n in enumerate(graph.nodes)}
    for i, node in enumerate(graph.nodes):
        arity = _ARITY.get(node.kind, 1)
        if len(node.input_ids) != arity:
            flag("bad-arity", node.id, f"{node.kind.value} takes {arity} input(s), has {len(node.input_ids)}")
        for ref in node.input_ids:
            if is_graph_input(ref):
                if graph_input_index(ref) >= len(graph.input_specs):
                    flag("dangling-input", node.id, f"graph input ref {ref} out of range")
            elif ref not in position:
                flag("dangling-input", node.id, f"input ref {ref} names no node")
            elif position[ref] >= i:
                flag("order", node.id, f"input ref {ref} is not an earlier node (cycle or bad order)")

    for out in graph.output_ids:
        if out not in seen_ids:
            flag("missing-output", None, f"output id {out} names no node")
    if not graph.output_ids:
        flag("no-outputs", None, "graph declares no outputs")

    used_keys: set[str] = set()
    for node in graph.nodes:
        weighted = node.kind in LINEAR_KINDS
        if weighted and node.weight_ref is None:
            flag("dangling-weight", node.id, f"{node.kind.value} has no weight_ref")
        if not weighted and (node.weight_ref or node.bias_ref):
            flag("dangling-weight", node.id, f"{node.kind.value} must not carry weights")
        if node.fused_activation is not None and not weighted:
            flag("bad-fused", node.id, f"{node.kind.value} cannot carry a fused activation")
        want = _PARAMS_FOR_KIND[node.kind]
        if want is None and node.params is not None:
            flag("bad-params", node.id, f"{node.kind.value} takes no params")
        if want is not None and not isinstance(node.params, want):
            flag("bad-params", node.id, f"{node.kind.value} needs {want.__name__}")
        for ref in (node.weight_ref, node.bias_ref):
            if ref is not None:
                used_keys.add(ref)
                if ref not in store:
                    flag("weight-missing", node.id, f"store has no key {ref!r}")
                elif store[ref].dtype != np.float32:
                    flag("weight-dtype", node.id, f"{ref!r} is {store[ref].dtype}, expected float32")

    for key in sorted(set(store) - used_keys):
        flag("orphan-weight", None, f"store key {key!r} is referenced by no node")

    structural = {i.code for i in issues}
    if not structural & {"dup-id", "dangling-input", "order", "bad-arity", "weight-missing", "bad-id"}:
        try:
            infer_shapes(graph, store)
        except ShapeError as exc:
            flag("shape", None, str(exc))

    return ValidationReport(ok=not issues, issues=tuple(issues))


def consumer_map(graph: Graph) -> dict[int, list[int]]:
    """node id -> ids of nodes consuming its output, in topological order."""
    out: dict[int, list[int]] = {n.id: [] for n in graph.nodes}
    for node in graph.nodes:
        for ref in node.input_ids:
            if not is_graph_input(ref):
                out[ref].append(node.id)
    return out


@dataclass(frozen=True)
class Edge:
    """One dataflow edge. consumer_id None means a graph output slot."""

    producer_ref: int
    consumer_id: int | None
    slot: int


def data_edges(graph: Graph, include_outputs: bool = True) -> list[Edge]:
    edges = [
        Edge(ref, node.id, slot)
        for node in graph.nodes
        for slot, ref in enumerate(node.input_ids)
    ]
    if include_outputs:
        edges.extend(Edge(out, None, i) for i, out in enumerate(graph.output_ids))
    return edges


def fresh_node_id(graph: Graph) -> int:
    return max((n.id for n in graph.nodes), default=-1) + 1
