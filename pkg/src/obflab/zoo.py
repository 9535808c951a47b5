"""Seeded desk-scale model zoo.

Three fixed architectures exercise every operator kind the attack has to
face: a plain FC stack, a conv pipeline with bounded activations and both
pool flavors, and a branching conv net with an Add join. Sizes are kept
small (the MLP near 1k parameters, the conv nets a few k) so brute-force
oracles and the 2n-probe attack stay instant.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .ir import (
    ConvParams,
    Graph,
    OperatorKind,
    OperatorNode,
    PoolParams,
    ReshapeParams,
    WeightStore,
    bounded_activation,
    input_ref,
    relu_activation,
    store_tensor,
    validate,
)

ZOO_MODEL_IDS = ("mlp-lenet", "cnn-relu6", "cnn-branch")


@dataclass(frozen=True)
class ZooSpec:
    """One zoo model: its id, weight seed, and layer sizing.

    `widths` means FC layer widths for the MLP and channel counts for the
    conv nets; each builder documents its own reading.
    """

    model_id: str
    seed: int
    widths: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.model_id not in ZOO_MODEL_IDS:
            raise ValueError(f"unknown zoo model {self.model_id!r}")

    @classmethod
    def for_model(cls, model_id: str, seed: int) -> "ZooSpec":
        defaults = {
            "mlp-lenet": (12, 24, 16, 12, 10),
            "cnn-relu6": (3, 8, 12, 10),
            "cnn-branch": (3, 8, 10),
        }
        if model_id not in defaults:
            raise ValueError(f"unknown zoo model {model_id!r}")
        return cls(model_id=model_id, seed=seed, widths=defaults[model_id])


def _uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return store_tensor(rng.uniform(-0.5, 0.5, size=shape))


def _fc(store, rng, node_id, name, src, d_in, d_out, fused=None) -> OperatorNode:
    store[f"{name}/w"] = _uniform(rng, (d_in, d_out))
    store[f"{name}/b"] = _uniform(rng, (d_out,))
    return OperatorNode(node_id, name, OperatorKind.FULLY_CONNECTED, (src,),
                        weight_ref=f"{name}/w", bias_ref=f"{name}/b",
                        fused_activation=fused)


def _conv(store, rng, node_id, name, src, c_in, c_out, k, pad, fused=None) -> OperatorNode:
    store[f"{name}/w"] = _uniform(rng, (c_out, k, k, c_in))
    store[f"{name}/b"] = _uniform(rng, (c_out,))
    return OperatorNode(node_id, name, OperatorKind.CONV2D, (src,),
                        params=ConvParams(padding=(pad, pad)),
                        weight_ref=f"{name}/w", bias_ref=f"{name}/b",
                        fused_activation=fused)


def _build_mlp(spec: ZooSpec) -> tuple[Graph, WeightStore]:
    """widths = FC sizes in order, e.g. (12, 24, 16, 12, 10): four FC layers
    with a standalone ReLU after each hidden one, softmax on the logits."""
    if len(spec.widths) != 5:
        raise ValueError("mlp-lenet takes exactly five widths")
    rng = np.random.default_rng(spec.seed)
    store: WeightStore = {}
    nodes: list[OperatorNode] = []
    nid = 0
    src = input_ref(0)
    for i in range(4):
        nodes.append(_fc(store, rng, nid, f"dense{i}", src, spec.widths[i], spec.widths[i + 1]))
        src = nid
        nid += 1
        if i < 3:
            nodes.append(OperatorNode(nid, f"act{i}", OperatorKind.RELU, (src,)))
            src = nid
            nid += 1
    nodes.append(OperatorNode(nid, "probs", OperatorKind.SOFTMAX, (src,)))
    graph = Graph(tuple(nodes), ((spec.widths[0],),), (nid,))
    return graph, store


def _build_cnn_relu6(spec: ZooSpec) -> tuple[Graph, WeightStore]:
    """widths = (input channels, stem channels, head channels, classes) on an
    8x8 image; three relu6-fused stages, one of them depthwise, both pools."""
    if len(spec.widths) != 4:
        raise ValueError("cnn-relu6 takes exactly four channel counts")
    c_in, c_mid, c_head, classes = spec.widths
    rng = np.random.default_rng(spec.seed)
    store: WeightStore = {}
    relu6 = bounded_activation(6.0)

    store["stem_dw/w"] = _uniform(rng, (1, 3, 3, c_mid))
    store["stem_dw/b"] = _uniform(rng, (c_mid,))
    flat = 2 * 2 * c_head
    nodes = (
        _conv(store, rng, 0, "stem", input_ref(0), c_in, c_mid, k=3, pad=1, fused=relu6),
        OperatorNode(1, "stem_dw", OperatorKind.DEPTHWISE_CONV2D, (0,),
                     params=ConvParams(padding=(1, 1)),
                     weight_ref="stem_dw/w", bias_ref="stem_dw/b",
                     fused_activation=relu6),
        OperatorNode(2, "shrink", OperatorKind.MAX_POOL, (1,),
                     params=PoolParams(window=(2, 2), stride=(2, 2))),
        _conv(store, rng, 3, "head", 2, c_mid, c_head, k=3, pad=1, fused=relu6),
        OperatorNode(4, "squash", OperatorKind.AVG_POOL, (3,),
                     params=PoolParams(window=(2, 2), stride=(2, 2))),
        OperatorNode(5, "flat", OperatorKind.RESHAPE, (4,),
                     params=ReshapeParams((flat,))),
        _fc(store, rng, 6, "logits", 5, flat, classes),
        OperatorNode(7, "probs", OperatorKind.SOFTMAX, (6,)),
    )
    graph = Graph(nodes, ((1, 8, 8, c_in),), (7,))
    return graph, store


def _build_cnn_branch(spec: ZooSpec) -> tuple[Graph, WeightStore]:
    """widths = (input channels, trunk channels, classes) on an 8x8 image;
    the trunk fans out into a 3x3 and a 1x1 branch joined by Add."""
    if len(spec.widths) != 3:
        raise ValueError("cnn-branch takes exactly three channel counts")
    c_in, c_mid, classes = spec.widths
    rng = np.random.default_rng(spec.seed)
    store: WeightStore = {}
    flat = 4 * 4 * c_mid
    nodes = (
        _conv(store, rng, 0, "trunk", input_ref(0), c_in, c_mid, k=3, pad=1,
              fused=relu_activation()),
        _conv(store, rng, 1, "wide", 0, c_mid, c_mid, k=3, pad=1),
        _conv(store, rng, 2, "narrow", 0, c_mid, c_mid, k=1, pad=0),
        OperatorNode(3, "join", OperatorKind.ADD, (1, 2)),
        OperatorNode(4, "gate", OperatorKind.RELU, (3,)),
        OperatorNode(5, "shrink", OperatorKind.MAX_POOL, (4,),
                     params=PoolParams(window=(2, 2), stride=(2, 2))),
        OperatorNode(6, "flat", OperatorKind.RESHAPE, (5,),
                     params=ReshapeParams((flat,))),
        _fc(store, rng, 7, "logits", 6, flat, classes),
        OperatorNode(8, "probs", OperatorKind.SOFTMAX, (7,)),
    )
    graph = Graph(nodes, ((1, 8, 8, c_in),), (8,))
    return graph, store


_BUILDERS = {
    "mlp-lenet": _build_mlp,
    "cnn-relu6": _build_cnn_relu6,
    "cnn-branch": _build_cnn_branch,
}


def build_model(spec: ZooSpec) -> tuple[Graph, WeightStore]:
    graph, store = _BUILDERS[spec.model_id](spec)
    report = validate(graph, store)
    if not report.ok:
        raise AssertionError(f"zoo model {spec.model_id} failed validation: {report.issues}")
    return graph, store


def build_zoo(out_dir, seed: int) -> dict[str, Path]:
    """Write every zoo model in container format under out_dir/<model id>/."""
    out_dir = Path(out_dir)
    paths: dict[str, Path] = {}
    for model_id in ZOO_MODEL_IDS:
        graph, store = build_model(ZooSpec.for_model(model_id, seed))
        paths[model_id] = container.serialize(graph, store, out_dir / model_id)
    return paths


def random_zoo_model(seed: int) -> tuple[Graph, WeightStore]:
    """A randomly sized zoo model, for round-trip style bulk tests."""
    rng = np.random.default_rng(seed)
    model_id = ZOO_MODEL_IDS[int(rng.integers(len(ZOO_MODEL_IDS)))]
    weight_seed = int(rng.integers(2**31))
    if model_id == "mlp-lenet":
        widths = tuple(int(rng.integers(2, 25)) for _ in range(5))
    elif model_id == "cnn-relu6":
        widths = (int(rng.integers(1, 5)), int(rng.integers(1, 9)),
                  int(rng.integers(1, 9)), int(rng.integers(2, 11)))
    else:
        widths = (int(rng.integers(1, 5)), int(rng.integers(1, 9)),
                  int(rng.integers(2, 11)))
    return build_model(ZooSpec(model_id, weight_seed, widths))
