"""Static obfuscations applied to a graph before it ships.

Three passes, each independently usable:

  rename           replace every public node name with a random opaque string
  inject_extra_ops splice identity-weight pointwise ops onto randomly chosen
                   dataflow edges, so the shipped graph contains nodes that do
                   not exist in the original
  encapsulate      re-key every weight tensor under its owning node's public
                   name so the weight blob reveals nothing beyond the names

`apply_static` chains them and captures a GroundTruthMap: the private record
of what each shipped node really is, which the evaluation side uses to score
an attacker's reconstruction. The map is never packaged with the model.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import container
from .ir import (
    Graph,
    OperatorKind,
    OperatorNode,
    WeightStore,
    data_edges,
    fresh_node_id,
    graph_input_index,
    infer_shapes,
    is_graph_input,
    store_tensor,
)

log = logging.getLogger(__name__)

ORACLE_VERSION = "dynamo-oracle/1"
ORACLE_FILE = "oracle.json"
ORACLE_WEIGHTS_FILE = "oracle.bin"

_LETTERS = string.ascii_lowercase
_KIND_STRINGS = tuple(k.value for k in OperatorKind)


def name_is_opaque(name: str) -> bool:
    """True if the name neither contains nor is contained in an operator kind."""
    return not any(k in name or name in k for k in _KIND_STRINGS)


def _draw_names(rng: np.random.Generator, count: int, taken: set[str], length: int) -> list[str]:
    names: list[str] = []
    seen = set(taken)
    attempts = 0
    while len(names) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise ValueError("name generation stalled; increase name_length")
        name = "".join(_LETTERS[i] for i in rng.integers(0, 26, size=length))
        if name in seen or not name_is_opaque(name):
            continue
        seen.add(name)
        names.append(name)
    return names


def rename(graph: Graph, seed, name_length: int = 6) -> tuple[Graph, dict[str, str]]:
    """Give every node a fresh random name. Returns (graph, old name -> new name)."""
    rng = np.random.default_rng(seed)
    names = _draw_names(rng, len(graph.nodes), set(), name_length)
    name_map = {node.public_name: name for node, name in zip(graph.nodes, names)}
    nodes = tuple(replace(n, public_name=name_map[n.public_name]) for n in graph.nodes)
    return replace(graph, nodes=nodes), name_map


def _ref_shape(graph: Graph, shapes: dict[int, tuple[int, ...]], ref: int) -> tuple[int, ...]:
    if is_graph_input(ref):
        return graph.input_specs[graph_input_index(ref)]
    return shapes[ref]


def inject_extra_ops(
    graph: Graph,
    store: WeightStore,
    count: int,
    seed,
    name_length: int = 6,
) -> tuple[Graph, WeightStore]:
    """Splice `count` identity pointwise ops onto randomly chosen edges.

    Every injected node carries an exact identity matrix and zero bias, so
    the graph's outputs are bit-identical to the original's. Edges are
    re-enumerated after each insertion; a later pick may land on an edge
    created by an earlier one.
    """
    rng = np.random.default_rng(seed)
    store = dict(store)
    for _ in range(count):
        edges = data_edges(graph)
        if not edges:
            log.warning("no dataflow edges available; stopping extra-op injection")
            break
        edge = edges[int(rng.integers(len(edges)))]
        shapes = infer_shapes(graph, store)
        dim = _ref_shape(graph, shapes, edge.producer_ref)[-1]
        name = _draw_names(rng, 1, {n.public_name for n in graph.nodes}, name_length)[0]
        node = OperatorNode(
            id=fresh_node_id(graph),
            public_name=name,
            kind=OperatorKind.OBF_LINEAR,
            input_ids=(edge.producer_ref,),
            weight_ref=f"{name}/w",
            bias_ref=f"{name}/b",
            is_obfuscating=True,
        )
        store[node.weight_ref] = store_tensor(np.eye(dim, dtype=np.float32))
        store[node.bias_ref] = store_tensor(np.zeros(dim, dtype=np.float32))
        if edge.consumer_id is None:
            outputs = list(graph.output_ids)
            outputs[edge.slot] = node.id
            graph = replace(graph, nodes=graph.nodes + (node,), output_ids=tuple(outputs))
        else:
            consumer = graph.node(edge.consumer_id)
            inputs = list(consumer.input_ids)
            inputs[edge.slot] = node.id
            # Keep node order topological: the new node goes right before
            # its consumer, and the producer is already earlier.
            at = graph.nodes.index(consumer)
            nodes = graph.nodes[:at] + (node,) + graph.nodes[at:]
            graph = replace(graph, nodes=nodes)
            graph = graph.replace_node(replace(consumer, input_ids=tuple(inputs)))
    return graph, store


def encapsulate(graph: Graph, store: WeightStore) -> tuple[Graph, WeightStore]:
    """Re-key weight tensors under their owning node's public name."""
    new_store: WeightStore = {}
    nodes = []
    for node in graph.nodes:
        w_ref, b_ref = node.weight_ref, node.bias_ref
        if w_ref is not None:
            new_w = f"{node.public_name}/w"
            new_store[new_w] = store[w_ref]
            w_ref = new_w
        if b_ref is not None:
            new_b = f"{node.public_name}/b"
            new_store[new_b] = store[b_ref]
            b_ref = new_b
        nodes.append(replace(node, weight_ref=w_ref, bias_ref=b_ref))
    return replace(graph, nodes=tuple(nodes)), new_store


@dataclass(frozen=True)
class NodeTruth:
    kind: OperatorKind
    is_obfuscating: bool
    weight_ref: str | None
    bias_ref: str | None


@dataclass
class GroundTruthMap:
    """Private per-node record used to score attack reconstructions."""

    nodes: dict[str, NodeTruth]  # public name -> truth
    tensors: WeightStore

    def save(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        index = container.write_weight_blob(path, ORACLE_WEIGHTS_FILE, self.tensors)
        payload = {
            "version": ORACLE_VERSION,
            "nodes": {
                name: {
                    "kind": t.kind.value,
                    "is_obfuscating": t.is_obfuscating,
                    "weight_ref": t.weight_ref,
                    "bias_ref": t.bias_ref,
                }
                for name, t in self.nodes.items()
            },
            "tensors": index,
        }
        container.write_json(path / ORACLE_FILE, payload)
        return path

    @classmethod
    def load(cls, path) -> "GroundTruthMap":
        path = Path(path)
        payload = container.read_json(path / ORACLE_FILE)
        if payload.get("version") != ORACLE_VERSION:
            raise container.VersionMismatchError(
                f"expected {ORACLE_VERSION!r}, found {payload.get('version')!r}"
            )
        nodes = {
            name: NodeTruth(
                kind=OperatorKind(rec["kind"]),
                is_obfuscating=rec["is_obfuscating"],
                weight_ref=rec["weight_ref"],
                bias_ref=rec["bias_ref"],
            )
            for name, rec in payload["nodes"].items()
        }
        tensors = container.read_weight_blob(path, ORACLE_WEIGHTS_FILE, payload["tensors"])
        return cls(nodes=nodes, tensors=tensors)


def ground_truth_from(graph: Graph, store: WeightStore) -> GroundTruthMap:
    nodes = {}
    tensors: WeightStore = {}
    for node in graph.nodes:
        nodes[node.public_name] = NodeTruth(
            node.kind, node.is_obfuscating, node.weight_ref, node.bias_ref
        )
        for ref in (node.weight_ref, node.bias_ref):
            if ref is not None:
                tensors[ref] = store[ref].copy()
    return GroundTruthMap(nodes=nodes, tensors=tensors)


@dataclass(frozen=True)
class StaticObfConfig:
    seed: int
    extra_op_count: int = 30
    name_length: int = 6
    rename: bool = True
    encapsulate: bool = True


def apply_static(
    graph: Graph, store: WeightStore, config: StaticObfConfig
) -> tuple[Graph, WeightStore, GroundTruthMap]:
    """Run rename -> inject -> encapsulate and snapshot the ground truth."""
    rename_seed, inject_seed = np.random.SeedSequence(config.seed).spawn(2)
    if config.rename:
        graph, _ = rename(graph, rename_seed, config.name_length)
    if config.extra_op_count > 0:
        graph, store = inject_extra_ops(
            graph, store, config.extra_op_count, inject_seed, config.name_length
        )
    if config.encapsulate:
        graph, store = encapsulate(graph, store)
    return graph, store, ground_truth_from(graph, store)
