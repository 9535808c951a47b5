"""Shared builders for small test graphs."""

from __future__ import annotations

import numpy as np

from obflab.ir import (
    Activation,
    BoundParams,
    ConvParams,
    Graph,
    OperatorKind,
    OperatorNode,
    input_ref,
    store_tensor,
    validate,
)


def fc_node(node_id, name, in_ref, w_key, b_key, fused=None):
    return OperatorNode(
        id=node_id,
        public_name=name,
        kind=OperatorKind.FULLY_CONNECTED,
        input_ids=(in_ref,),
        weight_ref=w_key,
        bias_ref=b_key,
        fused_activation=fused,
    )


def make_fc_chain(widths, seed=0, fused=None):
    """Chain of fully-connected nodes, widths[0] -> ... -> widths[-1]."""
    rng = np.random.default_rng(seed)
    nodes = []
    store = {}
    for i in range(len(widths) - 1):
        w = rng.uniform(-0.5, 0.5, size=(widths[i], widths[i + 1]))
        b = rng.uniform(-0.5, 0.5, size=(widths[i + 1],))
        store[f"fc{i}/w"] = store_tensor(w)
        store[f"fc{i}/b"] = store_tensor(b)
        nodes.append(
            fc_node(i, f"fc{i}", input_ref(0) if i == 0 else i - 1, f"fc{i}/w", f"fc{i}/b",
                    fused=fused if i < len(widths) - 2 else None)
        )
    graph = Graph(
        nodes=tuple(nodes),
        input_specs=((widths[0],),),
        output_ids=(len(widths) - 2,),
    )
    return graph, store


def obf_node(node_id, name, src, w_key, b_key):
    return OperatorNode(
        id=node_id,
        public_name=name,
        kind=OperatorKind.OBF_LINEAR,
        input_ids=(src,),
        weight_ref=w_key,
        bias_ref=b_key,
        is_obfuscating=True,
    )


def seed_fc_weights(store, name, d_in, d_out, seed, gain=1.0):
    rng = np.random.default_rng(seed)
    store[f"{name}/w"] = store_tensor(rng.uniform(-0.5, 0.5, size=(d_in, d_out)) * gain)
    store[f"{name}/b"] = store_tensor(rng.uniform(-0.5, 0.5, size=d_out) * gain)


def seed_obf_weights(store, name, dim):
    store[f"{name}/w"] = store_tensor(np.eye(dim, dtype=np.float32))
    store[f"{name}/b"] = store_tensor(np.zeros(dim, dtype=np.float32))


def make_bounded_chain(beta=1.0, gain=4.0):
    """fc0 -> relu_bounded(beta) -> obf1 -> fc1(out); gain pushes values past beta."""
    nodes = (
        fc_node(0, "fc0", input_ref(0), "fc0/w", "fc0/b"),
        OperatorNode(1, "clamp", OperatorKind.RELU_BOUNDED, (0,), params=BoundParams(beta)),
        obf_node(2, "obf1", 1, "obf1/w", "obf1/b"),
        fc_node(3, "fc1", 2, "fc1/w", "fc1/b"),
    )
    store = {}
    seed_fc_weights(store, "fc0", 4, 5, seed=1, gain=gain)
    seed_obf_weights(store, "obf1", 5)
    seed_fc_weights(store, "fc1", 5, 3, seed=2)
    graph = Graph(nodes, ((4,),), (3,))
    assert validate(graph, store).ok
    return graph, store


def make_conv_chain(seed=0, fused=None):
    """conv(3->4, 3x3, pad 1) -> conv(4->2, 3x3, pad 1) on an 1x6x6x3 input."""
    rng = np.random.default_rng(seed)
    store = {
        "c0/w": store_tensor(rng.uniform(-0.5, 0.5, size=(4, 3, 3, 3))),
        "c0/b": store_tensor(rng.uniform(-0.5, 0.5, size=(4,))),
        "c1/w": store_tensor(rng.uniform(-0.5, 0.5, size=(2, 3, 3, 4))),
        "c1/b": store_tensor(rng.uniform(-0.5, 0.5, size=(2,))),
    }
    params = ConvParams(stride=(1, 1), padding=(1, 1))
    nodes = (
        OperatorNode(0, "c0", OperatorKind.CONV2D, (input_ref(0),), params, "c0/w", "c0/b",
                     fused_activation=fused),
        OperatorNode(1, "c1", OperatorKind.CONV2D, (0,), params, "c1/w", "c1/b"),
    )
    return Graph(nodes, ((1, 6, 6, 3),), (1,)), store
