"""Hooked graph interpreter.

Execution walks the node list in order, emitting trace events to an
optional observer: WeightLoad for every weighted node, then OpBegin and
OpEnd around the evaluation. Event payloads are copies, so an observer
can never perturb execution; a run with an observer attached returns the
same bits as a run without one.

An eval override can replace a node's whole evaluation. The only variant
is VALUE_COPY: the node's output becomes a copy of its first input. When
the first input's shape differs from the node's output shape the override
is inapplicable: normal evaluation runs and the skip is reported on the
RunResult instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import ops
from .ir import Graph, LINEAR_KINDS, Params, WeightStore, graph_input_index, infer_shapes, is_graph_input

__all__ = [
    "WeightLoad",
    "OpBegin",
    "OpEnd",
    "TraceEvent",
    "VALUE_COPY",
    "HookSet",
    "RunResult",
    "ExecutionError",
    "run",
    "execute",
    "format_trace_event",
    "TraceRecorder",
]

VALUE_COPY = "value_copy"


@dataclass(frozen=True)
class WeightLoad:
    op_name: str
    weights: np.ndarray
    bias: np.ndarray | None


@dataclass(frozen=True)
class OpBegin:
    op_name: str
    inputs: tuple[np.ndarray, ...]
    params: Params


@dataclass(frozen=True)
class OpEnd:
    op_name: str
    output: np.ndarray


TraceEvent = Union[WeightLoad, OpBegin, OpEnd]


@dataclass
class HookSet:
    observer: Callable[[TraceEvent], None] | None = None
    eval_override: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RunResult:
    outputs: tuple[np.ndarray, ...]
    skipped_overrides: tuple[tuple[str, str], ...]


class ExecutionError(RuntimeError):
    pass


def _normalize_inputs(graph: Graph, inputs) -> list[np.ndarray]:
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    arrays = [np.asarray(x, dtype=np.float32) for x in inputs]
    if len(arrays) != len(graph.input_specs):
        raise ExecutionError(f"graph takes {len(graph.input_specs)} input(s), got {len(arrays)}")
    for i, (arr, spec) in enumerate(zip(arrays, graph.input_specs)):
        if arr.shape != tuple(spec):
            raise ExecutionError(f"input {i} has shape {arr.shape}, expected {tuple(spec)}")
    return arrays


def run(graph: Graph, store: WeightStore, inputs, hooks: HookSet | None = None) -> RunResult:
    """Execute the graph, returning all outputs plus skipped overrides."""
    arrays = _normalize_inputs(graph, inputs)
    observer = hooks.observer if hooks else None
    overrides = hooks.eval_override if hooks else {}
    for name, variant in overrides.items():
        if variant != VALUE_COPY:
            raise ExecutionError(f"unknown eval override {variant!r} for {name!r}")

    # Output shapes are needed up front only to judge override applicability.
    shapes = infer_shapes(graph, store) if overrides else {}

    values: dict[int, np.ndarray] = {}
    skipped: list[tuple[str, str]] = []

    def resolve(ref: int) -> np.ndarray:
        if is_graph_input(ref):
            return arrays[graph_input_index(ref)]
        return values[ref]

    for node in graph.nodes:
        node_inputs = [resolve(r) for r in node.input_ids]
        weights = store[node.weight_ref] if node.weight_ref else None
        bias = store[node.bias_ref] if node.bias_ref else None

        copy_output = False
        if overrides.get(node.public_name) == VALUE_COPY:
            if node_inputs[0].shape == shapes[node.id]:
                copy_output = True
            else:
                skipped.append(
                    (
                        node.public_name,
                        f"value_copy needs matching shapes, {node_inputs[0].shape} vs {shapes[node.id]}",
                    )
                )

        # Under a value copy the node's weights are never loaded.
        if observer and node.kind in LINEAR_KINDS and not copy_output:
            observer(
                WeightLoad(
                    node.public_name,
                    weights.copy(),
                    bias.copy() if bias is not None else None,
                )
            )
        if observer:
            observer(OpBegin(node.public_name, tuple(x.copy() for x in node_inputs), node.params))

        if copy_output:
            out = node_inputs[0].copy()
        else:
            out = ops.eval_node(node, node_inputs, weights, bias)
            if not np.isfinite(out).all():
                raise ExecutionError(f"non-finite value produced by node {node.public_name!r}")

        if observer:
            observer(OpEnd(node.public_name, out.copy()))
        values[node.id] = out

    outputs = tuple(values[i] for i in graph.output_ids)
    return RunResult(outputs=outputs, skipped_overrides=tuple(skipped))


def execute(graph: Graph, store: WeightStore, inputs, hooks: HookSet | None = None):
    """Model output: a single array, or a list when the graph has several."""
    result = run(graph, store, inputs, hooks)
    if len(result.outputs) == 1:
        return result.outputs[0]
    return list(result.outputs)


def format_trace_event(event: TraceEvent) -> str:
    if isinstance(event, WeightLoad):
        bias = "none" if event.bias is None else f"{event.bias.shape}"
        return f"WeightLoad {event.op_name} weights{event.weights.shape} bias {bias}"
    if isinstance(event, OpBegin):
        shapes = ",".join(str(x.shape) for x in event.inputs)
        return f"OpBegin {event.op_name} inputs [{shapes}] params {event.params}"
    return f"OpEnd {event.op_name} output{event.output.shape}"


class TraceRecorder:
    """Observer that keeps every event and can dump them as text lines."""

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []

    def __call__(self, event: TraceEvent) -> None:
        self.events.append(event)

    def lines(self) -> list[str]:
        return [format_trace_event(e) for e in self.events]

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")
