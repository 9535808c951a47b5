"""Dynamic-instrumentation attack on a shipped model container.

The attacker can execute the model with hooks attached but reads nothing
from the container beyond what the runtime announces while working: the
order of op names, each op's input and output values, its declared params
object, and the weights loaded for weighted ops. Everything else here is
inference over those captures.

The attack runs in stages:

  1. one baseline traced run on a random probe input
  2. per-op value-copy probes: replace an op's output with its input and
     compare final model outputs; an op whose removal changes nothing is
     predicted to be an obfuscation artifact (budget: one run per op whose
     input and output shapes match, judged from the captured trace)
  3. weighted ops are classified by testing which operator shapes are
     consistent with the captured weight, input, and output shapes
  4. weightless ops are identified by replaying candidate operators over
     the captured input values and comparing bits against the captured
     output, first match in a fixed candidate order wins
  5. dataflow edges are rebuilt by matching input values to earlier output
     values, then predicted-artifact ops are contracted out

The reconstruction is returned as a RecoveredModel plus run statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container, ops
from .ir import (
    BoundParams,
    Graph,
    OperatorKind,
    OperatorNode,
    PoolParams,
    ReshapeParams,
    ShapeError,
    WeightStore,
    conv_output_shape,
)
from .interpreter import VALUE_COPY, HookSet, OpBegin, OpEnd, TraceRecorder, WeightLoad, run

OUTPUT_MATCH_TOLERANCE = 1e-6
RECOVERED_FILE = "recovered.json"
RECOVERED_WEIGHTS_FILE = "recovered.bin"

# Weightless identification candidates, tried strictly in this order.
WEIGHTLESS_CANDIDATES = (
    "relu",
    "relu_bounded",
    "add",
    "max_pool",
    "avg_pool",
    "reshape",
    "softmax",
)


@dataclass
class AttackContext:
    """Execution handle for the attack. Holds no ground truth."""

    graph: Graph
    store: WeightStore
    probe_seed: int = 0
    executions: int = 0
    probe_inputs: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_container(cls, path, probe_seed: int = 0) -> "AttackContext":
        graph, store = container.deserialize(path)
        return cls(graph=graph, store=store, probe_seed=probe_seed)

    def make_probe(self) -> list[np.ndarray]:
        if not self.probe_inputs:
            rng = np.random.default_rng(self.probe_seed)
            self.probe_inputs = [
                rng.uniform(-1.0, 1.0, size=spec).astype(np.float32)
                for spec in self.graph.input_specs
            ]
        return self.probe_inputs

    def run(self, hooks: HookSet | None = None):
        self.executions += 1
        return run(self.graph, self.store, self.make_probe(), hooks)


@dataclass(frozen=True)
class OpCapture:
    """Everything the trace revealed about one executed op."""

    name: str
    inputs: tuple[np.ndarray, ...]
    output: np.ndarray
    weights: np.ndarray | None
    bias: np.ndarray | None
    declared_params: object


def collect_trace(ctx: AttackContext) -> tuple[list[OpCapture], tuple[np.ndarray, ...]]:
    """Baseline traced run: per-op captures in execution order, plus outputs."""
    recorder = TraceRecorder()
    result = ctx.run(HookSet(observer=recorder))
    captures: list[OpCapture] = []
    pending_weights: dict[str, tuple] = {}
    begun: dict[str, OpBegin] = {}
    for event in recorder.events:
        if isinstance(event, WeightLoad):
            pending_weights[event.op_name] = (event.weights, event.bias)
        elif isinstance(event, OpBegin):
            begun[event.op_name] = event
        elif isinstance(event, OpEnd):
            start = begun.pop(event.op_name)
            weights, bias = pending_weights.pop(event.op_name, (None, None))
            captures.append(
                OpCapture(
                    name=event.op_name,
                    inputs=start.inputs,
                    output=event.output,
                    weights=weights,
                    bias=bias,
                    declared_params=start.params,
                )
            )
    return captures, result.outputs


def _outputs_differ(a: tuple[np.ndarray, ...], b: tuple[np.ndarray, ...]) -> bool:
    return any(
        float(np.max(np.abs(x.astype(np.float64) - y.astype(np.float64)), initial=0.0))
        > OUTPUT_MATCH_TOLERANCE
        for x, y in zip(a, b)
    )


def detect_extra_ops(
    ctx: AttackContext, captures: list[OpCapture], baseline: tuple[np.ndarray, ...]
) -> tuple[dict[str, bool], int, int]:
    """Value-copy probe per op. Returns (name -> predicted obfuscating, runs, skipped)."""
    predicted: dict[str, bool] = {}
    runs = 0
    inapplicable = 0
    for cap in captures:
        if cap.inputs[0].shape != cap.output.shape:
            # a copy cannot even be attempted; treat the op as load-bearing
            predicted[cap.name] = False
            inapplicable += 1
            continue
        result = ctx.run(HookSet(eval_override={cap.name: VALUE_COPY}))
        runs += 1
        predicted[cap.name] = not _outputs_differ(baseline, result.outputs)
    return predicted, runs, inapplicable


def _squeezed(shape: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(d for d in shape if d != 1)


def _spatial_params(in_shape, out_shape, kernel_hw) -> dict | None:
    for stride in (1, 2, 3):
        for pad in (0, 1, 2, 3):
            try:
                got = conv_output_shape(
                    (in_shape[1], in_shape[2]),
                    kernel_hw,
                    (stride, stride),
                    (pad, pad),
                    (1, 1),
                )
            except ShapeError:
                continue
            if got == (out_shape[1], out_shape[2]):
                return {"stride": stride, "padding": pad}
    return None


def classify_weighted(
    weights: np.ndarray,
    bias: np.ndarray | None,
    in_shape: tuple[int, ...],
    out_shape: tuple[int, ...],
) -> tuple[tuple[str, ...], dict | None]:
    """Operator kinds consistent with the captured shapes, best guess first."""
    kinds: list[str] = []
    params: dict | None = None
    w = weights.shape
    if len(w) == 4 and len(in_shape) == 4 and len(out_shape) == 4:
        c_out, kh, kw, c_in = w
        if in_shape[3] == c_in and (bias is None or bias.shape == (c_out,)):
            if out_shape[3] == c_out:
                found = _spatial_params(in_shape, out_shape, (kh, kw))
                if found is not None:
                    kinds.append("conv2d")
                    params = found
        mult, kh, kw, c_in = w
        if (
            in_shape[3] == c_in
            and out_shape[3] == mult * c_in
            and (bias is None or bias.shape == (mult * c_in,))
        ):
            found = _spatial_params(in_shape, out_shape, (kh, kw))
            if found is not None:
                kinds.append("depthwise_conv2d")
                if params is None:
                    params = found
    sq_w = _squeezed(w)
    sq_in = _squeezed(in_shape)
    sq_out = _squeezed(out_shape)
    if len(sq_w) == 2 and len(sq_in) <= 1 and len(sq_out) <= 1:
        d_in = sq_in[0] if sq_in else 1
        d_out = sq_out[0] if sq_out else 1
        if sq_w in ((d_in, d_out), (d_out, d_in)) and (
            bias is None or _squeezed(bias.shape) in ((d_out,), ())
        ):
            kinds.append("fully_connected")
    return tuple(kinds), params


def _weightless_probe(kind: str, inputs, out_shape) -> tuple[OperatorNode | None, dict | None]:
    """Build a replay node for one candidate, or None when shape gates fail."""
    in_shape = inputs[0].shape
    if kind in ("relu", "relu_bounded", "softmax"):
        if len(inputs) != 1 or in_shape != out_shape:
            return None, None
        if kind == "relu":
            return OperatorNode(0, "probe", OperatorKind.RELU, (0,)), None
        if kind == "relu_bounded":
            node = OperatorNode(0, "probe", OperatorKind.RELU_BOUNDED, (0,), params=BoundParams(6.0))
            return node, {"beta": 6.0}
        return OperatorNode(0, "probe", OperatorKind.SOFTMAX, (0,)), None
    if kind == "add":
        if len(inputs) != 2 or inputs[0].shape != inputs[1].shape or in_shape != out_shape:
            return None, None
        return OperatorNode(0, "probe", OperatorKind.ADD, (0, 1)), None
    if kind in ("max_pool", "avg_pool"):
        if len(inputs) != 1 or len(in_shape) != 4 or len(out_shape) != 4:
            return None, None
        if in_shape[0] != out_shape[0] or in_shape[3] != out_shape[3]:
            return None, None
        h_in, w_in, h_out, w_out = in_shape[1], in_shape[2], out_shape[1], out_shape[2]
        if h_out == 0 or w_out == 0 or h_in % h_out or w_in % w_out:
            return None, None
        window = (h_in // h_out, w_in // w_out)
        op = OperatorKind.MAX_POOL if kind == "max_pool" else OperatorKind.AVG_POOL
        node = OperatorNode(0, "probe", op, (0,), params=PoolParams(window, window))
        return node, {"window": list(window)}
    if kind == "reshape":
        if len(inputs) != 1 or int(np.prod(in_shape)) != int(np.prod(out_shape)):
            return None, None
        node = OperatorNode(0, "probe", OperatorKind.RESHAPE, (0,), params=ReshapeParams(tuple(out_shape)))
        return node, {"shape": list(out_shape)}
    return None, None


def identify_weightless(inputs, output) -> tuple[str | None, dict | None]:
    """Replay each candidate over the captured inputs; first bit-exact match wins."""
    for kind in WEIGHTLESS_CANDIDATES:
        node, params = _weightless_probe(kind, inputs, output.shape)
        if node is None:
            continue
        replayed = ops.eval_node(node, list(inputs), None, None)
        if replayed.shape == output.shape and np.array_equal(replayed, output):
            return kind, params
    return None, None


def _match_edges(captures: list[OpCapture], probe_inputs) -> list[tuple[str, ...]]:
    """Source name per input of each op, matched by value against earlier outputs."""
    sources: list[tuple[str, ...]] = []
    for i, cap in enumerate(captures):
        per_input = []
        for arr in cap.inputs:
            src = None
            for j in range(i - 1, -1, -1):
                prev = captures[j].output
                if prev.shape == arr.shape and np.array_equal(prev, arr):
                    src = captures[j].name
                    break
            if src is None:
                for k, pin in enumerate(probe_inputs):
                    if pin.shape == arr.shape and np.array_equal(pin, arr):
                        src = f"input:{k}"
                        break
            per_input.append(src if src is not None else "?")
        sources.append(tuple(per_input))
    return sources


@dataclass(frozen=True)
class RecoveredNode:
    name: str
    predicted_obfuscating: bool
    predicted_kinds: tuple[str, ...]
    input_names: tuple[str, ...]
    weights: np.ndarray | None
    bias: np.ndarray | None
    params: dict | None


@dataclass
class RecoveredModel:
    """The attacker's reconstruction of a shipped model."""

    nodes: tuple[RecoveredNode, ...]
    output_names: tuple[str, ...]

    def valid_nodes(self) -> list[RecoveredNode]:
        return [n for n in self.nodes if not n.predicted_obfuscating]

    def save(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        tensors: WeightStore = {}
        records = []
        for node in self.nodes:
            w_ref = b_ref = None
            if node.weights is not None:
                w_ref = f"{node.name}/w"
                tensors[w_ref] = node.weights
            if node.bias is not None:
                b_ref = f"{node.name}/b"
                tensors[b_ref] = node.bias
            records.append(
                {
                    "name": node.name,
                    "obfuscating": node.predicted_obfuscating,
                    "kinds": list(node.predicted_kinds),
                    "inputs": list(node.input_names),
                    "params": node.params,
                    "weight_ref": w_ref,
                    "bias_ref": b_ref,
                }
            )
        index = container.write_weight_blob(path, RECOVERED_WEIGHTS_FILE, tensors)
        payload = {
            "version": container.RECOVERED_VERSION,
            "outputs": list(self.output_names),
            "nodes": records,
            "tensors": index,
        }
        container.write_json(path / RECOVERED_FILE, payload)
        return path

    @classmethod
    def load(cls, path) -> "RecoveredModel":
        path = Path(path)
        payload = container.read_json(path / RECOVERED_FILE)
        if payload.get("version") != container.RECOVERED_VERSION:
            raise container.VersionMismatchError(
                f"expected {container.RECOVERED_VERSION!r}, found {payload.get('version')!r}"
            )
        tensors = container.read_weight_blob(path, RECOVERED_WEIGHTS_FILE, payload["tensors"])
        nodes = tuple(
            RecoveredNode(
                name=rec["name"],
                predicted_obfuscating=rec["obfuscating"],
                predicted_kinds=tuple(rec["kinds"]),
                input_names=tuple(rec["inputs"]),
                weights=tensors.get(rec["weight_ref"]) if rec["weight_ref"] else None,
                bias=tensors.get(rec["bias_ref"]) if rec["bias_ref"] else None,
                params=rec["params"],
            )
            for rec in payload["nodes"]
        )
        return cls(nodes=nodes, output_names=tuple(payload["outputs"]))


@dataclass(frozen=True)
class TraceStats:
    executions: int
    node_count: int
    value_copy_runs: int
    inapplicable: int


def _contract(name: str, drop_map: dict[str, str]) -> str:
    seen = set()
    while name in drop_map and name not in seen:
        seen.add(name)
        name = drop_map[name]
    return name


def run_attack(ctx: AttackContext) -> tuple[RecoveredModel, TraceStats]:
    """Full pipeline: trace, probe, classify, rebuild."""
    captures, baseline = collect_trace(ctx)
    predicted_obf, copy_runs, inapplicable = detect_extra_ops(ctx, captures, baseline)
    raw_sources = _match_edges(captures, ctx.make_probe())

    # Predicted artifacts with one input are transparent; route around them.
    drop_map = {
        cap.name: srcs[0]
        for cap, srcs in zip(captures, raw_sources)
        if predicted_obf[cap.name] and len(srcs) == 1
    }

    nodes = []
    for cap, srcs in zip(captures, raw_sources):
        if cap.weights is not None:
            kinds, params = classify_weighted(
                cap.weights, cap.bias, cap.inputs[0].shape, cap.output.shape
            )
        else:
            kind, params = identify_weightless(cap.inputs, cap.output)
            kinds = (kind,) if kind else ()
        if predicted_obf[cap.name]:
            inputs = srcs
        else:
            inputs = tuple(_contract(s, drop_map) for s in srcs)
        nodes.append(
            RecoveredNode(
                name=cap.name,
                predicted_obfuscating=predicted_obf[cap.name],
                predicted_kinds=kinds,
                input_names=inputs,
                weights=cap.weights,
                bias=cap.bias,
                params=params,
            )
        )

    output_names = []
    for out in baseline:
        src = "?"
        for cap in reversed(captures):
            if cap.output.shape == out.shape and np.array_equal(cap.output, out):
                src = _contract(cap.name, drop_map)
                break
        output_names.append(src)

    model = RecoveredModel(nodes=tuple(nodes), output_names=tuple(output_names))
    stats = TraceStats(
        executions=ctx.executions,
        node_count=len(captures),
        value_copy_runs=copy_runs,
        inapplicable=inapplicable,
    )
    return model, stats
