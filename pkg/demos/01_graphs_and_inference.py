#!/usr/bin/env python3
"""Build a tiny inference graph by hand, validate it, run it, and watch the trace."""

import numpy as np

from obflab import (
    Graph,
    HookSet,
    OperatorKind,
    OperatorNode,
    TraceRecorder,
    input_ref,
    relu_activation,
    run,
    validate,
)


def main():
    rng = np.random.default_rng(0)

    # Two dense layers and a softmax head. Weights live in a plain dict
    # keyed by the refs the nodes carry; activations (here a relu) are
    # fused onto the producing node rather than being separate operators.
    store = {
        "dense1/w": rng.uniform(-0.5, 0.5, (4, 8)).astype(np.float32),
        "dense1/b": np.zeros(8, dtype=np.float32),
        "dense2/w": rng.uniform(-0.5, 0.5, (8, 3)).astype(np.float32),
        "dense2/b": np.zeros(3, dtype=np.float32),
    }
    graph = Graph(
        nodes=(
            OperatorNode(0, "dense1", OperatorKind.FULLY_CONNECTED, (input_ref(0),),
                         weight_ref="dense1/w", bias_ref="dense1/b",
                         fused_activation=relu_activation()),
            OperatorNode(1, "dense2", OperatorKind.FULLY_CONNECTED, (0,),
                         weight_ref="dense2/w", bias_ref="dense2/b"),
            OperatorNode(2, "probs", OperatorKind.SOFTMAX, (1,)),
        ),
        input_specs=((4,),),
        output_ids=(2,),
    )

    report = validate(graph, store)
    print(f"graph validates: {report.ok} ({len(graph.nodes)} nodes)")

    x = rng.uniform(-1, 1, 4).astype(np.float32)
    result = run(graph, store, [x])
    probs = result.outputs[0]
    print(f"input  {np.round(x, 3)}")
    print(f"output {np.round(probs, 3)} (sums to {probs.sum():.6f})")

    # The interpreter can report every weight load and op execution to an
    # observer. This is the surface the instrumentation attack builds on.
    recorder = TraceRecorder()
    run(graph, store, [x], hooks=HookSet(observer=recorder))
    print(f"\ntrace of the same run ({len(recorder.events)} events):")
    for line in recorder.lines():
        print(f"  {line}")


if __name__ == "__main__":
    main()
