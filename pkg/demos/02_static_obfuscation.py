#!/usr/bin/env python3
"""Apply the static obfuscations to a zoo model and inspect what shipped.

Renaming wipes the meaningful operator names, extra identity operators pad
the structure, and encapsulation moves every weight out of the main
manifest. Outputs are unchanged throughout.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from obflab import StaticObfConfig, ZooSpec, apply_static, build_model, run, serialize


def main():
    graph, store = build_model(ZooSpec.for_model("mlp-lenet", seed=7))
    print(f"original: {len(graph.nodes)} nodes")
    print(f"  names: {[n.public_name for n in graph.nodes]}")

    obf_graph, obf_store, truth = apply_static(
        graph, store, StaticObfConfig(seed=11, extra_op_count=6)
    )
    injected = sum(1 for n in obf_graph.nodes if n.is_obfuscating)
    print(f"\nobfuscated: {len(obf_graph.nodes)} nodes ({injected} injected)")
    print(f"  names: {[n.public_name for n in obf_graph.nodes]}")

    # same function, different representation
    x = np.random.default_rng(1).uniform(-1, 1, graph.input_specs[0]).astype(np.float32)
    before = run(graph, store, [x]).outputs[0]
    after = run(obf_graph, obf_store, [x]).outputs[0]
    print(f"\nmax output difference on a random input: {np.abs(after - before).max():.2e}")

    with tempfile.TemporaryDirectory() as tmp:
        path = serialize(obf_graph, obf_store, Path(tmp) / "shipped", encapsulated=True)
        manifest = json.loads((path / "manifest.json").read_text())
        node = manifest["nodes"][0]
        print("\nfirst manifest entry of the encapsulated container:")
        print(f"  {json.dumps(node)}")
        print(f"  (no kind, no weights; those moved to {sorted(p.name for p in path.iterdir() if 'sidecar' in p.name)})")

    # the defender keeps a private ground-truth map for scoring attacks later
    obf_names = [name for name, t in truth.nodes.items() if t.is_obfuscating]
    print(f"\nground truth records {len(truth.nodes)} nodes, {len(obf_names)} of them decoys")


if __name__ == "__main__":
    main()
