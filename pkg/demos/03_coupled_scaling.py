#!/usr/bin/env python3
"""Couple the injected operators to real weights so they stop being removable.

A static identity operator computes y = x and is trivially detected: replace
it with a copy and nothing changes. The coupled transformation scales a real
operator's weights by a, lets the scaled values flow downstream, and gives a
later operator (often an injected one) the inverse 1/a. Now the injected
operator does real recovery work, yet end-to-end outputs are preserved.
"""

import numpy as np

from obflab import (
    OperatorKind,
    StaticObfConfig,
    ZooSpec,
    apply_static,
    build_model,
    compute_theta,
    couple,
)


def main():
    original = build_model(ZooSpec.for_model("mlp-lenet", seed=7))
    obf_graph, obf_store, _ = apply_static(
        *original, StaticObfConfig(seed=11, extra_op_count=6)
    )

    coupled_graph, coupled_store, plan = couple(
        obf_graph, obf_store, rounds=len(obf_graph.nodes), seed=13
    )
    applied = [p for p, ok in zip(plan.pairs, plan.applied) if ok]
    print(f"{plan.rounds} rounds drawn, {len(applied)} pairs applied:")
    for pair in applied:
        sel = coupled_graph.node(pair.selected_id).public_name
        cpl = [coupled_graph.node(i).public_name for i in pair.coupled_ids]
        tag = " (crosses a bounded relu)" if pair.crosses_bound else ""
        print(f"  scale {pair.scale:.3f} on {sel}, inverted by {cpl}{tag}")

    for pair in applied:
        for cid in pair.coupled_ids:
            node = coupled_graph.node(cid)
            if node.kind != OperatorKind.OBF_LINEAR:
                continue
            before = obf_store[node.weight_ref]
            after = coupled_store[node.weight_ref]
            print(f"\ncarrier {node.public_name}:")
            print(f"  weight diagonal before: {np.diagonal(before)[:4].round(3)} (identity)")
            print(f"  weight diagonal after:  {np.diagonal(after)[:4].round(3)} (1/a)")
            break
        else:
            continue
        break

    theta = compute_theta(original, (coupled_graph, coupled_store), probes=100, seed=3)
    print(f"\nscaled max output deviation vs the original model: {theta.value:.2e}")


if __name__ == "__main__":
    main()
