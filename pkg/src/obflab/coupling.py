"""Coupled weight scaling: value-changing obfuscation with exact compensation.

One transformation picks a weighted node, multiplies its weights and bias by
a scale factor in (0, 1), and undoes the scaling further downstream so the
graph's outputs are unchanged. Three roles take part:

  selected   the node whose weights get scaled
  interior   nodes the scaled activation flows through unchanged; weighted
             interiors need their bias scaled too, plain relu and pooling
             pass a positive scale through on their own
  coupled    weighted nodes that divide the scale back out; their
             pre-activation value is exactly the unscaled original

A scaled activation must not cross a bounded relu: clamping at the bound does
not commute with scaling. The one shape that survives crossing is a pure
chain ending at a bounded element whose immediate successors are all
injected pointwise identity ops. Those successors divide the scale out and
take on the same bound as a fused activation; because the bound clamps at
beta, dividing by the scale after clamping the scaled value reproduces the
original clamped value for any scale in (0, 1). Repeated crossings of the
same bound compose since the scale factors multiply.

Candidates are enumerated on the graph as it stands when planning begins,
then applied one after another. An application can change a later pair's
footing (a pointwise op may gain a fused bound or lose its identity weights),
so every pair is re-validated against the current graph just before it is
applied and dropped if it no longer fits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import container
from .ir import (
    LINEAR_KINDS,
    Graph,
    OperatorKind,
    WeightStore,
    bounded_activation,
    consumer_map,
    store_tensor,
)

log = logging.getLogger(__name__)

PLAN_VERSION = "dynamo-plan/1"


@dataclass(frozen=True)
class ObfuscationPair:
    """One coupled transformation: who is scaled, who compensates."""

    selected_id: int
    interior_ids: tuple[int, ...]
    coupled_ids: tuple[int, ...]
    crosses_bound: bool = False
    bound_id: int | None = None
    scale: float = 1.0


def _fused_kind(node) -> str | None:
    return node.fused_activation.kind if node.fused_activation else None


def _is_bound_element(node) -> bool:
    if node.kind == OperatorKind.RELU_BOUNDED:
        return True
    return node.kind in LINEAR_KINDS and _fused_kind(node) == "relu_bounded"


def _bound_beta(node) -> float:
    if node.kind == OperatorKind.RELU_BOUNDED:
        return node.params.beta
    return node.fused_activation.beta


def _plain_interior_ok(node) -> bool:
    if node.kind in LINEAR_KINDS:
        return _fused_kind(node) in (None, "relu")
    return node.kind in (OperatorKind.RELU, OperatorKind.MAX_POOL, OperatorKind.AVG_POOL)


def _plain_candidates(graph: Graph, selected_id: int, consumers, cap: int) -> list[ObfuscationPair]:
    out: list[ObfuscationPair] = []
    seen: set = set()
    output_ids = set(graph.output_ids)

    def resolve(frontier, interior, coupled):
        if len(out) >= cap:
            return
        if not frontier:
            key = (interior, coupled)
            if coupled and key not in seen:
                seen.add(key)
                out.append(
                    ObfuscationPair(
                        selected_id=selected_id,
                        interior_ids=tuple(sorted(interior)),
                        coupled_ids=tuple(sorted(coupled)),
                    )
                )
            return
        nid, rest = frontier[0], frontier[1:]
        node = graph.node(nid)
        if node.kind in LINEAR_KINDS:
            resolve(rest, interior, coupled | {nid})
        if nid not in output_ids and _plain_interior_ok(node):
            resolve(rest + tuple(consumers[nid]), interior | {nid}, coupled)

    resolve(tuple(consumers[selected_id]), frozenset(), frozenset())
    return out


def _crossing_candidate(graph: Graph, selected_id: int, consumers) -> ObfuscationPair | None:
    output_ids = set(graph.output_ids)
    interior: list[int] = []
    current = selected_id
    while True:
        succ = consumers[current]
        if len(succ) != 1:
            return None
        nxt = graph.node(succ[0])
        if _is_bound_element(nxt):
            if nxt.id in output_ids:
                return None
            down = consumers[nxt.id]
            if down and all(graph.node(d).kind == OperatorKind.OBF_LINEAR for d in down):
                return ObfuscationPair(
                    selected_id=selected_id,
                    interior_ids=tuple(interior),
                    coupled_ids=tuple(sorted(down)),
                    crosses_bound=True,
                    bound_id=nxt.id,
                )
            return None
        if nxt.id in output_ids or not _plain_interior_ok(nxt):
            return None
        interior.append(nxt.id)
        current = nxt.id


def _bounded_selected_candidate(graph: Graph, node, consumers) -> ObfuscationPair | None:
    # A weighted node with a fused bound is its own bounded element; its
    # scaled clamp is recoverable only right behind the clamp.
    down = consumers[node.id]
    if down and all(graph.node(d).kind == OperatorKind.OBF_LINEAR for d in down):
        return ObfuscationPair(
            selected_id=node.id,
            interior_ids=(),
            coupled_ids=tuple(sorted(down)),
            crosses_bound=True,
            bound_id=node.id,
        )
    return None


def find_coupled_candidates(graph: Graph, selected_id: int, cap: int = 64) -> list[ObfuscationPair]:
    """All ways to couple `selected_id`, deterministically ordered. May be empty."""
    node = graph.node(selected_id)
    if node.kind not in LINEAR_KINDS or selected_id in graph.output_ids:
        return []
    consumers = consumer_map(graph)
    if _fused_kind(node) == "relu_bounded":
        pair = _bounded_selected_candidate(graph, node, consumers)
        return [pair] if pair else []
    found = _plain_candidates(graph, selected_id, consumers, cap)
    crossing = _crossing_candidate(graph, selected_id, consumers)
    if crossing is not None:
        found.append(crossing)
    found.sort(key=lambda p: (p.crosses_bound, len(p.interior_ids), p.interior_ids, p.coupled_ids))
    return found


def pair_is_applicable(graph: Graph, store: WeightStore, pair: ObfuscationPair) -> bool:
    """Re-check a pair against the graph as it stands now.

    Earlier applications may have given a node a fused bound or scaled an
    identity op's weights; either can invalidate a pair that was sound when
    it was enumerated.
    """
    if not pair.coupled_ids:
        return False
    sel = graph.node(pair.selected_id)
    if sel.kind not in LINEAR_KINDS or pair.selected_id in graph.output_ids:
        return False
    for iid in pair.interior_ids:
        if iid in graph.output_ids or not _plain_interior_ok(graph.node(iid)):
            return False
    if not pair.crosses_bound:
        if _fused_kind(sel) not in (None, "relu"):
            return False
        return all(graph.node(c).kind in LINEAR_KINDS for c in pair.coupled_ids)
    bound = graph.node(pair.bound_id)
    if not _is_bound_element(bound):
        return False
    if pair.bound_id != pair.selected_id:
        if _fused_kind(sel) not in (None, "relu"):
            return False
        if pair.bound_id in graph.output_ids:
            return False
    beta = _bound_beta(bound)
    for cid in pair.coupled_ids:
        c = graph.node(cid)
        if c.kind != OperatorKind.OBF_LINEAR:
            return False
        fk = _fused_kind(c)
        if fk is None:
            # Scale recovery behind a bound needs a pure scalar op. A
            # plain-transformed identity op is no longer one.
            w = store[c.weight_ref]
            if not np.array_equal(w, np.eye(w.shape[0], dtype=w.dtype)):
                return False
            if c.bias_ref is not None and store[c.bias_ref].any():
                return False
        elif fk == "relu_bounded":
            if c.fused_activation.beta != beta:
                return False
        else:
            return False
    return True


def apply_pair(graph: Graph, store: WeightStore, pair: ObfuscationPair) -> tuple[Graph, WeightStore]:
    """Apply one coupled transformation. Raises ValueError if it cannot hold."""
    if not 0.0 < pair.scale < 1.0:
        raise ValueError(f"scale must lie strictly inside (0, 1), got {pair.scale}")
    if not pair_is_applicable(graph, store, pair):
        raise ValueError("pair no longer fits the graph it is being applied to")
    a = pair.scale
    store = dict(store)

    def scaled(ref: str | None, factor: float) -> None:
        if ref is not None:
            store[ref] = store_tensor(store[ref] * factor)

    sel = graph.node(pair.selected_id)
    scaled(sel.weight_ref, a)
    scaled(sel.bias_ref, a)
    for iid in pair.interior_ids:
        node = graph.node(iid)
        if node.kind in LINEAR_KINDS:
            scaled(node.bias_ref, a)
    if pair.crosses_bound and pair.bound_id != pair.selected_id:
        bound = graph.node(pair.bound_id)
        if bound.kind in LINEAR_KINDS:
            scaled(bound.bias_ref, a)
    beta = _bound_beta(graph.node(pair.bound_id)) if pair.crosses_bound else None
    for cid in pair.coupled_ids:
        node = graph.node(cid)
        scaled(node.weight_ref, 1.0 / a)
        if pair.crosses_bound and node.fused_activation is None:
            graph = graph.replace_node(replace(node, fused_activation=bounded_activation(beta)))
    return graph, store


@dataclass(frozen=True)
class ObfuscationPlan:
    """Audit record of a coupling run: every drawn pair and whether it applied."""

    pairs: tuple[ObfuscationPair, ...]
    applied: tuple[bool, ...]
    seed: int
    rounds: int

    def save(self, path) -> Path:
        path = Path(path)
        payload = {
            "version": PLAN_VERSION,
            "seed": self.seed,
            "rounds": self.rounds,
            "pairs": [
                {
                    "selected": p.selected_id,
                    "interiors": list(p.interior_ids),
                    "coupled": list(p.coupled_ids),
                    "crosses_bound": p.crosses_bound,
                    "bound": p.bound_id,
                    "scale": p.scale,
                    "applied": ok,
                }
                for p, ok in zip(self.pairs, self.applied)
            ],
        }
        container.write_json(path, payload)
        return path

    @classmethod
    def load(cls, path) -> "ObfuscationPlan":
        payload = container.read_json(Path(path))
        if payload.get("version") != PLAN_VERSION:
            raise container.VersionMismatchError(
                f"expected {PLAN_VERSION!r}, found {payload.get('version')!r}"
            )
        pairs = []
        applied = []
        for rec in payload["pairs"]:
            pairs.append(
                ObfuscationPair(
                    selected_id=rec["selected"],
                    interior_ids=tuple(rec["interiors"]),
                    coupled_ids=tuple(rec["coupled"]),
                    crosses_bound=rec["crosses_bound"],
                    bound_id=rec["bound"],
                    scale=rec["scale"],
                )
            )
            applied.append(rec["applied"])
        return cls(tuple(pairs), tuple(applied), payload["seed"], payload["rounds"])


def couple(
    graph: Graph, store: WeightStore, rounds: int, seed: int, cap: int = 64
) -> tuple[Graph, WeightStore, ObfuscationPlan]:
    """Draw `rounds` coupled transformations and apply the ones that hold.

    Each round picks a weighted node uniformly, enumerates its candidates on
    the pre-coupling graph, and draws a scale from U(0, 1) clamped to
    [0.1, 0.95]. Pairs are then applied in draw order, each re-validated
    first; uniqueness of the final weights is not a goal, exactness is.
    """
    rng = np.random.default_rng(seed)
    linear_ids = [n.id for n in graph.nodes if n.kind in LINEAR_KINDS]
    pairs: list[ObfuscationPair] = []
    if linear_ids:
        for _ in range(rounds):
            sid = linear_ids[int(rng.integers(len(linear_ids)))]
            candidates = find_coupled_candidates(graph, sid, cap)
            if not candidates:
                continue
            pair = candidates[int(rng.integers(len(candidates)))]
            scale = float(min(0.95, max(0.1, rng.uniform())))
            pairs.append(replace(pair, scale=scale))
    applied: list[bool] = []
    for pair in pairs:
        if pair_is_applicable(graph, store, pair):
            graph, store = apply_pair(graph, store, pair)
            applied.append(True)
        else:
            log.debug("dropping pair selected=%d: graph drifted", pair.selected_id)
            applied.append(False)
    plan = ObfuscationPlan(tuple(pairs), tuple(applied), seed, rounds)
    return graph, store, plan
