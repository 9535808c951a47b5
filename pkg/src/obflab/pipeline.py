"""End-to-end evaluation runs: obfuscate, verify, attack, score, report.

A run is a grid of cells, one per (model, mode). Each cell builds the
original model, applies the requested protection, ships it through the
container format, measures output deviation against the original, runs
the instrumentation attack on the shipped artifact, and scores the
reconstruction against the privately retained ground truth. Every file a
cell writes is deterministic in the run seed, so two runs with the same
configuration are byte-identical.

Cells are isolated: a failure inside one is recorded in its place in the
summary and the remaining cells still run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import container
from .coupling import ObfuscationPlan, couple
from .explorer import AttackContext, TraceStats, run_attack
from .ir import Graph, WeightStore
from .metrics import MetricsReport, ThetaResult, compute_metrics, compute_theta, format_report_table
from .static_obf import GroundTruthMap, StaticObfConfig, apply_static, ground_truth_from
from .zoo import ZOO_MODEL_IDS, ZooSpec, build_model

log = logging.getLogger(__name__)

MODES = ("none", "static", "static+couple")
REPORT_VERSION = "dynamo-report/1"
SUMMARY_VERSION = "dynamo-summary/1"
THETA_PROBES = 100

# purposes for per-cell seed derivation
_SEED_STATIC = 0
_SEED_COUPLE = 1
_SEED_THETA = 2
_SEED_ATTACK = 3


@dataclass(frozen=True)
class RunConfig:
    out_dir: Path
    models: tuple[str, ...] = ZOO_MODEL_IDS
    modes: tuple[str, ...] = MODES
    seed: int = 0
    extra_op_count: int = 30
    pairs: int | None = None  # None: one round per node of the protected graph

    def __post_init__(self) -> None:
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        for model_id in self.models:
            if model_id not in ZOO_MODEL_IDS:
                raise ValueError(f"unknown zoo model {model_id!r}")
        for mode in self.modes:
            if mode not in MODES:
                raise ValueError(f"unknown mode {mode!r}")
        if not self.models or not self.modes:
            raise ValueError("need at least one model and one mode")
        if self.extra_op_count < 0:
            raise ValueError("extra_op_count must be >= 0")
        if self.pairs is not None and self.pairs < 1:
            raise ValueError("pairs must be positive when given")


def derive_seed(*entropy: int) -> int:
    """Stable child seed from a tuple of run coordinates."""
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass
class CellResult:
    model_id: str
    mode: str
    cell_dir: Path
    report: MetricsReport | None = None
    stats: TraceStats | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def obfuscate_model(
    graph: Graph,
    store: WeightStore,
    mode: str,
    *,
    static_seed: int,
    couple_seed: int,
    extra_op_count: int,
    pairs: int | None,
) -> tuple[Graph, WeightStore, GroundTruthMap, ObfuscationPlan | None]:
    """Apply one protection mode; the truth map always reflects pre-coupling
    weights, which is what an attack would have to recover."""
    if mode == "none":
        return graph, store, ground_truth_from(graph, store), None
    config = StaticObfConfig(seed=static_seed, extra_op_count=extra_op_count)
    graph, store, truth = apply_static(graph, store, config)
    if mode == "static":
        return graph, store, truth, None
    rounds = pairs if pairs is not None else len(graph.nodes)
    graph, store, plan = couple(graph, store, rounds=rounds, seed=couple_seed)
    return graph, store, truth, plan


def run_cell(config: RunConfig, model_id: str, mode: str) -> CellResult:
    cell_dir = config.out_dir / "runs" / model_id / mode
    result = CellResult(model_id=model_id, mode=mode, cell_dir=cell_dir)
    model_idx = config.models.index(model_id)
    mode_idx = config.modes.index(mode)

    def seed_for(purpose: int) -> int:
        return derive_seed(config.seed, model_idx, mode_idx, purpose)

    try:
        cell_dir.mkdir(parents=True, exist_ok=True)
        original = build_model(ZooSpec.for_model(model_id, config.seed))
        shipped_graph, shipped_store, truth, plan = obfuscate_model(
            *original,
            mode,
            static_seed=seed_for(_SEED_STATIC),
            couple_seed=seed_for(_SEED_COUPLE),
            extra_op_count=config.extra_op_count,
            pairs=config.pairs,
        )
        shipped_path = container.serialize(
            shipped_graph, shipped_store, cell_dir / "model", encapsulated=mode != "none"
        )
        truth.save(cell_dir / "oracle")
        if plan is not None:
            plan.save(cell_dir / "plan.json")

        theta = compute_theta(
            original, (shipped_graph, shipped_store),
            probes=THETA_PROBES, seed=seed_for(_SEED_THETA),
        )

        ctx = AttackContext.from_container(shipped_path, probe_seed=seed_for(_SEED_ATTACK))
        recovered, stats = run_attack(ctx)
        recovered.save(cell_dir / "recovered")

        result.report = compute_metrics(recovered, truth, theta=theta)
        result.stats = stats
        _write_cell_report(cell_dir, result)
    except Exception as exc:  # cell isolation: record, keep the grid running
        log.exception("cell %s/%s failed", model_id, mode)
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def attack_stats_dict(stats: TraceStats) -> dict:
    budget = 2 * stats.node_count + 5
    return {
        "executions": stats.executions,
        "node_count": stats.node_count,
        "value_copy_runs": stats.value_copy_runs,
        "inapplicable": stats.inapplicable,
        "budget": budget,
        "within_budget": stats.executions <= budget,
    }


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_cell_report(cell_dir: Path, result: CellResult) -> None:
    payload = {
        "version": REPORT_VERSION,
        "model": result.model_id,
        "mode": result.mode,
        "metrics": result.report.to_dict(),
        "attack": attack_stats_dict(result.stats),
    }
    _dump_json(cell_dir / "report.json", payload)
    label = f"{result.model_id} [{result.mode}]"
    lines = [
        format_report_table({label: result.report}).rstrip(),
        "",
        "attack executions: {executions} of budget {budget}".format(**payload["attack"]),
        "",
    ]
    (cell_dir / "report.txt").write_text("\n".join(lines))


def load_cell_report(path) -> dict:
    """Read one report.json; accepts the cell directory or the file itself."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    payload = json.loads(path.read_text())
    if payload.get("version") != REPORT_VERSION:
        raise container.VersionMismatchError(
            f"expected {REPORT_VERSION}, found {payload.get('version')!r}"
        )
    return payload


def summarize(results: list[CellResult]) -> tuple[dict, str]:
    """Aggregate cell results into a JSON payload and an aligned text table."""
    cells: dict[str, dict] = {}
    for r in results:
        entry = cells.setdefault(r.model_id, {})
        if r.ok:
            entry[r.mode] = {
                "metrics": r.report.to_dict(),
                "attack": attack_stats_dict(r.stats),
            }
        else:
            entry[r.mode] = {"error": r.error}
    payload = {"version": SUMMARY_VERSION, "cells": cells}

    blocks: list[str] = []
    modes = []
    for r in results:
        if r.mode not in modes:
            modes.append(r.mode)
    for mode in modes:
        reports = {r.model_id: r.report for r in results if r.mode == mode and r.ok}
        block = [f"mode: {mode}"]
        if reports:
            block.append(format_report_table(reports).rstrip())
        failed = [r for r in results if r.mode == mode and not r.ok]
        for r in failed:
            block.append(f"{r.model_id}: FAILED ({r.error})")
        blocks.append("\n".join(block))
    return payload, "\n\n".join(blocks) + "\n"


def run_pipeline(config: RunConfig) -> list[CellResult]:
    """Run every (model, mode) cell and write summary.json / summary.txt."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    results = [
        run_cell(config, model_id, mode)
        for model_id in config.models
        for mode in config.modes
    ]
    payload, text = summarize(results)
    payload["seed"] = config.seed
    payload["extra_op_count"] = config.extra_op_count
    payload["pairs"] = config.pairs
    _dump_json(config.out_dir / "summary.json", payload)
    (config.out_dir / "summary.txt").write_text(text)
    return results
