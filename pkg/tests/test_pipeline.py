"""Pipeline grid: cell flow, file layout, isolation, reproducibility."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

import obflab.pipeline as pipeline
from obflab.container import VersionMismatchError
from obflab.metrics import Ratio
from obflab.pipeline import (
    MODES,
    CellResult,
    RunConfig,
    load_cell_report,
    obfuscate_model,
    run_cell,
    run_pipeline,
    summarize,
)
from obflab.zoo import ZooSpec, build_model


def small_config(out_dir, **kw) -> RunConfig:
    defaults = dict(models=("mlp-lenet",), modes=MODES, seed=3, extra_op_count=6)
    defaults.update(kw)
    return RunConfig(out_dir=out_dir, **defaults)


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestRunConfig:
    def test_rejects_unknown_model(self, tmp_path):
        with pytest.raises(ValueError):
            RunConfig(out_dir=tmp_path, models=("resnet50",))

    def test_rejects_unknown_mode(self, tmp_path):
        with pytest.raises(ValueError):
            RunConfig(out_dir=tmp_path, modes=("dynamic",))

    def test_rejects_empty_grid(self, tmp_path):
        with pytest.raises(ValueError):
            RunConfig(out_dir=tmp_path, models=())

    def test_rejects_bad_counts(self, tmp_path):
        with pytest.raises(ValueError):
            RunConfig(out_dir=tmp_path, extra_op_count=-1)
        with pytest.raises(ValueError):
            RunConfig(out_dir=tmp_path, pairs=0)

    def test_out_dir_becomes_path(self, tmp_path):
        config = RunConfig(out_dir=str(tmp_path))
        assert isinstance(config.out_dir, Path)


class TestObfuscateModel:
    def test_mode_none_is_identity(self):
        graph, store = build_model(ZooSpec.for_model("mlp-lenet", 0))
        g2, s2, truth, plan = obfuscate_model(
            graph, store, "none",
            static_seed=1, couple_seed=2, extra_op_count=6, pairs=None,
        )
        assert g2 == graph
        assert plan is None
        assert set(truth.nodes) == {n.public_name for n in graph.nodes}

    def test_mode_static_grows_and_renames(self):
        graph, store = build_model(ZooSpec.for_model("mlp-lenet", 0))
        g2, _, truth, plan = obfuscate_model(
            graph, store, "static",
            static_seed=1, couple_seed=2, extra_op_count=6, pairs=None,
        )
        assert len(g2.nodes) == len(graph.nodes) + 6
        assert plan is None
        originals = {n.public_name for n in graph.nodes}
        assert originals.isdisjoint(n.public_name for n in g2.nodes)
        assert sum(1 for t in truth.nodes.values() if t.is_obfuscating) == 6

    def test_mode_coupled_returns_plan(self):
        graph, store = build_model(ZooSpec.for_model("mlp-lenet", 0))
        g2, _, _, plan = obfuscate_model(
            graph, store, "static+couple",
            static_seed=1, couple_seed=2, extra_op_count=6, pairs=None,
        )
        assert plan is not None
        # default rounds: one per node of the protected (grown) graph
        assert plan.rounds == len(g2.nodes)
        assert any(plan.applied)

    def test_explicit_pair_budget(self):
        graph, store = build_model(ZooSpec.for_model("mlp-lenet", 0))
        _, _, _, plan = obfuscate_model(
            graph, store, "static+couple",
            static_seed=1, couple_seed=2, extra_op_count=6, pairs=4,
        )
        assert plan.rounds == 4


class TestRunCell:
    def test_static_cell_writes_everything(self, tmp_path):
        config = small_config(tmp_path)
        result = run_cell(config, "mlp-lenet", "static")
        assert result.ok
        d = result.cell_dir
        assert (d / "model" / "manifest.json").exists()
        assert (d / "model" / "sidecar.json").exists()  # encapsulated shipping
        assert not (d / "model" / "weights.bin").exists()
        assert (d / "oracle" / "oracle.json").exists()
        assert (d / "recovered" / "recovered.json").exists()
        assert (d / "report.txt").read_text().startswith("metric")
        assert not (d / "plan.json").exists()

        payload = load_cell_report(d)
        assert payload["model"] == "mlp-lenet"
        assert payload["mode"] == "static"
        assert payload["attack"]["within_budget"]
        assert payload["metrics"]["wer"]["value"] == 1.0
        assert payload["metrics"]["theta"] == {"value": 0.0, "scaled": True}

    def test_none_cell_ships_plain(self, tmp_path):
        config = small_config(tmp_path)
        result = run_cell(config, "mlp-lenet", "none")
        assert result.ok
        assert (result.cell_dir / "model" / "weights.bin").exists()
        assert not (result.cell_dir / "model" / "sidecar.json").exists()
        assert result.report.tn_rate == Ratio(0, 0)

    def test_coupled_cell_writes_plan_and_degrades(self, tmp_path):
        config = small_config(tmp_path)
        static = run_cell(config, "mlp-lenet", "static")
        coupled = run_cell(config, "mlp-lenet", "static+couple")
        assert coupled.ok
        assert (coupled.cell_dir / "plan.json").exists()
        assert coupled.report.nir.value < static.report.nir.value
        assert coupled.report.ss.value < static.report.ss.value
        assert coupled.report.wer.value < 1.0
        assert coupled.report.theta.value <= 1e-5

    def test_report_version_guard(self, tmp_path):
        config = small_config(tmp_path)
        result = run_cell(config, "mlp-lenet", "none")
        path = result.cell_dir / "report.json"
        payload = json.loads(path.read_text())
        payload["version"] = "dynamo-report/9"
        path.write_text(json.dumps(payload))
        with pytest.raises(VersionMismatchError):
            load_cell_report(path)


class TestPipeline:
    def test_grid_runs_and_summarizes(self, tmp_path):
        config = small_config(tmp_path / "run")
        results = run_pipeline(config)
        assert [r.mode for r in results] == list(MODES)
        assert all(r.ok for r in results)
        summary = json.loads((config.out_dir / "summary.json").read_text())
        assert summary["seed"] == config.seed
        assert set(summary["cells"]["mlp-lenet"]) == set(MODES)
        text = (config.out_dir / "summary.txt").read_text()
        for mode in MODES:
            assert f"mode: {mode}" in text

    def test_cell_failure_is_isolated(self, tmp_path, monkeypatch):
        real = pipeline.build_model

        def flaky(spec):
            if spec.model_id == "cnn-relu6":
                raise RuntimeError("boom")
            return real(spec)

        monkeypatch.setattr(pipeline, "build_model", flaky)
        config = RunConfig(
            out_dir=tmp_path,
            models=("mlp-lenet", "cnn-relu6"),
            modes=("none",),
            seed=1,
            extra_op_count=2,
        )
        results = run_pipeline(config)
        by_model = {r.model_id: r for r in results}
        assert by_model["mlp-lenet"].ok
        assert not by_model["cnn-relu6"].ok
        assert "RuntimeError: boom" in by_model["cnn-relu6"].error
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["cells"]["cnn-relu6"]["none"] == {"error": "RuntimeError: boom"}
        assert "FAILED" in (tmp_path / "summary.txt").read_text()

    def test_double_run_is_byte_identical(self, tmp_path):
        config_a = small_config(tmp_path / "a", seed=11)
        config_b = small_config(tmp_path / "b", seed=11)
        run_pipeline(config_a)
        run_pipeline(config_b)
        a = tree_bytes(tmp_path / "a")
        b = tree_bytes(tmp_path / "b")
        assert a.keys() == b.keys()
        assert all(a[k] == b[k] for k in a)

    def test_seed_changes_artifacts(self, tmp_path):
        run_pipeline(small_config(tmp_path / "a", seed=1))
        run_pipeline(small_config(tmp_path / "b", seed=2))
        a = (tmp_path / "a" / "summary.json").read_bytes()
        b = (tmp_path / "b" / "summary.json").read_bytes()
        assert a != b


class TestSummarize:
    def test_table_per_mode_with_failures(self, tmp_path):
        ok = run_cell(small_config(tmp_path), "mlp-lenet", "none")
        broken = CellResult("cnn-relu6", "none", tmp_path, error="ValueError: nope")
        payload, text = summarize([ok, broken])
        assert payload["cells"]["mlp-lenet"]["none"]["metrics"]["wer"]["value"] == 1.0
        assert payload["cells"]["cnn-relu6"]["none"] == {"error": "ValueError: nope"}
        assert "cnn-relu6: FAILED" in text
        assert "mlp-lenet" in text.splitlines()[1]
