"""Reconstruction metrics: ratios, weight comparison, output deviation, table."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from conftest import fc_node, make_fc_chain, obf_node, seed_fc_weights, seed_obf_weights
from obflab.coupling import apply_pair, find_coupled_candidates
from obflab.explorer import AttackContext, RecoveredModel, RecoveredNode, run_attack
from obflab.ir import Graph, OperatorKind, input_ref, store_tensor, validate
from obflab.metrics import (
    MetricsReport,
    Ratio,
    ThetaResult,
    compute_metrics,
    compute_nir,
    compute_oca,
    compute_ss,
    compute_theta,
    compute_tn_rate,
    compute_wee,
    compute_wer,
    format_report_table,
)
from obflab.static_obf import GroundTruthMap, NodeTruth, StaticObfConfig, apply_static


def tiny_truth() -> GroundTruthMap:
    tensors = {
        "dense/w": store_tensor(np.arange(6).reshape(2, 3) / 10.0),
        "dense/b": store_tensor(np.array([0.1, -0.2, 0.3])),
        "pad/w": store_tensor(np.eye(3)),
        "pad/b": store_tensor(np.zeros(3)),
    }
    nodes = {
        "dense": NodeTruth(OperatorKind.FULLY_CONNECTED, False, "dense/w", "dense/b"),
        "act": NodeTruth(OperatorKind.RELU, False, None, None),
        "pad": NodeTruth(OperatorKind.OBF_LINEAR, True, "pad/w", "pad/b"),
    }
    return GroundTruthMap(nodes=nodes, tensors=tensors)


def rec(name, obf=False, kinds=("fully_connected",), weights=None, bias=None):
    return RecoveredNode(
        name=name,
        predicted_obfuscating=obf,
        predicted_kinds=tuple(kinds),
        input_names=(),
        weights=weights,
        bias=bias,
        params=None,
    )


def perfect_recovery(truth: GroundTruthMap) -> RecoveredModel:
    nodes = (
        rec("dense", weights=truth.tensors["dense/w"].copy(), bias=truth.tensors["dense/b"].copy()),
        rec("act", kinds=("relu",)),
        rec("pad", obf=True, weights=truth.tensors["pad/w"].copy(), bias=truth.tensors["pad/b"].copy()),
    )
    return RecoveredModel(nodes=nodes, output_names=("dense",))


def swap_node(model: RecoveredModel, node: RecoveredNode) -> RecoveredModel:
    nodes = tuple(node if n.name == node.name else n for n in model.nodes)
    return RecoveredModel(nodes=nodes, output_names=model.output_names)


class TestRatio:
    def test_value(self):
        assert Ratio(1, 2).value == 0.5
        assert Ratio(0, 3).value == 0.0

    def test_empty_denominator_is_none(self):
        assert Ratio(0, 0).value is None

    def test_dict_round_trip(self):
        r = Ratio(3, 7)
        assert Ratio.from_dict(r.to_dict()) == r


class TestWeightMetrics:
    def test_perfect_extraction(self):
        truth = tiny_truth()
        model = perfect_recovery(truth)
        assert compute_wer(model, truth) == Ratio(1, 1)
        assert compute_wee(model, truth) == (0.0, 0.0)

    def test_near_match_counts_with_residual_error(self):
        truth = tiny_truth()
        shifted = truth.tensors["dense/w"] + np.float32(5e-5)
        model = swap_node(
            perfect_recovery(truth),
            rec("dense", weights=shifted, bias=truth.tensors["dense/b"].copy()),
        )
        assert compute_wer(model, truth) == Ratio(1, 1)
        matched, everything = compute_wee(model, truth)
        assert matched == pytest.approx(5e-5, rel=1e-3)
        assert everything == matched

    def test_scaled_weights_miss(self):
        truth = tiny_truth()
        model = swap_node(
            perfect_recovery(truth),
            rec("dense",
                weights=truth.tensors["dense/w"] * np.float32(2.0),
                bias=truth.tensors["dense/b"] * np.float32(2.0)),
        )
        assert compute_wer(model, truth) == Ratio(0, 1)
        matched, everything = compute_wee(model, truth)
        assert matched is None
        # doubling leaves a gap equal to the largest original magnitude
        assert everything == pytest.approx(0.5)

    def test_node_predicted_obfuscating_is_not_extracted(self):
        truth = tiny_truth()
        model = swap_node(
            perfect_recovery(truth),
            rec("dense", obf=True, weights=truth.tensors["dense/w"].copy(),
                bias=truth.tensors["dense/b"].copy()),
        )
        assert compute_wer(model, truth) == Ratio(0, 1)
        assert compute_wee(model, truth) == (None, None)

    def test_shape_mismatch_is_not_comparable(self):
        truth = tiny_truth()
        model = swap_node(
            perfect_recovery(truth),
            rec("dense", weights=np.zeros((3, 2), dtype=np.float32),
                bias=truth.tensors["dense/b"].copy()),
        )
        assert compute_wer(model, truth) == Ratio(0, 1)
        assert compute_wee(model, truth) == (None, None)

    def test_bias_presence_mismatch_is_not_comparable(self):
        tensors = {"solo/w": store_tensor(np.eye(2))}
        truth = GroundTruthMap(
            nodes={"solo": NodeTruth(OperatorKind.FULLY_CONNECTED, False, "solo/w", None)},
            tensors=tensors,
        )
        model = RecoveredModel(
            nodes=(rec("solo", weights=np.eye(2, dtype=np.float32),
                       bias=np.zeros(2, dtype=np.float32)),),
            output_names=("solo",),
        )
        assert compute_wer(model, truth) == Ratio(0, 1)


class TestClassificationMetrics:
    def test_perfect_scores(self):
        truth = tiny_truth()
        model = perfect_recovery(truth)
        assert compute_oca(model, truth) == Ratio(2, 2)
        assert compute_tn_rate(model, truth) == Ratio(1, 1)
        assert compute_nir(model, truth) == Ratio(2, 2)
        assert compute_ss(model, truth) == Ratio(3, 3)

    def test_artifact_kept_as_valid(self):
        truth = tiny_truth()
        model = swap_node(perfect_recovery(truth), rec("pad", obf=False))
        assert compute_tn_rate(model, truth) == Ratio(0, 1)
        assert compute_nir(model, truth) == Ratio(2, 3)
        assert compute_ss(model, truth) == Ratio(2, 3)
        assert compute_oca(model, truth) == Ratio(2, 2)

    def test_wrong_kind_on_valid_node(self):
        truth = tiny_truth()
        model = swap_node(perfect_recovery(truth), rec("dense", kinds=("conv2d", "fully_connected")))
        assert compute_oca(model, truth) == Ratio(1, 2)
        assert compute_ss(model, truth) == Ratio(2, 3)

    def test_missing_node(self):
        truth = tiny_truth()
        base = perfect_recovery(truth)
        model = RecoveredModel(
            nodes=tuple(n for n in base.nodes if n.name != "act"),
            output_names=base.output_names,
        )
        assert compute_oca(model, truth) == Ratio(1, 2)
        assert compute_ss(model, truth) == Ratio(2, 3)
        assert compute_nir(model, truth) == Ratio(1, 1)

    def test_unidentified_kind_counts_against(self):
        truth = tiny_truth()
        model = swap_node(perfect_recovery(truth), rec("act", kinds=()))
        assert compute_oca(model, truth) == Ratio(1, 2)
        assert compute_ss(model, truth) == Ratio(2, 3)

    def test_phantom_node_dilutes_identification(self):
        truth = tiny_truth()
        base = perfect_recovery(truth)
        model = RecoveredModel(
            nodes=base.nodes + (rec("ghost", kinds=("relu",)),),
            output_names=base.output_names,
        )
        assert compute_nir(model, truth) == Ratio(2, 3)
        assert compute_ss(model, truth) == Ratio(3, 3)

    def test_no_artifacts_means_empty_tn(self):
        truth = tiny_truth()
        truth.nodes.pop("pad")
        base = perfect_recovery(tiny_truth())
        assert compute_tn_rate(base, truth) == Ratio(0, 0)
        assert compute_tn_rate(base, truth).value is None


class TestTheta:
    def test_identical_models(self):
        graph, store = make_fc_chain([4, 6, 3])
        result = compute_theta((graph, store), (graph, store), probes=10)
        assert result == ThetaResult(0.0, scaled=True)

    def test_static_obfuscation_is_invisible(self):
        graph, store = make_fc_chain([4, 6, 3])
        obf_graph, obf_store, _ = apply_static(
            graph, store, StaticObfConfig(seed=5, extra_op_count=4)
        )
        result = compute_theta((graph, store), (obf_graph, obf_store), probes=20)
        assert result.scaled
        assert result.value == 0.0

    def test_doubled_weights_deviate_by_exactly_one(self):
        graph, store = make_fc_chain([3, 2])
        shipped = dict(store)
        shipped["fc0/w"] = store["fc0/w"] * np.float32(2.0)
        shipped["fc0/b"] = store["fc0/b"] * np.float32(2.0)
        result = compute_theta((graph, store), (graph, shipped), probes=10)
        assert result.scaled
        assert result.value == 1.0

    def test_zero_reference_sets_unscaled_flag(self):
        graph, store = make_fc_chain([3, 2])
        zeros = {k: np.zeros_like(v) for k, v in store.items()}
        result = compute_theta((graph, zeros), (graph, zeros), probes=5)
        assert result == ThetaResult(0.0, scaled=False)


def chain_with_identity():
    """fc0 -> identity artifact -> fc1, the smallest graph worth attacking."""
    nodes = (
        fc_node(0, "fc0", input_ref(0), "fc0/w", "fc0/b"),
        obf_node(1, "mid", 0, "mid/w", "mid/b"),
        fc_node(2, "fc1", 1, "fc1/w", "fc1/b"),
    )
    store = {}
    seed_fc_weights(store, "fc0", 4, 5, seed=3)
    seed_obf_weights(store, "mid", 5)
    seed_fc_weights(store, "fc1", 5, 3, seed=4)
    graph = Graph(nodes, ((4,),), (2,))
    assert validate(graph, store).ok
    return graph, store


def truth_for(graph, store) -> GroundTruthMap:
    from obflab.static_obf import ground_truth_from

    return ground_truth_from(graph, store)


class TestEndToEnd:
    def test_static_attack_scores_perfectly(self):
        graph, store = chain_with_identity()
        truth = truth_for(graph, store)
        model, _ = run_attack(AttackContext(graph, store))
        report = compute_metrics(model, truth)
        assert report.wer == Ratio(2, 2)
        assert report.wee_matched == 0.0
        assert report.wee_all == 0.0
        assert report.oca == Ratio(2, 2)
        assert report.tn_rate == Ratio(1, 1)
        assert report.nir == Ratio(2, 2)
        assert report.ss == Ratio(3, 3)
        assert report.theta is None

    def test_coupled_attack_degrades(self):
        graph, store = chain_with_identity()
        truth = truth_for(graph, store)
        pair = replace(find_coupled_candidates(graph, 0)[0], scale=0.5)
        graph, store = apply_pair(graph, store, pair)

        model, _ = run_attack(AttackContext(graph, store))
        report = compute_metrics(model, truth)
        # the load-bearing artifact survives removal probing
        assert report.tn_rate == Ratio(0, 1)
        assert report.nir == Ratio(2, 3)
        assert report.ss == Ratio(2, 3)
        # fc0 extracts at half strength, fc1 exactly
        assert report.wer == Ratio(1, 2)
        assert report.oca == Ratio(2, 2)
        assert report.wee_matched == 0.0
        w0 = truth.tensors["fc0/w"].astype(np.float64)
        b0 = truth.tensors["fc0/b"].astype(np.float64)
        halved_gap = 0.5 * max(np.abs(w0).max(), np.abs(b0).max())
        assert report.wee_all == pytest.approx(halved_gap / 2)


class TestReportAndTable:
    def sample(self) -> MetricsReport:
        return MetricsReport(
            wer=Ratio(1, 2),
            wee_matched=0.0,
            wee_all=0.125,
            oca=Ratio(2, 2),
            tn_rate=Ratio(0, 1),
            nir=Ratio(2, 3),
            ss=Ratio(2, 3),
            theta=ThetaResult(3.25e-07, scaled=True),
        )

    def test_dict_round_trip_through_json(self):
        report = self.sample()
        payload = json.loads(json.dumps(report.to_dict()))
        assert MetricsReport.from_dict(payload) == report

    def test_round_trip_without_theta(self):
        report = MetricsReport(
            wer=Ratio(0, 0), wee_matched=None, wee_all=None,
            oca=Ratio(0, 0), tn_rate=Ratio(0, 0), nir=Ratio(0, 0), ss=Ratio(0, 0),
        )
        payload = json.loads(json.dumps(report.to_dict()))
        assert MetricsReport.from_dict(payload) == report

    def test_compute_metrics_matches_parts(self):
        truth = tiny_truth()
        model = perfect_recovery(truth)
        report = compute_metrics(model, truth, theta=ThetaResult(0.0, True))
        assert report.wer == compute_wer(model, truth)
        assert report.oca == compute_oca(model, truth)
        assert report.theta == ThetaResult(0.0, True)

    def test_table_layout_and_average(self):
        perfect = MetricsReport(
            wer=Ratio(2, 2), wee_matched=0.0, wee_all=0.0,
            oca=Ratio(2, 2), tn_rate=Ratio(1, 1), nir=Ratio(2, 2), ss=Ratio(3, 3),
            theta=ThetaResult(0.0, True),
        )
        table = format_report_table({"model-a": perfect, "model-b": self.sample()})
        lines = table.splitlines()
        assert lines[0].split() == ["metric", "model-a", "model-b", "Average"]
        wer_line = next(line for line in lines if line.startswith("WER"))
        assert "100.0%" in wer_line and "50.0%" in wer_line and "75.0%" in wer_line
        ss_line = next(line for line in lines if line.startswith("SS"))
        assert "83.3%" in ss_line  # mean of 100% and 66.7%

    def test_table_renders_empty_denominators_as_na(self):
        empty = MetricsReport(
            wer=Ratio(0, 0), wee_matched=None, wee_all=None,
            oca=Ratio(0, 0), tn_rate=Ratio(0, 0), nir=Ratio(0, 0), ss=Ratio(0, 0),
        )
        table = format_report_table({"only": empty})
        for line in table.splitlines()[1:]:
            assert line.split()[-2:] == ["n/a", "n/a"]
