"""Scoring an attack reconstruction against the private ground truth.

Five reconstruction metrics, each a ratio with explicit counts so empty
denominators stay visible instead of collapsing to a misleading number:

  WER   weight extraction rate: share of the real weighted nodes whose
        extracted weights match the originals to within a small absolute
        tolerance
  WEE   weight extraction error: mean max-abs weight deviation, reported
        both over the nodes WER counted as extracted and over every
        comparable real weighted node
  OCA   operator classification accuracy over the real nodes
  TN    true negative rate: share of planted artifact nodes the attack
        flagged as artifacts
  NIR   name identification rate: share of the nodes the attack kept whose
        names map back to real nodes
  SS    structural score: one error point per real node that is missing,
        has its validity wrong, or is kept with the wrong operator kind

A sixth measure, theta, quantifies how far the shipped model's outputs
drift from the original model's outputs over random probes; protection is
only honest when it is numerically invisible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .explorer import RecoveredModel
from .interpreter import run
from .ir import Graph, WeightStore
from .static_obf import GroundTruthMap

WEIGHT_MATCH_TOLERANCE = 1e-4


@dataclass(frozen=True)
class Ratio:
    hits: int
    total: int

    @property
    def value(self) -> float | None:
        return self.hits / self.total if self.total else None

    def to_dict(self) -> dict:
        return {"hits": self.hits, "total": self.total, "value": self.value}

    @classmethod
    def from_dict(cls, payload: dict) -> "Ratio":
        return cls(hits=payload["hits"], total=payload["total"])


@dataclass(frozen=True)
class ThetaResult:
    value: float
    scaled: bool  # False when the reference outputs were all zero

    def to_dict(self) -> dict:
        return {"value": self.value, "scaled": self.scaled}

    @classmethod
    def from_dict(cls, payload: dict) -> "ThetaResult":
        return cls(value=payload["value"], scaled=payload["scaled"])


def _weight_diffs(recovered: RecoveredModel, truth: GroundTruthMap) -> dict[str, float | None]:
    """Max-abs deviation per real weighted node; None when nothing comparable."""
    by_name = {n.name: n for n in recovered.nodes}
    diffs: dict[str, float | None] = {}
    for name, t in truth.nodes.items():
        if t.is_obfuscating or t.weight_ref is None:
            continue
        rec = by_name.get(name)
        if rec is None or rec.predicted_obfuscating or rec.weights is None:
            diffs[name] = None
            continue
        true_w = truth.tensors[t.weight_ref]
        true_b = truth.tensors[t.bias_ref] if t.bias_ref else None
        if rec.weights.shape != true_w.shape:
            diffs[name] = None
            continue
        if (rec.bias is None) != (true_b is None) or (
            true_b is not None and rec.bias.shape != true_b.shape
        ):
            diffs[name] = None
            continue
        diff = float(np.max(np.abs(rec.weights.astype(np.float64) - true_w.astype(np.float64)), initial=0.0))
        if true_b is not None:
            diff = max(diff, float(np.max(np.abs(rec.bias.astype(np.float64) - true_b.astype(np.float64)), initial=0.0)))
        diffs[name] = diff
    return diffs


def compute_wer(recovered: RecoveredModel, truth: GroundTruthMap) -> Ratio:
    diffs = _weight_diffs(recovered, truth)
    hits = sum(1 for d in diffs.values() if d is not None and d < WEIGHT_MATCH_TOLERANCE)
    return Ratio(hits, len(diffs))


def compute_wee(recovered: RecoveredModel, truth: GroundTruthMap) -> tuple[float | None, float | None]:
    """(mean error over extracted nodes, mean error over all comparable nodes)."""
    diffs = _weight_diffs(recovered, truth)
    matched = [d for d in diffs.values() if d is not None and d < WEIGHT_MATCH_TOLERANCE]
    comparable = [d for d in diffs.values() if d is not None]
    wee_matched = float(np.mean(matched)) if matched else None
    wee_all = float(np.mean(comparable)) if comparable else None
    return wee_matched, wee_all


def compute_oca(recovered: RecoveredModel, truth: GroundTruthMap) -> Ratio:
    by_name = {n.name: n for n in recovered.nodes}
    hits = 0
    total = 0
    for name, t in truth.nodes.items():
        if t.is_obfuscating:
            continue
        total += 1
        rec = by_name.get(name)
        if (
            rec is not None
            and not rec.predicted_obfuscating
            and rec.predicted_kinds
            and rec.predicted_kinds[0] == t.kind.value
        ):
            hits += 1
    return Ratio(hits, total)


def compute_tn_rate(recovered: RecoveredModel, truth: GroundTruthMap) -> Ratio:
    by_name = {n.name: n for n in recovered.nodes}
    hits = 0
    total = 0
    for name, t in truth.nodes.items():
        if not t.is_obfuscating:
            continue
        total += 1
        rec = by_name.get(name)
        if rec is not None and rec.predicted_obfuscating:
            hits += 1
    return Ratio(hits, total)


def compute_nir(recovered: RecoveredModel, truth: GroundTruthMap) -> Ratio:
    kept = [n for n in recovered.nodes if not n.predicted_obfuscating]
    hits = sum(
        1
        for n in kept
        if n.name in truth.nodes and not truth.nodes[n.name].is_obfuscating
    )
    return Ratio(hits, len(kept))


def compute_ss(recovered: RecoveredModel, truth: GroundTruthMap) -> Ratio:
    by_name = {n.name: n for n in recovered.nodes}
    errors = 0
    for name, t in truth.nodes.items():
        rec = by_name.get(name)
        if rec is None:
            errors += 1
        elif rec.predicted_obfuscating != t.is_obfuscating:
            errors += 1
        elif not t.is_obfuscating and (
            not rec.predicted_kinds or rec.predicted_kinds[0] != t.kind.value
        ):
            errors += 1
    total = len(truth.nodes)
    return Ratio(total - errors, total)


def compute_theta(
    original: tuple[Graph, WeightStore],
    shipped: tuple[Graph, WeightStore],
    probes: int = 100,
    seed: int = 0,
) -> ThetaResult:
    """Largest output deviation of the shipped model, relative to the
    largest original output magnitude over the same probes."""
    orig_graph, orig_store = original
    ship_graph, ship_store = shipped
    rng = np.random.default_rng(seed)
    max_diff = 0.0
    max_ref = 0.0
    for _ in range(probes):
        inputs = [
            rng.uniform(-1.0, 1.0, size=spec).astype(np.float32)
            for spec in orig_graph.input_specs
        ]
        ref = run(orig_graph, orig_store, inputs).outputs
        got = run(ship_graph, ship_store, inputs).outputs
        for r, g in zip(ref, got):
            max_diff = max(max_diff, float(np.max(np.abs(g.astype(np.float64) - r.astype(np.float64)), initial=0.0)))
            max_ref = max(max_ref, float(np.max(np.abs(r.astype(np.float64)), initial=0.0)))
    if max_ref == 0.0:
        return ThetaResult(value=max_diff, scaled=False)
    return ThetaResult(value=max_diff / max_ref, scaled=True)


@dataclass(frozen=True)
class MetricsReport:
    wer: Ratio
    wee_matched: float | None
    wee_all: float | None
    oca: Ratio
    tn_rate: Ratio
    nir: Ratio
    ss: Ratio
    theta: ThetaResult | None = None

    def to_dict(self) -> dict:
        return {
            "wer": self.wer.to_dict(),
            "wee_matched": self.wee_matched,
            "wee_all": self.wee_all,
            "oca": self.oca.to_dict(),
            "tn_rate": self.tn_rate.to_dict(),
            "nir": self.nir.to_dict(),
            "ss": self.ss.to_dict(),
            "theta": self.theta.to_dict() if self.theta else None,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        return cls(
            wer=Ratio.from_dict(payload["wer"]),
            wee_matched=payload["wee_matched"],
            wee_all=payload["wee_all"],
            oca=Ratio.from_dict(payload["oca"]),
            tn_rate=Ratio.from_dict(payload["tn_rate"]),
            nir=Ratio.from_dict(payload["nir"]),
            ss=Ratio.from_dict(payload["ss"]),
            theta=ThetaResult.from_dict(payload["theta"]) if payload.get("theta") else None,
        )


def compute_metrics(
    recovered: RecoveredModel,
    truth: GroundTruthMap,
    theta: ThetaResult | None = None,
) -> MetricsReport:
    wee_matched, wee_all = compute_wee(recovered, truth)
    return MetricsReport(
        wer=compute_wer(recovered, truth),
        wee_matched=wee_matched,
        wee_all=wee_all,
        oca=compute_oca(recovered, truth),
        tn_rate=compute_tn_rate(recovered, truth),
        nir=compute_nir(recovered, truth),
        ss=compute_ss(recovered, truth),
        theta=theta,
    )


def _fmt_pct(value: float | None) -> str:
    return "n/a" if value is None else f"{100.0 * value:.1f}%"


def _fmt_num(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4g}"


_ROWS = (
    ("WER", lambda r: _fmt_pct(r.wer.value), lambda r: r.wer.value),
    ("WEE (extracted)", lambda r: _fmt_num(r.wee_matched), lambda r: r.wee_matched),
    ("WEE (all)", lambda r: _fmt_num(r.wee_all), lambda r: r.wee_all),
    ("OCA", lambda r: _fmt_pct(r.oca.value), lambda r: r.oca.value),
    ("TN rate", lambda r: _fmt_pct(r.tn_rate.value), lambda r: r.tn_rate.value),
    ("NIR", lambda r: _fmt_pct(r.nir.value), lambda r: r.nir.value),
    ("SS", lambda r: _fmt_pct(r.ss.value), lambda r: r.ss.value),
    ("theta", lambda r: _fmt_num(r.theta.value if r.theta else None),
     lambda r: r.theta.value if r.theta else None),
)

_PCT_ROWS = {"WER", "OCA", "TN rate", "NIR", "SS"}


def format_report_table(reports: dict[str, MetricsReport]) -> str:
    """Metric rows by model columns, with a trailing cross-model average."""
    columns = list(reports)
    header = ["metric"] + columns + ["Average"]
    lines = []
    rows = []
    for label, fmt, raw in _ROWS:
        cells = [fmt(reports[c]) for c in columns]
        values = [raw(reports[c]) for c in columns if raw(reports[c]) is not None]
        if not values:
            avg = "n/a"
        else:
            mean = sum(values) / len(values)
            avg = _fmt_pct(mean) if label in _PCT_ROWS else _fmt_num(mean)
        rows.append([label] + cells + [avg])
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    for row in [header] + rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
