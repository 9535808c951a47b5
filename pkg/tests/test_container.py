"""Container format: round-trips, encapsulation, error taxonomy."""

import json

import numpy as np
import pytest

from conftest import make_conv_chain, make_fc_chain
from obflab.container import (
    MODEL_VERSION,
    MalformedManifestError,
    TruncatedWeightsError,
    VersionMismatchError,
    deserialize,
    serialize,
)
from obflab.interpreter import execute
from obflab.ir import OperatorKind, validate


def graphs_equal(a, b):
    return (
        a.nodes == b.nodes
        and a.input_specs == b.input_specs
        and a.output_ids == b.output_ids
    )


def stores_equal(a, b):
    if set(a) != set(b):
        return False
    return all(
        a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
    )


@pytest.mark.parametrize("encapsulated", [False, True], ids=["plain", "encapsulated"])
def test_round_trip_bit_exact(tmp_path, encapsulated):
    graph, store = make_conv_chain(seed=9)
    path = serialize(graph, store, tmp_path / "m", encapsulated=encapsulated)
    g2, s2 = deserialize(path)
    assert graphs_equal(graph, g2)
    assert stores_equal(store, s2)
    # A second serialization of the reloaded model is byte-identical.
    serialize(g2, s2, tmp_path / "m2", encapsulated=encapsulated)
    for name in sorted(p.name for p in path.iterdir()):
        assert (tmp_path / "m" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()


def test_round_trip_preserves_execution(tmp_path):
    graph, store = make_fc_chain([4, 6, 3], seed=2)
    path = serialize(graph, store, tmp_path / "m", encapsulated=True)
    g2, s2 = deserialize(path)
    x = np.random.default_rng(0).uniform(-1, 1, size=4).astype(np.float32)
    np.testing.assert_array_equal(execute(graph, store, x), execute(g2, s2, x))


def test_version_string(tmp_path):
    graph, store = make_fc_chain([2, 2])
    path = serialize(graph, store, tmp_path / "m")
    manifest = json.loads((path / "manifest.json").read_text())
    assert manifest["version"] == "dynamo-model/1" == MODEL_VERSION


def _string_values(obj):
    if isinstance(obj, str):
        yield obj
    elif isinstance(obj, dict):
        for v in obj.values():
            yield from _string_values(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _string_values(v)


def test_encapsulated_manifest_hides_kind_and_weights(tmp_path):
    graph, store = make_conv_chain(seed=4)
    path = serialize(graph, store, tmp_path / "m", encapsulated=True)
    manifest = json.loads((path / "manifest.json").read_text())
    kinds = {k.value for k in OperatorKind}
    assert not kinds & set(_string_values(manifest))
    assert "is_obfuscating" not in (path / "manifest.json").read_text()
    assert not (path / "weights.bin").exists()
    # No weight value leaks into the manifest bytes.
    manifest_bytes = (path / "manifest.json").read_bytes()
    for arr in store.values():
        assert arr.tobytes() not in manifest_bytes
    assert (path / "sidecar.bin").exists()


def test_plain_manifest_keeps_kinds(tmp_path):
    graph, store = make_fc_chain([2, 3])
    path = serialize(graph, store, tmp_path / "m", encapsulated=False)
    manifest = json.loads((path / "manifest.json").read_text())
    assert manifest["nodes"][0]["kind"] == "fully_connected"
    assert (path / "weights.bin").exists()


def test_missing_manifest(tmp_path):
    with pytest.raises(MalformedManifestError):
        deserialize(tmp_path / "nope")


def test_garbled_manifest(tmp_path):
    d = tmp_path / "m"
    d.mkdir()
    (d / "manifest.json").write_text("{not json")
    with pytest.raises(MalformedManifestError):
        deserialize(d)


def test_version_mismatch(tmp_path):
    graph, store = make_fc_chain([2, 2])
    path = serialize(graph, store, tmp_path / "m")
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["version"] = "dynamo-model/9"
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(VersionMismatchError):
        deserialize(path)


def test_truncated_weights(tmp_path):
    graph, store = make_fc_chain([4, 4])
    path = serialize(graph, store, tmp_path / "m")
    blob = (path / "weights.bin").read_bytes()
    (path / "weights.bin").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(TruncatedWeightsError):
        deserialize(path)


def test_weight_offsets_are_aligned(tmp_path):
    graph, store = make_conv_chain()
    path = serialize(graph, store, tmp_path / "m")
    manifest = json.loads((path / "manifest.json").read_text())
    for entry in manifest["weights"]["index"]:
        assert entry["offset"] % 4 == 0


def test_reloaded_model_still_validates(tmp_path):
    graph, store = make_conv_chain()
    g2, s2 = deserialize(serialize(graph, store, tmp_path / "m", encapsulated=True))
    assert validate(g2, s2).ok
