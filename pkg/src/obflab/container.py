"""On-disk model container.

A model is a directory holding ``manifest.json`` plus raw little-endian
float32 weight bytes. Version field is ``dynamo-model/1``.

Plain layout: the manifest carries the full node records (kind, fused
activation, obfuscation flag) and a (key, offset, length) index into
``weights.bin``.

Encapsulated layout: the manifest carries structure only (ids, names,
input refs, params, weight ref keys); kinds, fused activations,
obfuscation flags and all weight bytes move to ``sidecar.json`` +
``sidecar.bin``, keyed by public name. This stands in for shipping the
semantics inside a compiled custom-op library: nothing in the manifest
names an operator kind or exposes a weight value.

Offsets are 4-byte aligned. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ir import (
    Activation,
    BoundParams,
    ConvParams,
    Graph,
    OperatorKind,
    OperatorNode,
    Params,
    PoolParams,
    ReshapeParams,
    WeightStore,
    store_tensor,
)

__all__ = [
    "MODEL_VERSION",
    "RECOVERED_VERSION",
    "ContainerError",
    "MalformedManifestError",
    "TruncatedWeightsError",
    "VersionMismatchError",
    "serialize",
    "deserialize",
    "write_weight_blob",
    "read_weight_blob",
    "write_json",
    "read_json",
]

MODEL_VERSION = "dynamo-model/1"
RECOVERED_VERSION = "recovered/1"

MANIFEST_FILE = "manifest.json"
WEIGHTS_FILE = "weights.bin"
SIDECAR_FILE = "sidecar.json"
SIDECAR_WEIGHTS_FILE = "sidecar.bin"


class ContainerError(Exception):
    pass


class MalformedManifestError(ContainerError):
    pass


class TruncatedWeightsError(ContainerError):
    pass


class VersionMismatchError(ContainerError):
    pass


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedManifestError(f"cannot read {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedManifestError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedManifestError(f"{path} must hold a JSON object")
    return payload


def write_weight_blob(dir_path: Path, filename: str, arrays: dict[str, np.ndarray]) -> list[dict]:
    """Concatenate float32 arrays into one file; return the manifest index."""
    index = []
    offset = 0
    chunks = []
    for key in sorted(arrays):
        arr = np.ascontiguousarray(arrays[key], dtype=np.float32)
        raw = arr.astype("<f4").tobytes()
        index.append(
            {"key": key, "offset": offset, "length": len(raw), "shape": list(arr.shape)}
        )
        chunks.append(raw)
        offset += len(raw)  # float32 chunks keep every offset 4-aligned
    (dir_path / filename).write_bytes(b"".join(chunks))
    return index


def read_weight_blob(dir_path: Path, filename: str, index: list[dict]) -> dict[str, np.ndarray]:
    blob_path = dir_path / filename
    try:
        raw = blob_path.read_bytes()
    except OSError as exc:
        raise TruncatedWeightsError(f"cannot read {blob_path}: {exc}") from exc
    out: dict[str, np.ndarray] = {}
    for entry in index:
        try:
            key, offset, length = entry["key"], int(entry["offset"]), int(entry["length"])
            shape = tuple(int(d) for d in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedManifestError(f"bad weight index entry {entry!r}") from exc
        if offset % 4 or length % 4:
            raise MalformedManifestError(f"weight entry {key!r} is not 4-byte aligned")
        if offset + length > len(raw):
            raise TruncatedWeightsError(
                f"{blob_path} holds {len(raw)} bytes, entry {key!r} needs {offset + length}"
            )
        arr = np.frombuffer(raw, dtype="<f4", count=length // 4, offset=offset)
        if int(np.prod(shape)) != arr.size:
            raise MalformedManifestError(f"weight entry {key!r} shape {shape} != {arr.size} values")
        out[key] = store_tensor(arr, shape)
    return out


def _params_to_json(params: Params) -> dict | None:
    if params is None:
        return None
    if isinstance(params, ConvParams):
        return {"type": "conv", **{k: list(v) for k, v in asdict(params).items()}}
    if isinstance(params, PoolParams):
        return {"type": "pool", "window": list(params.window), "stride": list(params.stride)}
    if isinstance(params, ReshapeParams):
        return {"type": "reshape", "shape": list(params.shape)}
    if isinstance(params, BoundParams):
        return {"type": "bound", "beta": params.beta}
    raise MalformedManifestError(f"unserializable params {params!r}")


def _params_from_json(payload: dict | None) -> Params:
    if payload is None:
        return None
    try:
        kind = payload["type"]
        if kind == "conv":
            return ConvParams(
                tuple(payload["stride"]), tuple(payload["padding"]), tuple(payload["dilation"])
            )
        if kind == "pool":
            return PoolParams(tuple(payload["window"]), tuple(payload["stride"]))
        if kind == "reshape":
            return ReshapeParams(tuple(payload["shape"]))
        if kind == "bound":
            return BoundParams(float(payload["beta"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifestError(f"bad params payload {payload!r}") from exc
    raise MalformedManifestError(f"unknown params type {payload!r}")


def _fused_to_json(fused: Activation | None) -> dict | None:
    if fused is None:
        return None
    return {"kind": fused.kind, "beta": fused.beta}


def _fused_from_json(payload: dict | None) -> Activation | None:
    if payload is None:
        return None
    try:
        return Activation(payload["kind"], float(payload["beta"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifestError(f"bad fused activation {payload!r}") from exc


def serialize(graph: Graph, store: WeightStore, path, encapsulated: bool = False) -> Path:
    """Write the model container directory; returns its path."""
    dir_path = Path(path)
    dir_path.mkdir(parents=True, exist_ok=True)

    nodes_public = []
    nodes_private = {}
    for node in graph.nodes:
        record = {
            "id": node.id,
            "name": node.public_name,
            "inputs": list(node.input_ids),
            "params": _params_to_json(node.params),
            "weight_ref": node.weight_ref,
            "bias_ref": node.bias_ref,
        }
        private = {
            "kind": node.kind.value,
            "fused": _fused_to_json(node.fused_activation),
            "is_obfuscating": node.is_obfuscating,
        }
        if encapsulated:
            nodes_private[node.public_name] = private
        else:
            record.update(private)
        nodes_public.append(record)

    manifest = {
        "version": MODEL_VERSION,
        "encapsulated": encapsulated,
        "input_specs": [list(s) for s in graph.input_specs],
        "output_ids": list(graph.output_ids),
        "nodes": nodes_public,
    }

    if encapsulated:
        index = write_weight_blob(dir_path, SIDECAR_WEIGHTS_FILE, store)
        sidecar = {
            "version": MODEL_VERSION,
            "nodes": nodes_private,
            "weights": {"file": SIDECAR_WEIGHTS_FILE, "index": index},
        }
        write_json(dir_path / SIDECAR_FILE, sidecar)
        (dir_path / WEIGHTS_FILE).unlink(missing_ok=True)
    else:
        index = write_weight_blob(dir_path, WEIGHTS_FILE, store)
        manifest["weights"] = {"file": WEIGHTS_FILE, "index": index}
        (dir_path / SIDECAR_FILE).unlink(missing_ok=True)
        (dir_path / SIDECAR_WEIGHTS_FILE).unlink(missing_ok=True)

    write_json(dir_path / MANIFEST_FILE, manifest)
    return dir_path


def deserialize(path) -> tuple[Graph, WeightStore]:
    dir_path = Path(path)
    manifest = read_json(dir_path / MANIFEST_FILE)

    version = manifest.get("version")
    if version != MODEL_VERSION:
        raise VersionMismatchError(f"expected version {MODEL_VERSION!r}, found {version!r}")

    encapsulated = bool(manifest.get("encapsulated", False))
    if encapsulated:
        sidecar = read_json(dir_path / SIDECAR_FILE)
        if sidecar.get("version") != MODEL_VERSION:
            raise VersionMismatchError(f"sidecar version {sidecar.get('version')!r} is wrong")
        private_nodes = sidecar.get("nodes", {})
        weights_section = sidecar.get("weights", {})
        weights_dir_file = SIDECAR_WEIGHTS_FILE
    else:
        private_nodes = {}
        weights_section = manifest.get("weights", {})
        weights_dir_file = WEIGHTS_FILE

    try:
        index = weights_section["index"]
        blob_file = weights_section.get("file", weights_dir_file)
    except (KeyError, TypeError) as exc:
        raise MalformedManifestError("manifest has no weight index") from exc
    store = read_weight_blob(dir_path, blob_file, index)

    nodes = []
    try:
        for record in manifest["nodes"]:
            private = private_nodes.get(record["name"], record) if encapsulated else record
            nodes.append(
                OperatorNode(
                    id=int(record["id"]),
                    public_name=record["name"],
                    kind=OperatorKind(private["kind"]),
                    input_ids=tuple(int(r) for r in record["inputs"]),
                    params=_params_from_json(record.get("params")),
                    weight_ref=record.get("weight_ref"),
                    bias_ref=record.get("bias_ref"),
                    fused_activation=_fused_from_json(private.get("fused")),
                    is_obfuscating=bool(private.get("is_obfuscating", False)),
                )
            )
        graph = Graph(
            nodes=tuple(nodes),
            input_specs=tuple(tuple(int(d) for d in s) for s in manifest["input_specs"]),
            output_ids=tuple(int(i) for i in manifest["output_ids"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifestError(f"bad node record: {exc}") from exc
    return graph, store
