"""Binary model format.

Layout (all integers little-endian):

    bytes 0..3   magic "NNSG"
    bytes 4..5   format version, u16
    bytes 6..9   length of the JSON header, u32
    ...          canonical JSON header (sorted keys, no whitespace)
    ...          tensor blobs: u32 byte length + raw float32 data,
                 one per manifest entry, in (layer id, slot name) order

The JSON header stores layer specs, metadata, and a tensor manifest with
shapes, so deserialization is self-contained and strict: any truncation,
magic/version mismatch, or trailing garbage raises SerializationError.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from neunets.errors import SerializationError
from neunets.ir.graph import NetworkGraph
from neunets.ir.layers import LayerSpec

MAGIC = b"NNSG"
VERSION = 1


def serialize(graph: NetworkGraph) -> bytes:
    manifest = []
    blobs = []
    for lid in sorted(graph.weights):
        for slot in sorted(graph.weights[lid]):
            tensor = np.ascontiguousarray(graph.weights[lid][slot], dtype="<f4")
            manifest.append({"layer": lid, "slot": slot, "shape": list(tensor.shape)})
            blobs.append(tensor.tobytes())
    header = {
        "layers": [spec.to_dict() for spec in graph.layers],
        "metadata": graph.metadata,
        "tensors": manifest,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack("<I", len(payload))
    out += payload
    for blob in blobs:
        out += struct.pack("<I", len(blob))
        out += blob
    return bytes(out)


def deserialize(data: bytes) -> NetworkGraph:
    if len(data) < 10:
        raise SerializationError("payload shorter than the fixed header")
    if data[:4] != MAGIC:
        raise SerializationError(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise SerializationError(f"unsupported format version {version}")
    (json_len,) = struct.unpack_from("<I", data, 6)
    end = 10 + json_len
    if end > len(data):
        raise SerializationError("JSON header truncated")
    try:
        header = json.loads(data[10:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SerializationError(f"corrupt JSON header: {exc}") from exc
    try:
        layers = [LayerSpec.from_dict(d) for d in header["layers"]]
        metadata = header["metadata"]
        manifest = header["tensors"]
    except (KeyError, TypeError) as exc:
        raise SerializationError(f"malformed header: {exc}") from exc
    if "input_shape" in metadata:
        metadata["input_shape"] = tuple(metadata["input_shape"])

    weights: dict[int, dict[str, np.ndarray]] = {}
    offset = end
    for entry in manifest:
        if offset + 4 > len(data):
            raise SerializationError("tensor length field truncated")
        (nbytes,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + nbytes > len(data):
            raise SerializationError(
                f"tensor for layer {entry['layer']}/{entry['slot']} truncated"
            )
        shape = tuple(int(d) for d in entry["shape"])
        expected = 4 * int(np.prod(shape)) if shape else 4
        if nbytes != expected:
            raise SerializationError(
                f"tensor byte length {nbytes} does not match shape {shape}"
            )
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset)
        weights.setdefault(int(entry["layer"]), {})[entry["slot"]] = (
            arr.reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(data):
        raise SerializationError(f"{len(data) - offset} trailing bytes after tensors")
    return NetworkGraph(layers=layers, weights=weights, metadata=metadata)


def save_model(graph: NetworkGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(graph))


def load_model(path) -> NetworkGraph:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
