"""Single-file checkpoints of a CMN state.

Layout::

    b"CMNCKPT\\0" | u64 little-endian header length | UTF-8 JSON manifest | tensor payload

The manifest records the schema version, the network structure, the config
digest, and for each tensor its name, shape, dtype, byte offset and length.
Tensors are stored as raw little-endian buffers. A sha256 over the payload
guards against truncation and bit rot; a bad file never yields a partial
state.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from . import model as M
from .layers import LayerSpec, NetworkParams, NetworkSpec
from .tensor import Tensor
from .transfer import make_connectors

MAGIC = b"CMNCKPT\0"
SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


class IntegrityError(CheckpointError):
    """The file is truncated, corrupted, or its manifest does not parse."""


class VersionError(CheckpointError):
    pass


def _spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "input_shape": list(spec.input_shape),
        "layers": [[l.kind, l.n_in, l.n_out, l.kernel] for l in spec.layers],
        "head_dim": spec.head_dim,
    }


def _spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(tuple(d["input_shape"]), tuple(LayerSpec(*row) for row in d["layers"]), int(d["head_dim"]))


def _named_tensors(state: M.CmnState) -> list[tuple[str, Tensor]]:
    out = []
    for prefix, net in (("l_net", state.l_params), ("l_old", state.l_old), ("s_net", state.s_params)):
        if net is not None:
            out += [(f"{prefix}.{n}", t) for n, t in net.named_parameters()]
    for i, conn in enumerate(state.cells):
        out += [(f"cells.{i}.{n}", t) for n, t in conn.named_parameters()]
    return out


def save_checkpoint(state: M.CmnState, path, config_digest: str = "") -> Path:
    """Write ``state`` to ``path`` atomically (temp file, then rename)."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, t in _named_tensors(state):
        buf = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<")).tobytes()
        entries.append(
            {"name": name, "shape": list(t.shape), "dtype": t.data.dtype.name, "offset": offset, "nbytes": len(buf)}
        )
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_digest": config_digest,
        "dtype": np.dtype(state.dtype).name,
        "strategy": state.strategy,
        "k": state.k,
        "phase": state.phase,
        "class_counts": state.class_counts,
        "body": _spec_to_dict(state.body),
        "nets": {
            name: None if net is None else _spec_to_dict(net.spec)
            for name, net in (("l_net", state.l_params), ("l_old", state.l_old), ("s_net", state.s_params))
        },
        "n_cells": len(state.cells),
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
    return path


def read_manifest(path) -> tuple[dict, bytes]:
    """Parse and verify a checkpoint file; returns the manifest and the raw payload."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise IntegrityError(f"{path}: not a checkpoint (bad magic or truncated header)")
    (n,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    if start + n > len(data):
        raise IntegrityError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[start : start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: corrupt manifest ({exc})") from None
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionError(f"{path}: schema version {version}, this build reads {SCHEMA_VERSION}")
    payload = data[start + n :]
    expected = sum(e["nbytes"] for e in manifest["tensors"])
    if len(payload) != expected:
        raise IntegrityError(f"{path}: payload is {len(payload)} bytes, manifest lists {expected}")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise IntegrityError(f"{path}: payload checksum mismatch")
    return manifest, payload


def _decode(payload: bytes, entry: dict) -> np.ndarray:
    dt = np.dtype(entry["dtype"]).newbyteorder("<")
    arr = np.frombuffer(payload, dtype=dt, count=int(np.prod(entry["shape"], dtype=np.int64)), offset=entry["offset"])
    return arr.reshape(entry["shape"]).astype(dt.newbyteorder("="))


def _net(prefix: str, spec_dict: dict | None, arrays: dict[str, np.ndarray]) -> NetworkParams | None:
    if spec_dict is None:
        return None
    spec = _spec_from_dict(spec_dict)
    names = [n for n in arrays if n.startswith(prefix + ".")]
    try:
        return NetworkParams(spec, {n[len(prefix) + 1 :]: Tensor(arrays[n]) for n in names})
    except ValueError as exc:
        raise CheckpointError(f"{prefix}: {exc}") from None


def load_checkpoint(path) -> tuple[M.CmnState, dict]:
    """Rebuild the saved state; every parameter comes back bit-identical."""
    manifest, payload = read_manifest(path)
    arrays = {e["name"]: _decode(payload, e) for e in manifest["tensors"]}
    dtype = np.dtype(manifest["dtype"]).type
    state = M.CmnState(
        body=_spec_from_dict(manifest["body"]),
        dtype=dtype,
        strategy=manifest["strategy"],
        k=int(manifest["k"]),
        class_counts=[int(c) for c in manifest["class_counts"]],
        phase=manifest["phase"],
    )
    nets = manifest["nets"]
    state.l_params = _net("l_net", nets["l_net"], arrays)
    state.l_old = _net("l_old", nets["l_old"], arrays)
    state.s_params = _net("s_net", nets["s_net"], arrays)
    if manifest["n_cells"]:
        reader = state.l_old if state.phase == "consolidate" else state.l_params
        if reader is None or state.s_params is None:
            raise CheckpointError("connectors saved without both networks")
        # rebuild the structure with a throwaway seed, then overwrite every value
        state.cells = make_connectors(state.strategy, reader.spec, state.s_params.spec, 0, dtype)
        if len(state.cells) != manifest["n_cells"]:
            raise CheckpointError(f"expected {manifest['n_cells']} connectors, structure gives {len(state.cells)}")
        for i, conn in enumerate(state.cells):
            for name, t in conn.named_parameters():
                key = f"cells.{i}.{name}"
                if key not in arrays:
                    raise CheckpointError(f"missing tensor {key}")
                if arrays[key].shape != t.shape:
                    raise CheckpointError(f"{key}: shape {arrays[key].shape}, structure wants {t.shape}")
                t.data = arrays[key]
    return state, manifest
