"""Flat tensor archive used for model weights and training checkpoints.

Layout (all integers little-endian, offsets relative to the payload start)::

    TRANSNETR-ARCHIVE 1\\n
    <header byte length, decimal>\\n
    <header: UTF-8 JSON>  {"meta": {...}, "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
    <payload: raw float32 little-endian values per tensor, in header order>
    SHA256 <64 hex digits>\\n

The checksum covers every byte before the ``SHA256`` line (magic, header and
payload). Names are the model registry names, so an archive converted from
any other source can be imported as long as it uses those names and shapes.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

MAGIC = b"TRANSNETR-ARCHIVE 1\n"
_DTYPE = np.dtype("<f4")


class ArchiveError(ValueError):
    """Corrupt, truncated, or mismatched archive."""


def encode_archive(tensors: Mapping[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + str(len(header)).encode() + b"\n" + header + b"".join(chunks)
    digest = hashlib.sha256(body).hexdigest().encode()
    return body + b"SHA256 " + digest + b"\n"


def decode_archive(blob: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not blob.startswith(MAGIC):
        raise ArchiveError("not a TransNetR archive (bad magic)")
    trailer = blob.rfind(b"SHA256 ")
    if trailer < 0 or not blob.endswith(b"\n") or len(blob) - trailer != len(b"SHA256 ") + 64 + 1:
        raise ArchiveError("archive integrity error: missing or truncated checksum")
    body = blob[:trailer]
    expected = blob[trailer + 7 : trailer + 7 + 64].decode("ascii", "replace")
    if hashlib.sha256(body).hexdigest() != expected:
        raise ArchiveError("archive integrity error: checksum mismatch")
    pos = len(MAGIC)
    nl = body.index(b"\n", pos)
    hlen = int(body[pos:nl])
    header = json.loads(body[nl + 1 : nl + 1 + hlen])
    payload = body[nl + 1 + hlen :]
    tensors: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise ArchiveError(f"archive integrity error: tensor {entry['name']!r} extends past the payload")
        arr = np.frombuffer(payload, dtype=_DTYPE, count=n // 4, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return tensors, header["meta"]


def write_archive(path: str, tensors: Mapping[str, np.ndarray], meta: Optional[Dict[str, Any]] = None) -> None:
    blob = encode_archive(tensors, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_archive(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    with open(path, "rb") as fh:
        return decode_archive(fh.read())


def save_weights(model, path: str, meta: Optional[Dict[str, Any]] = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("model_config", model.config.to_dict())
    write_archive(path, model.state_dict(), meta)


def load_weights(model, path: str, strict: bool = True) -> Dict[str, Any]:
    """Load registry-named tensors from ``path`` into ``model``.

    With ``strict=False`` only the tensors present in the archive are loaded
    (e.g. an encoder-only import); unknown names and shape mismatches are
    still rejected.
    """
    tensors, meta = read_archive(path)
    assign_state(model, {k: v for k, v in tensors.items() if not k.startswith("adam/")}, strict=strict)
    return meta


def assign_state(model, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
    """Copy ``state`` into ``model``; the error names the first offending tensor."""
    current = model.state_dict()
    for name, arr in state.items():
        if name not in current:
            raise ArchiveError(f"unexpected tensor {name!r} not present in the model")
        if tuple(np.shape(arr)) != tuple(current[name].shape):
            raise ArchiveError(
                f"shape mismatch for tensor {name!r}: archive {tuple(np.shape(arr))} vs model {tuple(current[name].shape)}"
            )
    if strict:
        for name in current:
            if name not in state:
                raise ArchiveError(f"missing tensor {name!r} in archive")
    try:
        model.load_state_dict(dict(state), strict=False)
    except (KeyError, ValueError) as exc:
        raise ArchiveError(str(exc)) from exc
