"""Single-file checkpoint format.

Layout::

    b"SPN1"                      magic
    uint32 little-endian         header length in bytes
    header                       UTF-8 JSON: version, network spec, tensor index, log
    tensor data                  little-endian float64, in index order

Each index entry records ``name``, ``shape``, ``offset`` (relative to the start
of the data section) and ``nbytes``. Optimizer velocities are stored as
tensors named ``velocity/<param>``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from spn.errors import (BadMagicError, CheckpointLayoutError, TruncatedCheckpointError,
                        VersionMismatchError)
from spn.network import Network, NetworkSpec

MAGIC = b"SPN1"
VERSION = 1
_DTYPE = np.dtype("<f8")


def save_checkpoint(net: Network, path, velocity: dict | None = None, log: list | None = None) -> None:
    tensors = dict(net.params)
    for name, v in (velocity or {}).items():
        tensors[f"velocity/{name}"] = v
    index, offset = [], 0
    for name, arr in tensors.items():
        nbytes = int(arr.size) * _DTYPE.itemsize
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = json.dumps({
        "version": VERSION,
        "network": net.spec.to_dict(),
        "tensors": index,
        "log": log or [],
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for arr in tensors.values():
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def read_checkpoint(path) -> tuple[Network, dict, dict]:
    """Return ``(network, velocity, header)``; nothing is returned on any error."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise TruncatedCheckpointError(f"{path}: missing header length")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise TruncatedCheckpointError(f"{path}: header truncated")
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointLayoutError(f"{path}: unreadable header ({exc})") from None
    if header.get("version") != VERSION:
        raise VersionMismatchError(f"{path}: version {header.get('version')} != {VERSION}")
    data = memoryview(blob)[8 + hlen:]
    expected = 0
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if entry["offset"] != expected or entry["nbytes"] != nbytes:
            raise CheckpointLayoutError(
                f"{path}: tensor {entry['name']} has offset/size {entry['offset']}/"
                f"{entry['nbytes']}, expected {expected}/{nbytes}")
        if expected + nbytes > len(data):
            raise TruncatedCheckpointError(f"{path}: data for {entry['name']} truncated")
        tensors[entry["name"]] = np.frombuffer(data[expected:expected + nbytes], dtype=_DTYPE
                                               ).reshape(shape).astype(np.float64)
        expected += nbytes
    if expected != len(data):
        raise CheckpointLayoutError(f"{path}: {len(data) - expected} trailing bytes after tensors")
    spec = NetworkSpec.from_dict(header["network"])
    params = {k: v for k, v in tensors.items() if not k.startswith("velocity/")}
    velocity = {k[len("velocity/"):]: v for k, v in tensors.items() if k.startswith("velocity/")}
    return Network(spec, params), velocity, header


def load_checkpoint(path) -> Network:
    return read_checkpoint(path)[0]
