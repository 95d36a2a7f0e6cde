"""Versioned binary checkpoint container.

Layout: magic "ADMK", u32 version, u64 header length, a UTF-8 JSON header,
then the concatenated tensor payloads as raw little-endian float64 bytes.
The header carries the architecture descriptor, the featurizer vocab path,
the run config hash, and the tensor directory (name, shape, offset, nbytes).
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataFormatError
from ..util import sha256_hex

_MAGIC = b"ADMK"
_VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    arch: dict
    tensors: dict[str, np.ndarray]
    vocab_path: str
    config_hash: str
    extra: dict

    def param_hash(self) -> str:
        """Content hash over the tensor payload, stable across save/load."""
        chunks = []
        for name in sorted(self.tensors):
            arr = self.tensors[name]
            chunks.append(name.encode("utf-8"))
            chunks.append(str(arr.shape).encode("utf-8"))
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return sha256_hex(b"".join(chunks))


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    directory = []
    payload = bytearray()
    for name, arr in ckpt.tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = {
        "kind": ckpt.kind,
        "arch": ckpt.arch,
        "vocab_path": ckpt.vocab_path,
        "config_hash": ckpt.config_hash,
        "extra": ckpt.extra,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        flat = np.frombuffer(payload[start : start + nbytes], dtype="<f8")
        tensors[entry["name"]] = flat.reshape(entry["shape"]).astype(np.float64).copy()
    return Checkpoint(
        kind=header["kind"],
        arch=header["arch"],
        tensors=tensors,
        vocab_path=header["vocab_path"],
        config_hash=header["config_hash"],
        extra=header["extra"],
    )


def file_hash(path: str | Path) -> str:
    return sha256_hex(Path(path).read_bytes())
