"""Precomputed ad-vector dictionary and exact top-k cosine retrieval.

Because the matching score is a function of two independently computed unit
vectors, the ad side can be encoded once into a dictionary and queries
answered by an exact maximum over stored rows; the scores agree with pairwise
scoring to floating-point resolution.

Dictionary file layout: magic "ADVD", u32 version, u32 dim, u64 count,
64-byte hex checkpoint hash, count * dim little-endian float64 vector rows,
then count little-endian int64 listing ids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import AdListing, UnlabeledPair
from .errors import ConfigError, DataFormatError
from .featurize import FeaturizeConfig, TrigramVocab, encode_dataset
from .models import CdssmModel

_MAGIC = b"ADVD"
_VERSION = 1


@dataclass
class VectorDictionary:
    ids: np.ndarray  # int64 listing identifiers
    vectors: np.ndarray  # [n, dim] unit rows
    checkpoint_hash: str

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.ids.shape[0] != self.vectors.shape[0]:
            raise ConfigError("ids and vector rows must align")

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def build_dictionary(
    model: CdssmModel,
    listings: Sequence[AdListing],
    vocab: TrigramVocab,
    config: FeaturizeConfig = FeaturizeConfig(),
    ids: np.ndarray | None = None,
) -> VectorDictionary:
    """Encode every listing through the frozen ad tower."""
    if ids is None:
        ids = np.arange(len(listings), dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[0] != len(listings):
        raise ConfigError("one id per listing required")
    pairs = [UnlabeledPair(query="q", listing=listing) for listing in listings]
    enc = encode_dataset(pairs, vocab, config)
    vectors = model.encode_array("ad", enc.ad_seq)
    return VectorDictionary(ids=ids, vectors=vectors, checkpoint_hash=model.param_hash())


def save_dictionary(path: str | Path, dictionary: VectorDictionary) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    hash_bytes = dictionary.checkpoint_hash.encode("ascii")
    if len(hash_bytes) != 64:
        raise ConfigError("checkpoint hash must be a 64-character hex digest")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", dictionary.dim))
        fh.write(struct.pack("<Q", dictionary.size))
        fh.write(hash_bytes)
        fh.write(np.ascontiguousarray(dictionary.vectors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dictionary.ids, dtype="<i8").tobytes())


def load_dictionary(path: str | Path) -> VectorDictionary:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: not a vector dictionary (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported dictionary version {version}")
    (dim,) = struct.unpack("<I", raw[8:12])
    (count,) = struct.unpack("<Q", raw[12:20])
    checkpoint_hash = raw[20:84].decode("ascii")
    vec_bytes = count * dim * 8
    vectors = np.frombuffer(raw[84 : 84 + vec_bytes], dtype="<f8").reshape(count, dim).copy()
    ids = np.frombuffer(raw[84 + vec_bytes : 84 + vec_bytes + count * 8], dtype="<i8").copy()
    return VectorDictionary(ids=ids, vectors=vectors, checkpoint_hash=checkpoint_hash)


def top_k(
    query: str,
    dictionary: VectorDictionary,
    model: CdssmModel,
    vocab: TrigramVocab,
    k: int,
    config: FeaturizeConfig = FeaturizeConfig(),
) -> list[tuple[int, float]]:
    """Exact top-k listings by score, descending; ties break on ascending id."""
    if dictionary.size == 0:
        raise ConfigError("dictionary is empty")
    if k > dictionary.size:
        raise ConfigError(f"k={k} exceeds dictionary size {dictionary.size}")
    if model.param_hash() != dictionary.checkpoint_hash:
        raise ConfigError("dictionary was built with a different encoder checkpoint")
    placeholder = AdListing(keyword="q", ad_title="q", lp_title="q")
    enc = encode_dataset([UnlabeledPair(query=query, listing=placeholder)], vocab, config)
    q_vec = model.encode_array("query", enc.query_seq)[0]
    scores = (dictionary.vectors @ q_vec + 1.0) / 2.0
    order = np.lexsort((dictionary.ids, -scores))[:k]
    return [(int(dictionary.ids[i]), float(scores[i])) for i in order]
