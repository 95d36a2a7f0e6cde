"""Text featurization: letter-trigram word hashing, per-field hashed
sequences for the neural models, and hand-crafted lexical features for the
tree-ensemble annotator.

Words are framed with '#' markers before trigram extraction, so "cat"
contributes {#ca, cat, at#}. A TrigramVocab is built once from training text
and frozen; trigrams absent from the vocab are dropped at hash time.

Batch encodings share a per-dataset word table: each distinct word is hashed
once into a sparse trigram-count row, and sequences store int32 row ids.
Row 0 is a reserved all-zero padding word.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import AdListing, LabeledSample, UnlabeledPair
from .errors import DataFormatError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

FIELD_NAMES = ("query", "keyword", "ad_title", "lp_title")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs, dropping empty tokens."""
    return _TOKEN_RE.findall(text.lower())


def word_trigrams(word: str) -> list[str]:
    framed = "#" + word + "#"
    return [framed[i : i + 3] for i in range(len(framed) - 2)]


class TrigramVocab:
    """Frozen letter-trigram index with dense ids assigned lexicographically."""

    def __init__(self, trigrams: Sequence[str]):
        ordered = sorted(set(trigrams))
        self.index: dict[str, int] = {t: i for i, t in enumerate(ordered)}

    @property
    def size(self) -> int:
        return len(self.index)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "TrigramVocab":
        seen: set[str] = set()
        for text in texts:
            for word in tokenize(text):
                seen.update(word_trigrams(word))
        return cls(sorted(seen))

    @classmethod
    def build_from_samples(cls, samples: Iterable[LabeledSample | UnlabeledPair]) -> "TrigramVocab":
        return cls.build(_sample_texts(samples))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for trigram, idx in sorted(self.index.items(), key=lambda kv: kv[1]):
                fh.write(f"{trigram}\t{idx}\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrigramVocab":
        index: dict[str, int] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataFormatError(f"{path}:{lineno}: expected 'trigram<TAB>index'")
                index[parts[0]] = int(parts[1])
        vocab = cls([])
        if sorted(index.values()) != list(range(len(index))):
            raise DataFormatError(f"{path}: vocab indices are not dense in [0, size)")
        vocab.index = index
        return vocab


def _sample_texts(samples: Iterable[LabeledSample | UnlabeledPair]) -> Iterable[str]:
    for s in samples:
        yield s.query
        yield s.listing.keyword
        yield s.listing.ad_title
        yield s.listing.lp_title


@dataclass(frozen=True)
class HashedWord:
    """Sparse trigram-count vector of one word, sorted by vocab index."""

    indices: tuple[int, ...]
    counts: tuple[int, ...]

    def l1(self) -> int:
        return sum(self.counts)


def hash_word(word: str, vocab: TrigramVocab) -> HashedWord:
    counter = Counter(
        vocab.index[t] for t in word_trigrams(word) if t in vocab.index
    )
    items = sorted(counter.items())
    return HashedWord(
        indices=tuple(i for i, _ in items),
        counts=tuple(c for _, c in items),
    )


@dataclass(frozen=True)
class FeaturizeConfig:
    max_query_words: int = 20
    max_keyword_words: int = 10
    max_ad_title_words: int = 20
    max_lp_title_words: int = 20

    def max_words(self, field_name: str) -> int:
        return {
            "query": self.max_query_words,
            "keyword": self.max_keyword_words,
            "ad_title": self.max_ad_title_words,
            "lp_title": self.max_lp_title_words,
        }[field_name]

    def to_dict(self) -> dict:
        return {
            "max_query_words": self.max_query_words,
            "max_keyword_words": self.max_keyword_words,
            "max_ad_title_words": self.max_ad_title_words,
            "max_lp_title_words": self.max_lp_title_words,
        }


@dataclass(frozen=True)
class FieldHashes:
    query: tuple[HashedWord, ...]
    keyword: tuple[HashedWord, ...]
    ad_title: tuple[HashedWord, ...]
    lp_title: tuple[HashedWord, ...]


def featurize_fields(
    query: str,
    listing: AdListing,
    vocab: TrigramVocab,
    config: FeaturizeConfig = FeaturizeConfig(),
) -> FieldHashes:
    """Hashed word sequences per field, truncated to the configured limits."""

    def seq(text: str, limit: int) -> tuple[HashedWord, ...]:
        return tuple(hash_word(w, vocab) for w in tokenize(text)[:limit])

    return FieldHashes(
        query=seq(query, config.max_query_words),
        keyword=seq(listing.keyword, config.max_keyword_words),
        ad_title=seq(listing.ad_title, config.max_ad_title_words),
        lp_title=seq(listing.lp_title, config.max_lp_title_words),
    )


# ---------------------------------------------------------------------------
# Lexical features for the tree annotator: 12 dimensions.
#   0-3   word-set Jaccard of query vs keyword / ad_title / lp_title / all ad text
#   4-7   char-trigram cosine on the same four pairings
#   8-10  length ratios (min/max word counts) query vs each listing field
#   11    exact-match flag: query token sequence equals keyword token sequence

N_LEXICAL_FEATURES = 12


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def _trigram_counter(tokens: list[str]) -> Counter:
    counter: Counter = Counter()
    for tok in tokens:
        counter.update(word_trigrams(tok))
    return counter


def _cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(v * b[k] for k, v in a.items() if k in b)
    na = np.sqrt(sum(v * v for v in a.values()))
    nb = np.sqrt(sum(v * v for v in b.values()))
    return float(dot / (na * nb))


def _length_ratio(a: int, b: int) -> float:
    return min(a, b) / max(a, b, 1)


def lexical_features(query: str, listing: AdListing) -> np.ndarray:
    q_tokens = tokenize(query)
    kw_tokens = tokenize(listing.keyword)
    title_tokens = tokenize(listing.ad_title)
    lp_tokens = tokenize(listing.lp_title)
    all_tokens = kw_tokens + title_tokens + lp_tokens

    q_set = set(q_tokens)
    q_tri = _trigram_counter(q_tokens)

    out = np.empty(N_LEXICAL_FEATURES, dtype=np.float64)
    for i, tokens in enumerate((kw_tokens, title_tokens, lp_tokens, all_tokens)):
        out[i] = _jaccard(q_set, set(tokens))
        out[4 + i] = _cosine(q_tri, _trigram_counter(tokens))
    out[8] = _length_ratio(len(q_tokens), len(kw_tokens))
    out[9] = _length_ratio(len(q_tokens), len(title_tokens))
    out[10] = _length_ratio(len(q_tokens), len(lp_tokens))
    out[11] = 1.0 if q_tokens and q_tokens == kw_tokens else 0.0
    return out


def lexical_features_batch(samples: Sequence[LabeledSample | UnlabeledPair]) -> np.ndarray:
    out = np.empty((len(samples), N_LEXICAL_FEATURES), dtype=np.float64)
    for i, s in enumerate(samples):
        out[i] = lexical_features(s.query, s.listing)
    return out


# ---------------------------------------------------------------------------
# Batch encodings. A dataset is encoded once and then sliced per minibatch.

PAD_ID = 0


@dataclass
class SequenceBatch:
    """Word-id sequences over a shared trigram-count word table.

    `ids` indexes rows of `word_rows`; `mask` marks positions eligible for
    max-pooling (real words only, never padding or field separators). Rows
    with no real words keep mask[0] set so that an all-empty input encodes a
    single padding word.
    """

    word_rows: sparse.csr_matrix
    ids: np.ndarray
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def take(self, idx: np.ndarray) -> "SequenceBatch":
        return SequenceBatch(self.word_rows, self.ids[idx], self.mask[idx])


@dataclass
class FieldBatch:
    """Per-field trigram counts summed over each field's words."""

    fields: dict[str, sparse.csr_matrix]

    @property
    def n(self) -> int:
        return next(iter(self.fields.values())).shape[0]

    def take(self, idx: np.ndarray) -> "FieldBatch":
        return FieldBatch({k: v[idx] for k, v in self.fields.items()})


@dataclass
class EncodedDataset:
    """All model-facing views of one dataset, plus labels when present."""

    n: int
    query_seq: SequenceBatch
    ad_seq: SequenceBatch
    fields: FieldBatch
    lexical: np.ndarray
    ac: np.ndarray | None = None
    lp: np.ndarray | None = None

    def take(self, idx: np.ndarray) -> "EncodedDataset":
        return EncodedDataset(
            n=len(idx),
            query_seq=self.query_seq.take(idx),
            ad_seq=self.ad_seq.take(idx),
            fields=self.fields.take(idx),
            lexical=self.lexical[idx],
            ac=None if self.ac is None else self.ac[idx],
            lp=None if self.lp is None else self.lp[idx],
        )


class _WordTable:
    """Distinct words of a dataset, hashed once. Ids are assigned in sorted
    word order so the table is independent of sample order."""

    def __init__(self, words: set[str], vocab: TrigramVocab):
        self.ids: dict[str, int] = {w: i + 1 for i, w in enumerate(sorted(words))}
        data: list[int] = []
        indices: list[int] = []
        indptr = [0, 0]  # row 0 is the all-zero padding word
        for word in sorted(words):
            hashed = hash_word(word, vocab)
            indices.extend(hashed.indices)
            data.extend(hashed.counts)
            indptr.append(len(indices))
        self.rows = sparse.csr_matrix(
            (
                np.asarray(data, dtype=np.float64),
                np.asarray(indices, dtype=np.int32),
                np.asarray(indptr, dtype=np.int64),
            ),
            shape=(len(words) + 1, vocab.size),
        )


def _tokenized_fields(
    sample: LabeledSample | UnlabeledPair, config: FeaturizeConfig
) -> dict[str, list[str]]:
    listing = sample.listing
    return {
        "query": tokenize(sample.query)[: config.max_query_words],
        "keyword": tokenize(listing.keyword)[: config.max_keyword_words],
        "ad_title": tokenize(listing.ad_title)[: config.max_ad_title_words],
        "lp_title": tokenize(listing.lp_title)[: config.max_lp_title_words],
    }


def ad_sequence_length(config: FeaturizeConfig) -> int:
    # keyword + separator + ad_title + separator + lp_title
    return config.max_keyword_words + config.max_ad_title_words + config.max_lp_title_words + 2


def encode_dataset(
    samples: Sequence[LabeledSample | UnlabeledPair],
    vocab: TrigramVocab,
    config: FeaturizeConfig = FeaturizeConfig(),
) -> EncodedDataset:
    n = len(samples)
    tokenized = [_tokenized_fields(s, config) for s in samples]

    words: set[str] = set()
    for fields in tokenized:
        for toks in fields.values():
            words.update(toks)
    table = _WordTable(words, vocab)

    q_len = config.max_query_words
    a_len = ad_sequence_length(config)
    q_ids = np.zeros((n, q_len), dtype=np.int32)
    q_mask = np.zeros((n, q_len), dtype=bool)
    a_ids = np.zeros((n, a_len), dtype=np.int32)
    a_mask = np.zeros((n, a_len), dtype=bool)

    for i, fields in enumerate(tokenized):
        for j, word in enumerate(fields["query"]):
            q_ids[i, j] = table.ids[word]
            q_mask[i, j] = True
        if not fields["query"]:
            q_mask[i, 0] = True
        pos = 0
        for name in ("keyword", "ad_title", "lp_title"):
            for word in fields[name]:
                a_ids[i, pos] = table.ids[word]
                a_mask[i, pos] = True
                pos += 1
            if name != "lp_title":
                pos += 1  # separator slot: padding id, excluded from pooling
        if not a_mask[i].any():
            a_mask[i, 0] = True

    field_csrs = {
        name: _field_counts(tokenized, name, table, vocab.size) for name in FIELD_NAMES
    }

    ac = lp = None
    if samples and isinstance(samples[0], LabeledSample):
        ac = np.asarray([s.label.ac for s in samples], dtype=np.int64)
        lp = np.asarray([s.label.lp for s in samples], dtype=np.int64)

    return EncodedDataset(
        n=n,
        query_seq=SequenceBatch(table.rows, q_ids, q_mask),
        ad_seq=SequenceBatch(table.rows, a_ids, a_mask),
        fields=FieldBatch(field_csrs),
        lexical=lexical_features_batch(samples),
        ac=ac,
        lp=lp,
    )


def _field_counts(
    tokenized: list[dict[str, list[str]]],
    name: str,
    table: _WordTable,
    vocab_size: int,
) -> sparse.csr_matrix:
    # Sample-by-word occurrence counts times the word trigram table gives the
    # per-field trigram counts in one sparse matmul.
    rows: list[int] = []
    cols: list[int] = []
    for i, fields in enumerate(tokenized):
        for word in fields[name]:
            rows.append(i)
            cols.append(table.ids[word])
    occurrences = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.float64), (rows, cols)),
        shape=(len(tokenized), table.rows.shape[0]),
    )
    out = occurrences @ table.rows
    out.sort_indices()
    return out


def encode_pair(
    query: str,
    listing: AdListing,
    vocab: TrigramVocab,
    config: FeaturizeConfig = FeaturizeConfig(),
) -> EncodedDataset:
    """Single-pair convenience wrapper around encode_dataset."""
    return encode_dataset([UnlabeledPair(query, listing)], vocab, config)
