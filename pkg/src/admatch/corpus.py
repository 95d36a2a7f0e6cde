"""Dataset model, TSV persistence, and the synthetic search-log generator.

Three dataset roles are produced: a labeled set with graded AC/LP relevance
judgements, an unlabeled set, and a clicked set whose pairs are drawn from
high-relevance matches with a configurable false-positive fraction.

The generator builds every pair from a latent intent. An intent owns four
"AC attribute" words and one "LP attribute" word, all unique to that intent.
A pair at overlap tier m shares exactly m of the query intent's AC attributes
(the rest come from a donor intent), so the AC grade is the tier by
construction and the LP grade is the tier plus one when the pair also shares
the LP attribute. Filler words drawn from a common pool are sprinkled into
every text field as lexical red herrings that carry no label signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, DataFormatError

AC_GRADES = range(0, 5)
LP_GRADES = range(0, 6)

# Structural constants of the generator. These shape task difficulty and are
# deliberately not part of CorpusSpec: the corpus contract is the spec fields.
_ATTRS_PER_INTENT = 4
_MIN_FILLER_WORDS = 20
_ATTR_DROP_RATE = 0.08  # listing-side attribute words lost at render time
_LP_BONUS_RATE = 0.35
_QUERY_LP_MENTION_RATE = 0.5
_CLICK_BONUS_RATE = 0.7
_LABELED_TIER_WEIGHTS = (0.42, 0.16, 0.15, 0.14, 0.13)
_UNLABELED_TIER_WEIGHTS = (0.34, 0.18, 0.16, 0.16, 0.16)
_CLICK_TIER_WEIGHTS = (0.45, 0.55)  # over tiers {3, 4}


def normalize_text(text: str) -> str:
    """Lowercase and collapse all whitespace runs to single spaces."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class AdListing:
    keyword: str
    ad_title: str
    lp_title: str


@dataclass(frozen=True)
class GradedLabel:
    ac: int
    lp: int

    def validate(self) -> None:
        if self.ac not in AC_GRADES:
            raise DataFormatError(f"ac grade {self.ac} outside {{0..4}}")
        if self.lp not in LP_GRADES:
            raise DataFormatError(f"lp grade {self.lp} outside {{0..5}}")


@dataclass(frozen=True)
class LabeledSample:
    query: str
    listing: AdListing
    label: GradedLabel


@dataclass(frozen=True)
class UnlabeledPair:
    query: str
    listing: AdListing
    clicked: bool | None = None


@dataclass(frozen=True)
class CorpusSpec:
    n_intents: int
    vocab_size: int
    n_labeled: int
    n_unlabeled: int
    n_clicked: int
    click_noise_rate: float
    seed: int

    def validate(self) -> None:
        for name in ("n_intents", "vocab_size", "n_labeled", "n_unlabeled", "n_clicked"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.n_intents < 2:
            raise ConfigError("n_intents must be at least 2 (pairs need a donor intent)")
        if not (0.0 <= self.click_noise_rate < 1.0):
            raise ConfigError(
                f"click_noise_rate must lie in [0, 1), got {self.click_noise_rate!r}"
            )
        needed = self.n_intents * (_ATTRS_PER_INTENT + 1) + _MIN_FILLER_WORDS
        if self.vocab_size < needed:
            raise ConfigError(
                f"vocab_size={self.vocab_size} too small: "
                f"{self.n_intents} intents need at least {needed} words"
            )


@dataclass(frozen=True)
class _Intent:
    ac_attrs: tuple[str, ...]
    lp_word: str


@dataclass
class GeneratedCorpus:
    """The three dataset roles plus latent diagnostics (never persisted)."""

    labeled: list[LabeledSample]
    unlabeled: list[UnlabeledPair]
    clicked: list[UnlabeledPair]
    clicked_latent_ac: list[int]


def _make_vocabulary(rng: np.random.Generator, size: int) -> list[str]:
    letters = "abcdefghijklmnopqrstuvwxyz"
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < size:
        length = int(rng.integers(4, 9))
        word = "".join(letters[i] for i in rng.integers(0, 26, size=length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


def _make_intents(rng: np.random.Generator, spec: CorpusSpec, vocab: list[str]) -> tuple[list[_Intent], list[str]]:
    order = rng.permutation(len(vocab))
    shuffled = [vocab[i] for i in order]
    intents = []
    pos = 0
    for _ in range(spec.n_intents):
        attrs = tuple(shuffled[pos : pos + _ATTRS_PER_INTENT])
        lp_word = shuffled[pos + _ATTRS_PER_INTENT]
        intents.append(_Intent(attrs, lp_word))
        pos += _ATTRS_PER_INTENT + 1
    fillers = shuffled[pos:]
    return intents, fillers


def _pick_fillers(rng: np.random.Generator, fillers: list[str], low: int, high: int) -> list[str]:
    count = int(rng.integers(low, high + 1))
    if count == 0:
        return []
    idx = rng.choice(len(fillers), size=count, replace=False)
    return [fillers[i] for i in idx]


def _shuffled_text(rng: np.random.Generator, words: list[str]) -> str:
    words = list(words)
    order = rng.permutation(len(words))
    return " ".join(words[i] for i in order)


def _drop_attrs(rng: np.random.Generator, words: list[str], attr_set: set[str]) -> list[str]:
    kept = [w for w in words if w not in attr_set or rng.random() >= _ATTR_DROP_RATE]
    return kept if kept else words[:1]


def _build_pair(
    rng: np.random.Generator,
    intents: list[_Intent],
    fillers: list[str],
    tier: int,
    bonus: int,
) -> tuple[str, AdListing, GradedLabel]:
    """Materialize one query/listing pair with exactly `tier` shared AC
    attributes and an LP-attribute match iff `bonus`. Returns the pair with
    its graded label, which is a pure function of (tier, bonus)."""
    i = int(rng.integers(0, len(intents)))
    j = int(rng.integers(0, len(intents) - 1))
    if j >= i:
        j += 1
    intent, donor = intents[i], intents[j]

    query_words = list(intent.ac_attrs)
    if bonus or rng.random() < _QUERY_LP_MENTION_RATE:
        query_words.append(intent.lp_word)
    query_words += _pick_fillers(rng, fillers, 1, 2)

    keep = set(rng.choice(_ATTRS_PER_INTENT, size=tier, replace=False).tolist())
    eff_attrs = [
        intent.ac_attrs[k] if k in keep else donor.ac_attrs[k]
        for k in range(_ATTRS_PER_INTENT)
    ]
    lp_word = intent.lp_word if bonus else donor.lp_word
    attr_set = set(eff_attrs) | {lp_word}

    keyword_words = _drop_attrs(rng, eff_attrs[:3], attr_set) + _pick_fillers(rng, fillers, 0, 1)
    title_words = _drop_attrs(rng, eff_attrs, attr_set) + _pick_fillers(rng, fillers, 1, 3)
    lp_words = _drop_attrs(rng, [lp_word] + eff_attrs[2:], attr_set) + _pick_fillers(rng, fillers, 1, 2)

    listing = AdListing(
        keyword=_shuffled_text(rng, keyword_words),
        ad_title=_shuffled_text(rng, title_words),
        lp_title=_shuffled_text(rng, lp_words),
    )
    label = GradedLabel(ac=tier, lp=tier + bonus)
    return _shuffled_text(rng, query_words), listing, label


def _draw_tiers(rng: np.random.Generator, n: int, weights: tuple[float, ...]) -> np.ndarray:
    probs = np.asarray(weights, dtype=np.float64)
    probs = probs / probs.sum()
    return rng.choice(len(weights), size=n, p=probs)


def generate_corpus(spec: CorpusSpec) -> GeneratedCorpus:
    """Generate the three dataset roles deterministically from the spec."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = _make_vocabulary(rng, spec.vocab_size)
    intents, fillers = _make_intents(rng, spec, vocab)

    labeled: list[LabeledSample] = []
    tiers = _draw_tiers(rng, spec.n_labeled, _LABELED_TIER_WEIGHTS)
    bonuses = rng.random(spec.n_labeled) < _LP_BONUS_RATE
    # Pin the first ten samples to a fixed (tier, bonus) grid so every AC and
    # LP grade is present even in small corpora.
    grid = [(t, b) for b in (0, 1) for t in range(5)]
    for idx in range(spec.n_labeled):
        if idx < len(grid) and spec.n_labeled >= len(grid):
            tier, bonus = grid[idx]
        else:
            tier, bonus = int(tiers[idx]), int(bonuses[idx])
        query, listing, label = _build_pair(rng, intents, fillers, tier, bonus)
        labeled.append(LabeledSample(query, listing, label))

    unlabeled: list[UnlabeledPair] = []
    tiers = _draw_tiers(rng, spec.n_unlabeled, _UNLABELED_TIER_WEIGHTS)
    bonuses = rng.random(spec.n_unlabeled) < _LP_BONUS_RATE
    for idx in range(spec.n_unlabeled):
        query, listing, _ = _build_pair(rng, intents, fillers, int(tiers[idx]), int(bonuses[idx]))
        unlabeled.append(UnlabeledPair(query, listing))

    clicked: list[UnlabeledPair] = []
    clicked_latent: list[int] = []
    noise = rng.random(spec.n_clicked) < spec.click_noise_rate
    high_tiers = _draw_tiers(rng, spec.n_clicked, _CLICK_TIER_WEIGHTS) + 3
    bonuses = rng.random(spec.n_clicked) < _CLICK_BONUS_RATE
    for idx in range(spec.n_clicked):
        tier = 0 if noise[idx] else int(high_tiers[idx])
        query, listing, label = _build_pair(rng, intents, fillers, tier, int(bonuses[idx]))
        clicked.append(UnlabeledPair(query, listing, clicked=True))
        clicked_latent.append(label.ac)

    return GeneratedCorpus(labeled, unlabeled, clicked, clicked_latent)


# ---------------------------------------------------------------------------
# Persistence: tab-separated UTF-8, one header line, one sample per row.

_COLUMNS = {
    "labeled": ["query", "keyword", "ad_title", "lp_title", "ac", "lp"],
    "unlabeled": ["query", "keyword", "ad_title", "lp_title"],
    "clicked": ["query", "keyword", "ad_title", "lp_title", "clicked"],
}


def _check_kind(kind: str) -> list[str]:
    if kind not in _COLUMNS:
        raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {sorted(_COLUMNS)}")
    return _COLUMNS[kind]


def _field(text: str, what: str) -> str:
    out = normalize_text(text)
    if not out:
        raise DataFormatError(f"{what} is empty after normalization")
    return out


def save_dataset(path: str | Path, samples: Iterable[LabeledSample | UnlabeledPair], kind: str) -> None:
    columns = _check_kind(kind)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(columns) + "\n")
        for sample in samples:
            listing = sample.listing
            row = [
                _field(sample.query, "query"),
                _field(listing.keyword, "keyword"),
                _field(listing.ad_title, "ad_title"),
                _field(listing.lp_title, "lp_title"),
            ]
            if kind == "labeled":
                sample.label.validate()
                row += [str(sample.label.ac), str(sample.label.lp)]
            elif kind == "clicked":
                row.append("1" if sample.clicked else "0")
            fh.write("\t".join(row) + "\n")


def iter_dataset(path: str | Path, kind: str) -> Iterator[LabeledSample | UnlabeledPair]:
    """Stream samples from a TSV file, failing on the first malformed row."""
    columns = _check_kind(kind)
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            return
        names = header.rstrip("\n").split("\t")
        if names != columns:
            raise DataFormatError(
                f"{path}: header {names!r} does not match {kind} schema {columns!r}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(columns):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(columns)} columns, got {len(parts)}"
                )
            try:
                yield _parse_row(parts, kind)
            except DataFormatError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None


def _parse_row(parts: list[str], kind: str) -> LabeledSample | UnlabeledPair:
    query = _field(parts[0], "query")
    listing = AdListing(
        keyword=_field(parts[1], "keyword"),
        ad_title=_field(parts[2], "ad_title"),
        lp_title=_field(parts[3], "lp_title"),
    )
    if kind == "labeled":
        try:
            ac, lp = int(parts[4]), int(parts[5])
        except ValueError:
            raise DataFormatError(f"non-integer grade {parts[4]!r}/{parts[5]!r}") from None
        label = GradedLabel(ac=ac, lp=lp)
        label.validate()
        return LabeledSample(query, listing, label)
    if kind == "clicked":
        if parts[4] not in ("0", "1"):
            raise DataFormatError(f"clicked flag must be 0 or 1, got {parts[4]!r}")
        return UnlabeledPair(query, listing, clicked=parts[4] == "1")
    return UnlabeledPair(query, listing)


def load_dataset(path: str | Path, kind: str) -> list[LabeledSample | UnlabeledPair]:
    return list(iter_dataset(path, kind))


def save_corpus(corpus: GeneratedCorpus, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {
        "labeled": out / "labeled.tsv",
        "unlabeled": out / "unlabeled.tsv",
        "clicked": out / "clicked.tsv",
    }
    save_dataset(paths["labeled"], corpus.labeled, "labeled")
    save_dataset(paths["unlabeled"], corpus.unlabeled, "unlabeled")
    save_dataset(paths["clicked"], corpus.clicked, "clicked")
    return paths


# ---------------------------------------------------------------------------
# Splitting and subsampling of labeled data.


def split_labeled(
    samples: list[LabeledSample], validation_fraction: float, seed: int
) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Disjoint, exhaustive train/validation split. Validation size is
    floor(fraction * n)."""
    if not (0.0 < validation_fraction < 1.0):
        raise ConfigError(f"validation_fraction must be in (0, 1), got {validation_fraction!r}")
    n = len(samples)
    n_val = int(np.floor(validation_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = set(perm[:n_val].tolist())
    train = [samples[i] for i in range(n) if i not in val_idx]
    val = [samples[i] for i in range(n) if i in val_idx]
    return train, val


def subsample(samples: list[LabeledSample], rho: float, seed: int) -> list[LabeledSample]:
    """Sampling-ratio subset; subsets are nested across rho for a fixed seed."""
    if not (0.0 < rho <= 1.0):
        raise ConfigError(f"sampling ratio must be in (0, 1], got {rho!r}")
    n = len(samples)
    size = int(round(rho * n))
    perm = np.random.default_rng(seed).permutation(n)
    chosen = sorted(perm[:size].tolist())
    return [samples[i] for i in chosen]
