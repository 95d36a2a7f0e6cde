"""Generator, persistence, and split behavior."""

import numpy as np
import pytest

from admatch.corpus import (
    AdListing,
    CorpusSpec,
    GradedLabel,
    LabeledSample,
    _build_pair,
    _make_intents,
    _make_vocabulary,
    generate_corpus,
    iter_dataset,
    load_dataset,
    save_dataset,
    split_labeled,
    subsample,
)
from admatch.errors import ConfigError, DataFormatError


def small_spec(**overrides) -> CorpusSpec:
    base = dict(
        n_intents=25,
        vocab_size=220,
        n_labeled=400,
        n_unlabeled=300,
        n_clicked=300,
        click_noise_rate=0.1,
        seed=7,
    )
    base.update(overrides)
    return CorpusSpec(**base)


class TestSpecValidation:
    def test_rejects_nonpositive_counts(self):
        with pytest.raises(ConfigError):
            small_spec(n_labeled=0).validate()

    def test_rejects_bad_noise_rate(self):
        with pytest.raises(ConfigError):
            small_spec(click_noise_rate=1.0).validate()

    def test_rejects_tiny_vocab(self):
        with pytest.raises(ConfigError):
            small_spec(vocab_size=50).validate()


class TestGenerator:
    def test_deterministic_files(self, tmp_path):
        spec = small_spec(n_labeled=100)
        paths = []
        for run in range(2):
            corpus = generate_corpus(spec)
            path = tmp_path / f"labeled{run}.tsv"
            save_dataset(path, corpus.labeled, "labeled")
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_full_attribute_overlap_is_top_grade(self):
        rng = np.random.default_rng(3)
        vocab = _make_vocabulary(rng, 220)
        intents, fillers = _make_intents(rng, small_spec(), vocab)
        for _ in range(20):
            _, _, label = _build_pair(rng, intents, fillers, tier=4, bonus=1)
            assert label == GradedLabel(ac=4, lp=5)

    def test_click_noise_fraction(self):
        spec = small_spec(n_clicked=10000)
        corpus = generate_corpus(spec)
        frac = float(np.mean(np.array(corpus.clicked_latent_ac) == 0))
        assert frac == pytest.approx(0.10, abs=0.01)

    def test_click_contamination_within_3_sigma(self):
        spec = small_spec(n_clicked=5000, click_noise_rate=0.2, seed=11)
        corpus = generate_corpus(spec)
        frac = float(np.mean(np.array(corpus.clicked_latent_ac) == 0))
        sigma = np.sqrt(0.2 * 0.8 / 5000)
        assert abs(frac - 0.2) <= 3 * sigma

    def test_every_grade_appears(self):
        corpus = generate_corpus(small_spec())
        acs = {s.label.ac for s in corpus.labeled}
        lps = {s.label.lp for s in corpus.labeled}
        assert acs == set(range(5))
        assert lps == set(range(6))

    def test_labels_monotone_in_latent_overlap(self):
        # Higher constructed overlap never yields a lower grade.
        rng = np.random.default_rng(5)
        vocab = _make_vocabulary(rng, 220)
        intents, fillers = _make_intents(rng, small_spec(), vocab)
        labels = {}
        for tier in range(5):
            for bonus in (0, 1):
                _, _, label = _build_pair(rng, intents, fillers, tier, bonus)
                labels[(tier, bonus)] = label
        for (t1, b1), l1 in labels.items():
            for (t2, b2), l2 in labels.items():
                if t1 >= t2 and b1 >= b2:
                    assert l1.ac >= l2.ac and l1.lp >= l2.lp


class TestPersistence:
    def test_round_trip_all_kinds(self, tmp_path):
        corpus = generate_corpus(small_spec(n_labeled=50, n_unlabeled=40, n_clicked=30))
        for kind, samples in (
            ("labeled", corpus.labeled),
            ("unlabeled", corpus.unlabeled),
            ("clicked", corpus.clicked),
        ):
            path = tmp_path / f"{kind}.tsv"
            save_dataset(path, samples, kind)
            assert load_dataset(path, kind) == samples

    def test_bad_grade_names_line(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            "query\tkeyword\tad_title\tlp_title\tac\tlp\n"
            "q one\tkw\ttitle\tlp\t1\t2\n"
            "q two\tkw\ttitle\tlp\t7\t2\n",
            encoding="utf-8",
        )
        with pytest.raises(DataFormatError, match=r":3:"):
            load_dataset(path, "labeled")

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("query\tkeyword\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match="schema"):
            load_dataset(path, "labeled")

    def test_empty_file_is_empty_sequence(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("", encoding="utf-8")
        assert load_dataset(path, "labeled") == []

    def test_streaming_reader_is_lazy(self, tmp_path):
        corpus = generate_corpus(small_spec(n_labeled=30))
        path = tmp_path / "labeled.tsv"
        save_dataset(path, corpus.labeled, "labeled")
        stream = iter_dataset(path, "labeled")
        assert next(stream) == corpus.labeled[0]

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_dataset(tmp_path / "x.tsv", "mystery")


def _toy_labeled(n: int) -> list[LabeledSample]:
    listing = AdListing(keyword="kw", ad_title="title", lp_title="lp")
    return [LabeledSample(f"query {i}", listing, GradedLabel(i % 5, i % 5)) for i in range(n)]


class TestSplits:
    def test_split_sizes(self):
        train, val = split_labeled(_toy_labeled(1000), 0.1, seed=3)
        assert len(train) == 900 and len(val) == 100

    def test_split_deterministic_and_exhaustive(self):
        samples = _toy_labeled(97)
        t1, v1 = split_labeled(samples, 0.25, seed=5)
        t2, v2 = split_labeled(samples, 0.25, seed=5)
        assert t1 == t2 and v1 == v2
        recombined = sorted(map(id, t1 + v1))
        assert recombined == sorted(map(id, samples))

    def test_split_floor_rounding(self):
        train, val = split_labeled(_toy_labeled(3), 0.5, seed=1)
        assert len(val) == 1 and len(train) == 2

    def test_split_rejects_bad_fraction(self):
        with pytest.raises(ConfigError):
            split_labeled(_toy_labeled(10), 1.0, seed=0)


class TestSubsample:
    def test_identity_at_full_ratio(self):
        samples = _toy_labeled(40)
        assert subsample(samples, 1.0, seed=2) == samples

    def test_size_rounding(self):
        assert len(subsample(_toy_labeled(10000), 0.2, seed=2)) == 2000

    def test_nesting(self):
        samples = _toy_labeled(200)
        small = subsample(samples, 0.1, seed=9)
        large = subsample(samples, 0.2, seed=9)
        small_ids = {id(s) for s in small}
        large_ids = {id(s) for s in large}
        assert small_ids <= large_ids

    def test_rejects_bad_ratio(self):
        with pytest.raises(ConfigError):
            subsample(_toy_labeled(10), 0.0, seed=0)
