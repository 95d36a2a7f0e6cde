"""Tokenization, trigram hashing, lexical features, batch encodings."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from admatch.corpus import AdListing, UnlabeledPair
from admatch.featurize import (
    FeaturizeConfig,
    TrigramVocab,
    encode_dataset,
    featurize_fields,
    hash_word,
    lexical_features,
    tokenize,
    word_trigrams,
)


class TestTokenize:
    def test_basic(self):
        assert tokenize("iPhone Cover") == ["iphone", "cover"]

    def test_empty(self):
        assert tokenize("") == []

    def test_split_on_nonalnum(self):
        assert tokenize("wi-fi 6e") == ["wi", "fi", "6e"]


class TestHashWord:
    def test_cat_trigrams(self):
        vocab = TrigramVocab(["#ca", "cat", "at#", "xyz"])
        hashed = hash_word("cat", vocab)
        expected = {vocab.index["#ca"], vocab.index["cat"], vocab.index["at#"]}
        assert set(hashed.indices) == expected
        assert all(c == 1 for c in hashed.counts)

    def test_aa_trigrams(self):
        assert word_trigrams("aa") == ["#aa", "aa#"]
        vocab = TrigramVocab(["#aa", "aa#"])
        hashed = hash_word("aa", vocab)
        assert set(hashed.indices) == {0, 1}

    def test_out_of_vocab_word_is_empty(self):
        vocab = TrigramVocab(["#ca", "cat", "at#"])
        hashed = hash_word("zzz", vocab)
        assert hashed.indices == () and hashed.counts == ()

    def test_l1_norm_counts_retained_trigrams(self):
        vocab = TrigramVocab.build(["banana bandana"])
        for word in ("banana", "bandana", "ban"):
            hashed = hash_word(word, vocab)
            retained = [t for t in word_trigrams(word) if t in vocab.index]
            assert hashed.l1() == len(retained)

    @given(st.text(alphabet="ab#", min_size=1, max_size=10))
    @settings(max_examples=50)
    def test_l0_bounded_by_word_length(self, word):
        vocab = TrigramVocab.build([word])
        hashed = hash_word(word, vocab)
        assert len(hashed.indices) <= len(word) + 2


class TestVocab:
    def test_rebuild_is_stable(self):
        texts = ["red shoes online", "buy red sneakers", "shoes shop"]
        v1 = TrigramVocab.build(texts)
        v2 = TrigramVocab.build(reversed(texts))
        assert v1.index == v2.index

    def test_round_trip(self, tmp_path):
        vocab = TrigramVocab.build(["hello world"])
        path = tmp_path / "vocab.tsv"
        vocab.save(path)
        assert TrigramVocab.load(path).index == vocab.index


class TestFeaturizeFields:
    def test_truncation(self):
        vocab = TrigramVocab.build(["w"])
        query = " ".join(f"w{i}" for i in range(40))
        listing = AdListing("kw", "title", "lp")
        hashes = featurize_fields(query, listing, vocab, FeaturizeConfig(max_query_words=20))
        assert len(hashes.query) == 20

    def test_empty_field_gives_empty_sequence(self):
        vocab = TrigramVocab.build(["kw title"])
        hashes = featurize_fields("q", AdListing("kw", "title", ""), vocab)
        assert hashes.lp_title == ()

    def test_deterministic(self):
        vocab = TrigramVocab.build(["alpha beta gamma"])
        listing = AdListing("alpha", "beta gamma", "alpha beta")
        a = featurize_fields("alpha beta", listing, vocab)
        b = featurize_fields("alpha beta", listing, vocab)
        assert a == b


class TestLexicalFeatures:
    def test_identical_query_keyword(self):
        feats = lexical_features("red shoes", AdListing("red shoes", "other", "thing"))
        assert feats[0] == 1.0  # keyword jaccard
        assert feats[11] == 1.0  # exact match

    def test_disjoint_pair_all_overlap_zero(self):
        feats = lexical_features("aaa bbb", AdListing("ccc", "ddd eee", "fff"))
        assert np.all(feats[:8] == 0.0)

    def test_word_order_insensitive_jaccard_but_exact_match_strict(self):
        feats = lexical_features("red shoes", AdListing("shoes red", "x", "y"))
        assert feats[0] == 1.0
        assert feats[11] == 0.0

    def test_all_finite_and_similarities_bounded(self):
        feats = lexical_features("", AdListing("", "", ""))
        assert np.all(np.isfinite(feats))
        assert np.all((feats[:8] >= 0) & (feats[:8] <= 1))


class TestEncodeDataset:
    def _pairs(self):
        return [
            UnlabeledPair("red shoes", AdListing("red shoes", "buy red shoes online", "red shoe shop")),
            UnlabeledPair("blue hat", AdListing("hat", "blue hat sale", "")),
            UnlabeledPair("q", AdListing("a", "b", "c")),
        ]

    def test_shapes_and_masks(self):
        pairs = self._pairs()
        vocab = TrigramVocab.build_from_samples(pairs)
        enc = encode_dataset(pairs, vocab)
        cfg = FeaturizeConfig()
        assert enc.query_seq.ids.shape == (3, cfg.max_query_words)
        assert enc.ad_seq.ids.shape == (3, cfg.max_keyword_words + cfg.max_ad_title_words + cfg.max_lp_title_words + 2)
        assert enc.query_seq.mask.any(axis=1).all()
        assert enc.ad_seq.mask.any(axis=1).all()

    def test_pad_row_is_zero(self):
        pairs = self._pairs()
        vocab = TrigramVocab.build_from_samples(pairs)
        enc = encode_dataset(pairs, vocab)
        assert enc.query_seq.word_rows[0].nnz == 0

    def test_field_counts_match_hashed_words(self):
        pairs = self._pairs()
        vocab = TrigramVocab.build_from_samples(pairs)
        enc = encode_dataset(pairs, vocab)
        for i, pair in enumerate(pairs):
            hashes = featurize_fields(pair.query, pair.listing, vocab)
            expected = np.zeros(vocab.size)
            for hashed in hashes.query:
                for idx, count in zip(hashed.indices, hashed.counts):
                    expected[idx] += count
            np.testing.assert_array_equal(
                enc.fields.fields["query"][i].toarray().ravel(), expected
            )

    def test_order_independent_word_table(self):
        pairs = self._pairs()
        vocab = TrigramVocab.build_from_samples(pairs)
        enc_fwd = encode_dataset(pairs, vocab)
        enc_rev = encode_dataset(list(reversed(pairs)), vocab)
        np.testing.assert_array_equal(
            enc_fwd.query_seq.word_rows.toarray(), enc_rev.query_seq.word_rows.toarray()
        )
        np.testing.assert_array_equal(enc_fwd.query_seq.ids[0], enc_rev.query_seq.ids[-1])

    def test_all_empty_pair_pools_padding_word(self):
        pairs = [UnlabeledPair("...", AdListing("...", "...", "..."))]
        vocab = TrigramVocab.build(["word"])
        enc = encode_dataset(pairs, vocab)
        assert enc.query_seq.mask[0, 0]
        assert enc.ad_seq.mask[0, 0]
        assert enc.query_seq.ids[0, 0] == 0
