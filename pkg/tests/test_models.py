"""Dual-encoder and crossing-model behavior, task sets, checkpoints."""

import numpy as np
import pytest

from admatch.corpus import AdListing, GradedLabel, LabeledSample, UnlabeledPair
from admatch.errors import ConfigError
from admatch.featurize import TrigramVocab, encode_dataset
from admatch.models import (
    CdssmConfig,
    CdssmModel,
    DeepCrossingConfig,
    DeepCrossingModel,
    TaskSet,
    TaskSpec,
)
from admatch.nn import autodiff as ad
from admatch.nn.checkpoint import load_checkpoint, save_checkpoint

from helpers import finite_difference_check


def _pairs():
    return [
        UnlabeledPair("red running shoes", AdListing("red shoes", "buy red running shoes", "shoe shop")),
        UnlabeledPair("blue winter hat", AdListing("hat", "warm blue hat", "winter hats")),
        UnlabeledPair("garden hose", AdListing("hose", "garden hose fifty feet", "garden supply")),
        UnlabeledPair("laptop stand", AdListing("laptop stand", "aluminium laptop stand", "stands")),
    ]


def _labeled():
    grades = [(0, 0), (1, 2), (3, 3), (4, 5)]
    return [
        LabeledSample(p.query, p.listing, GradedLabel(ac, lp))
        for p, (ac, lp) in zip(_pairs(), grades)
    ]


@pytest.fixture(scope="module")
def enc():
    pairs = _pairs()
    vocab = TrigramVocab.build_from_samples(pairs)
    return encode_dataset(pairs, vocab), vocab


class TestTaskSet:
    def test_joint_structure(self):
        ts = TaskSet.joint()
        assert len(ts) == 9
        assert ts.weights.sum() == pytest.approx(1.0)
        mains = [t for t in ts.tasks if t.is_main]
        assert {t.label_set for t in mains} == {"ac", "lp"}
        assert sum(t.weight for t in mains) == pytest.approx(0.5)

    def test_table_negative_sets(self):
        ts = TaskSet.joint()
        by_name = {t.name: sorted(t.negative_labels) for t in ts.tasks}
        assert by_name["ac-main"] == [0]
        assert by_name["lp-main"] == [0]
        assert by_name["ac-aux1"] == [0, 1]
        assert by_name["ac-aux2"] == [0, 1, 2]
        assert by_name["ac-aux3"] == [0, 1, 2, 3]
        assert by_name["lp-aux4"] == [0, 1, 2, 3, 4]

    def test_bad_weights_rejected(self):
        with pytest.raises(ConfigError, match="sum to 1"):
            TaskSet([TaskSpec("ac-main", "ac", frozenset({0}), 2.0, True)])

    def test_non_prefix_negatives_rejected(self):
        with pytest.raises(ConfigError, match="prefix"):
            TaskSet([TaskSpec("ac-main", "ac", frozenset({1}), 1.0, True)])

    def test_single_task_set(self):
        ts = TaskSet.single("ac")
        assert len(ts) == 1 and ts.tasks[0].weight == 1.0

    def test_round_trip(self):
        ts = TaskSet.joint()
        assert TaskSet.from_dict(ts.to_dict()).to_dict() == ts.to_dict()


class TestCdssm:
    def test_unit_norm(self, enc):
        dataset, _ = enc
        model = CdssmModel(dataset.query_seq.word_rows.shape[1], CdssmConfig(32, 16), seed=0)
        vectors = model.encode("query", dataset.query_seq).data
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-12)

    def test_identical_inputs_identical_vectors(self, enc):
        dataset, _ = enc
        model = CdssmModel(dataset.query_seq.word_rows.shape[1], CdssmConfig(32, 16), seed=0)
        v1 = model.encode("ad", dataset.ad_seq).data
        v2 = model.encode("ad", dataset.ad_seq).data
        np.testing.assert_array_equal(v1, v2)

    def test_word_order_changes_vector(self):
        vocab_src = [UnlabeledPair("q", AdListing("alpha beta gamma delta", "x", "y"))]
        vocab = TrigramVocab.build_from_samples(vocab_src)
        a = encode_dataset([UnlabeledPair("q", AdListing("alpha beta gamma delta", "x", "y"))], vocab)
        b = encode_dataset([UnlabeledPair("q", AdListing("delta gamma beta alpha", "x", "y"))], vocab)
        model = CdssmModel(vocab.size, CdssmConfig(16, 8), seed=1)
        va = model.encode("ad", a.ad_seq).data
        vb = model.encode("ad", b.ad_seq).data
        assert not np.allclose(va, vb)

    def test_score_map_endpoints(self):
        # score = (cosine + 1) / 2 on the already-encoded vectors
        q = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        a = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        scores = (np.sum(q * a, axis=1) + 1.0) / 2.0
        np.testing.assert_allclose(scores, [1.0, 0.0, 0.5])

    def test_separability(self, enc):
        dataset, _ = enc
        model = CdssmModel(dataset.query_seq.word_rows.shape[1], CdssmConfig(32, 16), seed=2)
        pairwise = model.score(dataset.query_seq, dataset.ad_seq)
        q = model.encode_array("query", dataset.query_seq)
        a = model.encode_array("ad", dataset.ad_seq)
        recomposed = (np.sum(q * a, axis=1) + 1.0) / 2.0
        np.testing.assert_allclose(pairwise, recomposed, atol=1e-12)

    def test_clone_is_deep(self, enc):
        dataset, _ = enc
        model = CdssmModel(dataset.query_seq.word_rows.shape[1], CdssmConfig(16, 8), seed=3)
        clone = model.clone()
        clone.params()[0][1].data[:] = 0.0
        assert not np.allclose(model.params()[0][1].data, 0.0)

    def test_checkpoint_round_trip(self, enc, tmp_path):
        dataset, _ = enc
        model = CdssmModel(dataset.query_seq.word_rows.shape[1], CdssmConfig(16, 8), seed=4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model.to_checkpoint("vocab.tsv", "cfghash"))
        loaded = CdssmModel.from_checkpoint(load_checkpoint(path))
        np.testing.assert_array_equal(
            model.score(dataset.query_seq, dataset.ad_seq),
            loaded.score(dataset.query_seq, dataset.ad_seq),
        )
        assert loaded.param_hash() == model.param_hash()


class TestDeepCrossing:
    def test_composite_convex_combination(self, enc):
        dataset, _ = enc
        ts = TaskSet.joint()
        model = DeepCrossingModel(dataset.fields.fields["query"].shape[1], ts, DeepCrossingConfig(16, 1, 32), seed=0)
        heads, composite = model.forward(dataset.fields)
        probs = np.stack([h.data for h in heads], axis=1)
        np.testing.assert_allclose(composite.data, probs @ ts.weights, atol=1e-12)
        assert np.all((composite.data > 0) & (composite.data < 1))

    def test_composite_weight_arithmetic(self):
        # One main task at 0.5 plus three aux at 0.5/3 each: main head 0.9,
        # aux heads 0.3 -> composite 0.6.
        ts = TaskSet.with_aux("ac")
        weights = ts.weights
        heads = np.array([0.9, 0.3, 0.3, 0.3])
        assert float(heads @ weights) == pytest.approx(0.6)

    def test_all_heads_equal_composite_equal(self):
        ts = TaskSet.joint()
        assert float(np.full(9, 0.6) @ ts.weights) == pytest.approx(0.6)

    def test_mtl_loss_single_task_is_plain_ce(self, enc):
        dataset, _ = enc
        ts = TaskSet.single("ac")
        model = DeepCrossingModel(dataset.fields.fields["query"].shape[1], ts, DeepCrossingConfig(8, 1, 16), seed=1)
        heads, _ = model.forward(dataset.fields)
        labels = np.array([[1.0], [0.0], [1.0], [1.0]])
        loss = model.mtl_loss(heads, labels)
        expected = ad.cross_entropy(heads[0], labels[:, 0])
        assert loss.data == pytest.approx(expected.data)

    def test_perfect_heads_loss_near_zero(self):
        probs = ad.Tensor(np.array([1.0 - 1e-9, 1e-9]))
        loss = ad.cross_entropy(probs, np.array([1.0, 0.0]))
        assert loss.data < 1e-6

    def test_mtl_loss_gradcheck(self, enc):
        dataset, _ = enc
        ts = TaskSet.with_aux("ac")
        model = DeepCrossingModel(
            dataset.fields.fields["query"].shape[1], ts,
            DeepCrossingConfig(6, 1, 10, batchnorm=False), seed=2,
        )
        labels = ts.label_matrix(np.array([0, 1, 3, 4]), np.array([0, 2, 3, 5]))

        def loss():
            heads, _ = model.forward(dataset.fields)
            return model.mtl_loss(heads, labels)

        params = [p for _, p in model.params()][:4]  # embeddings are the bulk; spot-check
        finite_difference_check(params, loss)

    def test_missing_label_column_rejected(self, enc):
        dataset, _ = enc
        ts = TaskSet.joint()
        model = DeepCrossingModel(dataset.fields.fields["query"].shape[1], ts, DeepCrossingConfig(8, 1, 16), seed=3)
        heads, _ = model.forward(dataset.fields)
        with pytest.raises(ConfigError, match="tasks"):
            model.mtl_loss(heads, np.zeros((4, 3)))

    def test_checkpoint_round_trip_with_batchnorm_buffers(self, enc, tmp_path):
        dataset, _ = enc
        ts = TaskSet.joint()
        model = DeepCrossingModel(dataset.fields.fields["query"].shape[1], ts, DeepCrossingConfig(8, 2, 16), seed=4)
        model.train_mode(True)
        model.forward(dataset.fields)  # move running stats off their init
        model.train_mode(False)
        path = tmp_path / "dc.ckpt"
        save_checkpoint(path, model.to_checkpoint("vocab.tsv", "h"))
        loaded = DeepCrossingModel.from_checkpoint(load_checkpoint(path))
        np.testing.assert_array_equal(model.score(dataset.fields), loaded.score(dataset.fields))

    def test_composite_monotone_in_heads(self):
        ts = TaskSet.joint()
        w = ts.weights
        base = np.full(9, 0.4)
        for j in range(9):
            bumped = base.copy()
            bumped[j] += 0.2
            assert float(bumped @ w) > float(base @ w)
