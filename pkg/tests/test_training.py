from collections import Counter

import numpy as np
import pytest

from mlta.autodiff import Parameter, Tape
from mlta.dataset import collate, encode
from mlta.embedding import vocabulary
from mlta.errors import NonFiniteGradient, TooFewSamples
from mlta.layers import ConvKind, ModelDims, ModelParams
from mlta.mln import build_mln, group_by_label
from mlta.preprocess import clean
from mlta.synthetic import GenConfig, embedding_table, generate
from mlta.training import (
    AdamState,
    TrainConfig,
    adam_step,
    batch_loss,
    make_batches,
    model_grad_check,
    read_history,
    split,
    toy_batch,
    train,
    write_history,
)

SMALL = ModelDims(f_in=8, hidden=6, fc1=8, fc2=6)


@pytest.fixture(scope="module")
def corpus():
    cfg = GenConfig(tweets_per_class=40, vocab_per_class=10, shared_vocab=10, embedding_dim=8, seed=5)
    table = embedding_table(cfg)
    tweets = [clean(t, vocabulary=vocabulary(table)) for t in generate(cfg)]
    groups, _ = group_by_label(tweets, 5)
    return encode([build_mln(g) for g in groups], table)


class TestSplit:
    def test_full_corpus_counts(self):
        items = [(i, i % 6) for i in range(3000)]
        tr, te = split(items, 0.8, 0, label=lambda s: s[1])
        assert (len(tr), len(te)) == (2400, 600)

    def test_one_class(self):
        items = [(i, 0) for i in range(10)]
        tr, te = split(items, 0.8, 0, label=lambda s: s[1])
        assert (len(tr), len(te)) == (8, 2)

    def test_deterministic_and_disjoint(self):
        items = [(i, i % 3) for i in range(30)]
        a = split(items, 0.8, 4, label=lambda s: s[1])
        assert a == split(items, 0.8, 4, label=lambda s: s[1])
        assert not set(a[0]) & set(a[1])
        assert set(a[0]) | set(a[1]) == set(items)

    def test_stratified(self):
        items = [(i, i % 3) for i in range(30)]
        tr, _ = split(items, 0.8, 1, label=lambda s: s[1])
        assert Counter(s[1] for s in tr) == {0: 8, 1: 8, 2: 8}

    def test_each_side_non_empty(self):
        tr, te = split([(0, "a"), (1, "a")], 0.99, 0, label=lambda s: s[1])
        assert len(tr) == 1 and len(te) == 1

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            split([(0, "a"), (1, "a"), (2, "b")], 0.8, label=lambda s: s[1])

    def test_default_label_attribute(self, corpus):
        tr, te = split(corpus, 0.8, 0)
        assert len(tr) + len(te) == len(corpus)


class TestBatches:
    def test_cover_every_sample_once(self, corpus):
        batches = make_batches(corpus, 7, seed=0, epoch=1)
        assert sum(b.size for b in batches) == len(corpus)
        assert [b.size for b in batches[:-1]] == [7] * (len(batches) - 1)

    def test_reshuffled_per_epoch(self, corpus):
        a = [b.labels.tolist() for b in make_batches(corpus, 4, 0, 1)]
        b = [b.labels.tolist() for b in make_batches(corpus, 4, 0, 2)]
        assert a != b
        assert a == [b.labels.tolist() for b in make_batches(corpus, 4, 0, 1)]


class TestAdam:
    def test_zero_gradient_no_change(self, rng):
        p = Parameter(rng.standard_normal((3, 2)))
        before = p.value.copy()
        adam_step([p], AdamState(), 0.1)
        np.testing.assert_array_equal(p.value, before)

    def test_first_step_magnitude(self, rng):
        p = Parameter(np.zeros((2, 2)))
        p.grad = np.full((2, 2), 0.37)
        adam_step([p], AdamState(), 0.001)
        # bias-corrected m/sqrt(v) is g/|g| = 1 on the first step
        np.testing.assert_allclose(p.value, -0.001 * 0.37 / (0.37 + 1e-8), rtol=1e-12)
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_matches_reference_recurrence(self, rng):
        p = Parameter(rng.standard_normal((2, 3)))
        x = p.value.copy()
        m = np.zeros_like(x)
        v = np.zeros_like(x)
        state = AdamState()
        for t in range(1, 6):
            g = rng.standard_normal(x.shape)
            p.grad = g.copy()
            adam_step([p], state, 0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p.value, x, rtol=1e-13)

    def test_quadratic_bowl(self, rng):
        target = rng.standard_normal((3, 3))
        p = Parameter(np.zeros((3, 3)))

        def loss():
            t = Tape()
            d = t.sub(t.param(p), t.constant(target))
            out = t.sum(t.mul(d, d))
            t.backward(out)
            return out.item()

        first = loss()
        state = AdamState()
        for _ in range(200):
            loss()
            adam_step([p], state, 0.05)
        assert loss() < first

    def test_non_finite_gradient(self):
        p = Parameter(np.zeros((1, 2)))
        p.grad = np.array([[np.nan, 0.0]])
        with pytest.raises(NonFiniteGradient):
            adam_step([p], AdamState(), 0.1)
        np.testing.assert_array_equal(p.value, 0.0)


class TestBatchedLoss:
    @pytest.mark.parametrize("kind", list(ConvKind))
    def test_batched_equals_mean_of_singles(self, corpus, kind):
        params = ModelParams.init(kind, SMALL, heads=2, seed=1)
        for size in range(1, 9):
            chunk = corpus[:size]
            batched = batch_loss(Tape(), collate(chunk), params).item()
            singles = [batch_loss(Tape(), collate([s]), params).item() for s in chunk]
            assert abs(batched - np.mean(singles)) < 1e-10

    @pytest.mark.parametrize("kind", list(ConvKind))
    def test_fifty_steps_reduce_loss(self, kind):
        batch = toy_batch(seed=2, dim=6)
        params = ModelParams.init(kind, ModelDims(f_in=6, hidden=8, fc1=8, fc2=8), heads=2, seed=0)
        plist = params.parameters()
        initial = batch_loss(Tape(), batch, params).item()
        state = AdamState()
        for step in range(50):
            tape = Tape()
            tape.backward(batch_loss(tape, batch, params))
            adam_step(plist, state, 0.01)
        assert batch_loss(Tape(), batch, params).item() < initial


class TestTrain:
    def config(self, **kw):
        base = dict(epochs=3, dims=SMALL, heads=2, seed=3, batch_size=8)
        base.update(kw)
        return TrainConfig(**base)

    def test_zero_epochs(self, corpus):
        tr, te = split(corpus, 0.8, 0)
        init = ModelParams.init("graphconv", SMALL, seed=3)
        params, history = train(tr, te, self.config(epochs=0))
        assert history == []
        for p, q in zip(params.parameters(), init.parameters()):
            np.testing.assert_array_equal(p.value, q.value)

    def test_history_and_best(self, corpus):
        tr, te = split(corpus, 0.8, 0)
        params, history = train(tr, te, self.config())
        assert [h.epoch for h in history] == [1, 2, 3]
        best = max(history, key=lambda h: (h.test_f1, -h.epoch))
        assert params.meta["best_epoch"] == best.epoch
        assert params.meta["best_test_f1"] == best.test_f1

    @pytest.mark.parametrize("kind", list(ConvKind))
    def test_deterministic(self, corpus, kind):
        tr, te = split(corpus, 0.8, 0)
        a, ha = train(tr, te, self.config(conv_kind=kind))
        b, hb = train(tr, te, self.config(conv_kind=kind))
        assert [(h.train_loss, h.train_f1, h.test_f1) for h in ha] == [(h.train_loss, h.train_f1, h.test_f1) for h in hb]
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p.value, q.value)

    def test_history_csv(self, corpus, tmp_path):
        tr, te = split(corpus, 0.8, 0)
        _, history = train(tr, te, self.config(epochs=2))
        write_history(history, tmp_path / "h.csv", timing=False)
        rows = read_history(tmp_path / "h.csv")
        assert list(rows[0]) == ["epoch", "train_loss", "train_f1", "test_f1", "seconds"]
        assert rows[0]["seconds"] == ""
        assert float(rows[1]["train_loss"]) == history[1].train_loss
        write_history(history, tmp_path / "t.csv")
        assert float(read_history(tmp_path / "t.csv")[0]["seconds"]) > 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(split_fraction=1.0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        assert TrainConfig(conv_kind="GATv2Conv").conv_kind is ConvKind.GATV2

    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.epochs, c.dropout, c.heads, c.batch_size) == (0.001, 100, 0.5, 5, 32)
        assert (c.dims.f_in, c.dims.hidden) == (300, 128)


@pytest.mark.parametrize("kind", ["gcn", "graphconv"])
def test_model_grad_check_fast_kinds(kind):
    assert model_grad_check(kind).passed


def test_model_grad_check_attention_one_head():
    assert model_grad_check("gatv2", heads=1).passed
