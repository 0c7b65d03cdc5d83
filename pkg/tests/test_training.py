import math

import numpy as np
import pytest

from conftest import random_tiny_model, two_sided_lines
from wete import build_corpus, training
from wete.embeddings import EmbeddingMatrix
from wete.model import Batch, ModelConfig, WeTeModel, objective
from wete.training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    central_difference,
    finite_diff_check,
    gradient,
    loss_and_gradient,
    relative_error,
    theta_matrix,
    train,
)


def single_support_model(w, a):
    """One word, one topic: the CT cost of the only document is 2 exp(-<w, a>)."""
    corpus = build_corpus(["x x"])
    cfg = ModelConfig(n_topics=1, embed_dim=len(w), mode="scratch", trunk_width=2, epsilon=0.0)
    model = WeTeModel.initialize(corpus.vocab, cfg)
    model.params["word_embeddings"][:] = [w]
    model.params["topic_embeddings"][:] = [a]
    return corpus, model


class TestGradient:
    def test_single_support(self):
        w, a = np.array([0.3, -0.5]), np.array([0.2, 0.4])
        corpus, model = single_support_model(w, a)
        batch = Batch.from_documents(list(corpus.documents), 1)
        loss, _, grads = loss_and_gradient(model, batch, np.array([[0.4]]))
        s = w @ a
        assert loss == pytest.approx(2 * math.exp(-s), rel=1e-12)
        np.testing.assert_allclose(grads["topic_embeddings"][0], -2 * math.exp(-s) * w, rtol=1e-9)
        np.testing.assert_allclose(grads["word_embeddings"][0], -2 * math.exp(-s) * a, rtol=1e-9)
        # a single topic makes the proportions constant, so the encoder gets nothing
        for name in ("trunk_weight", "head_shape_weight", "head_scale_bias"):
            assert np.all(grads[name] == 0)

    def test_small_step_decreases_loss(self):
        corpus, model = single_support_model(np.array([0.3, -0.5]), np.array([0.2, 0.4]))
        noise = np.array([[0.4]])
        docs = list(corpus.documents)
        before, _ = objective(docs, model, noise)
        grads = gradient(docs, model, noise)
        adam_step(model.params, grads, AdamState(lr=1e-3))
        after, _ = objective(docs, model, noise)
        assert after < before

    def test_all_frozen(self):
        corpus, model = single_support_model(np.array([1.0]), np.array([1.0]))
        frozen = WeTeModel(model.vocab, model.config, model.params, np.zeros(1, bool),
                           frozen=model.trainable_names)
        assert gradient(list(corpus.documents), frozen, np.array([[0.5]])) == {}

    def test_fixed_mode_has_no_word_gradient(self):
        rng = np.random.default_rng(0)
        corpus, model = random_tiny_model(rng, V=5, H=3, K=2, mode="fixed")
        grads = gradient(list(corpus.documents), model, rng.random((len(corpus), 2)))
        assert "word_embeddings" not in grads
        assert set(grads) == set(model.trainable_names)

    def test_partial_word_rows_masked(self):
        rng = np.random.default_rng(2)
        corpus, model = random_tiny_model(rng, V=6, H=2, K=2, mode="finetune")
        model.word_trainable[::2] = False
        grads = gradient(list(corpus.documents), model, rng.random((len(corpus), 2)))
        assert np.all(grads["word_embeddings"][::2] == 0)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        corpus, model = random_tiny_model(rng, V=5, H=3, K=2, width=4)
        noise = rng.random((len(corpus), 2))
        report = finite_diff_check(list(corpus.documents), model, noise, h=1e-5, tol=1e-4)
        assert report.ok, report.max_rel_error
        assert set(report.max_rel_error) == set(model.trainable_names)

    def test_both_paths_reach_topics(self):
        rng = np.random.default_rng(7)
        corpus, model = random_tiny_model(rng, V=5, H=3, K=2)
        noise = rng.random((len(corpus), 2))
        docs = list(corpus.documents)
        g_ct = gradient(docs, model, noise, epsilon=0.0)["topic_embeddings"]
        g_all = gradient(docs, model, noise, epsilon=1.0)["topic_embeddings"]
        assert not np.allclose(g_ct, g_all)
        report = finite_diff_check(docs, model, noise, epsilon=3.0)
        assert report.ok, report.max_rel_error

    def test_identity_transform(self):
        rng = np.random.default_rng(11)
        corpus, model = random_tiny_model(rng, V=6, H=2, K=3)
        model.config.input_transform = "identity"
        report = finite_diff_check(list(corpus.documents), model, rng.random((len(corpus), 3)))
        assert report.ok, report.max_rel_error

    def test_zero_outside_clamp(self):
        corpus, model = single_support_model(np.array([0.1]), np.array([0.1]))
        model.config.n_topics = 1
        model.params["head_scale_bias"][:] = 1e6  # scale pinned at its upper bound
        grads = gradient(list(corpus.documents), model, np.array([[0.3]]), epsilon=1.0)
        assert grads["head_scale_bias"][0] == 0.0

    def test_non_finite_loss(self):
        corpus, model = single_support_model(np.array([1.0]), np.array([1.0]))
        model.params["topic_embeddings"][:] = np.nan
        with pytest.raises(training.NonFiniteLossError):
            gradient(list(corpus.documents), model, np.array([[0.3]]))


class TestHarness:
    def test_quadratic(self):
        x = np.array([3.0])
        numeric = central_difference(lambda: float(x[0] ** 2), x, h=1e-4)
        assert relative_error(6.0, numeric[0]) < 1e-8
        assert x[0] == 3.0

    def test_corrupted_gradient_flagged(self):
        rng = np.random.default_rng(5)
        corpus, model = random_tiny_model(rng, V=5, H=3, K=2)
        noise = rng.random((len(corpus), 2))
        docs = list(corpus.documents)
        doubled = {k: 2 * v for k, v in gradient(docs, model, noise).items()}
        report = finite_diff_check(docs, model, noise, grads=doubled)
        assert not report.ok
        assert report.worst == pytest.approx(0.5, abs=1e-3)

    def test_params_restored(self):
        rng = np.random.default_rng(6)
        corpus, model = random_tiny_model(rng, V=4, H=2, K=2)
        before = {k: v.copy() for k, v in model.params.items()}
        finite_diff_check(list(corpus.documents), model, rng.random((len(corpus), 2)))
        for k, v in before.items():
            np.testing.assert_array_equal(model.params[k], v)

    def test_sampled_coordinates(self):
        rng = np.random.default_rng(8)
        corpus, model = random_tiny_model(rng, V=8, H=4, K=3)
        report = finite_diff_check(list(corpus.documents), model,
                                   rng.random((len(corpus), 3)), max_coords=5)
        assert report.ok

    def test_floor(self):
        assert relative_error(0.0, 1e-10) == pytest.approx(1e-2)

    def test_bad_step(self):
        corpus, model = single_support_model(np.array([1.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            finite_diff_check(list(corpus.documents), model, np.array([[0.3]]), h=0)


class TestAdam:
    def test_first_step(self):
        params = {"p": np.array([0.5])}
        adam_step(params, {"p": np.array([1.0])}, AdamState(lr=0.001))
        assert params["p"][0] - 0.5 == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_zero_gradient(self):
        params = {"p": np.array([0.5, -1.0])}
        state = AdamState()
        adam_step(params, {"p": np.array([1.0, 2.0])}, state)
        m_before, v_before, p_before = state.m["p"].copy(), state.v["p"].copy(), params["p"].copy()
        state.lr = 0.0
        adam_step(params, {"p": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["p"], p_before)
        np.testing.assert_allclose(state.m["p"], 0.9 * m_before)
        np.testing.assert_allclose(state.v["p"], 0.999 * v_before)

    def test_zero_gradient_from_start(self):
        params = {"p": np.array([0.5, -1.0])}
        adam_step(params, {"p": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(params["p"], [0.5, -1.0])

    def test_untouched_tensor(self):
        params = {"p": np.array([1.0]), "q": np.array([2.0])}
        adam_step(params, {"p": np.array([3.0])}, AdamState())
        assert params["q"][0] == 2.0

    def test_row_mask(self):
        params = {"E": np.ones((3, 2))}
        adam_step(params, {"E": np.ones((3, 2))}, AdamState(), {"E": np.array([True, False, True])})
        np.testing.assert_array_equal(params["E"][1], [1.0, 1.0])
        assert np.all(params["E"][[0, 2]] < 1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, AdamState())

    def test_matches_reference_loop(self):
        rng = np.random.default_rng(0)
        grads = rng.normal(size=(5, 3))
        params = {"p": np.zeros(3)}
        state = AdamState(lr=0.01)
        m = v = np.zeros(3)
        ref = np.zeros(3)
        for t, g in enumerate(grads, start=1):
            adam_step(params, {"p": g}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(params["p"], ref, rtol=1e-12)


def _small_model(corpus, K=2, mode="scratch", seed=0, embeddings=None):
    cfg = ModelConfig(n_topics=K, embed_dim=4, mode=mode, trunk_width=8, seed=seed)
    return WeTeModel.initialize(corpus.vocab, cfg, embeddings)


def count_steps(monkeypatch):
    calls = []
    real = training.adam_step

    def counting(*args, **kwargs):
        calls.append(1)
        return real(*args, **kwargs)

    monkeypatch.setattr(training, "adam_step", counting)
    return calls


class TestTrain:
    def test_one_doc_one_step(self, monkeypatch):
        calls = count_steps(monkeypatch)
        corpus = build_corpus(["a b c"])
        _, history = train(corpus, _small_model(corpus), TrainConfig(epochs=1))
        assert len(calls) == 1 and len(history) == 1

    def test_step_count(self, monkeypatch, toy_corpus):
        calls = count_steps(monkeypatch)
        train(toy_corpus, _small_model(toy_corpus), TrainConfig(batch_size=25, epochs=3))
        assert len(calls) == 3 * math.ceil(len(toy_corpus) / 25)

    def test_lr_zero(self, toy_corpus):
        model = _small_model(toy_corpus)
        before = {k: v.copy() for k, v in model.params.items()}
        train(toy_corpus, model, TrainConfig(batch_size=16, epochs=3, lr=0.0))
        for k, v in before.items():
            np.testing.assert_array_equal(model.params[k], v)

    def test_lr_zero_loss_constant(self, toy_corpus):
        # with one topic and no likelihood term the objective does not depend on the noise
        model = _small_model(toy_corpus, K=1)
        _, history = train(toy_corpus, model, TrainConfig(batch_size=16, epochs=4, lr=0.0,
                                                          epsilon=0.0))
        losses = [r.loss for r in history]
        assert max(losses) - min(losses) <= 1e-12 * abs(losses[0])

    def test_fixed_embeddings_untouched(self, toy_corpus):
        V = len(toy_corpus.vocab)
        E = EmbeddingMatrix(np.random.default_rng(1).normal(size=(V, 4)), np.ones(V, bool))
        model = _small_model(toy_corpus, mode="fixed", embeddings=E)
        train(toy_corpus, model, TrainConfig(batch_size=20, epochs=2, lr=0.05))
        np.testing.assert_array_equal(model.params["word_embeddings"], E.values)

    def test_frozen_tensor_untouched(self, toy_corpus):
        base = _small_model(toy_corpus)
        model = WeTeModel(base.vocab, base.config, base.params, base.word_trainable,
                          frozen={"trunk_weight", "topic_embeddings"})
        trunk = model.params["trunk_weight"].copy()
        alpha = model.params["topic_embeddings"].copy()
        train(toy_corpus, model, TrainConfig(batch_size=20, epochs=2, lr=0.05))
        np.testing.assert_array_equal(model.params["trunk_weight"], trunk)
        np.testing.assert_array_equal(model.params["topic_embeddings"], alpha)
        assert not np.array_equal(model.params["head_scale_bias"], np.zeros(2))

    def test_deterministic(self, toy_corpus):
        runs = []
        for _ in range(2):
            model = _small_model(toy_corpus)
            _, history = train(toy_corpus, model, TrainConfig(batch_size=16, epochs=2, lr=0.01,
                                                              seed=4))
            runs.append((model, [r.loss for r in history]))
        assert runs[0][1] == runs[1][1]
        for k in runs[0][0].params:
            np.testing.assert_array_equal(runs[0][0].params[k], runs[1][0].params[k])

    def test_simplex_after_training(self, toy_corpus):
        model = _small_model(toy_corpus, K=3)
        train(toy_corpus, model, TrainConfig(batch_size=16, epochs=2, lr=0.01))
        theta = theta_matrix(toy_corpus, model)
        assert theta.shape == (len(toy_corpus), 3)
        assert np.all(np.abs(theta.sum(axis=1) - 1) < 1e-9)

    def test_loss_decreases_on_clusters(self):
        lines, _ = two_sided_lines(n_docs=200, seed=1)
        corpus = build_corpus(lines)
        model = WeTeModel.initialize(corpus.vocab, ModelConfig(n_topics=2, embed_dim=8,
                                                               mode="scratch", trunk_width=32))
        _, history = train(corpus, model, TrainConfig(batch_size=25, epochs=5, lr=0.01))
        losses = [r.loss for r in history]
        assert all(b < a for a, b in zip(losses, losses[1:])), losses

    def test_divergence_guard(self, monkeypatch, toy_corpus):
        losses = iter([1.0] * 3 + [100.0] * 100)
        real = training.loss_and_gradient
        epochs_seen = []

        def fake(model, batch, noise, epsilon=None):
            loss, parts, grads = real(model, batch, noise, epsilon)
            return next(losses), parts, grads

        monkeypatch.setattr(training, "loss_and_gradient", fake)
        model = _small_model(toy_corpus)
        snapshot = {}

        def on_epoch(rec, m):
            epochs_seen.append(rec.epoch)
            if rec.epoch == 1:
                snapshot.update({k: v.copy() for k, v in m.params.items()})

        with pytest.raises(TrainingDiverged) as info:
            train(toy_corpus, model, TrainConfig(batch_size=20, epochs=10, lr=0.01),
                  on_epoch=on_epoch)
        assert epochs_seen == [1, 2, 3, 4]
        assert len(info.value.history) == 4
        for k, v in snapshot.items():
            np.testing.assert_array_equal(info.value.last_good.params[k], v)

    def test_non_finite_parameters(self, toy_corpus):
        model = _small_model(toy_corpus)

        def poison(rec, m):
            if rec.epoch == 2:
                m.params["head_shape_bias"][:] = np.nan

        with pytest.raises(TrainingDiverged) as info:
            train(toy_corpus, model, TrainConfig(batch_size=20, epochs=5), on_epoch=poison)
        assert len(info.value.history) == 2
        assert np.all(np.isfinite(info.value.last_good.params["head_shape_bias"]))

    def test_empty_corpus(self):
        corpus = build_corpus(["a"])
        with pytest.raises(ValueError):
            train([], _small_model(corpus), TrainConfig())

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_csv_record(self):
        rec = training.EpochRecord(3, 1.5, 1.0, 0.5, 0.25)
        assert rec.csv() == "3,1.5,1,0.5,0.25"


def test_no_gradient_past_score_clamp():
    corpus, model = single_support_model(np.array([8.0]), np.array([5.0]))  # <w, a> = 40
    grads = gradient(list(corpus.documents), model, np.array([[0.4]]))
    assert grads["topic_embeddings"][0, 0] == 0.0
    assert grads["word_embeddings"][0, 0] == 0.0
