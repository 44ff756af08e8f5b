import dataclasses
import json
import math

import numpy as np
import pytest

from highway_rt import tensor as T
from highway_rt.data import DialogueRecord, Utterance, Vocabulary, generate_synthetic, prepend_speaker_tokens
from highway_rt.errors import ConfigError, DivergenceError, InputError
from highway_rt.gradcheck import toy_dialogue
from highway_rt.losses import loss_for
from highway_rt.model import ModelConfig, Ranker
from highway_rt.optim import AdamState, adam_step
from highway_rt.training import (
    TrainConfig,
    evaluate,
    load_config,
    sample_negatives,
    split_config,
    train,
    write_log,
)

TINY = ModelConfig(d_emb=6, d_feat=2, n_heads=2, d_p=4, d_h=16, n_blocks=1, seed=5, lr=1e-2)


def synthetic(n, seed=0, n_candidates=12):
    return generate_synthetic(n, vocab_size=40, rng=seed, n_candidates=n_candidates)


class TestSampleNegatives:
    def test_one_positive_and_nine_negatives(self):
        [r] = generate_synthetic(1, rng=0)
        s = sample_negatives(r, 10, np.random.default_rng(0))
        assert len(s.candidates) == 10 and sum(s.labels) == 1
        assert all(c in r.candidates for c in s.candidates)
        picked = [r.candidates.index(c) for c in s.candidates]
        assert len(set(picked)) == 10

    def test_full_pool_is_a_permutation(self):
        [r] = synthetic(1)
        s = sample_negatives(r, len(r.candidates), np.random.default_rng(1))
        assert sorted(map(tuple, s.candidates)) == sorted(map(tuple, r.candidates))
        assert sum(s.labels) == 1

    def test_deterministic_under_seed(self):
        [r] = generate_synthetic(1, rng=0)
        a = sample_negatives(r, 10, np.random.default_rng(3))
        b = sample_negatives(r, 10, np.random.default_rng(3))
        assert a == b

    def test_short_pool_keeps_all_and_warns(self, caplog):
        [r] = synthetic(1, n_candidates=4)
        s = sample_negatives(r, 10, np.random.default_rng(0))
        assert len(s.candidates) == 4
        assert "negatives available" in caplog.text

    def test_keeps_every_positive(self):
        r = prepend_speaker_tokens(
            DialogueRecord("m", [Utterance(1, ["a"])], [["p"], ["q"], ["n1"], ["n2"], ["n3"]], [1, 1, 0, 0, 0])
        )
        s = sample_negatives(r, 3, np.random.default_rng(0))
        assert ["p"] in s.candidates and ["q"] in s.candidates
        assert sum(s.labels) == 2 and len(s.candidates) == 3


class TestConfigFiles:
    def test_flat_split(self):
        model, tc = split_config({"d_emb": 30, "steps": 7, "loss": "ranking", "margin": 0.5})
        assert model.d_emb == 30 and model.loss == "ranking" and model.margin == 0.5 and tc.steps == 7

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"d_emb": 30, "learning_rate": 1}))
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(p)

    def test_defaults_without_file(self):
        model, tc = load_config(None)
        assert model == ModelConfig() and tc == TrainConfig()

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_invalid_train_value(self):
        with pytest.raises(ConfigError):
            split_config({"candidates_per_sample": 1})


class TestTrain:
    def test_memorizes_single_record(self):
        record = prepend_speaker_tokens(
            DialogueRecord("one", [Utterance(1, ["a", "b"]), Utterance(2, ["c"])], [["d", "e"], ["f"]], [1, 0])
        )
        cfg = dataclasses.replace(TINY, lr=1e-2)
        model, history = train([record], cfg, TrainConfig(steps=150, candidates_per_sample=2, eval_every=0,
                                                          valid_fraction=0.0))
        with T.no_grad():
            loss = loss_for("bce", model.score_all(record).scores, record.labels)
        assert loss < 1e-2
        assert history[-1]["loss"] < history[0]["loss"]

    def test_identical_runs(self):
        corpus = synthetic(6)
        tc = TrainConfig(steps=20, log_every=5, eval_every=10, valid_fraction=0.34)
        m1, h1 = train(corpus, TINY, tc)
        m2, h2 = train(corpus, TINY, tc)
        assert h1 == h2
        for (n1, p1), (n2, p2) in zip(m1.named_parameters().items(), m2.named_parameters().items()):
            assert n1 == n2 and np.array_equal(p1.data, p2.data)

    def test_log_schema(self, tmp_path):
        corpus = synthetic(6)
        seen = []
        _, history = train(corpus, TINY, TrainConfig(steps=10, log_every=5, eval_every=5, valid_fraction=0.34),
                           on_log=seen.append)
        assert seen == history
        keys = {"step", "loss", "split", "recall@1", "recall@10", "mrr"}
        assert all(set(h) == keys for h in history)
        assert [h["split"] for h in history] == ["train", "valid", "train", "valid"]
        assert history[0]["recall@1"] is None and history[1]["recall@1"] is not None
        path = tmp_path / "log.jsonl"
        write_log(history, path)
        assert [json.loads(line) for line in path.read_text().splitlines()] == history

    def test_early_stopping(self):
        corpus = synthetic(6)
        tc = TrainConfig(steps=200, log_every=50, eval_every=1, patience=2, valid_fraction=0.34)
        _, history = train(corpus, dataclasses.replace(TINY, lr=1e-9), tc)
        assert history[-1]["split"] == "early_stop"
        assert history[-1]["step"] < 200

    def test_ranking_loss_runs(self):
        _, history = train(synthetic(4), dataclasses.replace(TINY, loss="ranking"), TrainConfig(steps=8, log_every=4))
        assert all(math.isfinite(h["loss"]) for h in history if h["split"] == "train")

    def test_frozen_embeddings_do_not_move(self):
        cfg = dataclasses.replace(TINY, freeze_embeddings=True)
        corpus = synthetic(4)
        start = Ranker.initialize(cfg, Vocabulary.build(corpus)).params.embedding.data.copy()
        model, _ = train(corpus, cfg, TrainConfig(steps=5, valid_fraction=0.0))
        np.testing.assert_array_equal(model.params.embedding.data, start)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_step(self):
        cfg = dataclasses.replace(TINY, lr=1e30)
        with pytest.raises(DivergenceError, match="step"):
            train(synthetic(4), cfg, TrainConfig(steps=50, valid_fraction=0.0))

    def test_empty_corpus(self):
        with pytest.raises(InputError):
            train([], TINY)

    def test_corpus_without_negatives(self):
        r = prepend_speaker_tokens(DialogueRecord("p", [Utterance(1, ["a"])], [["b"]], [1]))
        with pytest.raises(InputError):
            train([r], TINY)


@pytest.mark.parametrize("lr", [1e-2, 1e-3, 1e-4])
def test_single_step_decreases_loss(lr):
    record = toy_dialogue(np.random.default_rng(0))
    cfg = dataclasses.replace(TINY, lr=lr)
    model = Ranker.initialize(cfg, Vocabulary.build([record]))
    params = model.trainable_parameters()

    def loss():
        return loss_for("bce", model.score_all(record).score_tensor, record.labels)

    before = loss()
    T.backward(before)
    adam_step(params, AdamState.for_params(params), lr)
    with T.no_grad():
        after = loss()
    assert after.item() < before.item()


def test_evaluate_matches_metric_definitions():
    corpus = synthetic(4)
    model = Ranker.initialize(TINY, Vocabulary.build(corpus))
    report = evaluate(model, corpus, ks=(1, 5), with_loss=True)
    assert report.n_dialogues == 4 and report.loss is not None
    assert set(report.recall) == {1, 5}
    assert T.tape_size() == 0
