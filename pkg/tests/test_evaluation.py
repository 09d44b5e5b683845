import math

import numpy as np
import pytest

from dialogen import autograd as ag
from dialogen.encoding import encode_for_target, expand_per_speaker
from dialogen.evaluation import (
    EvalError,
    conversation_logprob,
    log_softmax_rows,
    masked_token_logprobs,
    perplexity,
    safe_exp,
)
from dialogen.extract import UserReferenceStore
from dialogen.model import ModelConfig, forward, init_params, next_token_alignment

from conftest import make_conversation, make_store
from corpus import overfit_corpus


def uniform_model(vocab, variant="dec", **kw):
    cfg = ModelConfig(
        hidden_size=16, n_layers=1, n_heads=2, vocab_size=vocab.size,
        max_positions=256, variant=variant, **kw,
    )
    params = init_params(cfg, seed=0)
    params["tok_emb"].data = np.zeros_like(params["tok_emb"].data)  # tied head -> flat logits
    return cfg, params


class TestConversationLogprob:
    def test_single_speaker_equals_sample_logprob(self, tiny_vocab):
        conv = make_conversation(["solo", "solo", "solo"])
        store = make_store(["solo"])
        cfg, params = uniform_model(tiny_vocab)
        score = conversation_logprob(params, cfg, conv, store, tiny_vocab)
        sample = encode_for_target(conv, store, "solo", tiny_vocab)
        _, logps = masked_token_logprobs(params, sample, cfg)
        assert score.total_logprob == pytest.approx(float(logps.sum()))
        assert len(score.per_speaker) == 1

    def test_uniform_model_total(self, tiny_vocab):
        conv = make_conversation(["a", "b", "a"])
        store = UserReferenceStore()
        cfg, params = uniform_model(tiny_vocab)
        score = conversation_logprob(params, cfg, conv, store, tiny_vocab)
        n = score.tokens
        assert score.total_logprob == pytest.approx(-n * math.log(tiny_vocab.size), rel=1e-5)

    def test_regrouping_identity_two_speakers(self, tiny_vocab):
        """Summing per-speaker masked log-probs must equal scoring every turn
        token under its author's sample, token by token."""
        conv = make_conversation(["a", "b", "a", "b"])
        store = make_store(["a", "b"])
        cfg = ModelConfig(hidden_size=16, n_layers=2, n_heads=2,
                          vocab_size=tiny_vocab.size, max_positions=256)
        params = init_params(cfg, seed=42)
        score = conversation_logprob(params, cfg, conv, store, tiny_vocab)

        # direct per-token oracle over the same forward passes
        direct_total = 0.0
        direct_tokens = 0
        for author in conv.authors:
            sample = encode_for_target(conv, store, author, tiny_vocab)
            with ag.no_grad():
                result = forward(params, sample, cfg)
                rows, targets, mask = next_token_alignment(result, sample, cfg)
            logp = log_softmax_rows(rows.data)
            for i in range(len(targets)):
                if mask[i]:
                    direct_total += float(logp[i, targets[i]])
                    direct_tokens += 1
        assert score.total_logprob == direct_total  # exact: same forwards
        assert score.tokens == direct_tokens

    def test_every_turn_scored_exactly_once(self, tiny_vocab):
        conv = make_conversation(["a", "b", "c", "a"])
        store = UserReferenceStore()
        cfg, params = uniform_model(tiny_vocab)
        score = conversation_logprob(params, cfg, conv, store, tiny_vocab)
        # uniform model: every scored token costs ln V, so the count is exact
        expected_tokens = 0
        for author in conv.authors:
            sample = encode_for_target(conv, store, author, tiny_vocab)
            expected_tokens += sum(sample.loss_mask[1:])  # first position unscoreable
        assert score.tokens == expected_tokens


class TestPerplexity:
    def test_uniform_model_token_ppl_is_vocab_size(self, tiny_vocab):
        conv = make_conversation(["a", "b"])
        cfg, params = uniform_model(tiny_vocab)
        report = perplexity(params, cfg, [conv], UserReferenceStore(), tiny_vocab)
        assert report.token_ppl == pytest.approx(tiny_vocab.size, rel=1e-4)

    def test_two_token_hand_value(self):
        # exp(-(ln 0.5 + ln 0.125) / 2) = 4.0
        total = math.log(0.5) + math.log(0.125)
        assert safe_exp(-total / 2) == pytest.approx(4.0)

    def test_memorizer_approaches_one(self, tiny_vocab):
        from dialogen.training import TrainConfig, train_loop

        convs, vocab = overfit_corpus(4)
        store = UserReferenceStore()
        samples = []
        for c in convs:
            samples.extend(expand_per_speaker(c, store, vocab))
        cfg = ModelConfig(hidden_size=32, n_layers=2, n_heads=2, vocab_size=vocab.size,
                          max_positions=128)
        result = train_loop(samples, cfg, TrainConfig(total_iters=250, batch_size=8,
                                                      peak_lr=3e-3, seed=0), vocab)
        report = perplexity(result.checkpoint.params, cfg, convs, store, vocab)
        assert 1.0 <= report.token_ppl < 1.6

    def test_empty_dataset_rejected(self, tiny_vocab):
        cfg, params = uniform_model(tiny_vocab)
        with pytest.raises(EvalError):
            perplexity(params, cfg, [], UserReferenceStore(), tiny_vocab)

    def test_conversation_ppl_normalizes_by_dataset_size(self, tiny_vocab):
        conv = make_conversation(["a", "b"])
        cfg, params = uniform_model(tiny_vocab)
        report = perplexity(params, cfg, [conv], UserReferenceStore(), tiny_vocab)
        expected = safe_exp(report.scored_tokens * math.log(tiny_vocab.size))
        assert report.conversation_ppl == pytest.approx(expected, rel=1e-4)

    def test_report_round_trips_to_json(self, tiny_vocab):
        import json

        cfg, params = uniform_model(tiny_vocab)
        report = perplexity(params, cfg, [make_conversation(["a", "b"])], UserReferenceStore(), tiny_vocab)
        obj = json.loads(json.dumps(report.to_dict()))
        assert obj["scored_tokens"] == report.scored_tokens
        assert len(obj["per_speaker"]) == 2

    def test_nrc_scores_without_references(self, tiny_vocab):
        conv = make_conversation(["a", "b"])
        store = make_store(["a", "b"])
        cfg = ModelConfig(hidden_size=16, n_layers=1, n_heads=2,
                          vocab_size=tiny_vocab.size, max_positions=256, variant="nrc")
        params = init_params(cfg, seed=1)
        report = perplexity(params, cfg, [conv], store, tiny_vocab)
        assert report.token_ppl > 0
