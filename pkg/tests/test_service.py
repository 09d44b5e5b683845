import json
import threading

import pytest
from fastapi.testclient import TestClient

from dialogen.checkpoint import save_checkpoint
from dialogen.encoding import expand_per_speaker
from dialogen.evaluation import perplexity
from dialogen.extract import ConversationPath, ReferenceTuple, Turn, UserReferenceStore
from dialogen.generation import SamplerConfig, sample_turn
from dialogen.model import ModelConfig
from dialogen.service import create_app
from dialogen.sessions import SessionStore
from dialogen.training import TrainConfig, train_loop

from corpus import overfit_corpus


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    convs, vocab = overfit_corpus(8)
    samples = []
    for c in convs:
        samples.extend(expand_per_speaker(c, UserReferenceStore(), vocab))
    cfg = ModelConfig(hidden_size=32, n_layers=2, n_heads=2, vocab_size=vocab.size,
                      max_positions=256)
    result = train_loop(samples, cfg, TrainConfig(total_iters=150, batch_size=8,
                                                  peak_lr=3e-3, seed=0), vocab,
                        tokenizer_hash=vocab.content_hash())
    out = tmp_path_factory.mktemp("models")
    vocab.save(str(out / "tiny.tok"))
    save_checkpoint(str(out / "tiny.ckpt"), result.checkpoint)
    return str(out), vocab, result.checkpoint


@pytest.fixture()
def client(model_dir, tmp_path):
    path, _, _ = model_dir
    app = create_app(path, journal_path=str(tmp_path / "sessions.jsonl"))
    return TestClient(app)


def new_session(client, speakers=("alice", "bob"), conversation=None, references=None):
    body = {"model_id": "tiny", "speakers": list(speakers)}
    if conversation is not None:
        body["conversation"] = conversation
    if references is not None:
        body["references"] = references
    resp = client.post("/v1/sessions", json=body)
    assert resp.status_code == 201, resp.text
    return resp.json()["session_id"]


SEED_TURNS = [
    {"author": "alice", "text": "the game was really good"},
    {"author": "bob", "text": "i think we should play again"},
]

REFS = [
    {"parent": "was it fun", "reply": "totally agree it was great", "reply_id": "r1", "score": 9},
    {"parent": None, "reply": "i never watch boring movies", "reply_id": "r2", "score": 5},
]


class TestModels:
    def test_list_models(self, client):
        resp = client.get("/v1/models")
        assert resp.status_code == 200
        models = resp.json()["models"]
        assert [m["model_id"] for m in models] == ["tiny"]
        assert models[0]["variant"] == "dec"


class TestCreateSession:
    def test_created_with_id(self, client):
        session_id = new_session(client)
        assert len(session_id) == 32

    def test_unknown_model_404(self, client):
        resp = client.post("/v1/sessions", json={"model_id": "ghost", "speakers": ["a"]})
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_model"

    def test_malformed_body_400_with_field(self, client):
        resp = client.post("/v1/sessions", json={"speakers": ["a"]})  # model_id missing
        assert resp.status_code == 400
        assert "model_id" in resp.json()["field"]

    def test_seed_conversation_visible(self, client):
        session_id = new_session(client, conversation=SEED_TURNS)
        view = client.get(f"/v1/sessions/{session_id}").json()
        assert [t["text"] for t in view["turns"]] == [t["text"] for t in SEED_TURNS]
        assert all(t["origin"] == "human" for t in view["turns"])

    def test_get_unknown_session_404(self, client):
        assert client.get("/v1/sessions/doesnotexist").status_code == 404


class TestTurns:
    def test_append_turn(self, client):
        session_id = new_session(client)
        resp = client.post(
            f"/v1/sessions/{session_id}/turns",
            json={"author": "alice", "text": "hello there bob"},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["turns"][-1]["text"] == "hello there bob"
        assert body["token_count"] > 1

    def test_unknown_session_404(self, client):
        resp = client.post("/v1/sessions/nope/turns", json={"author": "a", "text": "hi there"})
        assert resp.status_code == 404

    def test_author_not_in_speakers_422(self, client):
        session_id = new_session(client)
        resp = client.post(
            f"/v1/sessions/{session_id}/turns", json={"author": "carol", "text": "hi"}
        )
        assert resp.status_code == 422

    def test_empty_text_422(self, client):
        session_id = new_session(client)
        resp = client.post(
            f"/v1/sessions/{session_id}/turns", json={"author": "alice", "text": "   "}
        )
        assert resp.status_code == 422


class TestReferences:
    def test_store_eight(self, client):
        session_id = new_session(client)
        tuples = [dict(REFS[0], reply_id=f"r{i}") for i in range(8)]
        resp = client.put(
            f"/v1/sessions/{session_id}/references/alice", json={"tuples": tuples}
        )
        assert resp.status_code == 200
        assert resp.json()["count"] == 8

    def test_nine_rejected_with_cap_message(self, client):
        session_id = new_session(client)
        tuples = [dict(REFS[0], reply_id=f"r{i}") for i in range(9)]
        resp = client.put(
            f"/v1/sessions/{session_id}/references/alice", json={"tuples": tuples}
        )
        assert resp.status_code == 422
        assert "8" in resp.json()["message"]

    def test_empty_list_ok(self, client):
        session_id = new_session(client)
        resp = client.put(
            f"/v1/sessions/{session_id}/references/alice", json={"tuples": []}
        )
        assert resp.status_code == 200
        assert resp.json()["count"] == 0


class TestSample:
    def test_seeded_requests_identical_across_fresh_sessions(self, client):
        outputs = []
        for _ in range(2):
            session_id = new_session(client, conversation=SEED_TURNS, references={"alice": REFS})
            resp = client.post(
                f"/v1/sessions/{session_id}/sample",
                json={"target": "alice", "seed": 123, "max_new_tokens": 12},
            )
            assert resp.status_code == 200, resp.text
            outputs.append(resp.json())
        assert outputs[0]["turn"] == outputs[1]["turn"]
        assert outputs[0]["token_ids"] == outputs[1]["token_ids"]

    def test_target_without_references_still_generates(self, client):
        session_id = new_session(client, conversation=SEED_TURNS)
        resp = client.post(
            f"/v1/sessions/{session_id}/sample",
            json={"target": "bob", "seed": 5, "max_new_tokens": 8},
        )
        assert resp.status_code == 200
        assert resp.json()["layout"]["ref_len"] == 0

    def test_top_p_zero_422(self, client):
        session_id = new_session(client, conversation=SEED_TURNS)
        resp = client.post(
            f"/v1/sessions/{session_id}/sample", json={"target": "alice", "top_p": 0.0}
        )
        assert resp.status_code == 422

    def test_unknown_target_422(self, client):
        session_id = new_session(client)
        resp = client.post(f"/v1/sessions/{session_id}/sample", json={"target": "zed"})
        assert resp.status_code == 422

    def test_sampled_turn_lands_in_transcript_as_model(self, client):
        session_id = new_session(client, conversation=SEED_TURNS)
        resp = client.post(
            f"/v1/sessions/{session_id}/sample",
            json={"target": "alice", "seed": 9, "max_new_tokens": 8},
        )
        transcript = resp.json()["transcript"]
        assert transcript[-1]["origin"] == "model"
        assert transcript[-1]["author"] == "alice"

    def test_layout_lengths_consistent(self, client):
        session_id = new_session(client, conversation=SEED_TURNS, references={"alice": REFS})
        resp = client.post(
            f"/v1/sessions/{session_id}/sample",
            json={"target": "alice", "seed": 1, "max_new_tokens": 6},
        )
        layout = resp.json()["layout"]
        n = len(layout["token_ids"])
        assert len(layout["type_ids"]) == n
        assert len(layout["position_ids"]) == n
        assert len(layout["loss_mask"]) == n
        assert layout["ref_len"] + layout["conv_len"] == n


class TestParityWithLibrary:
    def test_sample_byte_identical_to_direct_call(self, client, model_dir):
        _, vocab, checkpoint = model_dir
        session_id = new_session(client, conversation=SEED_TURNS, references={"alice": REFS})
        resp = client.post(
            f"/v1/sessions/{session_id}/sample",
            json={"target": "alice", "seed": 321, "max_new_tokens": 10},
        )
        served = resp.json()

        conv = ConversationPath(
            conversation_id="seed",
            post_id="",
            turns=tuple(
                Turn(comment_id=f"session/{session_id}/{i}", author=t["author"],
                     text=t["text"], score=0)
                for i, t in enumerate(SEED_TURNS)
            ),
        )
        store = UserReferenceStore()
        store.by_author["alice"] = [
            ReferenceTuple(r["parent"], r["reply"], r["reply_id"], r["score"]) for r in REFS
        ]
        direct = sample_turn(
            checkpoint.params, checkpoint.config, conv, store, "alice", vocab,
            SamplerConfig(seed=321, max_new_tokens=10),
        )
        assert served["turn"]["text"] == direct.text
        assert served["token_ids"] == direct.token_ids
        assert served["token_logprobs"] == direct.token_logprobs
        assert served["logprob"] == direct.logprob

    def test_score_byte_identical_to_direct_call(self, client, model_dir):
        _, vocab, checkpoint = model_dir
        payload = {
            "model_id": "tiny",
            "conversation": SEED_TURNS,
            "references": {"alice": REFS},
        }
        resp = client.post("/v1/score", json=payload)
        assert resp.status_code == 200
        served = resp.json()

        conv = ConversationPath(
            conversation_id="score",
            post_id="",
            turns=tuple(
                Turn(comment_id=f"score/{i}", author=t["author"], text=t["text"], score=0)
                for i, t in enumerate(SEED_TURNS)
            ),
        )
        store = UserReferenceStore()
        store.by_author["alice"] = [
            ReferenceTuple(r["parent"], r["reply"], r["reply_id"], r["score"]) for r in REFS
        ]
        direct = perplexity(checkpoint.params, checkpoint.config, [conv], store, vocab)
        assert json.dumps(served, sort_keys=True) == json.dumps(direct.to_dict(), sort_keys=True)

    def test_score_empty_conversation_422(self, client):
        resp = client.post("/v1/score", json={"model_id": "tiny", "conversation": []})
        assert resp.status_code == 422


class TestIsolationAndDurability:
    def test_interleaved_sessions_stay_isolated(self, client):
        ids = [new_session(client) for _ in range(2)]
        errors = []

        def hammer(session_id, token):
            try:
                for i in range(10):
                    resp = client.post(
                        f"/v1/sessions/{session_id}/turns",
                        json={"author": "alice", "text": f"{token} message {i}"},
                    )
                    assert resp.status_code == 200
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [
            threading.Thread(target=hammer, args=(ids[0], "first")),
            threading.Thread(target=hammer, args=(ids[1], "second")),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        for session_id, token in zip(ids, ("first", "second")):
            view = client.get(f"/v1/sessions/{session_id}").json()
            texts = [t["text"] for t in view["turns"]]
            assert len(texts) == 10
            assert all(token in t for t in texts)
            assert texts == [f"{token} message {i}" for i in range(10)]

    def test_journal_survives_restart(self, model_dir, tmp_path):
        path, _, _ = model_dir
        journal = str(tmp_path / "wal.jsonl")
        app = create_app(path, journal_path=journal)
        with TestClient(app) as client_a:
            body = {"model_id": "tiny", "speakers": ["alice"]}
            session_id = client_a.post("/v1/sessions", json=body).json()["session_id"]
            client_a.post(
                f"/v1/sessions/{session_id}/turns",
                json={"author": "alice", "text": "before the restart"},
            )
        app2 = create_app(path, journal_path=journal)
        with TestClient(app2) as client_b:
            view = client_b.get(f"/v1/sessions/{session_id}")
            assert view.status_code == 200
            assert view.json()["turns"][-1]["text"] == "before the restart"

    def test_store_replay_unit(self, tmp_path):
        journal = str(tmp_path / "wal.jsonl")
        store = SessionStore(journal)
        session = store.create("m", ["a"])
        store.add_turn(session.session_id, "a", "saved text here", origin="human")
        reloaded = SessionStore(journal)
        assert reloaded.get(session.session_id).conversation.turns[0].text == "saved text here"
