import json

import pytest
from fastapi.testclient import TestClient

from alpool.corpus import Corpus, Utterance
from alpool.engine import CommitteeConfig
from alpool.features import FeatureConfig
from alpool.linear import TrainConfig
from alpool.service import AnnotationService, create_app


def utt(uid, domain, tokens, intent=None, tags=None, source="live"):
    tokens = tuple(tokens)
    return Utterance(
        id=uid,
        text=" ".join(tokens),
        tokens=tokens,
        domain=domain,
        intent=intent or f"{domain}Intent",
        bio_tags=tuple(tags) if tags else tuple("O" for _ in tokens),
        source=source,
    )


def seed_corpora():
    train_rows = []
    titles = ["dune", "emma", "hamlet", "ivanhoe", "persuasion", "middlemarch"]
    artists = ["adele", "bowie", "prince", "sting", "madonna", "cher"]
    for i in range(24):
        train_rows.append(
            utt(f"tb{i}", "Books", ["read", titles[i % 6]], "ReadBookIntent", ["O", "B-Title"])
        )
        train_rows.append(
            utt(f"tm{i}", "Music", ["play", artists[i % 6]], "PlayMusicIntent", ["O", "B-Artist"])
        )
    pool_rows = []
    for i in range(30):
        pool_rows.append(utt(f"pb{i}", "Books", ["read", f"book{i}"]))
        pool_rows.append(utt(f"pm{i}", "Music", ["play", f"song{i}"]))
    return Corpus(train_rows), Corpus(pool_rows)


def small_committee():
    return CommitteeConfig(
        feature_config=FeatureConfig(hash_bits=12),
        crf_feature_config=FeatureConfig(ngram_orders=(1,), hash_bits=12),
        binary_train=TrainConfig(epochs=4, seed=0),
        crf_train=TrainConfig(epochs=2, seed=0),
    )


@pytest.fixture()
def service(tmp_path):
    train, pool = seed_corpora()
    return AnnotationService(train, pool, tmp_path / "journal", small_committee())


@pytest.fixture()
def client(service):
    return TestClient(create_app(service))


def create_session(client, batch_size=5, iterations=3, seed=1):
    response = client.post(
        "/sessions",
        json={
            "targets": ["Books"],
            "algorithm": "Majority-CRF",
            "iterations": iterations,
            "batch_size": batch_size,
            "seed": seed,
        },
    )
    assert response.status_code == 201, response.text
    return response.json()


def annotate_all(client, sid, items):
    records = []
    for item in items:
        is_book = item["text"].startswith("read")
        records.append(
            {
                "id": item["id"],
                "domain": "Books" if is_book else "Music",
                "intent": "ReadBookIntent" if is_book else "PlayMusicIntent",
                "bio_tags": ["O"] + ["B-Title" if is_book else "B-Artist"] * (len(item["tokens"]) - 1),
                "annotator": "tester",
                "flag": "ok",
            }
        )
    response = client.post(f"/sessions/{sid}/annotations", json=records)
    assert response.status_code == 200, response.text
    return response.json()


class TestSessionLifecycle:
    def test_create_and_status(self, client):
        created = create_session(client)
        sid = created["id"]
        assert created["status"] == "awaiting_annotation"
        got = client.get(f"/sessions/{sid}").json()
        assert got["status"] == "awaiting_annotation"
        assert got["iteration"] == 0

    def test_invalid_config_is_422(self, client):
        response = client.post(
            "/sessions",
            json={"targets": ["Books"], "algorithm": "Majority-CRF", "iterations": 0, "batch_size": 5},
        )
        assert response.status_code == 422
        body = response.json()
        assert body["code"] == "invalid_config"
        assert any("iterations" in d for d in body["details"])

    def test_unknown_target_is_422(self, client):
        response = client.post(
            "/sessions",
            json={"targets": ["Ghost"], "algorithm": "Majority-CRF", "iterations": 1, "batch_size": 5},
        )
        assert response.status_code == 422

    def test_same_seed_selects_same_first_batch(self, client):
        a = create_session(client, seed=9)
        b = create_session(client, seed=9)
        batch_a = client.get(f"/sessions/{a['id']}/batch").json()["items"]
        batch_b = client.get(f"/sessions/{b['id']}/batch").json()["items"]
        assert [i["id"] for i in batch_a] == [i["id"] for i in batch_b]


class TestBatch:
    def test_batch_shrinks_as_annotations_arrive(self, client):
        sid = create_session(client, batch_size=5)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        assert len(items) == 5
        annotate = items[:2]
        out = annotate_all(client, sid, annotate)
        assert out["accepted"] == 2
        remaining = client.get(f"/sessions/{sid}/batch").json()["items"]
        assert len(remaining) == 3
        assert {i["id"] for i in remaining}.isdisjoint({i["id"] for i in annotate})

    def test_batch_items_carry_scores(self, client):
        sid = create_session(client)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        assert all("y_lg" in item["scores"] for item in items)
        assert all("p_crf" in item["scores"] for item in items)

    def test_done_session_batch_is_409(self, client):
        sid = create_session(client, batch_size=3, iterations=1)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items)
        client.post(f"/sessions/{sid}/advance")
        response = client.get(f"/sessions/{sid}/batch")
        assert response.status_code == 409

    def test_unknown_session_is_404(self, client):
        assert client.get("/sessions/nope/batch").status_code == 404


class TestAnnotations:
    def test_complete_batch_flips_to_retraining(self, client):
        sid = create_session(client, batch_size=4)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        out = annotate_all(client, sid, items)
        assert out["accepted"] == 4
        assert out["status"] == "retraining"

    def test_duplicate_is_409_first_write_wins(self, client):
        sid = create_session(client, batch_size=4)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items[:1])
        record = {
            "id": items[0]["id"],
            "domain": "Music",
            "intent": "PlayMusicIntent",
            "bio_tags": ["O"] * len(items[0]["tokens"]),
            "flag": "ok",
        }
        response = client.post(f"/sessions/{sid}/annotations", json=[record])
        assert response.status_code == 409
        assert items[0]["id"] in response.json()["details"]

    def test_unknown_id_is_422(self, client):
        sid = create_session(client)["id"]
        response = client.post(
            f"/sessions/{sid}/annotations",
            json=[{"id": "bogus", "domain": "Books", "intent": "X", "bio_tags": [], "flag": "ok"}],
        )
        assert response.status_code == 422

    def test_invalid_bio_names_position(self, client):
        sid = create_session(client)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        bad = {
            "id": items[0]["id"],
            "domain": "Books",
            "intent": "ReadBookIntent",
            "bio_tags": ["I-Title"] + ["O"] * (len(items[0]["tokens"]) - 1),
            "flag": "ok",
        }
        response = client.post(f"/sessions/{sid}/annotations", json=[bad])
        assert response.status_code == 422
        assert any("I-Title" in d for d in response.json()["details"])

    def test_unactionable_without_bio_accepted(self, client):
        sid = create_session(client)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        response = client.post(
            f"/sessions/{sid}/annotations",
            json=[{"id": items[0]["id"], "flag": "unactionable", "annotator": "t"}],
        )
        assert response.status_code == 200
        assert response.json()["accepted"] == 1

    def test_correction_supersedes_without_deleting(self, client, service):
        sid = create_session(client, batch_size=4)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items[:1])
        correction = {
            "id": items[0]["id"],
            "domain": "Music",
            "intent": "PlayMusicIntent",
            "bio_tags": ["O"] * len(items[0]["tokens"]),
            "annotator": "reviewer",
            "flag": "ok",
            "supersedes": True,
        }
        response = client.post(f"/sessions/{sid}/annotations", json=[correction])
        assert response.status_code == 200
        assert service.sessions[sid].annotations[items[0]["id"]]["domain"] == "Music"
        # both records remain in the journal
        journal = service._journal_path(sid).read_text()
        annotations = [
            json.loads(l)["record"] for l in journal.splitlines() if json.loads(l)["type"] == "annotation"
        ]
        same_id = [r for r in annotations if r["id"] == items[0]["id"]]
        assert len(same_id) == 2
        assert same_id[1].get("supersedes") == items[0]["id"]

    def test_supersede_without_original_is_422(self, client):
        sid = create_session(client, batch_size=4)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        record = {
            "id": items[0]["id"],
            "domain": "Books",
            "intent": "ReadBookIntent",
            "bio_tags": ["O"] * len(items[0]["tokens"]),
            "flag": "ok",
            "supersedes": True,
        }
        response = client.post(f"/sessions/{sid}/annotations", json=[record])
        assert response.status_code == 422


class TestAdvance:
    def test_three_iteration_loop_to_done(self, client):
        sid = create_session(client, batch_size=4, iterations=3)["id"]
        for expected_iter in range(3):
            snapshot = client.get(f"/sessions/{sid}").json()
            assert snapshot["iteration"] == expected_iter
            items = client.get(f"/sessions/{sid}/batch").json()["items"]
            annotate_all(client, sid, items)
            response = client.post(f"/sessions/{sid}/advance", json={"iteration": expected_iter})
            assert response.status_code == 200
        final = client.get(f"/sessions/{sid}").json()
        assert final["status"] == "done"
        assert final["iteration"] == 3

    def test_incomplete_batch_409_lists_missing(self, client):
        sid = create_session(client, batch_size=4)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items[:2])
        response = client.post(f"/sessions/{sid}/advance")
        assert response.status_code == 409
        missing = response.json()["details"]
        assert sorted(missing) == sorted(i["id"] for i in items[2:])

    def test_stale_iteration_token_is_noop(self, client):
        sid = create_session(client, batch_size=3, iterations=2)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items)
        first = client.post(f"/sessions/{sid}/advance", json={"iteration": 0}).json()
        assert first["iteration"] == 1
        again = client.post(f"/sessions/{sid}/advance", json={"iteration": 0}).json()
        assert again["iteration"] == 1  # no-op, unchanged


class TestMetrics:
    def test_empty_metrics(self, client):
        sid = create_session(client)["id"]
        body = client.get(f"/sessions/{sid}/metrics").json()
        assert body["empty"] is True
        assert body["iterations"] == []

    def test_in_target_fraction(self, client, service):
        sid = create_session(client, batch_size=4)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        records = []
        for k, item in enumerate(items):
            if k < 3:
                records.append(
                    {
                        "id": item["id"],
                        "domain": "Books",
                        "intent": "ReadBookIntent",
                        "bio_tags": ["O"] * len(item["tokens"]),
                        "flag": "ok",
                    }
                )
            else:
                records.append({"id": item["id"], "flag": "out_of_domain"})
        client.post(f"/sessions/{sid}/annotations", json=records)
        body = client.get(f"/sessions/{sid}/metrics").json()
        row = body["iterations"][0]
        assert row["annotated"] == 4
        assert row["in_target_fraction"] == 0.75
        assert row["noise_fraction"] == 0.25

    def test_metrics_survive_restart(self, client, service, tmp_path):
        sid = create_session(client, batch_size=3)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items)
        before = client.get(f"/sessions/{sid}/metrics").json()
        train, pool = seed_corpora()
        reloaded = AnnotationService(train, pool, service.journal_dir, small_committee())
        after = reloaded.session_metrics(sid)
        assert before == after

    def test_unknown_session_metrics_404(self, client):
        assert client.get("/sessions/nope/metrics").status_code == 404


class TestJournalReplay:
    def test_replay_reconstructs_state(self, client, service):
        sid = create_session(client, batch_size=4, iterations=3)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items)
        client.post(f"/sessions/{sid}/advance")
        # annotate part of the second batch, then "crash"
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items[:2])

        original = service.sessions[sid].fingerprint()
        train, pool = seed_corpora()
        reloaded = AnnotationService(train, pool, service.journal_dir, small_committee())
        assert reloaded.sessions[sid].fingerprint() == original

    def test_replay_after_advance_reselects_identically(self, client, service):
        sid = create_session(client, batch_size=3, iterations=2)["id"]
        items = client.get(f"/sessions/{sid}/batch").json()["items"]
        annotate_all(client, sid, items)
        client.post(f"/sessions/{sid}/advance")
        original = service.sessions[sid].fingerprint()

        # Drop the trailing batch_selected event to fake a crash between the
        # advance journal write and the next selection.
        journal = service._journal_path(sid)
        lines = journal.read_text().strip().splitlines()
        events = [json.loads(l) for l in lines]
        assert events[-1]["type"] == "batch_selected"
        journal.write_text("\n".join(lines[:-1]) + "\n")

        train, pool = seed_corpora()
        reloaded = AnnotationService(train, pool, service.journal_dir, small_committee())
        assert reloaded.sessions[sid].fingerprint() == original
