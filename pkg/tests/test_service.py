import pytest
from fastapi.testclient import TestClient

from rubric_loop.review_fixture import seed_review_experiment
from rubric_loop.service import create_app

API = "/api/v1"


@pytest.fixture(scope="module")
def seeded(tmp_path_factory):
    home = tmp_path_factory.mktemp("service-home")
    summary = seed_review_experiment(home, "demo")
    client = TestClient(create_app(home))
    return client, summary


def get(client, path):
    response = client.get(f"{API}{path}")
    assert response.status_code == 200, response.text
    return response.json()


class TestReads:
    def test_experiments_listed(self, seeded):
        client, summary = seeded
        assert get(client, "/experiments")["experiments"] == ["demo"]

    def test_experiment_overview(self, seeded):
        client, _ = seeded
        body = get(client, "/experiments/demo")
        assert body["n_responses"] == 60
        assert any(entry["kind"] == "al" for entry in body["manifest"])

    def test_disagreement_queue(self, seeded):
        client, summary = seeded
        body = get(client, "/experiments/demo/irr/disagreements")
        ids = {item["response_id"] for item in body["items"]}
        assert ids == set(summary["disagreement_ids"])
        assert body["all_resolved"] is False
        for item in body["items"]:
            assert item["response_text"]
            assert item["criteria"]

    def test_iterations_and_error_counts(self, seeded):
        client, summary = seeded
        body = get(client, "/experiments/demo/al/iterations")
        assert body["error_counts"] == [5, 8]

    def test_status_is_overfit(self, seeded):
        client, _ = seeded
        body = get(client, "/experiments/demo/al/status")
        assert body["decision"]["status"] == "overfit_revert"
        assert body["decision"]["revert_to"] == 0

    def test_misclassified_instances_carry_raw_generations(self, seeded):
        client, _ = seeded
        body = get(client, "/experiments/demo/al/misclassified")
        assert body["items"]
        for item in body["items"]:
            assert item["raw_generation"] is not None
            assert "SUBSCORE" in item["raw_generation"]
            assert item["errors"]

    def test_candidates_with_balance_overview(self, seeded):
        client, summary = seeded
        body = get(client, "/experiments/demo/al/candidates")
        ids = [c["response"]["id"] for c in body["candidates"]]
        assert ids == [summary["allowed_candidate"], summary["blocked_candidate"]]
        assert body["balance"]["policy"]["strategy"] == "uniform"


class TestIrrMutations:
    def test_consensus_requires_fresh_digest(self, seeded):
        client, _ = seeded
        response = client.post(
            f"{API}/experiments/demo/irr/consensus",
            json={"base_digest": "stale", "records": []},
        )
        assert response.status_code == 409
        assert response.json()["error"]["code"] == "stale_digest"

    def test_resolve_all_then_advance(self, seeded):
        client, summary = seeded
        queue = get(client, "/experiments/demo/irr/disagreements")
        records = [
            {
                "response_id": item["response_id"],
                "subscore": item["subscore"],
                "resolved_value": item["a_value"],
                "rationale": "reviewers agreed the rubric wording decides it",
                "resolved_by": ["alice", "bob"],
            }
            for item in queue["items"]
        ]
        response = client.post(
            f"{API}/experiments/demo/irr/consensus",
            json={"base_digest": queue["digest"], "records": records},
        )
        assert response.status_code == 200, response.text

        queue = get(client, "/experiments/demo/irr/disagreements")
        assert queue["all_resolved"] is True

        response = client.post(
            f"{API}/experiments/demo/irr/advance",
            json={"base_digest": queue["digest"], "reasoning_drafts": {}},
        )
        assert response.status_code == 200, response.text
        assert response.json()["emitted"] > 0

    def test_advance_without_consensus_is_validation_error(self, tmp_path):
        home = tmp_path / "home2"
        seed_review_experiment(home, "demo2")
        client = TestClient(create_app(home))
        queue = get(client, "/experiments/demo2/irr/disagreements")
        response = client.post(
            f"{API}/experiments/demo2/irr/advance",
            json={"base_digest": queue["digest"], "reasoning_drafts": {}},
        )
        assert response.status_code == 422
        assert "without consensus" in response.json()["error"]["message"]


class TestAlMutations:
    def test_blocked_candidate_rejected_server_side(self, seeded):
        client, summary = seeded
        state = get(client, "/experiments/demo/al/state")
        blocked = summary["blocked_candidate"]
        candidate = next(
            c
            for c in get(client, "/experiments/demo/al/candidates")["candidates"]
            if c["response"]["id"] == blocked
        )
        response = client.post(
            f"{API}/experiments/demo/al/accept",
            json={
                "base_digest": state["digest"],
                "accepted": [{"response_id": blocked, "reasoning": candidate["reasoning"]}],
            },
        )
        assert response.status_code == 422
        assert "balance" in response.json()["error"]["message"]

    def test_stale_digest_conflict_on_accept(self, seeded):
        client, summary = seeded
        response = client.post(
            f"{API}/experiments/demo/al/accept",
            json={"base_digest": "not-current", "accepted": []},
        )
        assert response.status_code == 409

    def test_revert_applies_overfit_decision(self, tmp_path):
        home = tmp_path / "home3"
        summary = seed_review_experiment(home, "demo3")
        client = TestClient(create_app(home))
        state = get(client, "/experiments/demo3/al/state")
        response = client.post(
            f"{API}/experiments/demo3/al/revert", json={"base_digest": state["digest"]}
        )
        assert response.status_code == 200, response.text
        assert response.json()["reverted_to"] == 0
        # the accepted exemplar returned to the pool
        new_state = get(client, "/experiments/demo3/al/state")
        assert summary["accepted_first_round"] in new_state["state"]["pool_ids"]

    def test_concurrent_advance_second_writer_conflicts(self, tmp_path):
        home = tmp_path / "home4"
        summary = seed_review_experiment(home, "demo4")
        client = TestClient(create_app(home))
        state = get(client, "/experiments/demo4/al/state")
        allowed = summary["allowed_candidate"]
        candidate = next(
            c
            for c in get(client, "/experiments/demo4/al/candidates")["candidates"]
            if c["response"]["id"] == allowed
        )
        body = {
            "base_digest": state["digest"],
            "accepted": [{"response_id": allowed, "reasoning": candidate["reasoning"]}],
        }
        first = client.post(f"{API}/experiments/demo4/al/accept", json=body)
        assert first.status_code == 200, first.text
        second = client.post(f"{API}/experiments/demo4/al/accept", json=body)
        assert second.status_code == 409

    def test_run_endpoint_executes_validation(self, tmp_path):
        home = tmp_path / "home5"
        seed_review_experiment(home, "demo5")
        client = TestClient(create_app(home))
        state = get(client, "/experiments/demo5/al/state")
        response = client.post(
            f"{API}/experiments/demo5/al/run", json={"base_digest": state["digest"]}
        )
        assert response.status_code == 200, response.text
        # echo-gold default backend scores the pool perfectly
        assert response.json()["iteration"]["error_count"] == 0


def test_lock_conflict_maps_to_423(tmp_path):
    home = tmp_path / "home6"
    seed_review_experiment(home, "demo6")
    client = TestClient(create_app(home))
    from rubric_loop.storage import ExperimentStore

    store = ExperimentStore(home, "demo6")
    lock = store.root / "LOCK"
    lock.write_text("held")
    try:
        state = get(client, "/experiments/demo6/al/state")
        response = client.post(
            f"{API}/experiments/demo6/al/run", json={"base_digest": state["digest"]}
        )
        assert response.status_code == 423
    finally:
        lock.unlink()
