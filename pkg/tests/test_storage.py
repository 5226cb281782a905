import json

import pytest

from rubric_loop.errors import LockConflictError, ValidationError
from rubric_loop.fixtures import fixture_dataset, write_fixture
from rubric_loop.storage import (
    Dataset,
    ExperimentStore,
    Split,
    load_dataset,
    load_rubric,
    split_dataset,
)


@pytest.fixture()
def fixture_files(tmp_path):
    return write_fixture(tmp_path / "data", n_responses=20)


class TestLoadDataset:
    def test_well_formed(self, tmp_path):
        dataset_path, rubric_path = write_fixture(tmp_path, n_responses=5)
        rubric = load_rubric(rubric_path)
        dataset = load_dataset(dataset_path, rubric)
        assert len(dataset.responses) == 5
        assert dataset.ids == [g.response_id for g in dataset.gold]

    def test_unknown_subscore_names_line(self, tmp_path, fixture_files):
        dataset_path, rubric_path = fixture_files
        rubric = load_rubric(rubric_path)
        lines = dataset_path.read_text().splitlines()
        record = json.loads(lines[2])
        record["gold"]["mystery_subscore"] = 1
        lines[2] = json.dumps(record)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValidationError) as err:
            load_dataset(bad, rubric)
        assert ":3:" in str(err.value)
        assert "mystery_subscore" in str(err.value)

    def test_duplicate_id(self, tmp_path, fixture_files):
        dataset_path, rubric_path = fixture_files
        rubric = load_rubric(rubric_path)
        lines = dataset_path.read_text().splitlines()
        lines.append(lines[0])
        bad = tmp_path / "dup.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValidationError) as err:
            load_dataset(bad, rubric)
        assert "duplicate" in str(err.value)

    def test_malformed_json_names_line(self, tmp_path, fixture_files):
        dataset_path, rubric_path = fixture_files
        rubric = load_rubric(rubric_path)
        bad = tmp_path / "broken.jsonl"
        bad.write_text(dataset_path.read_text() + "{not json\n")
        with pytest.raises(ValidationError) as err:
            load_dataset(bad, rubric)
        assert ":21:" in str(err.value)

    def test_dataset_round_trip(self, tmp_path):
        dataset = fixture_dataset(n_responses=8)
        from rubric_loop.storage import write_dataset

        path = tmp_path / "ds.jsonl"
        write_dataset(dataset, path)
        again = load_dataset(path, dataset.rubric)
        assert again == dataset


class TestSplitDataset:
    def test_fifty_gives_forty_ten(self):
        dataset = fixture_dataset(n_responses=50)
        split = split_dataset(dataset, 0.8, seed=1)
        assert (len(split.train_ids), len(split.test_ids)) == (40, 10)

    def test_same_seed_identical(self):
        dataset = fixture_dataset(n_responses=30)
        a = split_dataset(dataset, 0.8, seed=9)
        b = split_dataset(dataset, 0.8, seed=9)
        assert a == b

    def test_different_seed_differs(self):
        dataset = fixture_dataset(n_responses=30)
        assert split_dataset(dataset, 0.8, seed=1) != split_dataset(dataset, 0.8, seed=2)

    def test_fifty_two_rounds_to_ten_test(self):
        # round(0.2 * 52) = round(10.4) = 10, train takes the remainder
        dataset = fixture_dataset(n_responses=52)
        split = split_dataset(dataset, 0.8, seed=0)
        assert (len(split.train_ids), len(split.test_ids)) == (42, 10)

    def test_partitions_disjoint_and_cover(self):
        dataset = fixture_dataset(n_responses=37)
        split = split_dataset(dataset, 0.8, seed=4)
        assert set(split.train_ids) | set(split.test_ids) == set(dataset.ids)
        assert not set(split.train_ids) & set(split.test_ids)

    def test_too_small(self):
        dataset = fixture_dataset(n_responses=4)
        with pytest.raises(ValidationError):
            split_dataset(dataset, 0.8, seed=0)

    def test_split_round_trip(self):
        dataset = fixture_dataset(n_responses=20)
        split = split_dataset(dataset, 0.8, seed=2)
        assert Split.from_dict(split.to_dict()) == split


class TestExperimentStore:
    def make_store(self, tmp_path) -> ExperimentStore:
        store = ExperimentStore(tmp_path / "home", "exp")
        store.create({"gateway": {"backend": "mock"}})
        return store

    def test_persist_then_load(self, tmp_path):
        store = self.make_store(tmp_path)
        payload = {"seed": 3, "train_ids": ["a"], "test_ids": ["b"], "ratio": 0.8}
        digest = store.put_record("split", payload, meta={"type": "split"})
        doc = store.get_record("split", digest)
        assert doc["payload"] == payload

    def test_tampered_file_detected(self, tmp_path):
        store = self.make_store(tmp_path)
        digest = store.put_record("split", {"seed": 1}, meta={})
        path = store.root / "splits" / f"{digest}.json"
        doc = json.loads(path.read_text())
        doc["payload"]["seed"] = 999
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError) as err:
            store.get_record("split", digest)
        assert "digest" in str(err.value)

    def test_second_writer_conflicts(self, tmp_path):
        store = self.make_store(tmp_path)
        other = ExperimentStore(tmp_path / "home", "exp")
        with store.lock():
            with pytest.raises(LockConflictError):
                with other.lock():
                    pass

    def test_lock_released_after_use(self, tmp_path):
        store = self.make_store(tmp_path)
        with store.lock():
            pass
        with store.lock():
            pass

    def test_manifest_append_only_ordering(self, tmp_path):
        store = self.make_store(tmp_path)
        d1 = store.put_record("split", {"seed": 1}, meta={})
        d2 = store.put_record("al", {"pool_ids": []}, meta={"type": "state"})
        d3 = store.put_record("split", {"seed": 2}, meta={})
        assert store.manifest() == [("split", d1), ("al", d2), ("split", d3)]
        latest = store.latest("split")
        assert latest[0] == d3

    def test_records_immutable_same_content_same_digest(self, tmp_path):
        store = self.make_store(tmp_path)
        d1 = store.put_record("split", {"seed": 1}, meta={})
        d2 = store.put_record("split", {"seed": 1}, meta={})
        assert d1 == d2
        assert len(store.manifest()) == 2  # history retained


def test_dataset_invariant_alignment():
    dataset = fixture_dataset(n_responses=6)
    with pytest.raises(ValidationError):
        Dataset(
            question_id=dataset.question_id,
            rubric=dataset.rubric,
            responses=dataset.responses,
            gold=tuple(reversed(dataset.gold)),
        )
