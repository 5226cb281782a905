"""Dataset loading, deterministic splits, and append-only experiment
persistence.

Experiment records are content-addressed JSON files (SHA-256 of the canonical
serialization, verified on load) listed in an append-only MANIFEST. One
advisory lock file per experiment enforces the single-writer contract; reads
never need the lock because records are immutable once written. File formats
are documented in FORMAT.md.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import yaml

from .errors import LockConflictError, ValidationError
from .hashing import canonical_json, digest_of, stable_order
from .model import Rubric, ScoreVector, StudentResponse, validate_score_vector

RECORD_DIRS = {
    "split": "splits",
    "irr": "irr",
    "prompt": "prompts",
    "run": "runs",
    "eval": "runs",
    "al": "al",
}


@dataclass(frozen=True)
class Dataset:
    """One question's responses with gold labels, validated against the rubric."""

    question_id: str
    rubric: Rubric
    responses: tuple[StudentResponse, ...]
    gold: tuple[ScoreVector, ...]

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "gold", tuple(self.gold))
        if [r.id for r in self.responses] != [g.response_id for g in self.gold]:
            raise ValidationError("gold labels are not aligned 1:1 with responses")
        seen: set[str] = set()
        for r in self.responses:
            if r.id in seen:
                raise ValidationError(f"duplicate response id {r.id!r}")
            seen.add(r.id)
            if r.question_id != self.question_id:
                raise ValidationError(
                    f"response {r.id!r} belongs to question {r.question_id!r}"
                )
        for g in self.gold:
            problems = validate_score_vector(g, self.rubric)
            if problems:
                raise ValidationError(f"gold for {g.response_id!r} invalid: {problems}")

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.responses]

    def response_by_id(self) -> dict[str, StudentResponse]:
        return {r.id: r for r in self.responses}

    def gold_by_id(self) -> dict[str, ScoreVector]:
        return {g.response_id: g for g in self.gold}

    def subset(self, ids: Sequence[str]) -> "Dataset":
        wanted = set(ids)
        missing = wanted - set(self.ids)
        if missing:
            raise ValidationError(f"unknown response ids: {sorted(missing)}")
        responses = tuple(r for r in self.responses if r.id in wanted)
        gold_map = self.gold_by_id()
        return Dataset(
            question_id=self.question_id,
            rubric=self.rubric,
            responses=responses,
            gold=tuple(gold_map[r.id] for r in responses),
        )


@dataclass(frozen=True)
class Split:
    seed: int
    ratio: float
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        # Partitions are sets; store them sorted so equality and digests are
        # independent of the shuffle order that produced them.
        object.__setattr__(self, "train_ids", tuple(sorted(self.train_ids)))
        object.__setattr__(self, "test_ids", tuple(sorted(self.test_ids)))
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValidationError(f"split partitions overlap: {sorted(overlap)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "ratio": self.ratio,
            "train_ids": sorted(self.train_ids),
            "test_ids": sorted(self.test_ids),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Split":
        return cls(
            seed=d["seed"],
            ratio=d["ratio"],
            train_ids=tuple(d["train_ids"]),
            test_ids=tuple(d["test_ids"]),
        )


def load_rubric(path: str | Path) -> Rubric:
    """Read a rubric from its human-editable YAML document."""
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: rubric document must be a mapping")
    try:
        return Rubric.from_dict(data)
    except KeyError as exc:
        raise ValidationError(f"{path}: rubric missing field {exc}") from exc


def write_rubric(rubric: Rubric, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(rubric.to_dict(), handle, sort_keys=False, allow_unicode=True)


def load_dataset(path: str | Path, rubric: Rubric) -> Dataset:
    """Read line-delimited response records and validate them as a whole.

    Each line is a JSON object with id, question_id, text, and a gold map.
    Any invariant violation aborts with the offending line number.
    """
    responses: list[StudentResponse] = []
    gold: list[ScoreVector] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
            try:
                response = StudentResponse(
                    id=record["id"], question_id=record["question_id"], text=record["text"]
                )
                vector = ScoreVector.from_values(response.id, record["gold"])
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"{path}:{lineno}: missing field: {exc}") from exc
            except ValidationError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if response.id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate response id {response.id!r}")
            seen.add(response.id)
            problems = validate_score_vector(vector, rubric)
            if problems:
                raise ValidationError(f"{path}:{lineno}: gold invalid: {'; '.join(problems)}")
            responses.append(response)
            gold.append(vector)
    if not responses:
        raise ValidationError(f"{path}: dataset is empty")
    return Dataset(
        question_id=rubric.question_id,
        rubric=rubric,
        responses=tuple(responses),
        gold=tuple(gold),
    )


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        gold_map = dataset.gold_by_id()
        for response in dataset.responses:
            record = {
                "id": response.id,
                "question_id": response.question_id,
                "text": response.text,
                "gold": dict(gold_map[response.id].by_subscore),
            }
            handle.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")


def split_dataset(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> Split:
    """Seeded shuffle then prefix cut: test takes round((1 - ratio) * n) ids.

    The shuffle is the SHA-256 ordering from :func:`rubric_loop.hashing.stable_order`,
    so splits replay across platforms and processes.
    """
    n = len(dataset.responses)
    if n < 5:
        raise ValidationError(f"dataset too small to split: {n} responses")
    if not 0 < ratio < 1:
        raise ValidationError(f"ratio must be in (0, 1), got {ratio}")
    test_size = round((1 - ratio) * n)
    ordered = stable_order(dataset.ids, seed, domain="split")
    train = ordered[: n - test_size]
    test = ordered[n - test_size :]
    return Split(seed=seed, ratio=ratio, train_ids=tuple(train), test_ids=tuple(test))


class ExperimentStore:
    """Append-only, content-addressed record store for one experiment.

    Layout: ``<home>/<experiment_id>/{config.json, dataset.ref, MANIFEST,
    splits/, irr/, prompts/, runs/, al/}``. Records are immutable; "current"
    state of any kind is simply its latest MANIFEST entry.
    """

    def __init__(self, home: str | Path, experiment_id: str):
        self.home = Path(home)
        self.experiment_id = experiment_id
        self.root = self.home / experiment_id

    # -- lifecycle ---------------------------------------------------------

    def exists(self) -> bool:
        return (self.root / "MANIFEST").exists()

    def create(self, config: Mapping[str, Any]) -> None:
        if self.exists():
            raise ValidationError(f"experiment {self.experiment_id!r} already exists")
        self.root.mkdir(parents=True, exist_ok=True)
        for directory in sorted(set(RECORD_DIRS.values())):
            (self.root / directory).mkdir(exist_ok=True)
        self._write_file(self.root / "config.json", canonical_json(dict(config)))
        self._write_file(self.root / "MANIFEST", "")

    def config(self) -> dict[str, Any]:
        with open(self.root / "config.json", "r", encoding="utf-8") as handle:
            return json.load(handle)

    def write_dataset_ref(self, dataset_path: Path, rubric_path: Path, dataset_digest: str) -> None:
        ref = {
            "dataset_path": str(dataset_path),
            "rubric_path": str(rubric_path),
            "dataset_digest": dataset_digest,
        }
        self._write_file(self.root / "dataset.ref", canonical_json(ref))

    def dataset_ref(self) -> dict[str, Any]:
        with open(self.root / "dataset.ref", "r", encoding="utf-8") as handle:
            return json.load(handle)

    # -- locking -----------------------------------------------------------

    @contextmanager
    def lock(self) -> Iterator[None]:
        """Advisory single-writer lock; raises LockConflictError when held."""
        lock_path = self.root / "LOCK"
        try:
            fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockConflictError(
                f"experiment {self.experiment_id!r} is locked by another writer"
            ) from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield
        finally:
            try:
                lock_path.unlink()
            except FileNotFoundError:
                pass

    # -- records -----------------------------------------------------------

    def put_record(self, kind: str, payload: Mapping[str, Any], meta: Mapping[str, Any] | None = None) -> str:
        if kind not in RECORD_DIRS:
            raise ValidationError(f"unknown record kind {kind!r}")
        document = {"kind": kind, "meta": dict(meta or {}), "payload": payload}
        digest = digest_of(document)
        path = self.root / RECORD_DIRS[kind] / f"{digest}.json"
        if not path.exists():
            self._write_file(path, canonical_json(document))
        self._append_manifest(kind, digest)
        return digest

    def get_record(self, kind: str, digest: str) -> dict[str, Any]:
        path = self.root / RECORD_DIRS[kind] / f"{digest}.json"
        if not path.exists():
            raise ValidationError(f"no {kind} record {digest}")
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
        document = json.loads(text)
        if digest_of(document) != digest:
            raise ValidationError(f"record {digest} failed digest verification (corrupt file)")
        return document

    def manifest(self) -> list[tuple[str, str]]:
        entries = []
        with open(self.root / "MANIFEST", "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    kind, digest = line.split()
                    entries.append((kind, digest))
        return entries

    def list_records(self, kind: str) -> list[tuple[str, dict[str, Any]]]:
        """(digest, document) pairs of one kind, in manifest (append) order."""
        out = []
        for entry_kind, digest in self.manifest():
            if entry_kind == kind:
                out.append((digest, self.get_record(kind, digest)))
        return out

    def latest(self, kind: str, predicate=None) -> tuple[str, dict[str, Any]] | None:
        for digest, document in reversed(self.list_records(kind)):
            if predicate is None or predicate(document):
                return digest, document
        return None

    # -- internals ---------------------------------------------------------

    def _append_manifest(self, kind: str, digest: str) -> None:
        with open(self.root / "MANIFEST", "a", encoding="utf-8") as handle:
            handle.write(f"{kind} {digest}\n")
            handle.flush()
            os.fsync(handle.fileno())

    @staticmethod
    def _write_file(path: Path, content: str) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(content)
            handle.flush()
            os.fsync(handle.fileno())


def list_experiments(home: str | Path) -> list[str]:
    root = Path(home)
    if not root.exists():
        return []
    return sorted(p.name for p in root.iterdir() if (p / "MANIFEST").exists())
