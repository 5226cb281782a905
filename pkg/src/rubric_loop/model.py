"""Domain types shared by every module: rubrics, responses, scores, exemplars.

Pure data with validation; no I/O. All types are immutable after construction
and safe to share across threads. Mapping-valued fields are plain dicts by
Python convention: treat them as frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

from .errors import ValidationError


def fold_name(name: str) -> str:
    """Canonical form used to match subscore names: lowercase, spaces to underscores."""
    return name.strip().lower().replace(" ", "_")


class SubscoreKind(str, Enum):
    CONCEPT = "concept"
    REASONING = "reasoning"


class ExemplarSource(str, Enum):
    IRR_AGREED = "irr_agreed"
    IRR_DISAGREED_CONSENSUS = "irr_disagreed_consensus"
    ACTIVE_LEARNING = "active_learning"


@dataclass(frozen=True)
class Subscore:
    """One binary rubric item worth exactly one point."""

    name: str
    kind: SubscoreKind
    criteria: str
    points: int = 1

    def __post_init__(self):
        if not self.name.strip():
            raise ValidationError("subscore name must be non-empty")
        if self.points != 1:
            raise ValidationError(f"subscore {self.name!r}: points must be 1, got {self.points}")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind.value, "criteria": self.criteria, "points": self.points}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Subscore":
        return cls(name=d["name"], kind=SubscoreKind(d["kind"]), criteria=d["criteria"], points=d.get("points", 1))


@dataclass(frozen=True)
class Rubric:
    """The scoring contract for one question: an ordered list of binary subscores."""

    question_id: str
    question_text: str
    subscores: tuple[Subscore, ...]
    max_total: int

    def __post_init__(self):
        object.__setattr__(self, "subscores", tuple(self.subscores))
        n = len(self.subscores)
        if not 1 <= n <= 8:
            raise ValidationError(f"rubric {self.question_id!r}: expected 1..8 subscores, got {n}")
        if self.max_total != n:
            raise ValidationError(
                f"rubric {self.question_id!r}: max_total {self.max_total} != subscore count {n}"
            )
        folded = [fold_name(s.name) for s in self.subscores]
        if len(set(folded)) != n:
            raise ValidationError(f"rubric {self.question_id!r}: duplicate subscore names after folding")

    @property
    def subscore_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subscores)

    def subscore(self, name: str) -> Subscore:
        wanted = fold_name(name)
        for s in self.subscores:
            if fold_name(s.name) == wanted:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "question_text": self.question_text,
            "subscores": [s.to_dict() for s in self.subscores],
            "max_total": self.max_total,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Rubric":
        return cls(
            question_id=d["question_id"],
            question_text=d["question_text"],
            subscores=tuple(Subscore.from_dict(s) for s in d["subscores"]),
            max_total=d["max_total"],
        )


@dataclass(frozen=True)
class StudentResponse:
    """A single free-text answer. Text is trimmed of outer whitespace only;
    internal casing and spelling are preserved."""

    id: str
    question_id: str
    text: str

    def __post_init__(self):
        object.__setattr__(self, "text", self.text.strip())
        if not self.text:
            raise ValidationError(f"response {self.id!r}: text is empty after trimming")
        if not self.id:
            raise ValidationError("response id must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "question_id": self.question_id, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StudentResponse":
        return cls(id=d["id"], question_id=d["question_id"], text=d["text"])


@dataclass(frozen=True)
class ScoreVector:
    """Binary per-subscore assignments for one response, plus the derived total."""

    response_id: str
    by_subscore: dict[str, int]
    total: int

    def __post_init__(self):
        object.__setattr__(self, "by_subscore", dict(self.by_subscore))

    @classmethod
    def from_values(cls, response_id: str, by_subscore: Mapping[str, int]) -> "ScoreVector":
        """Build a vector with the total derived from the values."""
        values = dict(by_subscore)
        return cls(response_id=response_id, by_subscore=values, total=sum(values.values()))

    def to_dict(self) -> dict[str, Any]:
        return {"response_id": self.response_id, "by_subscore": dict(self.by_subscore), "total": self.total}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoreVector":
        return cls(response_id=d["response_id"], by_subscore=dict(d["by_subscore"]), total=d["total"])


@dataclass(frozen=True)
class RaterScores:
    """One human rater's score vectors over a sample of responses."""

    rater_id: str
    scores: tuple[ScoreVector, ...]

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(self.scores))
        ids = [v.response_id for v in self.scores]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"rater {self.rater_id!r}: duplicate score vectors for {dupes}")

    def by_response(self) -> dict[str, ScoreVector]:
        return {v.response_id: v for v in self.scores}

    def to_dict(self) -> dict[str, Any]:
        return {"rater_id": self.rater_id, "scores": [v.to_dict() for v in self.scores]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RaterScores":
        return cls(rater_id=d["rater_id"], scores=tuple(ScoreVector.from_dict(v) for v in d["scores"]))


@dataclass(frozen=True)
class CotExemplar:
    """A labeled response carried in the prompt.

    ``reasoning`` maps subscore name to one explanation paragraph (evidence
    quote, rubric reference, verdict). The map may be partial until a human
    finishes editing; present entries must be non-empty. Rendering in a
    chain-of-thought prompt requires full coverage.
    """

    response: StudentResponse
    gold: ScoreVector
    reasoning: dict[str, str] = field(default_factory=dict)
    source: ExemplarSource = ExemplarSource.IRR_AGREED

    def __post_init__(self):
        object.__setattr__(self, "reasoning", dict(self.reasoning))
        for name, text in self.reasoning.items():
            if not text.strip():
                raise ValidationError(
                    f"exemplar {self.response.id!r}: empty reasoning for subscore {name!r}"
                )
        if self.gold.response_id != self.response.id:
            raise ValidationError(
                f"exemplar {self.response.id!r}: gold vector is for {self.gold.response_id!r}"
            )

    def has_full_reasoning(self, rubric: Rubric) -> bool:
        have = {fold_name(k) for k in self.reasoning}
        return all(fold_name(n) in have for n in rubric.subscore_names)

    def to_dict(self) -> dict[str, Any]:
        return {
            "response": self.response.to_dict(),
            "gold": self.gold.to_dict(),
            "reasoning": dict(self.reasoning),
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CotExemplar":
        return cls(
            response=StudentResponse.from_dict(d["response"]),
            gold=ScoreVector.from_dict(d["gold"]),
            reasoning=dict(d["reasoning"]),
            source=ExemplarSource(d["source"]),
        )


@dataclass(frozen=True)
class Generation:
    """Verbatim model output plus usage metadata, retained for audit."""

    prompt_hash: str
    raw_text: str
    model_id: str
    latency_ms: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    attempts: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt_hash": self.prompt_hash,
            "raw_text": self.raw_text,
            "model_id": self.model_id,
            "latency_ms": self.latency_ms,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Generation":
        return cls(**d)


def validate_score_vector(vector: ScoreVector, rubric: Rubric) -> list[str]:
    """Return every invariant violation of ``vector`` against ``rubric``.

    Violations are data, not failures: an empty list means the vector is valid.
    """
    violations: list[str] = []
    rubric_names = {fold_name(n): n for n in rubric.subscore_names}
    vector_names = {fold_name(k): k for k in vector.by_subscore}

    for folded, original in rubric_names.items():
        if folded not in vector_names:
            violations.append(f"missing subscore {original}")
    for folded, original in vector_names.items():
        if folded not in rubric_names:
            violations.append(f"extra key {original}")
    for key, value in vector.by_subscore.items():
        if value not in (0, 1):
            violations.append(f"non-binary value {value!r} for subscore {key}")
    declared, actual = vector.total, sum(vector.by_subscore.values())
    if declared != actual:
        violations.append(f"total mismatch: declared {declared}, sum {actual}")
    return violations


def total_of(vector: ScoreVector) -> int:
    """Sum of the binary subscore values (key order is irrelevant)."""
    return sum(vector.by_subscore.values())
