"""Inter-rater reliability workflow: compare two raters per subscore, surface
disagreements, record consensus resolutions, gate on a kappa threshold, and
emit consensus exemplars for the prompt.

The gate comparison is strict (kappa must exceed the threshold); a subscore
where both raters are constant and identical passes via the degenerate-kappa
rule in :mod:`rubric_loop.metrics`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ValidationError
from .hashing import stable_order
from .metrics import cohen_kappa
from .model import (
    CotExemplar,
    ExemplarSource,
    RaterScores,
    Rubric,
    ScoreVector,
    StudentResponse,
    fold_name,
)

DEFAULT_KAPPA_THRESHOLD = 0.7


@dataclass(frozen=True)
class Disagreement:
    response_id: str
    subscore: str
    a_value: int
    b_value: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_id": self.response_id,
            "subscore": self.subscore,
            "a_value": self.a_value,
            "b_value": self.b_value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Disagreement":
        return cls(**d)


@dataclass(frozen=True)
class IrrRound:
    round_index: int
    rater_a: RaterScores
    rater_b: RaterScores
    kappa_by_subscore: dict[str, float]
    disagreements: tuple[Disagreement, ...]
    threshold: float
    passed: bool

    def __post_init__(self):
        if self.round_index < 1:
            raise ValidationError(f"round index must be >= 1, got {self.round_index}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "round_index": self.round_index,
            "rater_a": self.rater_a.to_dict(),
            "rater_b": self.rater_b.to_dict(),
            "kappa_by_subscore": dict(self.kappa_by_subscore),
            "disagreements": [d.to_dict() for d in self.disagreements],
            "threshold": self.threshold,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "IrrRound":
        return cls(
            round_index=d["round_index"],
            rater_a=RaterScores.from_dict(d["rater_a"]),
            rater_b=RaterScores.from_dict(d["rater_b"]),
            kappa_by_subscore=dict(d["kappa_by_subscore"]),
            disagreements=tuple(Disagreement.from_dict(x) for x in d["disagreements"]),
            threshold=d["threshold"],
            passed=d["passed"],
        )


@dataclass(frozen=True)
class ConsensusRecord:
    response_id: str
    subscore: str
    resolved_value: int
    rationale: str
    resolved_by: tuple[str, ...]

    def __post_init__(self):
        if self.resolved_value not in (0, 1):
            raise ValidationError(f"consensus value must be 0 or 1, got {self.resolved_value}")
        if not self.rationale.strip():
            raise ValidationError(
                f"consensus for ({self.response_id}, {self.subscore}) needs a rationale"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_id": self.response_id,
            "subscore": self.subscore,
            "resolved_value": self.resolved_value,
            "rationale": self.rationale,
            "resolved_by": list(self.resolved_by),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ConsensusRecord":
        return cls(
            response_id=d["response_id"],
            subscore=d["subscore"],
            resolved_value=d["resolved_value"],
            rationale=d["rationale"],
            resolved_by=tuple(d.get("resolved_by", ())),
        )


def sample_for_irr(ids: Sequence[str], fraction: float, seed: int) -> list[str]:
    """Seeded sample of ceil(fraction * n) response ids, reproducible by seed."""
    if not ids:
        raise ValidationError("cannot sample from an empty dataset")
    if not 0 < fraction <= 1:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    count = math.ceil(fraction * len(ids))
    return stable_order(ids, seed, domain="irr-sample")[:count]


def gate_passed(kappa_by_subscore: Mapping[str, float], threshold: float = DEFAULT_KAPPA_THRESHOLD) -> bool:
    """Strict gate: every subscore kappa must exceed the threshold."""
    return all(k > threshold for k in kappa_by_subscore.values())


def compute_round(
    a: RaterScores,
    b: RaterScores,
    rubric: Rubric,
    threshold: float = DEFAULT_KAPPA_THRESHOLD,
    round_index: int = 1,
) -> IrrRound:
    """Per-subscore kappa between two raters plus the exact disagreement list."""
    a_by_id = a.by_response()
    b_by_id = b.by_response()
    if set(a_by_id) != set(b_by_id):
        diff = sorted(set(a_by_id) ^ set(b_by_id))
        raise ValidationError(f"raters scored different response sets: {diff}")
    if not a_by_id:
        raise ValidationError("raters scored no responses")

    ids = sorted(a_by_id)
    kappas: dict[str, float] = {}
    disagreements: list[Disagreement] = []
    for name in rubric.subscore_names:
        folded = fold_name(name)

        def value(vec: ScoreVector) -> int:
            for key, val in vec.by_subscore.items():
                if fold_name(key) == folded:
                    return val
            raise ValidationError(f"vector {vec.response_id!r} lacks subscore {name!r}")

        labels_a = [value(a_by_id[i]) for i in ids]
        labels_b = [value(b_by_id[i]) for i in ids]
        kappas[name] = cohen_kappa(labels_a, labels_b)
        for rid, va, vb in zip(ids, labels_a, labels_b):
            if va != vb:
                disagreements.append(Disagreement(rid, name, va, vb))

    disagreements.sort(key=lambda d: (d.response_id, rubric.subscore_names.index(d.subscore)))
    return IrrRound(
        round_index=round_index,
        rater_a=a,
        rater_b=b,
        kappa_by_subscore=kappas,
        disagreements=tuple(disagreements),
        threshold=threshold,
        passed=gate_passed(kappas, threshold),
    )


def emit_exemplars(
    round_: IrrRound,
    consensus: Sequence[ConsensusRecord],
    reasoning_drafts: Mapping[str, Mapping[str, str]],
    responses: Mapping[str, StudentResponse],
) -> list[CotExemplar]:
    """Turn a completed round into prompt exemplars.

    Agreed responses become ``irr_agreed`` exemplars; responses with any
    disagreement become ``irr_disagreed_consensus`` and their disputed
    subscores take the consensus value regardless of either rater. Every
    disagreement must be covered by a consensus record. Consensus rationales
    seed the reasoning for disputed subscores; ``reasoning_drafts``
    (response id -> subscore -> text) supply or override the rest.
    """
    by_pair = {(fold_name(c.subscore), c.response_id): c for c in consensus}
    uncovered = [
        (d.response_id, d.subscore)
        for d in round_.disagreements
        if (fold_name(d.subscore), d.response_id) not in by_pair
    ]
    if uncovered:
        raise ValidationError(f"disagreements without consensus: {uncovered}")

    a_by_id = round_.rater_a.by_response()
    disagreed_ids = {d.response_id for d in round_.disagreements}
    agreed: list[CotExemplar] = []
    resolved: list[CotExemplar] = []

    for rid in sorted(a_by_id):
        if rid not in responses:
            raise ValidationError(f"no response text available for {rid!r}")
        values = dict(a_by_id[rid].by_subscore)
        reasoning: dict[str, str] = {}
        for d in round_.disagreements:
            if d.response_id != rid:
                continue
            record = by_pair[(fold_name(d.subscore), rid)]
            for key in list(values):
                if fold_name(key) == fold_name(d.subscore):
                    values[key] = record.resolved_value
            reasoning[d.subscore] = record.rationale
        # Human-edited drafts take precedence over consensus seeds.
        for name, text in reasoning_drafts.get(rid, {}).items():
            reasoning[name] = text
        exemplar = CotExemplar(
            response=responses[rid],
            gold=ScoreVector.from_values(rid, values),
            reasoning={k: v for k, v in reasoning.items() if v.strip()},
            source=(
                ExemplarSource.IRR_DISAGREED_CONSENSUS
                if rid in disagreed_ids
                else ExemplarSource.IRR_AGREED
            ),
        )
        (resolved if rid in disagreed_ids else agreed).append(exemplar)

    return agreed + resolved


def export_disagreement_worksheet(
    round_: IrrRound,
    consensus: Iterable[ConsensusRecord],
    path: str | Path,
) -> None:
    """CSV worksheet of disagreements with any recorded consensus values."""
    by_pair = {(fold_name(c.subscore), c.response_id): c for c in consensus}
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["response_id", "subscore", "rater_a", "rater_b", "consensus", "rationale"])
        for d in round_.disagreements:
            record = by_pair.get((fold_name(d.subscore), d.response_id))
            writer.writerow(
                [
                    d.response_id,
                    d.subscore,
                    d.a_value,
                    d.b_value,
                    "" if record is None else record.resolved_value,
                    "" if record is None else record.rationale,
                ]
            )
