"""Synthetic fixture data and scripted mock backends.

Everything here is deterministic: response texts and gold labels derive from
SHA-256 of stable keys, so the bundled fixture is identical on every machine.
The scripted backends close over a dataset and reply to a filled prompt by
locating the target response text after the prompt's final header, which is
how an "echo gold" or fault-injecting backend can answer without a network.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Collection, Mapping, Sequence

from .active_learning import ErrorTag, TagDirection, draft_reasoning
from .errors import ValidationError
from .model import (
    CotExemplar,
    ExemplarSource,
    RaterScores,
    Rubric,
    ScoreVector,
    StudentResponse,
    Subscore,
    SubscoreKind,
    fold_name,
)
from .prompting import TARGET_HEADER, render_score_block
from .storage import Dataset, write_dataset, write_rubric

FIXTURE_QUESTION_ID = "q_water_model"

_SIZE_WORDS = ["big", "small", "wide", "thin"]
_TARGETS = ["how much water moves", "the amount of rain", "where the water goes", "the water flow"]
_DIRECTIONS = [
    "the runoff arrow points uphill which is wrong",
    "the runoff arrow should go downhill",
    "water cannot flow up the slope",
    "the arrows point the right way",
]
_PRINCIPLES = [
    "water in must equal water out",
    "matter is conserved so absorption cannot beat rainfall",
    "you cannot absorb more rain than falls",
    "because the ground soaks up some of it",
]


def _bit(key: str) -> int:
    return int(hashlib.sha256(key.encode("utf-8")).hexdigest()[:8], 16) % 2


def _pick(options: Sequence[str], key: str) -> str:
    return options[int(hashlib.sha256(key.encode("utf-8")).hexdigest()[:8], 16) % len(options)]


def fixture_rubric(question_id: str = FIXTURE_QUESTION_ID) -> Rubric:
    """Four-subscore rubric: two concept points, two reasoning points."""
    return Rubric(
        question_id=question_id,
        question_text=(
            "Look at the diagram of rain, absorption, and runoff. Name two things "
            "that are wrong in the diagram and explain why they are wrong."
        ),
        subscores=(
            Subscore(
                name="arrow_size",
                kind=SubscoreKind.CONCEPT,
                criteria="States that arrow size stands for the amount of water.",
            ),
            Subscore(
                name="arrow_size_reasoning",
                kind=SubscoreKind.REASONING,
                criteria=(
                    "Uses conservation of matter to argue the absorption arrow "
                    "cannot be larger than the rainfall arrow."
                ),
            ),
            Subscore(
                name="runoff_direction",
                kind=SubscoreKind.CONCEPT,
                criteria="Identifies that the runoff arrow points the wrong way (uphill).",
            ),
            Subscore(
                name="runoff_direction_reasoning",
                kind=SubscoreKind.REASONING,
                criteria="Explains that water flows downhill, so runoff must follow the slope.",
            ),
        ),
        max_total=4,
    )


def fixture_dataset(n_responses: int = 60, seed: int = 7, question_id: str = FIXTURE_QUESTION_ID) -> Dataset:
    """Deterministic synthetic dataset with unique response texts."""
    rubric = fixture_rubric(question_id)
    responses = []
    gold = []
    texts: set[str] = set()
    for i in range(n_responses):
        rid = f"r{i:03d}"
        text = (
            f"The {_pick(_SIZE_WORDS, f'{seed}|{rid}|size')} arrow shows "
            f"{_pick(_TARGETS, f'{seed}|{rid}|target')}, and "
            f"{_pick(_DIRECTIONS, f'{seed}|{rid}|dir')} "
            f"{_pick(_PRINCIPLES, f'{seed}|{rid}|why')} (sample {rid})"
        )
        if text in texts:
            raise ValidationError(f"fixture text collision at {rid}")
        texts.add(text)
        responses.append(StudentResponse(id=rid, question_id=question_id, text=text))
        values = {
            name: _bit(f"{seed}|{rid}|{name}|gold") for name in rubric.subscore_names
        }
        gold.append(ScoreVector.from_values(rid, values))
    return Dataset(question_id=question_id, rubric=rubric, responses=tuple(responses), gold=tuple(gold))


def write_fixture(directory: str | Path, n_responses: int = 60, seed: int = 7) -> tuple[Path, Path]:
    """Write the bundled fixture as rubric.yaml plus dataset.jsonl; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dataset = fixture_dataset(n_responses=n_responses, seed=seed)
    rubric_path = directory / "rubric.yaml"
    dataset_path = directory / "dataset.jsonl"
    write_rubric(dataset.rubric, rubric_path)
    write_dataset(dataset, dataset_path)
    return dataset_path, rubric_path


def exemplars_from_gold(
    dataset: Dataset, ids: Sequence[str], source: ExemplarSource = ExemplarSource.IRR_AGREED
) -> list[CotExemplar]:
    """Gold-labeled exemplars with scaffolded reasoning, for tests and demos."""
    response_map = dataset.response_by_id()
    gold_map = dataset.gold_by_id()
    out = []
    for rid in ids:
        response = response_map[rid]
        gold = gold_map[rid]
        out.append(
            CotExemplar(
                response=response,
                gold=gold,
                reasoning=draft_reasoning(response.text, gold, dataset.rubric),
                source=source,
            )
        )
    return out


def balanced_exemplar_ids(dataset: Dataset, minimum: int = 1) -> list[str]:
    """Smallest greedy prefix of ids giving >= minimum positives and negatives
    per subscore."""
    need: dict[tuple[str, int], int] = {}
    for name in dataset.rubric.subscore_names:
        need[(name, 1)] = minimum
        need[(name, 0)] = minimum
    chosen: list[str] = []
    gold_map = dataset.gold_by_id()
    for rid in sorted(gold_map):
        if all(v <= 0 for v in need.values()):
            break
        gold = gold_map[rid]
        gain = sum(
            1
            for name in dataset.rubric.subscore_names
            if need[(name, gold.by_subscore[name])] > 0
        )
        if gain == 0:
            continue
        chosen.append(rid)
        for name in dataset.rubric.subscore_names:
            need[(name, gold.by_subscore[name])] -= 1
    if any(v > 0 for v in need.values()):
        raise ValidationError("fixture dataset cannot balance all subscores")
    return chosen


def make_rater_scores(
    dataset: Dataset,
    sample_ids: Sequence[str],
    rater_id: str,
    flips: Mapping[str, Collection[str]] | None = None,
) -> RaterScores:
    """A rater who scores the sample at gold, minus the given (id, subscore) flips."""
    flips = flips or {}
    gold_map = dataset.gold_by_id()
    scores = []
    for rid in sorted(sample_ids):
        values = dict(gold_map[rid].by_subscore)
        for name in flips.get(rid, ()):  # flip the requested bits
            for key in list(values):
                if fold_name(key) == fold_name(name):
                    values[key] = 1 - values[key]
        scores.append(ScoreVector.from_values(rid, values))
    return RaterScores(rater_id=rater_id, scores=tuple(scores))


def extract_target_text(prompt: str) -> str:
    """Recover the response under evaluation from a filled prompt."""
    marker = f"{TARGET_HEADER}\n"
    index = prompt.rfind(marker)
    if index < 0:
        raise ValidationError("prompt has no target response section")
    return prompt[index + len(marker) :].strip()


def _target_response(dataset: Dataset, prompt: str) -> StudentResponse:
    text = extract_target_text(prompt)
    for response in dataset.responses:
        if response.text == text:
            return response
    raise ValidationError("target response not found in dataset")


def echo_gold_script(dataset: Dataset) -> Callable[[str], str]:
    """Backend script that emits every response's gold score block."""

    def script(prompt: str) -> str:
        response = _target_response(dataset, prompt)
        gold = dataset.gold_by_id()[response.id]
        reasoning = {
            name: f'The student says "{response.text[:40]}..." which settles {name} directly.'
            for name in dataset.rubric.subscore_names
        }
        return render_score_block(gold, dataset.rubric, reasoning)

    return script


def flip_script(
    dataset: Dataset, flips: Mapping[str, Collection[str]]
) -> Callable[[str], str]:
    """Backend script that emits gold except for the given (id, subscore) flips."""

    def script(prompt: str) -> str:
        response = _target_response(dataset, prompt)
        values = dict(dataset.gold_by_id()[response.id].by_subscore)
        for name in flips.get(response.id, ()):
            for key in list(values):
                if fold_name(key) == fold_name(name):
                    values[key] = 1 - values[key]
        vector = ScoreVector.from_values(response.id, values)
        return render_score_block(vector, dataset.rubric)

    return script


def garbage_script(
    dataset: Dataset, garbage_ids: Collection[str], inner: Callable[[str], str]
) -> Callable[[str], str]:
    """Wrap a script so selected responses get unparseable output."""

    def script(prompt: str) -> str:
        response = _target_response(dataset, prompt)
        if response.id in garbage_ids:
            return "I would rather talk about the weather."
        return inner(prompt)

    return script


@dataclass(frozen=True)
class ErrorPattern:
    """One injected faulty-reasoning pattern for loop simulations."""

    pattern_id: str
    instance_ids: tuple[str, ...]
    subscore: str


def repaired_after_exemplar_script(
    dataset: Dataset, patterns: Sequence[ErrorPattern]
) -> Callable[[str], str]:
    """Backend whose injected error patterns heal once addressed in the prompt.

    A pattern is active until any of its instances appears as an exemplar
    (i.e. its text occurs before the prompt's target section); active patterns
    flip their subscore for their whole cohort.
    """
    response_map = dataset.response_by_id()

    def script(prompt: str) -> str:
        cut = prompt.rfind(f"{TARGET_HEADER}\n")
        exemplar_region = prompt[:cut]
        target = _target_response(dataset, prompt)
        values = dict(dataset.gold_by_id()[target.id].by_subscore)
        for pattern in patterns:
            repaired = any(
                response_map[rid].text in exemplar_region for rid in pattern.instance_ids
            )
            if repaired or target.id not in pattern.instance_ids:
                continue
            for key in list(values):
                if fold_name(key) == fold_name(pattern.subscore):
                    values[key] = 1 - values[key]
        vector = ScoreVector.from_values(target.id, values)
        return render_score_block(vector, dataset.rubric)

    return script


def tags_for_patterns(
    patterns: Sequence[ErrorPattern], misclassified_ids: Collection[str], gold: Mapping[str, ScoreVector]
) -> list[ErrorTag]:
    """Simulated-oracle tags: each active pattern tagged over its misclassified cohort."""
    tags = []
    for pattern in patterns:
        hit = sorted(set(pattern.instance_ids) & set(misclassified_ids))
        if not hit:
            continue
        # Flipped gold=0 means the backend answered 1: a false positive.
        direction = (
            TagDirection.FP
            if gold[hit[0]].by_subscore.get(pattern.subscore, 0) == 0
            else TagDirection.FN
        )
        tags.append(
            ErrorTag(
                pattern_id=pattern.pattern_id,
                description=f"injected pattern {pattern.pattern_id} on {pattern.subscore}",
                instance_ids=tuple(hit),
                subscore=pattern.subscore,
                direction=direction,
            )
        )
    return tags
