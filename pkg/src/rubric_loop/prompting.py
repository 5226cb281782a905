"""Deterministic prompt rendering: persona preamble, rubric, output format,
balanced few-shot exemplars with optional reasoning chains.

Rendering is a pure function of the spec: equal specs produce identical bytes,
and exemplar order is semantic (reordering changes the bytes). The score-block
grammar rendered here is the same grammar the completion parser accepts; see
FORMAT.md for the normative description.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import BalanceError, BudgetExceededError, ValidationError
from .hashing import digest_of
from .model import CotExemplar, ExemplarSource, Rubric, ScoreVector, fold_name, validate_score_vector

logger = logging.getLogger(__name__)

RESPONSE_SLOT = "<<RESPONSE>>"
EXEMPLAR_DELIMITER = "### Example"
TARGET_HEADER = "Student response to score:"
EXEMPLAR_RESPONSE_HEADER = "Student response:"

DEFAULT_PERSONA = (
    "You are a middle school science teacher grading a student's answer to a "
    "formative assessment question. Apply the rubric exactly as written: award "
    "each subscore only when its criteria are met, quote the student's own "
    "words as evidence, and explain every decision by referring back to the rubric."
)

# The grammar below is embedded verbatim so the model sees exactly what the
# parser accepts.
DEFAULT_FORMAT_INSTRUCTIONS = (
    "Score the response on these subscores, in this order: {subscore_list}.\n"
    "Answer using exactly this format, one block per subscore:\n"
    "SUBSCORE <name>: <0 or 1>\n"
    "REASONING: <quote the student's evidence, reference the rubric, and state the verdict>\n"
    "Finish with a single line:\n"
    "TOTAL: <sum of all subscore values>"
)


class PromptMode(str, Enum):
    ZERO_SHOT = "zero_shot"
    FEW_SHOT = "few_shot"
    FEW_SHOT_COT = "few_shot_cot"


class BalanceStrategy(str, Enum):
    """How exemplar labels should be balanced across subscores.

    ``min_constraint`` requires at least one positive and one negative per
    subscore. ``uniform`` additionally caps the positive/negative skew;
    ``empirical`` keeps the exemplar positive rate near the dataset's rate.
    """

    MIN_CONSTRAINT = "min_constraint"
    UNIFORM = "uniform"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class BalancePolicy:
    strategy: BalanceStrategy = BalanceStrategy.MIN_CONSTRAINT
    max_skew: int = 1
    rate_tolerance: float = 0.25
    gold_rates: dict[str, float] = field(default_factory=dict)

    def allows_counts(self, counts: Mapping[str, tuple[int, int]]) -> bool:
        """Whether per-subscore (positives, negatives) counts satisfy the policy.

        Used to veto exemplar additions; the minimum constraint itself can
        never be violated by adding, so it always allows.
        """
        if self.strategy == BalanceStrategy.MIN_CONSTRAINT:
            return True
        if self.strategy == BalanceStrategy.UNIFORM:
            return all(abs(pos - neg) <= self.max_skew for pos, neg in counts.values())
        for name, (pos, neg) in counts.items():
            total = pos + neg
            if total == 0:
                continue
            target = self.gold_rates.get(name)
            if target is None:
                continue
            if abs(pos / total - target) > self.rate_tolerance:
                return False
        return True

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy.value,
            "max_skew": self.max_skew,
            "rate_tolerance": self.rate_tolerance,
            "gold_rates": dict(self.gold_rates),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BalancePolicy":
        return cls(
            strategy=BalanceStrategy(d["strategy"]),
            max_skew=d["max_skew"],
            rate_tolerance=d["rate_tolerance"],
            gold_rates=dict(d["gold_rates"]),
        )


@dataclass(frozen=True)
class BalanceReport:
    """Positive/negative exemplar counts per subscore and the satisfaction flag."""

    per_subscore: dict[str, dict[str, int]]
    satisfied: bool
    violations: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_subscore": {k: dict(v) for k, v in self.per_subscore.items()},
            "satisfied": self.satisfied,
            "violations": list(self.violations),
        }


@dataclass(frozen=True)
class PromptSpec:
    """Everything needed to render one prompt deterministically."""

    rubric: Rubric
    persona_preamble: str
    exemplars: tuple[CotExemplar, ...]
    mode: PromptMode
    format_instructions: str = DEFAULT_FORMAT_INSTRUCTIONS

    def __post_init__(self):
        object.__setattr__(self, "exemplars", tuple(self.exemplars))
        if self.mode == PromptMode.ZERO_SHOT and self.exemplars:
            raise ValidationError("zero_shot prompts must not carry exemplars")
        for ex in self.exemplars:
            if ex.response.question_id != self.rubric.question_id:
                raise ValidationError(
                    f"exemplar {ex.response.id!r} is for question {ex.response.question_id!r}, "
                    f"not {self.rubric.question_id!r}"
                )
            problems = validate_score_vector(ex.gold, self.rubric)
            if problems:
                raise ValidationError(f"exemplar {ex.response.id!r} gold invalid: {problems}")
            if self.mode == PromptMode.FEW_SHOT_COT and not ex.has_full_reasoning(self.rubric):
                raise ValidationError(
                    f"exemplar {ex.response.id!r} lacks reasoning for some subscores "
                    "(required in chain-of-thought mode)"
                )

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def to_dict(self) -> dict[str, Any]:
        return {
            "rubric": self.rubric.to_dict(),
            "persona_preamble": self.persona_preamble,
            "exemplars": [e.to_dict() for e in self.exemplars],
            "mode": self.mode.value,
            "format_instructions": self.format_instructions,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PromptSpec":
        return cls(
            rubric=Rubric.from_dict(d["rubric"]),
            persona_preamble=d["persona_preamble"],
            exemplars=tuple(CotExemplar.from_dict(e) for e in d["exemplars"]),
            mode=PromptMode(d["mode"]),
            format_instructions=d["format_instructions"],
        )


@dataclass(frozen=True)
class PromptText:
    """Rendered prompt with a single placeholder slot for the target response."""

    text: str
    balance: BalanceReport | None = None

    def fill(self, response_text: str) -> str:
        if self.text.count(RESPONSE_SLOT) != 1:
            raise ValidationError("prompt must contain exactly one response slot")
        return self.text.replace(RESPONSE_SLOT, response_text)


def implementation_label(spec: PromptSpec) -> str:
    """Pipeline-stage label used in comparison reports.

    ``cot_al`` is chain-of-thought mode whose exemplar set includes
    active-learning additions; otherwise the label is the prompt mode itself.
    """
    if spec.mode == PromptMode.FEW_SHOT_COT and any(
        e.source == ExemplarSource.ACTIVE_LEARNING for e in spec.exemplars
    ):
        return "cot_al"
    return spec.mode.value


def render_rubric_block(rubric: Rubric) -> str:
    lines = []
    for i, sub in enumerate(rubric.subscores, start=1):
        lines.append(f"{i}. {sub.name} ({sub.kind.value}, 1 point): {sub.criteria}")
    return "\n".join(lines)


def subscore_list_text(rubric: Rubric) -> str:
    return ", ".join(rubric.subscore_names)


def substitute_slots(template: str, rubric: Rubric) -> str:
    """Fill the {question}, {rubric} and {subscore_list} slots of a template.

    Literal token replacement, not str.format, so braces in rubric criteria or
    student text cannot break rendering.
    """
    return (
        template.replace("{question}", rubric.question_text)
        .replace("{rubric}", render_rubric_block(rubric))
        .replace("{subscore_list}", subscore_list_text(rubric))
    )


def load_template(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def render_score_block(vector: ScoreVector, rubric: Rubric, reasoning: Mapping[str, str] | None = None) -> str:
    """Render the score grammar for one vector, optionally with reasoning lines."""
    folded_reasoning = {fold_name(k): v for k, v in (reasoning or {}).items()}
    folded_values = {fold_name(k): v for k, v in vector.by_subscore.items()}
    lines = []
    for name in rubric.subscore_names:
        folded = fold_name(name)
        if folded not in folded_values:
            raise ValidationError(f"vector {vector.response_id!r} lacks subscore {name!r}")
        lines.append(f"SUBSCORE {folded}: {folded_values[folded]}")
        text = folded_reasoning.get(folded)
        if text is not None:
            lines.append(f"REASONING: {text}")
    lines.append(f"TOTAL: {sum(folded_values.values())}")
    return "\n".join(lines)


def render_cot_block(exemplar: CotExemplar, rubric: Rubric) -> str:
    """Reasoning-bearing score block for one exemplar, in rubric order.

    Each subscore line carries the exemplar's explanation (evidence quote,
    rubric reference, verdict) so the block demonstrates exactly the grammar
    the model must emit.
    """
    if not exemplar.has_full_reasoning(rubric):
        have = {fold_name(k) for k in exemplar.reasoning}
        missing = [n for n in rubric.subscore_names if fold_name(n) not in have]
        raise ValidationError(
            f"exemplar {exemplar.response.id!r} missing reasoning for {missing}"
        )
    return render_score_block(exemplar.gold, rubric, exemplar.reasoning)


def check_balance(exemplars: Sequence[CotExemplar], rubric: Rubric) -> BalanceReport:
    """Count positive and negative exemplar labels per subscore."""
    per_subscore: dict[str, dict[str, int]] = {
        name: {"positives": 0, "negatives": 0} for name in rubric.subscore_names
    }
    folded_to_name = {fold_name(n): n for n in rubric.subscore_names}
    for ex in exemplars:
        for key, value in ex.gold.by_subscore.items():
            name = folded_to_name.get(fold_name(key))
            if name is None:
                continue
            per_subscore[name]["positives" if value == 1 else "negatives"] += 1
    violations = []
    for name, counts in per_subscore.items():
        if counts["positives"] < 1:
            violations.append(f"subscore {name} lacks a positive instance")
        if counts["negatives"] < 1:
            violations.append(f"subscore {name} lacks a negative instance")
    return BalanceReport(
        per_subscore=per_subscore, satisfied=not violations, violations=tuple(violations)
    )


def estimate_tokens(prompt: "PromptText | str") -> int:
    """Heuristic token estimate: ceil(characters / 4), backend-agnostic."""
    text = prompt.text if isinstance(prompt, PromptText) else prompt
    return math.ceil(len(text) / 4)


def render_prompt(
    spec: PromptSpec,
    *,
    allow_unbalanced: bool = False,
    token_budget: int | None = None,
) -> PromptText:
    """Render the full prompt with a placeholder slot for the target response.

    Few-shot modes require the exemplar set to satisfy the minimum balance
    rule unless ``allow_unbalanced`` is set; the balance report is logged and
    attached either way.
    """
    balance = None
    if spec.mode != PromptMode.ZERO_SHOT:
        balance = check_balance(spec.exemplars, spec.rubric)
        if balance.satisfied:
            logger.info("prompt balance satisfied: %s", balance.per_subscore)
        else:
            logger.warning("prompt balance violated: %s", "; ".join(balance.violations))
            if not allow_unbalanced:
                raise BalanceError(
                    "exemplar set is unbalanced: " + "; ".join(balance.violations),
                    report=balance,
                )

    parts = [
        substitute_slots(spec.persona_preamble, spec.rubric),
        "",
        "QUESTION:",
        spec.rubric.question_text,
        "",
        "RUBRIC:",
        render_rubric_block(spec.rubric),
        "",
        "OUTPUT FORMAT:",
        substitute_slots(spec.format_instructions, spec.rubric),
        "",
    ]
    for i, ex in enumerate(spec.exemplars, start=1):
        block = (
            render_cot_block(ex, spec.rubric)
            if spec.mode == PromptMode.FEW_SHOT_COT
            else render_score_block(ex.gold, spec.rubric)
        )
        parts += [
            f"{EXEMPLAR_DELIMITER} {i}",
            EXEMPLAR_RESPONSE_HEADER,
            ex.response.text,
            "",
            block,
            "",
        ]
    parts += [TARGET_HEADER, RESPONSE_SLOT, ""]
    text = "\n".join(parts)

    if token_budget is not None:
        estimate = estimate_tokens(text)
        if estimate > token_budget:
            raise BudgetExceededError(
                f"prompt estimate {estimate} tokens exceeds budget {token_budget}"
            )
    return PromptText(text=text, balance=balance)
