"""The prompt-alignment iteration engine: score the validation pool, let a
human tag recurring reasoning-error patterns, select a minimal balanced set of
correcting exemplars by greedy weighted set cover, extend the prompt, and
apply the stopping rules (convergence, overfit-revert, exhaustion).

States are immutable; every transition returns a new state, and replaying
persisted states reproduces every decision. The validation pool, the prompt
exemplar set, and the held-out test set stay pairwise disjoint throughout.

An unparseable generation counts as misclassified on every subscore: it can
neither be graded nor explained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

from .errors import GatewayError, ValidationError
from .gateway import CompletionBackend, GatewayConfig, ScoringRun, score_batch
from .hashing import digest_of
from .metrics import ErrorDirection, EvaluationReport, TrendReport, evaluate_scores
from .model import CotExemplar, ExemplarSource, Rubric, ScoreVector, fold_name
from .prompting import BalancePolicy, PromptMode, PromptSpec
from .storage import Dataset

logger = logging.getLogger(__name__)


class TagDirection(str, Enum):
    FP = "fp"
    FN = "fn"


@dataclass(frozen=True)
class ErrorTag:
    """A human-identified faulty-reasoning pattern behind several misclassifications."""

    pattern_id: str
    description: str
    instance_ids: tuple[str, ...]
    subscore: str
    direction: TagDirection

    def __post_init__(self):
        object.__setattr__(self, "instance_ids", tuple(sorted(set(self.instance_ids))))
        if not self.instance_ids:
            raise ValidationError(f"tag {self.pattern_id!r} covers no instances")

    def to_dict(self) -> dict[str, Any]:
        return {
            "pattern_id": self.pattern_id,
            "description": self.description,
            "instance_ids": list(self.instance_ids),
            "subscore": self.subscore,
            "direction": self.direction.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ErrorTag":
        return cls(
            pattern_id=d["pattern_id"],
            description=d["description"],
            instance_ids=tuple(d["instance_ids"]),
            subscore=d["subscore"],
            direction=TagDirection(d["direction"]),
        )


@dataclass(frozen=True)
class Misclassification:
    response_id: str
    subscore: str
    pred: int | None  # None when the generation failed to parse
    gold: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_id": self.response_id,
            "subscore": self.subscore,
            "pred": self.pred,
            "gold": self.gold,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Misclassification":
        return cls(**d)


@dataclass(frozen=True)
class ALIteration:
    index: int
    prompt_spec_digest: str
    run_digest: str
    validation_ids: tuple[str, ...]
    reports: EvaluationReport | None
    misclassified: tuple[Misclassification, ...]
    tags: tuple[ErrorTag, ...] = ()
    added_exemplars: tuple[CotExemplar, ...] = ()

    @property
    def error_count(self) -> int:
        return len(self.misclassified)

    @property
    def misclassified_ids(self) -> set[str]:
        return {m.response_id for m in self.misclassified}

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "prompt_spec_digest": self.prompt_spec_digest,
            "run_digest": self.run_digest,
            "validation_ids": list(self.validation_ids),
            "reports": self.reports.to_dict() if self.reports else None,
            "misclassified": [m.to_dict() for m in self.misclassified],
            "tags": [t.to_dict() for t in self.tags],
            "added_exemplars": [e.to_dict() for e in self.added_exemplars],
            "error_count": self.error_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ALIteration":
        return cls(
            index=d["index"],
            prompt_spec_digest=d["prompt_spec_digest"],
            run_digest=d["run_digest"],
            validation_ids=tuple(d["validation_ids"]),
            reports=EvaluationReport.from_dict(d["reports"]) if d.get("reports") else None,
            misclassified=tuple(Misclassification.from_dict(m) for m in d["misclassified"]),
            tags=tuple(ErrorTag.from_dict(t) for t in d.get("tags", ())),
            added_exemplars=tuple(CotExemplar.from_dict(e) for e in d.get("added_exemplars", ())),
        )


class StopStatus(str, Enum):
    CONTINUE = "continue"
    CONVERGED = "converged"
    OVERFIT_REVERT = "overfit_revert"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class StopDecision:
    status: StopStatus
    reason: str
    revert_to: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"status": self.status.value, "reason": self.reason, "revert_to": self.revert_to}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StopDecision":
        return cls(status=StopStatus(d["status"]), reason=d["reason"], revert_to=d.get("revert_to"))


@dataclass(frozen=True)
class ALState:
    """Iteration-indexed loop state: prompt ingredients, exemplars, pool, history."""

    question_id: str
    persona_preamble: str
    format_instructions: str
    mode: PromptMode
    exemplars: tuple[CotExemplar, ...]
    pool_ids: tuple[str, ...]
    iterations: tuple[ALIteration, ...] = ()
    pending_candidates: tuple[CotExemplar, ...] = ()
    balance_policy: BalancePolicy = field(default_factory=BalancePolicy)
    max_additions: int = 3
    max_rounds: int = 1

    def __post_init__(self):
        object.__setattr__(self, "pool_ids", tuple(sorted(self.pool_ids)))
        exemplar_ids = {e.response.id for e in self.exemplars}
        overlap = exemplar_ids & set(self.pool_ids)
        if overlap:
            raise ValidationError(
                f"validation pool overlaps the prompt exemplars: {sorted(overlap)}"
            )

    def spec(self, rubric: Rubric) -> PromptSpec:
        return PromptSpec(
            rubric=rubric,
            persona_preamble=self.persona_preamble,
            exemplars=self.exemplars,
            mode=self.mode,
            format_instructions=self.format_instructions,
        )

    def rounds_advanced(self) -> int:
        return sum(1 for it in self.iterations if it.added_exemplars)

    def validation_ratio(self) -> float | None:
        """Pool size over exemplar count; reported, never enforced."""
        if not self.exemplars:
            return None
        return len(self.pool_ids) / len(self.exemplars)

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "persona_preamble": self.persona_preamble,
            "format_instructions": self.format_instructions,
            "mode": self.mode.value,
            "exemplars": [e.to_dict() for e in self.exemplars],
            "pool_ids": list(self.pool_ids),
            "iterations": [i.to_dict() for i in self.iterations],
            "pending_candidates": [c.to_dict() for c in self.pending_candidates],
            "balance_policy": self.balance_policy.to_dict(),
            "max_additions": self.max_additions,
            "max_rounds": self.max_rounds,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ALState":
        return cls(
            question_id=d["question_id"],
            persona_preamble=d["persona_preamble"],
            format_instructions=d["format_instructions"],
            mode=PromptMode(d["mode"]),
            exemplars=tuple(CotExemplar.from_dict(e) for e in d["exemplars"]),
            pool_ids=tuple(d["pool_ids"]),
            iterations=tuple(ALIteration.from_dict(i) for i in d["iterations"]),
            pending_candidates=tuple(CotExemplar.from_dict(c) for c in d["pending_candidates"]),
            balance_policy=BalancePolicy.from_dict(d["balance_policy"]),
            max_additions=d["max_additions"],
            max_rounds=d["max_rounds"],
        )


@dataclass(frozen=True)
class BalanceState:
    """Per-subscore (positives, negatives) exemplar counts plus the policy."""

    counts: dict[str, tuple[int, int]]
    policy: BalancePolicy

    @classmethod
    def from_exemplars(
        cls, exemplars: Sequence[CotExemplar], rubric: Rubric, policy: BalancePolicy
    ) -> "BalanceState":
        counts = {name: (0, 0) for name in rubric.subscore_names}
        folded = {fold_name(n): n for n in rubric.subscore_names}
        for ex in exemplars:
            for key, value in ex.gold.by_subscore.items():
                name = folded.get(fold_name(key))
                if name is None:
                    continue
                pos, neg = counts[name]
                counts[name] = (pos + 1, neg) if value == 1 else (pos, neg + 1)
        return cls(counts=counts, policy=policy)

    def with_addition(self, gold: ScoreVector) -> "BalanceState":
        counts = dict(self.counts)
        folded = {fold_name(n): n for n in counts}
        for key, value in gold.by_subscore.items():
            name = folded.get(fold_name(key))
            if name is None:
                continue
            pos, neg = counts[name]
            counts[name] = (pos + 1, neg) if value == 1 else (pos, neg + 1)
        return BalanceState(counts=counts, policy=self.policy)

    def allows_addition(self, gold: ScoreVector) -> bool:
        return self.policy.allows_counts(self.with_addition(gold).counts)


def trend_summary(iteration: ALIteration, rubric: Rubric) -> list[TrendReport]:
    """Per-subscore overscoring/underscoring skew of an iteration's errors.

    Parse failures (pred None) count toward neither side.
    """
    out = []
    for name in rubric.subscore_names:
        folded = fold_name(name)
        mine = [m for m in iteration.misclassified if fold_name(m.subscore) == folded]
        fp = sum(1 for m in mine if m.pred == 1 and m.gold == 0)
        fn = sum(1 for m in mine if m.pred == 0 and m.gold == 1)
        if fp > fn:
            direction = ErrorDirection.OVERSCORING
        elif fn > fp:
            direction = ErrorDirection.UNDERSCORING
        else:
            direction = ErrorDirection.BALANCED
        out.append(TrendReport(subscore=name, fp_count=fp, fn_count=fn, direction=direction))
    return out


def misclassifications_from_run(
    run: ScoringRun, pool: Dataset, rubric: Rubric
) -> tuple[Misclassification, ...]:
    """Per-subscore prediction errors; failed responses count on all subscores."""
    gold_by_id = pool.gold_by_id()
    out: list[Misclassification] = []
    for rid in sorted(gold_by_id):
        gold = gold_by_id[rid]
        gold_folded = {fold_name(k): v for k, v in gold.by_subscore.items()}
        parsed = run.results.get(rid)
        if parsed is None:
            for name in rubric.subscore_names:
                out.append(Misclassification(rid, name, None, gold_folded[fold_name(name)]))
            continue
        pred_folded = {fold_name(k): v for k, v in parsed.scores.by_subscore.items()}
        for name in rubric.subscore_names:
            folded = fold_name(name)
            if pred_folded[folded] != gold_folded[folded]:
                out.append(Misclassification(rid, name, pred_folded[folded], gold_folded[folded]))
    return tuple(out)


def run_validation(
    state: ALState,
    dataset: Dataset,
    cfg: GatewayConfig,
    backend: CompletionBackend,
    *,
    failure_tolerance: float = 0.0,
    persist: Callable[[ALState, ScoringRun], None] | None = None,
) -> ALState:
    """Score the validation pool with the current prompt and log an iteration.

    Gateway (transport) failures above ``failure_tolerance`` abort the
    iteration; parse failures do not, they count as misclassifications.
    ``persist`` is called with the new state before it is returned.
    """
    if not state.pool_ids:
        raise ValidationError("validation pool is empty")
    pool = dataset.subset(state.pool_ids)
    spec = state.spec(dataset.rubric)
    run = score_batch(pool.responses, spec, cfg, backend)

    gateway_failures = [f for f in run.failures.values() if f.kind == "gateway"]
    if len(gateway_failures) / len(pool.responses) > failure_tolerance:
        raise GatewayError(
            f"{len(gateway_failures)} of {len(pool.responses)} completions failed in transport"
        )

    misclassified = misclassifications_from_run(run, pool, dataset.rubric)
    scored_ids = sorted(set(run.results) & set(pool.ids))
    reports = None
    if scored_ids:
        gold_map = pool.gold_by_id()
        reports = evaluate_scores(
            [run.results[i].scores for i in scored_ids],
            [gold_map[i] for i in scored_ids],
            dataset.rubric,
        )

    iteration = ALIteration(
        index=len(state.iterations),
        prompt_spec_digest=spec.digest(),
        run_digest=run.digest(),
        validation_ids=tuple(sorted(state.pool_ids)),
        reports=reports,
        misclassified=misclassified,
    )
    new_state = replace(state, iterations=(*state.iterations, iteration), pending_candidates=())
    if persist is not None:
        persist(new_state, run)
    return new_state


def tag_errors(state: ALState, tags: Sequence[ErrorTag]) -> ALState:
    """Attach human error-pattern tags to the latest iteration."""
    if not state.iterations:
        raise ValidationError("no iteration to tag; run validation first")
    last = state.iterations[-1]
    known = last.misclassified_ids
    for tag in tags:
        stray = set(tag.instance_ids) - known
        if stray:
            raise ValidationError(
                f"tag {tag.pattern_id!r} references non-misclassified instances: {sorted(stray)}"
            )
    updated = replace(last, tags=tuple(tags))
    return replace(state, iterations=(*state.iterations[:-1], updated))


def draft_reasoning(response_text: str, gold: ScoreVector, rubric: Rubric) -> dict[str, str]:
    """Template-scaffolded reasoning draft for a candidate exemplar.

    Follows the evidence -> rubric reference -> verdict order; a human edits
    this text before the exemplar may enter the prompt.
    """
    excerpt = response_text if len(response_text) <= 80 else response_text[:77] + "..."
    folded_gold = {fold_name(k): v for k, v in gold.by_subscore.items()}
    out = {}
    for sub in rubric.subscores:
        value = folded_gold[fold_name(sub.name)]
        verdict = "earned" if value == 1 else "did not earn"
        out[sub.name] = (
            f'The student says "{excerpt}". The rubric states "{sub.criteria}". '
            f"Based on the rubric, the student {verdict} the {sub.name} point, "
            f"so the score is {value}."
        )
    return out


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of candidate selection, including the greedy cover certificate."""

    candidates: tuple[CotExemplar, ...]
    certificate: tuple[tuple[str, tuple[str, ...]], ...]  # (instance id, covered patterns)
    full_cover: bool
    exhausted: bool
    uncovered_patterns: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidates": [c.to_dict() for c in self.candidates],
            "certificate": [[rid, list(pats)] for rid, pats in self.certificate],
            "full_cover": self.full_cover,
            "exhausted": self.exhausted,
            "uncovered_patterns": list(self.uncovered_patterns),
        }


def select_candidates(
    iteration: ALIteration,
    rubric: Rubric,
    balance_state: BalanceState,
    max_additions: int,
    dataset: Dataset,
    pool_ids: Sequence[str],
) -> SelectionResult:
    """Greedy weighted set cover over the tagged error patterns.

    Repeatedly take the largest untreated pattern (weight = number of tagged
    instances) and pick its lexicographically smallest instance whose addition
    keeps the balance policy satisfied; every pattern containing the picked
    instance counts as treated. Stops at full cover or ``max_additions``.
    When some pattern has no balance-preserving candidate left, the result is
    flagged exhausted for the stopping rules.
    """
    if max_additions < 1:
        raise ValidationError("max_additions must be >= 1")
    untreated: dict[str, ErrorTag] = {t.pattern_id: t for t in iteration.tags}
    available = set(pool_ids) & iteration.misclassified_ids
    response_map = dataset.response_by_id()
    gold_map = dataset.gold_by_id()

    chosen: list[CotExemplar] = []
    certificate: list[tuple[str, tuple[str, ...]]] = []
    exhausted = False
    balance = balance_state

    while untreated and len(chosen) < max_additions:
        pattern = sorted(untreated.values(), key=lambda t: (-len(t.instance_ids), t.pattern_id))[0]
        eligible = [
            rid
            for rid in sorted(set(pattern.instance_ids) & available)
            if balance.allows_addition(gold_map[rid])
        ]
        if not eligible:
            exhausted = True
            break
        picked = eligible[0]
        covered = tuple(
            sorted(pid for pid, tag in untreated.items() if picked in tag.instance_ids)
        )
        gold = gold_map[picked]
        chosen.append(
            CotExemplar(
                response=response_map[picked],
                gold=gold,
                reasoning=draft_reasoning(response_map[picked].text, gold, rubric),
                source=ExemplarSource.ACTIVE_LEARNING,
            )
        )
        certificate.append((picked, covered))
        balance = balance.with_addition(gold)
        available.discard(picked)
        for pid in covered:
            untreated.pop(pid)

    return SelectionResult(
        candidates=tuple(chosen),
        certificate=tuple(certificate),
        full_cover=not untreated,
        exhausted=exhausted,
        uncovered_patterns=tuple(sorted(untreated)),
    )


def propose_candidates(state: ALState, dataset: Dataset) -> tuple[ALState, SelectionResult]:
    """Select candidates for the latest tagged iteration and stage them."""
    if not state.iterations:
        raise ValidationError("no iteration to select from; run validation first")
    last = state.iterations[-1]
    if not last.tags:
        raise ValidationError("latest iteration has no error tags")
    balance = BalanceState.from_exemplars(state.exemplars, dataset.rubric, state.balance_policy)
    result = select_candidates(
        last, dataset.rubric, balance, state.max_additions, dataset, state.pool_ids
    )
    return replace(state, pending_candidates=result.candidates), result


def advance(state: ALState, accepted: Sequence[CotExemplar], rubric: Rubric) -> ALState:
    """Append human-approved exemplars to the prompt and shrink the pool.

    ``accepted`` must be a subset of the staged candidates (by response id),
    each with complete edited reasoning, and their combined addition must keep
    the balance policy satisfied. Accepting nothing logs a no-op.
    """
    pending_ids = {c.response.id for c in state.pending_candidates}
    balance = BalanceState.from_exemplars(state.exemplars, rubric, state.balance_policy)
    for ex in accepted:
        if ex.response.id not in pending_ids:
            raise ValidationError(f"exemplar {ex.response.id!r} was not a staged candidate")
        if not ex.has_full_reasoning(rubric):
            raise ValidationError(
                f"exemplar {ex.response.id!r} lacks edited reasoning for some subscores"
            )
        if not balance.allows_addition(ex.gold):
            raise ValidationError(
                f"accepting exemplar {ex.response.id!r} would violate the balance policy"
            )
        balance = balance.with_addition(ex.gold)

    if not accepted:
        logger.info("no candidates accepted; iteration advanced as a no-op")
    accepted_tuple = tuple(
        replace(ex, source=ExemplarSource.ACTIVE_LEARNING) for ex in accepted
    )
    accepted_ids = {e.response.id for e in accepted_tuple}
    last = replace(state.iterations[-1], added_exemplars=accepted_tuple)
    return replace(
        state,
        exemplars=(*state.exemplars, *accepted_tuple),
        pool_ids=tuple(i for i in state.pool_ids if i not in accepted_ids),
        iterations=(*state.iterations[:-1], last),
        pending_candidates=(),
    )


def check_stop(
    history: Sequence[ALIteration],
    pool_ids: Sequence[str],
    rubric: Rubric,
    *,
    balance_state: BalanceState | None = None,
    dataset: Dataset | None = None,
    max_additions: int = 3,
) -> StopDecision:
    """Stopping rules, in order: convergence, overfit, exhaustion, continue.

    Exhaustion is detected when the pool is empty or, given a balance state
    and dataset, when no balance-preserving candidate can cover the latest
    tagged patterns.
    """
    if not history:
        raise ValidationError("stop check requires at least one iteration")
    last = history[-1]
    if last.error_count == 0:
        return StopDecision(
            status=StopStatus.CONVERGED,
            reason=f"iteration {last.index} produced zero validation errors",
        )
    if len(history) >= 2 and last.error_count > history[-2].error_count:
        previous = history[-2]
        return StopDecision(
            status=StopStatus.OVERFIT_REVERT,
            reason=(
                f"errors rose from {previous.error_count} to {last.error_count}; "
                f"revert to iteration {previous.index}"
            ),
            revert_to=previous.index,
        )
    if not pool_ids:
        return StopDecision(
            status=StopStatus.EXHAUSTED, reason="validation pool has no instances left"
        )
    if balance_state is not None and dataset is not None and last.tags:
        result = select_candidates(last, rubric, balance_state, max_additions, dataset, pool_ids)
        if result.exhausted:
            return StopDecision(
                status=StopStatus.EXHAUSTED,
                reason=(
                    "no balance-preserving candidate covers patterns "
                    f"{list(result.uncovered_patterns)}"
                ),
            )
    return StopDecision(
        status=StopStatus.CONTINUE,
        reason=f"iteration {last.index} has {last.error_count} errors; pool holds "
        f"{len(pool_ids)} instances",
    )


def check_stop_for_state(state: ALState, dataset: Dataset) -> StopDecision:
    balance = BalanceState.from_exemplars(state.exemplars, dataset.rubric, state.balance_policy)
    return check_stop(
        state.iterations,
        state.pool_ids,
        dataset.rubric,
        balance_state=balance,
        dataset=dataset,
        max_additions=state.max_additions,
    )


def revert(state: ALState, to_index: int, rubric: Rubric) -> ALState:
    """Restore the prompt of an earlier iteration; removed exemplars rejoin the pool.

    The iteration log is retained (reverts add history, they never rewrite it).
    """
    indexed = {it.index: it for it in state.iterations}
    if to_index not in indexed:
        raise ValidationError(f"no iteration {to_index} to revert to")
    removed: list[CotExemplar] = []
    kept_iterations = []
    for it in state.iterations:
        if it.index >= to_index and it.added_exemplars:
            removed.extend(it.added_exemplars)
            kept_iterations.append(replace(it, added_exemplars=()))
        else:
            kept_iterations.append(it)
    removed_ids = {e.response.id for e in removed}
    exemplars = tuple(e for e in state.exemplars if e.response.id not in removed_ids)
    new_state = replace(
        state,
        exemplars=exemplars,
        pool_ids=tuple(sorted({*state.pool_ids, *removed_ids})),
        iterations=tuple(kept_iterations),
        pending_candidates=(),
    )
    restored = new_state.spec(rubric).digest()
    expected = indexed[to_index].prompt_spec_digest
    if restored != expected:
        raise ValidationError(
            f"revert produced prompt digest {restored[:12]}, expected {expected[:12]}"
        )
    return new_state
