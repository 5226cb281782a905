"""Experiment-level operations shared by the CLI and the service API.

Each mutation acquires the experiment writer lock, appends records, and never
rewrites existing ones, so both operator surfaces expose exactly the same
behavior (the parity contract) and a crashed step can only leave unreferenced
record files behind, never a half-updated state.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from . import active_learning as al
from .errors import GateFailedError, ValidationError
from .gateway import (
    CompletionBackend,
    GatewayConfig,
    MockBackend,
    ScoringRun,
    make_backend,
    score_batch,
)
from .irr import (
    ConsensusRecord,
    IrrRound,
    compute_round,
    emit_exemplars,
    export_disagreement_worksheet,
    sample_for_irr,
)
from .metrics import EvaluationReport, evaluate_scores, format_report_table
from .model import CotExemplar, RaterScores, Rubric
from .prompting import (
    DEFAULT_FORMAT_INSTRUCTIONS,
    DEFAULT_PERSONA,
    BalancePolicy,
    BalanceStrategy,
    PromptMode,
    PromptSpec,
    check_balance,
    render_prompt,
)
from .storage import Dataset, ExperimentStore, Split, load_dataset, load_rubric, split_dataset

IMPLEMENTATION_ORDER = ("zero_shot", "few_shot", "few_shot_cot", "cot_al")


@dataclass
class ExperimentContext:
    store: ExperimentStore
    rubric: Rubric
    dataset: Dataset


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def init_experiment(
    home: str | Path,
    experiment_id: str,
    dataset_path: str | Path,
    rubric_path: str | Path,
    gateway: GatewayConfig | None = None,
    mock_mode: str = "echo-gold",
) -> ExperimentContext:
    dataset_path = Path(dataset_path)
    rubric_path = Path(rubric_path)
    rubric = load_rubric(rubric_path)
    dataset = load_dataset(dataset_path, rubric)
    store = ExperimentStore(home, experiment_id)
    cfg = gateway or GatewayConfig()
    store.create({"gateway": cfg.to_dict(), "mock_mode": mock_mode})
    store.write_dataset_ref(dataset_path, rubric_path, _file_digest(dataset_path))
    return ExperimentContext(store=store, rubric=rubric, dataset=dataset)


def open_experiment(home: str | Path, experiment_id: str) -> ExperimentContext:
    store = ExperimentStore(home, experiment_id)
    if not store.exists():
        raise ValidationError(f"no experiment {experiment_id!r} under {home}")
    ref = store.dataset_ref()
    rubric = load_rubric(ref["rubric_path"])
    dataset_path = Path(ref["dataset_path"])
    if _file_digest(dataset_path) != ref["dataset_digest"]:
        raise ValidationError(f"dataset file {dataset_path} changed since the experiment was created")
    dataset = load_dataset(dataset_path, rubric)
    return ExperimentContext(store=store, rubric=rubric, dataset=dataset)


def gateway_config(ctx: ExperimentContext) -> GatewayConfig:
    return GatewayConfig.from_dict(ctx.store.config()["gateway"])


def default_backend(ctx: ExperimentContext, cfg: GatewayConfig) -> CompletionBackend:
    """Backend per experiment config; mock backends are rebuilt from the dataset."""
    if cfg.backend != "mock":
        return make_backend(cfg)
    from .fixtures import echo_gold_script, flip_script

    mode = ctx.store.config().get("mock_mode", "echo-gold")
    if mode == "echo-gold":
        return MockBackend(script=echo_gold_script(ctx.dataset))
    if mode.startswith("flips:"):
        with open(mode.split(":", 1)[1], "r", encoding="utf-8") as handle:
            flips = json.load(handle)
        return MockBackend(script=flip_script(ctx.dataset, flips))
    if mode.startswith("table:"):
        with open(mode.split(":", 1)[1], "r", encoding="utf-8") as handle:
            return MockBackend(table=json.load(handle))
    raise ValidationError(f"unknown mock mode {mode!r}")


# -- split -----------------------------------------------------------------


def do_split(ctx: ExperimentContext, ratio: float = 0.8, seed: int = 0) -> tuple[str, Split]:
    split = split_dataset(ctx.dataset, ratio=ratio, seed=seed)
    with ctx.store.lock():
        digest = ctx.store.put_record("split", split.to_dict(), meta={"type": "split"})
    return digest, split


def current_split(ctx: ExperimentContext) -> Split:
    found = ctx.store.latest("split")
    if found is None:
        raise ValidationError("no split recorded; run the split step first")
    return Split.from_dict(found[1]["payload"])


def partition_ids(ctx: ExperimentContext, partition: str) -> list[str]:
    if partition == "all":
        return list(ctx.dataset.ids)
    split = current_split(ctx)
    if partition == "train":
        return list(split.train_ids)
    if partition == "test":
        return list(split.test_ids)
    if partition == "validation":
        state = current_al_state(ctx)[1]
        return list(state.pool_ids)
    raise ValidationError(f"unknown partition {partition!r}")


# -- irr ---------------------------------------------------------------------


def do_irr_sample(ctx: ExperimentContext, fraction: float = 0.2, seed: int = 0) -> list[str]:
    # Sampling is restricted to the training partition so reliability work
    # never touches held-out instances.
    return sample_for_irr(partition_ids(ctx, "train"), fraction, seed)


def load_rater_file(path: str | Path) -> RaterScores:
    with open(path, "r", encoding="utf-8") as handle:
        return RaterScores.from_dict(json.load(handle))


def do_irr_compute(
    ctx: ExperimentContext,
    rater_a: RaterScores,
    rater_b: RaterScores,
    threshold: float = 0.7,
    worksheet: str | Path | None = None,
    allow_new_sample: bool = False,
) -> tuple[str, IrrRound]:
    previous = [
        doc for _, doc in ctx.store.list_records("irr") if doc["meta"].get("type") == "round"
    ]
    if previous and not allow_new_sample:
        # Rounds re-score the same sample after discussion; switching samples
        # is an explicit choice.
        last = IrrRound.from_dict(previous[-1]["payload"])
        last_ids = set(last.rater_a.by_response())
        new_ids = set(rater_a.by_response())
        if last_ids != new_ids:
            raise ValidationError(
                "this round covers a different sample than the previous round; "
                "pass the new-sample flag to allow that"
            )
    round_ = compute_round(
        rater_a, rater_b, ctx.rubric, threshold=threshold, round_index=len(previous) + 1
    )
    with ctx.store.lock():
        digest = ctx.store.put_record(
            "irr", round_.to_dict(), meta={"type": "round", "passed": round_.passed}
        )
    if worksheet is not None:
        export_disagreement_worksheet(round_, consensus_records(ctx, digest), worksheet)
    return digest, round_


def current_irr_round(ctx: ExperimentContext) -> tuple[str, IrrRound]:
    found = ctx.store.latest("irr", lambda doc: doc["meta"].get("type") == "round")
    if found is None:
        raise ValidationError("no reliability round recorded")
    return found[0], IrrRound.from_dict(found[1]["payload"])


def consensus_records(ctx: ExperimentContext, round_digest: str) -> list[ConsensusRecord]:
    out: list[ConsensusRecord] = []
    for _, doc in ctx.store.list_records("irr"):
        if doc["meta"].get("type") == "consensus" and doc["meta"].get("round") == round_digest:
            out.extend(ConsensusRecord.from_dict(r) for r in doc["payload"]["records"])
    return out


def do_irr_consensus(
    ctx: ExperimentContext, records: Sequence[ConsensusRecord]
) -> tuple[str, int]:
    round_digest, round_ = current_irr_round(ctx)
    pairs = {(d.response_id, d.subscore) for d in round_.disagreements}
    for record in records:
        if (record.response_id, record.subscore) not in pairs:
            raise ValidationError(
                f"consensus ({record.response_id}, {record.subscore}) matches no disagreement"
            )
    with ctx.store.lock():
        digest = ctx.store.put_record(
            "irr",
            {"records": [r.to_dict() for r in records]},
            meta={"type": "consensus", "round": round_digest},
        )
    return digest, len(records)


def do_irr_exemplars(
    ctx: ExperimentContext, reasoning_drafts: Mapping[str, Mapping[str, str]] | None = None
) -> tuple[str, list[CotExemplar]]:
    round_digest, round_ = current_irr_round(ctx)
    consensus = consensus_records(ctx, round_digest)
    exemplars = emit_exemplars(
        round_, consensus, reasoning_drafts or {}, ctx.dataset.response_by_id()
    )
    with ctx.store.lock():
        digest = ctx.store.put_record(
            "irr",
            {"exemplars": [e.to_dict() for e in exemplars]},
            meta={"type": "exemplars", "round": round_digest},
        )
    return digest, exemplars


# -- prompts -----------------------------------------------------------------


def _load_exemplars(ctx: ExperimentContext, source: str) -> tuple[CotExemplar, ...]:
    if source == "none":
        return ()
    if source == "irr":
        found = ctx.store.latest("irr", lambda doc: doc["meta"].get("type") == "exemplars")
        if found is None:
            raise ValidationError("no reliability exemplars recorded")
        return tuple(CotExemplar.from_dict(e) for e in found[1]["payload"]["exemplars"])
    if source == "al":
        return current_al_state(ctx)[1].exemplars
    if source.startswith("file:"):
        with open(source.split(":", 1)[1], "r", encoding="utf-8") as handle:
            return tuple(CotExemplar.from_dict(e) for e in json.load(handle))
    raise ValidationError(f"unknown exemplar source {source!r}")


def do_prompt_build(
    ctx: ExperimentContext,
    mode: PromptMode,
    exemplar_source: str = "none",
    allow_unbalanced: bool = False,
    persona: str | None = None,
    format_instructions: str | None = None,
    token_budget: int | None = None,
) -> tuple[str, PromptSpec]:
    exemplars = _load_exemplars(ctx, exemplar_source)
    spec = PromptSpec(
        rubric=ctx.rubric,
        persona_preamble=persona if persona is not None else DEFAULT_PERSONA,
        exemplars=exemplars if mode != PromptMode.ZERO_SHOT else (),
        mode=mode,
        format_instructions=(
            format_instructions if format_instructions is not None else DEFAULT_FORMAT_INSTRUCTIONS
        ),
    )
    rendered = render_prompt(spec, allow_unbalanced=allow_unbalanced, token_budget=token_budget)
    balance = rendered.balance.to_dict() if rendered.balance else None
    with ctx.store.lock():
        ctx.store.put_record(
            "prompt",
            spec.to_dict(),
            meta={
                "type": "prompt",
                "spec_digest": spec.digest(),
                "implementation": _implementation(spec),
                "balance": balance,
                "shots": len(spec.exemplars),
            },
        )
    return spec.digest(), spec


def _implementation(spec: PromptSpec) -> str:
    from .prompting import implementation_label

    return implementation_label(spec)


def find_prompt(ctx: ExperimentContext, spec_digest: str) -> PromptSpec:
    found = ctx.store.latest(
        "prompt", lambda doc: doc["meta"].get("spec_digest", "").startswith(spec_digest)
    )
    if found is None:
        raise ValidationError(f"no prompt with digest {spec_digest!r}")
    return PromptSpec.from_dict(found[1]["payload"])


# -- scoring and evaluation ---------------------------------------------------


def do_score(
    ctx: ExperimentContext,
    spec_digest: str,
    partition: str = "test",
    backend: CompletionBackend | None = None,
    cfg: GatewayConfig | None = None,
    resume: bool = True,
) -> tuple[str, ScoringRun]:
    spec = find_prompt(ctx, spec_digest)
    cfg = cfg or gateway_config(ctx)
    backend = backend or default_backend(ctx, cfg)
    ids = partition_ids(ctx, partition)
    overlap = {e.response.id for e in spec.exemplars} & set(ids)
    if overlap:
        raise ValidationError(
            f"partition {partition!r} overlaps the prompt exemplars: {sorted(overlap)}"
        )
    subset = ctx.dataset.subset(ids)

    prior = None
    if resume:
        found = ctx.store.latest(
            "run",
            lambda doc: doc["meta"].get("type") == "run"
            and doc["meta"].get("spec_digest") == spec.digest()
            and doc["meta"].get("partition") == partition,
        )
        if found is not None:
            prior = ScoringRun.from_dict(found[1]["payload"])

    run = score_batch(subset.responses, spec, cfg, backend, prior=prior)
    with ctx.store.lock():
        ctx.store.put_record(
            "run",
            run.to_dict(),
            meta={
                "type": "run",
                "run_digest": run.digest(),
                "spec_digest": spec.digest(),
                "partition": partition,
                "implementation": run.implementation,
                "shots": len(spec.exemplars),
            },
        )
    return run.digest(), run


def find_run(ctx: ExperimentContext, run_digest: str) -> tuple[dict[str, Any], ScoringRun]:
    found = ctx.store.latest(
        "run",
        lambda doc: doc["meta"].get("type") == "run"
        and doc["meta"].get("run_digest", "").startswith(run_digest),
    )
    if found is None:
        raise ValidationError(f"no scoring run {run_digest!r}")
    return found[1]["meta"], ScoringRun.from_dict(found[1]["payload"])


def do_evaluate(
    ctx: ExperimentContext, run_digest: str, csv_path: str | Path | None = None
) -> tuple[EvaluationReport, dict[str, Any]]:
    meta, run = find_run(ctx, run_digest)
    if not run.results:
        raise ValidationError("run has no parsed scores to evaluate")
    gold_map = ctx.dataset.gold_by_id()
    ids = sorted(run.results)
    report = evaluate_scores(
        [run.results[i].scores for i in ids], [gold_map[i] for i in ids], ctx.rubric
    )
    eval_meta = {
        "type": "eval",
        "run_digest": run.digest(),
        "spec_digest": meta["spec_digest"],
        "partition": meta["partition"],
        "implementation": meta["implementation"],
        "shots": meta["shots"],
        "n": len(ids),
        "failures": len(run.failures),
    }
    with ctx.store.lock():
        ctx.store.put_record("eval", report.to_dict(), meta=eval_meta)
    if csv_path is not None:
        export_report_csv([(eval_meta, report)], csv_path)
    return report, eval_meta


def evaluations(ctx: ExperimentContext) -> list[tuple[dict[str, Any], EvaluationReport]]:
    out = []
    for _, doc in ctx.store.list_records("eval"):
        if doc["meta"].get("type") == "eval":
            out.append((doc["meta"], EvaluationReport.from_dict(doc["payload"])))
    return out


def export_report_csv(
    entries: Sequence[tuple[Mapping[str, Any], EvaluationReport]], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["block", "implementation", "n", "shots", "accuracy", "macro_f1", "qwk", "kappa"])
        for meta, report in entries:
            blocks = [*report.per_subscore.items(), ("total", report.total)]
            for block, r in blocks:
                writer.writerow(
                    [
                        block,
                        meta["implementation"],
                        r.n,
                        meta["shots"],
                        f"{r.accuracy:.6f}",
                        f"{r.macro_f1:.6f}",
                        f"{r.qwk:.6f}",
                        f"{r.kappa:.6f}",
                    ]
                )


def do_report(ctx: ExperimentContext, csv_path: str | Path | None = None) -> str:
    """Comparison tables across implementations, one block per subscore plus total."""
    latest: dict[str, tuple[Mapping[str, Any], EvaluationReport]] = {}
    for meta, report in evaluations(ctx):
        latest[meta["implementation"]] = (meta, report)
    if not latest:
        raise ValidationError("no evaluations recorded yet")
    ordered = [label for label in IMPLEMENTATION_ORDER if label in latest]

    blocks: list[str] = []
    names = [*ctx.rubric.subscore_names, "total"]
    for block_name in names:
        rows = []
        for label in ordered:
            meta, report = latest[label]
            r = report.total if block_name == "total" else report.per_subscore[block_name]
            rows.append((label, meta["shots"], r))
        title = f"{ctx.rubric.question_id} {block_name}"
        blocks.append(format_report_table(rows, title))
    text = "\n\n".join(blocks) + "\n"

    if csv_path is not None:
        export_report_csv([latest[label] for label in ordered], csv_path)
    return text


# -- active learning ----------------------------------------------------------


def al_record(ctx: ExperimentContext) -> tuple[str, dict[str, Any]] | None:
    return ctx.store.latest("al", lambda doc: doc["meta"].get("type") == "state")


def current_al_state(ctx: ExperimentContext) -> tuple[str, al.ALState]:
    found = al_record(ctx)
    if found is None:
        raise ValidationError("no active-learning state; run the init step first")
    return found[0], al.ALState.from_dict(found[1]["payload"])


def _persist_al(
    ctx: ExperimentContext, state: al.ALState, run: ScoringRun | None = None, shots: int = 0
) -> str:
    with ctx.store.lock():
        if run is not None:
            ctx.store.put_record(
                "run",
                run.to_dict(),
                meta={
                    "type": "run",
                    "run_digest": run.digest(),
                    "spec_digest": run.spec_digest,
                    "partition": "validation",
                    "implementation": run.implementation,
                    "shots": shots,
                },
            )
        return ctx.store.put_record(
            "al", state.to_dict(), meta={"type": "state", "state_digest": state.digest()}
        )


def do_al_init(
    ctx: ExperimentContext,
    spec_digest: str,
    max_additions: int = 3,
    max_rounds: int = 1,
    balance_strategy: str = "min_constraint",
    max_skew: int = 1,
) -> tuple[str, al.ALState]:
    spec = find_prompt(ctx, spec_digest)
    if spec.mode != PromptMode.FEW_SHOT_COT:
        raise ValidationError("the alignment loop operates on chain-of-thought prompts")
    split = current_split(ctx)
    exemplar_ids = {e.response.id for e in spec.exemplars}
    pool = [i for i in split.train_ids if i not in exemplar_ids]
    state = al.ALState(
        question_id=ctx.rubric.question_id,
        persona_preamble=spec.persona_preamble,
        format_instructions=spec.format_instructions,
        mode=spec.mode,
        exemplars=spec.exemplars,
        pool_ids=tuple(pool),
        balance_policy=BalancePolicy(strategy=BalanceStrategy(balance_strategy), max_skew=max_skew),
        max_additions=max_additions,
        max_rounds=max_rounds,
    )
    digest = _persist_al(ctx, state)
    return digest, state


def do_al_run(
    ctx: ExperimentContext,
    backend: CompletionBackend | None = None,
    cfg: GatewayConfig | None = None,
    failure_tolerance: float = 0.0,
) -> tuple[str, al.ALState]:
    _, state = current_al_state(ctx)
    cfg = cfg or gateway_config(ctx)
    backend = backend or default_backend(ctx, cfg)
    shots = len(state.exemplars)
    holder: dict[str, ScoringRun] = {}

    def persist(new_state: al.ALState, run: ScoringRun) -> None:
        holder["run"] = run

    state = al.run_validation(
        state, ctx.dataset, cfg, backend, failure_tolerance=failure_tolerance, persist=persist
    )
    digest = _persist_al(ctx, state, run=holder.get("run"), shots=shots)
    return digest, state


def do_al_tag(ctx: ExperimentContext, tags: Sequence[al.ErrorTag]) -> tuple[str, al.ALState]:
    _, state = current_al_state(ctx)
    state = al.tag_errors(state, tags)
    return _persist_al(ctx, state), state


def do_al_candidates(ctx: ExperimentContext) -> tuple[str, al.ALState, al.SelectionResult]:
    _, state = current_al_state(ctx)
    state, result = al.propose_candidates(state, ctx.dataset)
    digest = _persist_al(ctx, state)
    # Candidate worksheet for the review UI: which pattern each pick treats,
    # how many tagged instances it covers, and the draft reasoning to edit.
    tags = {t.pattern_id: t for t in state.iterations[-1].tags}
    rows = []
    for candidate, (rid, covered) in zip(result.candidates, result.certificate):
        rows.append(
            {
                "response_id": rid,
                "patterns": [
                    {
                        "pattern_id": pid,
                        "description": tags[pid].description,
                        "covered_instances": len(tags[pid].instance_ids),
                    }
                    for pid in covered
                ],
                "proposed_exemplar": candidate.to_dict(),
                "draft_reasoning": dict(candidate.reasoning),
            }
        )
    with ctx.store.lock():
        ctx.store.put_record(
            "al",
            {
                "rows": rows,
                "full_cover": result.full_cover,
                "exhausted": result.exhausted,
                "uncovered_patterns": list(result.uncovered_patterns),
            },
            meta={"type": "worksheet", "state_digest": state.digest()},
        )
    return digest, state, result


def do_al_accept(
    ctx: ExperimentContext, accepted: Sequence[tuple[str, Mapping[str, str]]]
) -> tuple[str, al.ALState]:
    """Advance with human-approved candidates: (response id, edited reasoning)."""
    from dataclasses import replace

    _, state = current_al_state(ctx)
    if accepted and state.rounds_advanced() >= state.max_rounds:
        raise ValidationError(
            f"iteration budget of {state.max_rounds} round(s) already spent; "
            "raise max_rounds to continue"
        )
    staged = {c.response.id: c for c in state.pending_candidates}
    exemplars = []
    for rid, reasoning in accepted:
        if rid not in staged:
            raise ValidationError(f"{rid!r} is not a staged candidate")
        candidate = staged[rid]
        exemplars.append(replace(candidate, reasoning=dict(reasoning)))
    state = al.advance(state, exemplars, ctx.rubric)
    return _persist_al(ctx, state), state


def do_al_status(ctx: ExperimentContext) -> al.StopDecision:
    _, state = current_al_state(ctx)
    return al.check_stop_for_state(state, ctx.dataset)


def do_al_revert(ctx: ExperimentContext) -> tuple[str, al.ALState, al.StopDecision]:
    _, state = current_al_state(ctx)
    decision = al.check_stop_for_state(state, ctx.dataset)
    if decision.status != al.StopStatus.OVERFIT_REVERT or decision.revert_to is None:
        raise GateFailedError(f"no overfit to revert: {decision.reason}")
    state = al.revert(state, decision.revert_to, ctx.rubric)
    return _persist_al(ctx, state), state, decision


# -- misc --------------------------------------------------------------------


def load_yaml_or_json(path: str | Path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text)


def balance_overview(ctx: ExperimentContext) -> dict[str, Any]:
    """Current prompt-exemplar balance of the loop state, for the review UI."""
    _, state = current_al_state(ctx)
    report = check_balance(state.exemplars, ctx.rubric)
    return {
        "report": report.to_dict(),
        "policy": state.balance_policy.to_dict(),
        "pending": [c.to_dict() for c in state.pending_candidates],
    }
