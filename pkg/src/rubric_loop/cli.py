"""Operator command line: every pipeline step is runnable headless.

Exit codes are stable for scripting: 0 success, 1 validation, 2 gateway,
3 gate failed, 4 lock conflict, 5 internal.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import workflow
from .active_learning import ErrorTag, TagDirection
from .errors import (
    GatewayError,
    GateFailedError,
    LockConflictError,
    ParseError,
    RubricLoopError,
    ValidationError,
)
from .gateway import GatewayConfig
from .irr import ConsensusRecord
from .prompting import PromptMode

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_GATEWAY = 2
EXIT_GATE = 3
EXIT_LOCK = 4
EXIT_INTERNAL = 5


@dataclass(frozen=True)
class CommandResult:
    """Outcome of one CLI command; exit_code 0 iff the command had no errors."""

    exit_code: int
    summary: str
    report_path: str | None = None


def _default_home() -> str:
    return os.environ.get("RUBRIC_LOOP_HOME", "./experiments")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rubric-loop")
    parser.add_argument("--home", default=None, help="experiment root (default: $RUBRIC_LOOP_HOME)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixture", help="write the bundled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--responses", type=int, default=60)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("init", help="create an experiment around a dataset")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--rubric", required=True)
    p.add_argument("--backend", choices=["mock", "live"], default="mock")
    p.add_argument("--model", default="gpt-4")
    p.add_argument("--mock-mode", default="echo-gold", help="echo-gold | flips:FILE | table:FILE")

    p = sub.add_parser("split", help="partition the dataset into train/test")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    irr = sub.add_parser("irr", help="inter-rater reliability steps").add_subparsers(
        dest="irr_command", required=True
    )
    p = irr.add_parser("sample", help="draw the rating sample from the training split")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p = irr.add_parser("compute", help="compare two rater files and gate on kappa")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--rater-a", required=True)
    p.add_argument("--rater-b", required=True)
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--worksheet", default=None, help="CSV disagreement worksheet path")
    p.add_argument(
        "--new-sample",
        action="store_true",
        help="allow this round to cover a different sample than the previous round",
    )
    p = irr.add_parser("consensus", help="record consensus resolutions for disagreements")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--records", required=True, help="YAML/JSON list of consensus records")
    p = irr.add_parser("exemplars", help="emit prompt exemplars from the completed round")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--drafts", default=None, help="YAML/JSON reasoning drafts by response id")

    prompt = sub.add_parser("prompt", help="prompt construction").add_subparsers(
        dest="prompt_command", required=True
    )
    p = prompt.add_parser("build", help="build and persist a prompt spec")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--mode", choices=[m.value for m in PromptMode], required=True)
    p.add_argument("--exemplars", default="none", help="none | irr | al | file:PATH")
    p.add_argument("--allow-unbalanced", action="store_true")
    p.add_argument("--persona", default=None, help="persona template file")
    p.add_argument("--format", dest="format_file", default=None, help="format template file")
    p.add_argument("--token-budget", type=int, default=None)

    p = sub.add_parser("score", help="run a prompt over a dataset partition")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--prompt", required=True, help="prompt spec digest (prefix ok)")
    p.add_argument("--partition", choices=["train", "test", "validation", "all"], default="test")
    p.add_argument("--no-resume", action="store_true")

    p = sub.add_parser("evaluate", help="compare a scoring run against gold")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--run", required=True, help="run digest (prefix ok)")
    p.add_argument("--csv", default=None)

    alp = sub.add_parser("al", help="alignment loop steps").add_subparsers(
        dest="al_command", required=True
    )
    p = alp.add_parser("init", help="start the loop from a chain-of-thought prompt")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-additions", type=int, default=3)
    p.add_argument("--max-rounds", type=int, default=1)
    p.add_argument("--balance", choices=["min_constraint", "uniform", "empirical"], default="min_constraint")
    p.add_argument("--max-skew", type=int, default=1)
    p = alp.add_parser("step", help="advance the loop: run, tag, select, accept")
    p.add_argument("-e", "--experiment", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run", action="store_true", help="score the validation pool")
    group.add_argument("--tags", default=None, help="YAML/JSON error tags; also selects candidates")
    group.add_argument("--accept", default=None, help="comma-separated candidate ids to accept")
    group.add_argument("--accept-all", action="store_true", help="accept every staged candidate")
    group.add_argument("--interactive", action="store_true", help="review candidates in the terminal")
    p.add_argument("--reasoning", default=None, help="YAML/JSON edited reasoning by response id")
    p = alp.add_parser("status", help="print the stopping decision")
    p.add_argument("-e", "--experiment", required=True)
    p = alp.add_parser("revert", help="apply an overfit revert")
    p.add_argument("-e", "--experiment", required=True)

    p = sub.add_parser("report", help="comparison tables across implementations")
    p.add_argument("-e", "--experiment", required=True)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("serve", help="run the review service API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)

    return parser


def _ctx(args) -> workflow.ExperimentContext:
    return workflow.open_experiment(args.home, args.experiment)


def _cmd_fixture(args) -> CommandResult:
    from .fixtures import write_fixture

    dataset_path, rubric_path = write_fixture(args.out, n_responses=args.responses, seed=args.seed)
    return CommandResult(EXIT_OK, f"wrote {dataset_path} and {rubric_path}", str(dataset_path))


def _cmd_init(args) -> CommandResult:
    cfg = GatewayConfig(backend=args.backend, model_id=args.model)
    workflow.init_experiment(
        args.home, args.experiment, args.dataset, args.rubric, gateway=cfg, mock_mode=args.mock_mode
    )
    return CommandResult(EXIT_OK, f"experiment {args.experiment} created under {args.home}")


def _cmd_split(args) -> CommandResult:
    digest, split = workflow.do_split(_ctx(args), ratio=args.ratio, seed=args.seed)
    return CommandResult(
        EXIT_OK,
        f"split {digest[:12]}: train={len(split.train_ids)} test={len(split.test_ids)} seed={split.seed}",
    )


def _cmd_irr(args) -> CommandResult:
    ctx = _ctx(args)
    if args.irr_command == "sample":
        ids = workflow.do_irr_sample(ctx, fraction=args.fraction, seed=args.seed)
        print("\n".join(ids))
        return CommandResult(EXIT_OK, f"{len(ids)} ids sampled from the training split")
    if args.irr_command == "compute":
        rater_a = workflow.load_rater_file(args.rater_a)
        rater_b = workflow.load_rater_file(args.rater_b)
        digest, round_ = workflow.do_irr_compute(
            ctx,
            rater_a,
            rater_b,
            threshold=args.threshold,
            worksheet=args.worksheet,
            allow_new_sample=args.new_sample,
        )
        for name, kappa in round_.kappa_by_subscore.items():
            print(f"kappa[{name}] = {kappa:.4f}")
        print(f"round {round_.round_index} ({digest[:12]}): {len(round_.disagreements)} disagreements")
        if not round_.passed:
            failing = [
                name for name, k in round_.kappa_by_subscore.items() if k <= round_.threshold
            ]
            return CommandResult(
                EXIT_GATE,
                f"gate FAILED: kappa <= {round_.threshold} on {', '.join(failing)}",
                args.worksheet,
            )
        return CommandResult(
            EXIT_OK, f"gate passed: all kappas > {round_.threshold}", args.worksheet
        )
    if args.irr_command == "consensus":
        raw = workflow.load_yaml_or_json(args.records)
        records = [ConsensusRecord.from_dict(r) for r in raw]
        digest, count = workflow.do_irr_consensus(ctx, records)
        return CommandResult(EXIT_OK, f"recorded {count} consensus resolutions ({digest[:12]})")
    if args.irr_command == "exemplars":
        drafts = workflow.load_yaml_or_json(args.drafts) if args.drafts else {}
        digest, exemplars = workflow.do_irr_exemplars(ctx, drafts)
        agreed = sum(1 for e in exemplars if e.source.value == "irr_agreed")
        return CommandResult(
            EXIT_OK, f"emitted {len(exemplars)} exemplars ({agreed} agreed) ({digest[:12]})"
        )
    raise ValidationError(f"unknown irr command {args.irr_command!r}")


def _cmd_prompt(args) -> CommandResult:
    ctx = _ctx(args)
    persona = Path(args.persona).read_text(encoding="utf-8") if args.persona else None
    format_instructions = (
        Path(args.format_file).read_text(encoding="utf-8") if args.format_file else None
    )
    digest, spec = workflow.do_prompt_build(
        ctx,
        mode=PromptMode(args.mode),
        exemplar_source=args.exemplars,
        allow_unbalanced=args.allow_unbalanced,
        persona=persona,
        format_instructions=format_instructions,
        token_budget=args.token_budget,
    )
    return CommandResult(
        EXIT_OK, f"prompt {digest}: mode={spec.mode.value} shots={len(spec.exemplars)}"
    )


def _cmd_score(args) -> CommandResult:
    ctx = _ctx(args)
    digest, run = workflow.do_score(
        ctx, args.prompt, partition=args.partition, resume=not args.no_resume
    )
    return CommandResult(
        EXIT_OK,
        f"run {digest}: scored={len(run.results)} failures={len(run.failures)} "
        f"implementation={run.implementation}",
    )


def _cmd_evaluate(args) -> CommandResult:
    ctx = _ctx(args)
    report, meta = workflow.do_evaluate(ctx, args.run, csv_path=args.csv)
    for name, r in report.per_subscore.items():
        print(f"{name:<28} acc={r.accuracy:.2f} f1={r.macro_f1:.2f} qwk={r.qwk:.2f}")
    r = report.total
    print(f"{'total':<28} acc={r.accuracy:.2f} f1={r.macro_f1:.2f} qwk={r.qwk:.2f}")
    return CommandResult(
        EXIT_OK,
        f"n={meta['n']} failures={meta['failures']} implementation={meta['implementation']}",
        args.csv,
    )


def _load_tags(path: str) -> list[ErrorTag]:
    raw = workflow.load_yaml_or_json(path)
    return [
        ErrorTag(
            pattern_id=t["pattern_id"],
            description=t.get("description", ""),
            instance_ids=tuple(t["instance_ids"]),
            subscore=t["subscore"],
            direction=TagDirection(t["direction"]),
        )
        for t in raw
    ]


def _interactive_accept(ctx) -> list[tuple[str, dict[str, str]]]:
    _, state = workflow.current_al_state(ctx)
    accepted = []
    for candidate in state.pending_candidates:
        print(f"\ncandidate {candidate.response.id}:")
        print(f"  response: {candidate.response.text}")
        print(f"  gold: {candidate.gold.by_subscore}")
        answer = input("accept this candidate? [y/N] ").strip().lower()
        if answer != "y":
            continue
        reasoning = {}
        for name, draft in candidate.reasoning.items():
            print(f"  draft reasoning for {name}:\n    {draft}")
            edited = input(f"  replacement for {name} (empty keeps draft): ").strip()
            reasoning[name] = edited or draft
        accepted.append((candidate.response.id, reasoning))
    return accepted


def _cmd_al(args) -> CommandResult:
    ctx = _ctx(args)
    if args.al_command == "init":
        digest, state = workflow.do_al_init(
            ctx,
            args.prompt,
            max_additions=args.max_additions,
            max_rounds=args.max_rounds,
            balance_strategy=args.balance,
            max_skew=args.max_skew,
        )
        ratio = state.validation_ratio()
        return CommandResult(
            EXIT_OK,
            f"loop initialized ({digest[:12]}): pool={len(state.pool_ids)} "
            f"shots={len(state.exemplars)} validation ratio={ratio:.1f}:1",
        )
    if args.al_command == "status":
        decision = workflow.do_al_status(ctx)
        print(f"status: {decision.status.value}")
        return CommandResult(EXIT_OK, f"reason: {decision.reason}")
    if args.al_command == "revert":
        digest, state, decision = workflow.do_al_revert(ctx)
        return CommandResult(EXIT_OK, f"reverted to iteration {decision.revert_to} ({digest[:12]})")
    if args.al_command == "step":
        if args.run:
            digest, state = workflow.do_al_run(ctx)
            it = state.iterations[-1]
            return CommandResult(
                EXIT_OK,
                f"iteration {it.index}: errors={it.error_count} pool={len(state.pool_ids)} ({digest[:12]})",
            )
        if args.tags:
            workflow.do_al_tag(ctx, _load_tags(args.tags))
            digest, state, result = workflow.do_al_candidates(ctx)
            for candidate, (rid, covered) in zip(result.candidates, result.certificate):
                print(f"candidate {rid}: covers {', '.join(covered)}")
            if result.exhausted:
                print(f"selection exhausted; uncovered: {list(result.uncovered_patterns)}")
            return CommandResult(
                EXIT_OK, f"{len(result.candidates)} candidate(s) staged ({digest[:12]})"
            )
        if args.interactive:
            accepted = _interactive_accept(ctx)
        elif args.accept_all:
            _, state = workflow.current_al_state(ctx)
            accepted = [(c.response.id, dict(c.reasoning)) for c in state.pending_candidates]
        else:
            ids = [s for s in args.accept.split(",") if s]
            reasoning = workflow.load_yaml_or_json(args.reasoning) if args.reasoning else {}
            _, state = workflow.current_al_state(ctx)
            staged = {c.response.id: c for c in state.pending_candidates}
            accepted = []
            for rid in ids:
                base = dict(staged[rid].reasoning) if rid in staged else {}
                base.update(reasoning.get(rid, {}))
                accepted.append((rid, base))
        digest, state = workflow.do_al_accept(ctx, accepted)
        return CommandResult(
            EXIT_OK,
            f"accepted {len(accepted)}: shots={len(state.exemplars)} pool={len(state.pool_ids)} ({digest[:12]})",
        )
    raise ValidationError(f"unknown al command {args.al_command!r}")


def _cmd_report(args) -> CommandResult:
    ctx = _ctx(args)
    print(workflow.do_report(ctx, csv_path=args.csv), end="")
    return CommandResult(EXIT_OK, "", args.csv)


def _cmd_serve(args) -> CommandResult:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.home), host=args.host, port=args.port)
    return CommandResult(EXIT_OK, "service stopped")


_HANDLERS = {
    "fixture": _cmd_fixture,
    "init": _cmd_init,
    "split": _cmd_split,
    "irr": _cmd_irr,
    "prompt": _cmd_prompt,
    "score": _cmd_score,
    "evaluate": _cmd_evaluate,
    "al": _cmd_al,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.home is None:
        args.home = _default_home()
    try:
        result = _HANDLERS[args.command](args)
        if result.summary:
            print(result.summary, file=sys.stdout if result.exit_code == EXIT_OK else sys.stderr)
        return result.exit_code
    except GateFailedError as exc:
        print(f"error[gate]: {exc}", file=sys.stderr)
        return EXIT_GATE
    except LockConflictError as exc:
        print(f"error[lock]: {exc}", file=sys.stderr)
        return EXIT_LOCK
    except (ValidationError, ParseError) as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except GatewayError as exc:
        print(f"error[gateway]: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except RubricLoopError as exc:
        print(f"error[internal]: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
