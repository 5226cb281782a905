"""Seed a fully populated experiment for the review workbench.

Builds, through real pipeline transitions, an experiment containing:

* a reliability round with unresolved disagreements (the disagreement queue),
* a chain-of-thought prompt and a two-iteration loop history whose error
  counts rise 5 -> 8 (an overfit the dashboard must surface), and
* staged candidates under a uniform balance policy chosen so that exactly one
  pending candidate would violate balance if accepted.

Run as ``python3 -m rubric_loop.review_fixture --home DIR -e ID``; prints a
JSON summary consumed by the frontend test harness.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import workflow
from .active_learning import BalanceState, ErrorTag, TagDirection
from .errors import ValidationError
from .fixtures import (
    balanced_exemplar_ids,
    exemplars_from_gold,
    flip_script,
    make_rater_scores,
)
from .gateway import MockBackend
from .irr import sample_for_irr
from .prompting import BalancePolicy, BalanceStrategy, PromptMode


def _skew_after(balance: BalanceState, gold) -> int:
    counts = balance.with_addition(gold).counts
    return max(abs(pos - neg) for pos, neg in counts.values())


def seed_review_experiment(home: str | Path, experiment_id: str = "review-demo") -> dict:
    home = Path(home)
    data_dir = home / "_data"
    from .fixtures import write_fixture

    dataset_path, rubric_path = write_fixture(data_dir)
    ctx = workflow.init_experiment(home, experiment_id, dataset_path, rubric_path)
    workflow.do_split(ctx, ratio=0.8, seed=42)

    # Reliability round with two unresolved disagreements.
    sample = sample_for_irr(workflow.partition_ids(ctx, "train"), 0.2, seed=5)
    disagreement_ids = sorted(sample)[:2]
    rater_a = make_rater_scores(ctx.dataset, sample, "alice")
    rater_b = make_rater_scores(
        ctx.dataset,
        sample,
        "bob",
        flips={disagreement_ids[0]: ["arrow_size"], disagreement_ids[1]: ["runoff_direction"]},
    )
    workflow.do_irr_compute(ctx, rater_a, rater_b)

    # Chain-of-thought prompt over a balanced exemplar set.
    exemplar_ids = balanced_exemplar_ids(ctx.dataset)
    exemplars = exemplars_from_gold(ctx.dataset, exemplar_ids)
    exemplar_file = ctx.store.root / "seed_exemplars.json"
    exemplar_file.write_text(json.dumps([e.to_dict() for e in exemplars]), encoding="utf-8")
    prompt_digest, _ = workflow.do_prompt_build(
        ctx, PromptMode.FEW_SHOT_COT, exemplar_source=f"file:{exemplar_file}"
    )
    workflow.do_al_init(ctx, prompt_digest, max_additions=2, max_rounds=3)

    # Iteration 0: five errors, one correcting exemplar accepted.
    _, state = workflow.current_al_state(ctx)
    pool = list(state.pool_ids)
    five = pool[:5]
    backend = MockBackend(script=flip_script(ctx.dataset, {v: ["arrow_size"] for v in five}))
    workflow.do_al_run(ctx, backend=backend)
    workflow.do_al_tag(
        ctx,
        [ErrorTag("P1", "shared arrow-size confusion", tuple(five), "arrow_size", TagDirection.FP)],
    )
    workflow.do_al_candidates(ctx)
    _, state = workflow.current_al_state(ctx)
    first = state.pending_candidates[0]
    workflow.do_al_accept(ctx, [(first.response.id, dict(first.reasoning))])

    # Iteration 1: eight errors -> overfit against iteration 0.
    _, state = workflow.current_al_state(ctx)
    eight = [v for v in state.pool_ids if v != first.response.id][:8]
    backend = MockBackend(
        script=flip_script(ctx.dataset, {v: ["runoff_direction"] for v in eight})
    )
    workflow.do_al_run(ctx, backend=backend)
    workflow.do_al_tag(
        ctx,
        [
            ErrorTag(
                "P2", "direction wording misread", tuple(eight), "runoff_direction", TagDirection.FP
            )
        ],
    )

    # Stage two candidates and pick a uniform skew cap that admits exactly one.
    _, state = workflow.current_al_state(ctx)
    gold = ctx.dataset.gold_by_id()
    base = BalanceState.from_exemplars(state.exemplars, ctx.rubric, BalancePolicy())
    ranked = sorted(eight, key=lambda rid: (_skew_after(base, gold[rid]), rid))
    allowed_id, blocked_id = ranked[0], ranked[-1]
    cap = _skew_after(base, gold[allowed_id])
    if _skew_after(base, gold[blocked_id]) <= cap:
        raise ValidationError("seed data cannot separate candidates by balance skew")
    candidates = tuple(exemplars_from_gold(ctx.dataset, [allowed_id, blocked_id]))
    state = replace(
        state,
        pending_candidates=candidates,
        balance_policy=BalancePolicy(strategy=BalanceStrategy.UNIFORM, max_skew=cap),
    )
    with ctx.store.lock():
        digest = ctx.store.put_record(
            "al", state.to_dict(), meta={"type": "state", "state_digest": state.digest()}
        )

    return {
        "experiment_id": experiment_id,
        "home": str(home),
        "disagreement_ids": disagreement_ids,
        "prompt_digest": prompt_digest,
        "error_counts": [it.error_count for it in state.iterations],
        "accepted_first_round": first.response.id,
        "allowed_candidate": allowed_id,
        "blocked_candidate": blocked_id,
        "al_digest": digest,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="rubric-loop-review-fixture")
    parser.add_argument("--home", required=True)
    parser.add_argument("-e", "--experiment", default="review-demo")
    args = parser.parse_args(argv)
    summary = seed_review_experiment(args.home, args.experiment)
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
