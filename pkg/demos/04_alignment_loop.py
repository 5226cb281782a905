"""The alignment loop end to end against a self-healing mock backend.

Three faulty-reasoning patterns are injected into the backend; each heals
once an exemplar addressing it enters the prompt. Greedy selection fixes the
heaviest pattern first and the loop converges within three rounds.

Run: python3 demos/04_alignment_loop.py
"""

from rubric_loop.active_learning import (
    ALState,
    StopStatus,
    advance,
    check_stop_for_state,
    propose_candidates,
    run_validation,
    tag_errors,
)
from rubric_loop.fixtures import (
    ErrorPattern,
    balanced_exemplar_ids,
    exemplars_from_gold,
    fixture_dataset,
    repaired_after_exemplar_script,
    tags_for_patterns,
)
from rubric_loop.gateway import GatewayConfig, MockBackend
from rubric_loop.prompting import DEFAULT_FORMAT_INSTRUCTIONS, DEFAULT_PERSONA, PromptMode
from rubric_loop.storage import split_dataset

dataset = fixture_dataset()
split = split_dataset(dataset, 0.8, seed=42)
exemplar_ids = balanced_exemplar_ids(dataset)
pool = [i for i in split.train_ids if i not in set(exemplar_ids)]

state = ALState(
    question_id=dataset.question_id,
    persona_preamble=DEFAULT_PERSONA,
    format_instructions=DEFAULT_FORMAT_INSTRUCTIONS,
    mode=PromptMode.FEW_SHOT_COT,
    exemplars=tuple(exemplars_from_gold(dataset, exemplar_ids)),
    pool_ids=tuple(pool),
    max_additions=1,
    max_rounds=5,
)
print(f"Validation pool: {len(state.pool_ids)} instances; "
      f"prompt starts with {len(state.exemplars)} exemplars.\n")

patterns = [
    ErrorPattern("p_because_keyword", tuple(pool[0:6]), "arrow_size_reasoning"),
    ErrorPattern("p_direction_mixup", tuple(pool[6:9]), "runoff_direction"),
    ErrorPattern("p_evidence_reuse", tuple(pool[9:11]), "arrow_size"),
]
print("Injected backend error patterns (id, cohort size, subscore):")
for p in patterns:
    print(f"  {p.pattern_id:<22} {len(p.instance_ids)}  {p.subscore}")
backend = MockBackend(script=repaired_after_exemplar_script(dataset, patterns))
gold = dataset.gold_by_id()
cfg = GatewayConfig()

round_number = 0
while True:
    state = run_validation(state, dataset, cfg, backend)
    iteration = state.iterations[-1]
    print(f"\niteration {iteration.index}: {iteration.error_count} validation errors")
    decision = check_stop_for_state(state, dataset)
    print(f"  stop check: {decision.status.value} ({decision.reason})")
    if decision.status != StopStatus.CONTINUE:
        break

    tags = tags_for_patterns(patterns, iteration.misclassified_ids, gold)
    state = tag_errors(state, tags)
    state, selection = propose_candidates(state, dataset)
    for rid, covered in selection.certificate:
        print(f"  greedy pick {rid} covers {', '.join(covered)}")
    state = advance(state, state.pending_candidates, dataset.rubric)
    round_number += 1
    print(f"  prompt now holds {len(state.exemplars)} exemplars; "
          f"pool shrank to {len(state.pool_ids)}")

print(f"\nConverged after {round_number} correction round(s).")
print("Per-iteration error counts:", [it.error_count for it in state.iterations])
