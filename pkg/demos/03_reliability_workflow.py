"""Inter-rater reliability: sample, compare, resolve, emit exemplars.

Run: python3 demos/03_reliability_workflow.py
"""

from rubric_loop.fixtures import fixture_dataset, make_rater_scores
from rubric_loop.irr import (
    ConsensusRecord,
    compute_round,
    emit_exemplars,
    sample_for_irr,
)

dataset = fixture_dataset()

print("Two humans independently score a seeded 20% sample:")
sample = sample_for_irr(dataset.ids, 0.2, seed=5)
print(f"  sample ({len(sample)} of {len(dataset.ids)}): {sample[:6]} ...\n")

# Alice scores at gold; Bob diverges on two (response, subscore) pairs.
flips = {sample[0]: ["arrow_size"], sample[1]: ["runoff_direction_reasoning"]}
alice = make_rater_scores(dataset, sample, "alice")
bob = make_rater_scores(dataset, sample, "bob", flips=flips)

round_ = compute_round(alice, bob, dataset.rubric)
print("Round 1 kappas (gate: every kappa must exceed 0.7):")
for name, kappa in round_.kappa_by_subscore.items():
    marker = "ok " if kappa > round_.threshold else "LOW"
    print(f"  [{marker}] {name:<28} {kappa:.4f}")
print(f"passed: {round_.passed}\n")

print("Disagreements to discuss:")
for d in round_.disagreements:
    print(f"  {d.response_id} / {d.subscore}: alice={d.a_value} bob={d.b_value}")

print("\nThe reviewers reach consensus on each pair, with a rationale that")
print("seeds the exemplar's reasoning text:")
consensus = [
    ConsensusRecord(
        response_id=d.response_id,
        subscore=d.subscore,
        resolved_value=d.b_value,
        rationale=(
            "After re-reading the rubric the reviewers agreed the response "
            f"does not meet the {d.subscore} criteria as written."
        ),
        resolved_by=("alice", "bob"),
    )
    for d in round_.disagreements
]

exemplars = emit_exemplars(round_, consensus, {}, dataset.response_by_id())
agreed = [e for e in exemplars if e.source.value == "irr_agreed"]
resolved = [e for e in exemplars if e.source.value == "irr_disagreed_consensus"]
print(f"\nEmitted {len(exemplars)} exemplars: {len(agreed)} agreed, "
      f"{len(resolved)} consensus-resolved (ordered agreed-first).")
example = resolved[0]
print(f"\nA consensus exemplar ({example.response.id}):")
print(f"  gold: {example.gold.by_subscore}")
for name, text in example.reasoning.items():
    print(f"  reasoning[{name}]: {text[:70]}...")
