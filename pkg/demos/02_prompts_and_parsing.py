"""From rubric to prompt to parsed scores, with no network.

Run: python3 demos/02_prompts_and_parsing.py
"""

from rubric_loop.fixtures import (
    balanced_exemplar_ids,
    echo_gold_script,
    exemplars_from_gold,
    fixture_dataset,
)
from rubric_loop.gateway import GatewayConfig, MockBackend, complete, parse_generation
from rubric_loop.prompting import (
    DEFAULT_PERSONA,
    PromptMode,
    PromptSpec,
    check_balance,
    estimate_tokens,
    render_prompt,
)

dataset = fixture_dataset()
print(f"Synthetic dataset: {len(dataset.responses)} responses, "
      f"{len(dataset.rubric.subscores)} binary subscores\n")

print("A zero-shot prompt carries the persona, question, rubric, and the")
print("output grammar, but no labeled examples:")
zero = PromptSpec(dataset.rubric, DEFAULT_PERSONA, (), PromptMode.ZERO_SHOT)
rendered = render_prompt(zero)
print("-" * 72)
print(rendered.text[:600] + "  ...")
print("-" * 72)
print(f"token estimate: {estimate_tokens(rendered)}\n")

print("Few-shot prompts need at least one positive and one negative exemplar")
print("per subscore. A greedy pick from the gold labels satisfies that:")
ids = balanced_exemplar_ids(dataset)
exemplars = exemplars_from_gold(dataset, ids)
report = check_balance(exemplars, dataset.rubric)
for name, counts in report.per_subscore.items():
    print(f"  {name:<28} +{counts['positives']} / -{counts['negatives']}")
print(f"  satisfied: {report.satisfied}\n")

cot = PromptSpec(dataset.rubric, DEFAULT_PERSONA, tuple(exemplars), PromptMode.FEW_SHOT_COT)
cot_text = render_prompt(cot)
print(f"Chain-of-thought prompt with {len(exemplars)} exemplars is "
      f"{estimate_tokens(cot_text)} tokens (estimated).\n")

print("Scoring one response through the mock backend and parsing the reply:")
target = dataset.responses[10]
backend = MockBackend(script=echo_gold_script(dataset))
generation = complete(cot_text.fill(target.text), GatewayConfig(), backend)
print("-" * 72)
print(generation.raw_text)
print("-" * 72)
parsed = parse_generation(generation.raw_text, dataset.rubric, response_id=target.id)
print(f"parsed scores : {parsed.scores.by_subscore}")
print(f"parsed total  : {parsed.scores.total}")
print(f"flags         : {parsed.flags or 'none'}")

print("\nA sloppy generation with a wrong TOTAL is recovered and flagged:")
sloppy = generation.raw_text.replace(f"TOTAL: {parsed.scores.total}", "TOTAL: 9")
recovered = parse_generation(sloppy, dataset.rubric, response_id=target.id)
print(f"recomputed total: {recovered.scores.total}, flags: {recovered.flags}")
