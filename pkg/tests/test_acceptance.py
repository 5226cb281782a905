"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines; every tolerance is pinned here.
"""

import json
import os
import random
import subprocess
import sys
import time

import pytest

from qwk_oracle import brute_force_qwk

from rubric_loop.active_learning import (
    ALState,
    BalanceState,
    ErrorTag,
    StopStatus,
    TagDirection,
    advance,
    check_stop,
    check_stop_for_state,
    propose_candidates,
    revert,
    run_validation,
    tag_errors,
)
from rubric_loop.errors import BalanceError, ParseError
from rubric_loop.fixtures import (
    ErrorPattern,
    balanced_exemplar_ids,
    echo_gold_script,
    exemplars_from_gold,
    fixture_dataset,
    flip_script,
    repaired_after_exemplar_script,
    tags_for_patterns,
)
from rubric_loop.gateway import GatewayConfig, MockBackend, parse_generation
from rubric_loop.irr import gate_passed
from rubric_loop.metrics import (
    AgreementBand,
    agreement_band,
    cohen_kappa,
    macro_f1,
    quadratic_weighted_kappa,
)
from rubric_loop.model import Rubric, Subscore, SubscoreKind
from rubric_loop.prompting import (
    DEFAULT_FORMAT_INSTRUCTIONS,
    DEFAULT_PERSONA,
    BalancePolicy,
    BalanceStrategy,
    PromptMode,
    PromptSpec,
    check_balance,
    render_cot_block,
    render_prompt,
)
from rubric_loop.storage import split_dataset


def ok(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def test_qwk_oracle_equivalence():
    rng = random.Random(424242)
    started = time.monotonic()
    for _ in range(200):
        n = rng.randint(1, 50)
        a = [rng.randint(0, 4) for _ in range(n)]
        b = [rng.randint(0, 4) for _ in range(n)]
        ours = quadratic_weighted_kappa(a, b, 0, 4)
        reference = brute_force_qwk(a, b, 0, 4)
        assert abs(ours - reference) <= 1e-12, (a, b)
    elapsed = time.monotonic() - started
    assert elapsed < 1.0, f"took {elapsed:.3f}s"
    ok(f"QWK matches the brute-force oracle on 200 seeded pairs in {elapsed:.3f}s")


def test_binary_degeneracy():
    rng = random.Random(31337)
    for _ in range(200):
        n = rng.randint(1, 50)
        a = [rng.randint(0, 1) for _ in range(n)]
        b = [rng.randint(0, 1) for _ in range(n)]
        assert abs(quadratic_weighted_kappa(a, b, 0, 1) - cohen_kappa(a, b)) <= 1e-12
    ok("QWK equals unweighted kappa on 200 random binary pairs (1e-12)")


def test_metric_hand_values():
    kappa = cohen_kappa([1, 1, 0, 0, 1], [1, 0, 0, 0, 1])
    assert abs(kappa - 0.6153846153846154) <= 1e-9
    f1 = macro_f1([1, 0, 0, 1], [1, 0, 1, 1])
    assert abs(f1 - 0.7333333333333334) <= 1e-9
    ok("hand-computed kappa 0.615384... and macro F1 0.7333... reproduced (1e-9)")


def test_agreement_bands():
    assert agreement_band(0.68) == AgreementBand.MODERATE
    assert agreement_band(0.80) == AgreementBand.STRONG
    assert agreement_band(0.95) == AgreementBand.ALMOST_PERFECT
    assert agreement_band(0.91) == AgreementBand.ALMOST_PERFECT
    assert agreement_band(0.59) == AgreementBand.NONE_TO_WEAK
    ok("agreement bands: 0.68 moderate, 0.80 strong, 0.95/0.91 almost perfect, 0.59 weak")


def test_irr_gate_strictness():
    assert gate_passed({"subscore": 0.70}, 0.7) is False
    assert gate_passed({"subscore": 0.701}, 0.7) is True
    ok("reliability gate is strict: kappa 0.70 fails, 0.701 passes")


def test_end_to_end_oracle_run_via_cli(tmp_path):
    env = {**os.environ, "RUBRIC_LOOP_HOME": str(tmp_path / "experiments")}

    def cli(*argv: str) -> str:
        result = subprocess.run(
            [sys.executable, "-m", "rubric_loop.cli", *argv],
            capture_output=True,
            text=True,
            env=env,
            check=True,
        )
        return result.stdout

    started = time.monotonic()
    cli("fixture", "--out", str(tmp_path / "data"))
    cli(
        "init", "-e", "oracle", "--dataset", str(tmp_path / "data" / "dataset.jsonl"),
        "--rubric", str(tmp_path / "data" / "rubric.yaml"),
    )
    cli("split", "-e", "oracle", "--seed", "42")
    out = cli("prompt", "build", "-e", "oracle", "--mode", "zero_shot")
    prompt_digest = out.split()[1].rstrip(":")
    out = cli("score", "-e", "oracle", "--prompt", prompt_digest, "--partition", "test")
    run_digest = out.split()[1].rstrip(":")
    cli("evaluate", "-e", "oracle", "--run", run_digest)
    report = cli("report", "-e", "oracle")
    elapsed = time.monotonic() - started

    data_rows = [
        line
        for line in report.splitlines()
        if line.startswith("zero_shot")
    ]
    assert len(data_rows) == 5  # four subscores plus total
    for row in data_rows:
        assert row.split()[-3:] == ["1.00", "1.00", "1.00"], row
    assert elapsed < 5.0, f"pipeline took {elapsed:.2f}s"
    ok(f"CLI-only oracle pipeline: every Acc/F1/QWK is 1.00 in {elapsed:.2f}s")


def test_balance_invariant():
    dataset = fixture_dataset()
    gold = dataset.gold_by_id()
    positives = [rid for rid in dataset.ids if gold[rid].by_subscore["arrow_size"] == 1][:3]
    exemplars = tuple(exemplars_from_gold(dataset, positives))
    spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, exemplars, PromptMode.FEW_SHOT)
    with pytest.raises(BalanceError) as err:
        render_prompt(spec)
    assert "arrow_size lacks a negative instance" in str(err.value)
    report = check_balance(exemplars, dataset.rubric)
    assert not report.satisfied
    assert any("arrow_size" in v for v in report.violations)
    render_prompt(spec, allow_unbalanced=True)  # explicit override renders
    ok("unbalanced prompt build fails without override and names the subscore")


def test_parser_round_trip_and_malformed_corpora():
    dataset = fixture_dataset(n_responses=100, seed=99)
    for rid in dataset.ids:
        exemplar = exemplars_from_gold(dataset, [rid])[0]
        block = render_cot_block(exemplar, dataset.rubric)
        parsed = parse_generation(block, dataset.rubric, response_id=rid)
        assert parsed.scores.by_subscore == exemplar.gold.by_subscore
        assert parsed.scores.total == exemplar.gold.total

    rubric = Rubric(
        question_id="q",
        question_text="t",
        subscores=(Subscore(name="arrow_size", kind=SubscoreKind.CONCEPT, criteria="c"),),
        max_total=1,
    )
    corpora = [
        ("", "empty_generation"),
        ("  \n \t ", "empty_generation"),
        ("no grammar anywhere in this text", "missing_subscore"),
        ("TOTAL: 1", "missing_subscore"),
        ("REASONING: orphan reasoning\nTOTAL: 0", "missing_subscore"),
        ("SUBSCORE arrow_size: 2\nTOTAL: 2", "non_binary_value"),
        ("SUBSCORE arrow_size: yes\nTOTAL: 1", "non_binary_value"),
        ("SUBSCORE arrow_size: -1\nTOTAL: -1", "non_binary_value"),
        ("SUBSCORE arrow_size: 1\nSUBSCORE arrow_size: 1\nTOTAL: 2", "duplicate_subscore"),
        ("SUBSCORE mystery: 1\nTOTAL: 1", "unknown_subscore"),
    ]
    assert len(corpora) == 10
    for raw, expected_code in corpora:
        with pytest.raises(ParseError) as err:
            parse_generation(raw, rubric)
        assert err.value.code == expected_code, raw
    ok("100 exemplars round-trip exactly; 10 malformed corpora raise their designated errors")


def _loop_state(dataset, split, **overrides):
    exemplar_ids = balanced_exemplar_ids(dataset)
    pool = [i for i in split.train_ids if i not in set(exemplar_ids)]
    defaults = dict(
        question_id=dataset.question_id,
        persona_preamble=DEFAULT_PERSONA,
        format_instructions=DEFAULT_FORMAT_INSTRUCTIONS,
        mode=PromptMode.FEW_SHOT_COT,
        exemplars=tuple(exemplars_from_gold(dataset, exemplar_ids)),
        pool_ids=tuple(pool),
        max_additions=1,
        max_rounds=5,
    )
    defaults.update(overrides)
    return ALState(**defaults)


def test_al_stopping_rules_with_replay():
    dataset = fixture_dataset()
    split = split_dataset(dataset, 0.8, seed=42)
    cfg = GatewayConfig()

    # converged on [k, 0]
    state = _loop_state(dataset, split)
    victims = list(state.pool_ids)[:4]
    state = run_validation(
        state, dataset, cfg, MockBackend(script=flip_script(dataset, {v: ["arrow_size"] for v in victims}))
    )
    state = run_validation(state, dataset, cfg, MockBackend(script=echo_gold_script(dataset)))
    assert [it.error_count for it in state.iterations] == [4, 0]
    live = check_stop_for_state(state, dataset)
    assert live.status == StopStatus.CONVERGED
    replayed = check_stop_for_state(ALState.from_dict(state.to_dict()), dataset)
    assert replayed == live

    # overfit_revert on [5, 8] with the prior prompt digest restored
    state = _loop_state(dataset, split)
    pool = list(state.pool_ids)
    five = {v: ["arrow_size"] for v in pool[:5]}
    state = run_validation(state, dataset, cfg, MockBackend(script=flip_script(dataset, five)))
    digest_at_zero = state.iterations[0].prompt_spec_digest
    state = tag_errors(state, [ErrorTag("P1", "", tuple(pool[:5]), "arrow_size", TagDirection.FP)])
    state, _ = propose_candidates(state, dataset)
    added = state.pending_candidates[0].response.id
    state = advance(state, state.pending_candidates, dataset.rubric)
    eight = {v: ["runoff_direction"] for v in pool[:9] if v != added}
    state = run_validation(state, dataset, cfg, MockBackend(script=flip_script(dataset, eight)))
    assert [it.error_count for it in state.iterations] == [5, 8]
    live = check_stop_for_state(state, dataset)
    assert live.status == StopStatus.OVERFIT_REVERT and live.revert_to == 0
    replayed = check_stop_for_state(ALState.from_dict(state.to_dict()), dataset)
    assert replayed == live
    reverted = revert(state, live.revert_to, dataset.rubric)
    assert reverted.spec(dataset.rubric).digest() == digest_at_zero

    # exhausted when no balance-preserving candidate exists
    state = _loop_state(
        dataset,
        split,
        balance_policy=BalancePolicy(strategy=BalanceStrategy.UNIFORM, max_skew=0),
    )
    gold = dataset.gold_by_id()
    targets = [i for i in state.pool_ids if gold[i].by_subscore["arrow_size"] == 1][:3]
    state = run_validation(
        state, dataset, cfg, MockBackend(script=flip_script(dataset, {v: ["arrow_size"] for v in targets}))
    )
    state = tag_errors(state, [ErrorTag("P1", "", tuple(targets), "arrow_size", TagDirection.FN)])
    live = check_stop_for_state(state, dataset)
    assert live.status == StopStatus.EXHAUSTED
    replayed = check_stop_for_state(ALState.from_dict(state.to_dict()), dataset)
    assert replayed == live
    ok("stopping rules: [4,0] converges, [5,8] overfit-reverts with digest restored, "
       "balance dead-end exhausts; replay reproduces each decision")


def test_al_convergence_simulation():
    dataset = fixture_dataset()
    split = split_dataset(dataset, 0.8, seed=42)
    state = _loop_state(dataset, split)
    pool = list(state.pool_ids)
    patterns = [
        ErrorPattern("p_heavy", tuple(pool[0:6]), "arrow_size_reasoning"),
        ErrorPattern("p_medium", tuple(pool[6:9]), "runoff_direction"),
        ErrorPattern("p_light", tuple(pool[9:11]), "arrow_size"),
    ]
    backend = MockBackend(script=repaired_after_exemplar_script(dataset, patterns))
    gold = dataset.gold_by_id()
    cfg = GatewayConfig()

    rounds = 0
    while True:
        state = run_validation(state, dataset, cfg, backend)
        decision = check_stop_for_state(state, dataset)
        if decision.status != StopStatus.CONTINUE:
            break
        tags = tags_for_patterns(patterns, state.iterations[-1].misclassified_ids, gold)
        state = tag_errors(state, tags)
        state, _ = propose_candidates(state, dataset)
        state = advance(state, state.pending_candidates, dataset.rubric)
        rounds += 1
        assert rounds <= 3, "loop exceeded the pattern count"
    assert decision.status == StopStatus.CONVERGED
    assert rounds <= 3
    ok(f"self-healing backend with 3 injected patterns converges in {rounds} greedy rounds")


def test_determinism_across_two_full_executions(tmp_path):
    from rubric_loop import workflow
    from rubric_loop.fixtures import write_fixture
    from rubric_loop.prompting import render_prompt as render

    def execute(home):
        dataset_path, rubric_path = write_fixture(home / "data")
        ctx = workflow.init_experiment(home / "exp-home", "det", dataset_path, rubric_path)
        workflow.do_split(ctx, ratio=0.8, seed=42)
        split = workflow.current_split(ctx)
        prompt_digest, spec = workflow.do_prompt_build(ctx, PromptMode.ZERO_SHOT)
        run_digest, run = workflow.do_score(ctx, prompt_digest, partition="test")
        return {
            "split_train": split.train_ids,
            "split_test": split.test_ids,
            "prompt_digest": prompt_digest,
            "prompt_bytes": render(spec).text,
            "run_digest": run_digest,
        }

    first = execute(tmp_path / "one")
    second = execute(tmp_path / "two")
    assert first["split_train"] == second["split_train"]
    assert first["split_test"] == second["split_test"]
    assert first["prompt_digest"] == second["prompt_digest"]
    assert first["prompt_bytes"] == second["prompt_bytes"]
    assert first["run_digest"] == second["run_digest"]
    ok("fixed seed: identical split ids, prompt bytes, and run digests across two executions")
