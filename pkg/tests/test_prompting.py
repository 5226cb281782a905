import pytest
from hypothesis import given, strategies as st

from rubric_loop.errors import BalanceError, BudgetExceededError, ValidationError
from rubric_loop.fixtures import balanced_exemplar_ids, exemplars_from_gold, fixture_dataset
from rubric_loop.gateway import parse_generation
from rubric_loop.model import CotExemplar, ExemplarSource, ScoreVector, StudentResponse
from rubric_loop.prompting import (
    DEFAULT_PERSONA,
    EXEMPLAR_DELIMITER,
    RESPONSE_SLOT,
    PromptMode,
    PromptSpec,
    check_balance,
    estimate_tokens,
    implementation_label,
    render_cot_block,
    render_prompt,
    substitute_slots,
)


@pytest.fixture(scope="module")
def dataset():
    return fixture_dataset()


@pytest.fixture(scope="module")
def balanced_exemplars(dataset):
    return tuple(exemplars_from_gold(dataset, balanced_exemplar_ids(dataset)))


def make_exemplar(dataset, rid, reasoning=True):
    source = ExemplarSource.IRR_AGREED
    ex = exemplars_from_gold(dataset, [rid], source)[0]
    if not reasoning:
        return CotExemplar(response=ex.response, gold=ex.gold, reasoning={}, source=source)
    return ex


class TestPromptSpec:
    def test_zero_shot_rejects_exemplars(self, dataset, balanced_exemplars):
        with pytest.raises(ValidationError):
            PromptSpec(
                rubric=dataset.rubric,
                persona_preamble=DEFAULT_PERSONA,
                exemplars=balanced_exemplars,
                mode=PromptMode.ZERO_SHOT,
            )

    def test_cot_requires_full_reasoning(self, dataset):
        bare = make_exemplar(dataset, "r000", reasoning=False)
        with pytest.raises(ValidationError):
            PromptSpec(
                rubric=dataset.rubric,
                persona_preamble=DEFAULT_PERSONA,
                exemplars=(bare,),
                mode=PromptMode.FEW_SHOT_COT,
            )

    def test_implementation_labels(self, dataset, balanced_exemplars):
        zero = PromptSpec(dataset.rubric, DEFAULT_PERSONA, (), PromptMode.ZERO_SHOT)
        assert implementation_label(zero) == "zero_shot"
        cot = PromptSpec(dataset.rubric, DEFAULT_PERSONA, balanced_exemplars, PromptMode.FEW_SHOT_COT)
        assert implementation_label(cot) == "few_shot_cot"
        from dataclasses import replace

        al_sourced = tuple(
            replace(e, source=ExemplarSource.ACTIVE_LEARNING) if i == 0 else e
            for i, e in enumerate(balanced_exemplars)
        )
        cot_al = PromptSpec(dataset.rubric, DEFAULT_PERSONA, al_sourced, PromptMode.FEW_SHOT_COT)
        assert implementation_label(cot_al) == "cot_al"


class TestRenderPrompt:
    def test_zero_shot_contains_rubric_and_format_no_exemplars(self, dataset):
        spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, (), PromptMode.ZERO_SHOT)
        text = render_prompt(spec).text
        assert "RUBRIC:" in text
        assert "OUTPUT FORMAT:" in text
        assert EXEMPLAR_DELIMITER not in text
        assert text.count(RESPONSE_SLOT) == 1

    def test_few_shot_blocks_have_scores_without_reasoning(self, dataset, balanced_exemplars):
        spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, balanced_exemplars, PromptMode.FEW_SHOT)
        text = render_prompt(spec).text
        assert text.count(EXEMPLAR_DELIMITER) == len(balanced_exemplars)
        assert "REASONING:" not in text.split("OUTPUT FORMAT:")[1].split(EXEMPLAR_DELIMITER)[1]

    def test_cot_blocks_carry_reasoning(self, dataset, balanced_exemplars):
        spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, balanced_exemplars, PromptMode.FEW_SHOT_COT)
        text = render_prompt(spec).text
        first_block = text.split(EXEMPLAR_DELIMITER)[1]
        assert "REASONING:" in first_block

    def test_determinism_and_order_sensitivity(self, dataset, balanced_exemplars):
        spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, balanced_exemplars, PromptMode.FEW_SHOT_COT)
        assert render_prompt(spec).text == render_prompt(spec).text
        reordered = PromptSpec(
            dataset.rubric,
            DEFAULT_PERSONA,
            tuple(reversed(balanced_exemplars)),
            PromptMode.FEW_SHOT_COT,
        )
        assert render_prompt(spec).text != render_prompt(reordered).text

    def test_unbalanced_raises_without_override(self, dataset):
        positives = [
            rid for rid, g in dataset.gold_by_id().items() if g.by_subscore["arrow_size"] == 1
        ][:3]
        exemplars = tuple(exemplars_from_gold(dataset, positives))
        spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, exemplars, PromptMode.FEW_SHOT)
        with pytest.raises(BalanceError) as err:
            render_prompt(spec)
        assert "arrow_size lacks a negative instance" in str(err.value)
        # Override renders, and the report still names the violation.
        rendered = render_prompt(spec, allow_unbalanced=True)
        assert not rendered.balance.satisfied

    def test_budget_enforcement(self, dataset):
        spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, (), PromptMode.ZERO_SHOT)
        with pytest.raises(BudgetExceededError):
            render_prompt(spec, token_budget=10)


class TestRenderCotBlock:
    def test_single_subscore_block(self):
        from rubric_loop.model import Rubric, Subscore, SubscoreKind

        rubric = Rubric(
            question_id="q",
            question_text="t",
            subscores=(Subscore(name="arrow_size", kind=SubscoreKind.CONCEPT, criteria="c"),),
            max_total=1,
        )
        response = StudentResponse(id="r", question_id="q", text="the big arrow is rain")
        exemplar = CotExemplar(
            response=response,
            gold=ScoreVector.from_values("r", {"arrow_size": 1}),
            reasoning={"arrow_size": "The student says X. The rubric states Y. Score 1."},
        )
        block = render_cot_block(exemplar, rubric)
        assert block.splitlines()[0] == "SUBSCORE arrow_size: 1"
        assert block.splitlines()[-1] == "TOTAL: 1"

    def test_four_subscores_in_rubric_order(self, dataset):
        exemplar = make_exemplar(dataset, "r003")
        block = render_cot_block(exemplar, dataset.rubric)
        positions = [block.index(f"SUBSCORE {n}:") for n in dataset.rubric.subscore_names]
        assert positions == sorted(positions)

    def test_missing_reasoning_entry(self, dataset):
        bare = make_exemplar(dataset, "r000", reasoning=False)
        with pytest.raises(ValidationError):
            render_cot_block(bare, dataset.rubric)

    def test_round_trip_recovers_gold(self, dataset):
        for rid in list(dataset.ids)[:10]:
            exemplar = make_exemplar(dataset, rid)
            parsed = parse_generation(
                render_cot_block(exemplar, dataset.rubric), dataset.rubric, response_id=rid
            )
            assert parsed.scores.by_subscore == exemplar.gold.by_subscore
            assert parsed.scores.total == exemplar.gold.total

    def test_plain_score_block_also_round_trips(self, dataset):
        from rubric_loop.prompting import render_score_block

        gold = dataset.gold_by_id()["r007"]
        parsed = parse_generation(
            render_score_block(gold, dataset.rubric), dataset.rubric, response_id="r007"
        )
        assert parsed.scores.by_subscore == gold.by_subscore
        assert all(text == "" for text in parsed.reasoning.values())


class TestCheckBalance:
    def test_satisfied_single_subscore(self, dataset):
        from rubric_loop.model import Rubric, Subscore, SubscoreKind

        rubric = Rubric(
            question_id="q",
            question_text="t",
            subscores=(Subscore(name="a", kind=SubscoreKind.CONCEPT, criteria="c"),),
            max_total=1,
        )
        pos = CotExemplar(
            response=StudentResponse(id="p", question_id="q", text="yes arrows"),
            gold=ScoreVector.from_values("p", {"a": 1}),
        )
        neg = CotExemplar(
            response=StudentResponse(id="n", question_id="q", text="no arrows"),
            gold=ScoreVector.from_values("n", {"a": 0}),
        )
        assert check_balance([pos, neg], rubric).satisfied
        report = check_balance([pos], rubric)
        assert not report.satisfied
        assert report.violations == ("subscore a lacks a negative instance",)

    def test_five_exemplars_cover_four_subscores(self, dataset, balanced_exemplars):
        report = check_balance(balanced_exemplars, dataset.rubric)
        assert report.satisfied
        for counts in report.per_subscore.values():
            assert counts["positives"] >= 1 and counts["negatives"] >= 1

    def test_addition_changes_counts_by_exactly_contribution(self, dataset, balanced_exemplars):
        extra = make_exemplar(dataset, "r030")
        before = check_balance(balanced_exemplars, dataset.rubric)
        after = check_balance([*balanced_exemplars, extra], dataset.rubric)
        for name in dataset.rubric.subscore_names:
            delta_pos = after.per_subscore[name]["positives"] - before.per_subscore[name]["positives"]
            delta_neg = after.per_subscore[name]["negatives"] - before.per_subscore[name]["negatives"]
            value = extra.gold.by_subscore[name]
            assert (delta_pos, delta_neg) == ((1, 0) if value == 1 else (0, 1))


class TestEstimateTokens:
    def test_empty(self):
        assert estimate_tokens("") == 0

    def test_chars_over_four(self):
        assert estimate_tokens("x" * 400) == 100

    def test_ceiling(self):
        assert estimate_tokens("x" * 401) == 101


def test_substitute_slots_survives_braces(dataset):
    template = "Q: {question}\nR: {rubric}\nS: {subscore_list}\nliteral {braces} stay"
    out = substitute_slots(template, dataset.rubric)
    assert dataset.rubric.question_text in out
    assert "literal {braces} stay" in out
    assert "arrow_size, arrow_size_reasoning" in out


@given(st.integers(0, 2**32 - 1))
def test_prompt_bytes_pure_function_of_spec(seed):
    dataset = fixture_dataset(n_responses=8, seed=seed % 1000)
    spec = PromptSpec(dataset.rubric, DEFAULT_PERSONA, (), PromptMode.ZERO_SHOT)
    assert render_prompt(spec).text == render_prompt(spec).text
