import pytest

from rubric_loop.errors import (
    AuthFailureError,
    BackendRefusalError,
    BudgetExceededError,
    ParseError,
    TransientExhaustedError,
    ValidationError,
)
from rubric_loop.fixtures import (
    balanced_exemplar_ids,
    echo_gold_script,
    exemplars_from_gold,
    fixture_dataset,
    garbage_script,
)
from rubric_loop.gateway import (
    GatewayConfig,
    MockBackend,
    complete,
    parse_generation,
    score_batch,
)
from rubric_loop.hashing import digest_of_text
from rubric_loop.metrics import evaluate_scores
from rubric_loop.model import Rubric, Subscore, SubscoreKind
from rubric_loop.prompting import DEFAULT_PERSONA, PromptMode, PromptSpec


@pytest.fixture(scope="module")
def dataset():
    return fixture_dataset()


@pytest.fixture(scope="module")
def zero_shot_spec(dataset):
    return PromptSpec(dataset.rubric, DEFAULT_PERSONA, (), PromptMode.ZERO_SHOT)


def single_rubric(name="arrow_size"):
    return Rubric(
        question_id="q",
        question_text="t",
        subscores=(Subscore(name=name, kind=SubscoreKind.CONCEPT, criteria="c"),),
        max_total=1,
    )


class TestComplete:
    def test_mock_table_lookup(self):
        prompt = "score this"
        backend = MockBackend(table={digest_of_text(prompt): "SUBSCORE a: 1\nTOTAL: 1"})
        gen = complete(prompt, GatewayConfig(), backend)
        assert gen.raw_text == "SUBSCORE a: 1\nTOTAL: 1"
        assert gen.attempts == 1
        assert gen.prompt_hash == digest_of_text(prompt)

    def test_transient_then_success_records_attempts(self):
        prompt = "score this"
        backend = MockBackend(
            table={digest_of_text(prompt): "ok"}, fail_transient=1
        )
        naps = []
        gen = complete(prompt, GatewayConfig(), backend, sleep=naps.append)
        assert gen.attempts == 2
        assert len(naps) == 1

    def test_transient_exhausted(self):
        backend = MockBackend(table={}, fail_transient=10)
        with pytest.raises(TransientExhaustedError) as err:
            complete("x", GatewayConfig(max_retries=2), backend, sleep=lambda s: None)
        assert err.value.attempts == 3

    def test_backoff_grows_exponentially(self):
        backend = MockBackend(table={digest_of_text("p"): "ok"}, fail_transient=3)
        naps = []
        complete("p", GatewayConfig(max_retries=3, backoff_base_ms=100), backend, sleep=naps.append)
        assert len(naps) == 3
        # base * 2^k with +/-20% jitter
        for k, nap in enumerate(naps):
            assert 0.1 * (2**k) * 0.8 <= nap <= 0.1 * (2**k) * 1.2

    def test_budget_exceeded_without_call(self):
        backend = MockBackend(table={})
        with pytest.raises(BudgetExceededError):
            complete("x" * 4000, GatewayConfig(token_budget=100), backend)
        assert backend.n_calls == 0

    def test_refusal_not_retried(self):
        backend = MockBackend(table={})
        with pytest.raises(BackendRefusalError):
            complete("anything", GatewayConfig(), backend, sleep=lambda s: None)
        assert backend.n_calls == 1


class TestParseGeneration:
    def test_minimal_block(self):
        rubric = single_rubric()
        parsed = parse_generation(
            "SUBSCORE arrow_size: 1\nREASONING: The student says the arrow is big.\nTOTAL: 1",
            rubric,
            response_id="r1",
        )
        assert parsed.scores.by_subscore == {"arrow_size": 1}
        assert parsed.scores.total == 1
        assert parsed.reasoning["arrow_size"] == "The student says the arrow is big."
        assert parsed.flags == ()

    def test_leading_prose_becomes_reasoning(self):
        rubric = single_rubric()
        parsed = parse_generation(
            "Let me look at the rubric.\nSUBSCORE arrow_size: 0\nTOTAL: 0", rubric
        )
        assert parsed.reasoning["arrow_size"] == "Let me look at the rubric."

    def test_empty_reasoning_recorded_empty(self):
        rubric = single_rubric()
        parsed = parse_generation("SUBSCORE arrow_size: 1\nTOTAL: 1", rubric)
        assert parsed.reasoning["arrow_size"] == ""

    def test_name_folding(self):
        rubric = single_rubric("Arrow Size")
        parsed = parse_generation("SUBSCORE Arrow Size: 1\nTOTAL: 1", rubric)
        assert parsed.scores.by_subscore == {"arrow_size": 1}

    def test_missing_subscore(self):
        rubric = single_rubric()
        with pytest.raises(ParseError) as err:
            parse_generation("some prose but no score lines\nTOTAL: 0", rubric)
        assert err.value.code == "missing_subscore"

    def test_total_mismatch_recovered_and_flagged(self):
        rubric = Rubric(
            question_id="q",
            question_text="t",
            subscores=tuple(
                Subscore(name=n, kind=SubscoreKind.CONCEPT, criteria="c")
                for n in ("a", "b", "c", "d")
            ),
            max_total=4,
        )
        raw = "SUBSCORE a: 1\nSUBSCORE b: 1\nSUBSCORE c: 1\nSUBSCORE d: 0\nTOTAL: 4"
        parsed = parse_generation(raw, rubric)
        assert parsed.scores.total == 3
        assert any(f.startswith("total_mismatch") for f in parsed.flags)

    def test_idempotent(self, dataset):
        raw = "SUBSCORE arrow_size: 1\nREASONING: evidence\nTOTAL: 1"
        rubric = single_rubric()
        assert parse_generation(raw, rubric) == parse_generation(raw, rubric)

    @pytest.mark.parametrize(
        "raw,code",
        [
            ("", "empty_generation"),
            ("   \n  ", "empty_generation"),
            ("the model rambles with no grammar at all", "missing_subscore"),
            ("SUBSCORE arrow_size: 2\nTOTAL: 2", "non_binary_value"),
            ("SUBSCORE arrow_size: yes\nTOTAL: 1", "non_binary_value"),
            ("SUBSCORE arrow_size: 1\nSUBSCORE arrow_size: 0\nTOTAL: 1", "duplicate_subscore"),
            ("SUBSCORE bogus_name: 1\nTOTAL: 1", "unknown_subscore"),
            ("TOTAL: 1", "missing_subscore"),
            ("REASONING: reasoning with no scores\nTOTAL: 0", "missing_subscore"),
            ("SUBSCORE arrow size extra words: 1\nTOTAL: 1", "unknown_subscore"),
        ],
    )
    def test_malformed_corpora(self, raw, code):
        rubric = single_rubric()
        with pytest.raises(ParseError) as err:
            parse_generation(raw, rubric)
        assert err.value.code == code


class TestScoreBatch:
    def test_echo_gold_scores_everything(self, dataset, zero_shot_spec):
        backend = MockBackend(script=echo_gold_script(dataset))
        subset = dataset.subset(dataset.ids[:10])
        run = score_batch(subset.responses, zero_shot_spec, GatewayConfig(), backend)
        assert not run.failures
        gold = subset.gold_by_id()
        report = evaluate_scores(
            [run.results[i].scores for i in sorted(run.results)],
            [gold[i] for i in sorted(run.results)],
            dataset.rubric,
        )
        assert report.total.accuracy == report.total.macro_f1 == report.total.qwk == 1.0

    def test_garbage_isolated_to_one_response(self, dataset, zero_shot_spec):
        bad = dataset.ids[3]
        backend = MockBackend(
            script=garbage_script(dataset, {bad}, echo_gold_script(dataset))
        )
        subset = dataset.subset(dataset.ids[:8])
        run = score_batch(subset.responses, zero_shot_spec, GatewayConfig(), backend)
        assert set(run.failures) == {bad}
        assert run.failures[bad].kind == "parse"
        assert len(run.results) == 7

    def test_rerun_issues_only_missing_completions(self, dataset, zero_shot_spec):
        subset = dataset.subset(dataset.ids[:10])
        first_backend = MockBackend(script=echo_gold_script(dataset))
        partial = score_batch(
            subset.responses[:3], zero_shot_spec, GatewayConfig(), first_backend
        )
        assert len(partial.results) == 3
        second_backend = MockBackend(script=echo_gold_script(dataset))
        full = score_batch(
            subset.responses, zero_shot_spec, GatewayConfig(), second_backend, prior=partial
        )
        assert second_backend.n_calls == 7
        assert len(full.results) == 10

    def test_auth_failure_aborts(self, dataset, zero_shot_spec):
        class AuthBackend:
            def send(self, prompt, cfg):
                raise AuthFailureError("bad key")

        with pytest.raises(AuthFailureError):
            score_batch(
                dataset.subset(dataset.ids[:4]).responses,
                zero_shot_spec,
                GatewayConfig(),
                AuthBackend(),
            )

    def test_question_mismatch_rejected(self, dataset, zero_shot_spec):
        other = fixture_dataset(n_responses=6, question_id="q_other")
        with pytest.raises(ValidationError):
            score_batch(other.responses, zero_shot_spec, GatewayConfig(), MockBackend())

    def test_deterministic_run_digest(self, dataset, zero_shot_spec):
        subset = dataset.subset(dataset.ids[:12])
        digests = []
        for _ in range(2):
            backend = MockBackend(script=echo_gold_script(dataset))
            run = score_batch(
                subset.responses, zero_shot_spec, GatewayConfig(max_inflight=4), backend
            )
            digests.append(run.digest())
        assert digests[0] == digests[1]

    def test_no_duplicate_results_per_id(self, dataset, zero_shot_spec):
        subset = dataset.subset(dataset.ids[:6])
        backend = MockBackend(script=echo_gold_script(dataset))
        run = score_batch(subset.responses, zero_shot_spec, GatewayConfig(), backend)
        assert sorted(run.results) == sorted(set(run.results))
