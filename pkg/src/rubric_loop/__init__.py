"""rubric-loop: human-in-the-loop rubric scoring with LLM prompts.

A workbench for scoring short-answer responses against binary-subscore
rubrics with a language model, gating human label quality by inter-rater
reliability, and aligning the model to human scorers through a
chain-of-thought active-learning loop with explicit stopping rules.
"""

from .errors import (
    AuthFailureError,
    BackendRefusalError,
    BalanceError,
    BudgetExceededError,
    GateFailedError,
    GatewayError,
    LockConflictError,
    ParseError,
    RubricLoopError,
    StaleDigestError,
    TransientExhaustedError,
    ValidationError,
)
from .metrics import (
    AgreementBand,
    EvaluationReport,
    MetricReport,
    TrendReport,
    accuracy,
    agreement_band,
    cohen_kappa,
    error_trend,
    evaluate_scores,
    macro_f1,
    quadratic_weighted_kappa,
)
from .model import (
    CotExemplar,
    ExemplarSource,
    Generation,
    RaterScores,
    Rubric,
    ScoreVector,
    StudentResponse,
    Subscore,
    SubscoreKind,
    total_of,
    validate_score_vector,
)
from .prompting import (
    BalancePolicy,
    BalanceReport,
    BalanceStrategy,
    PromptMode,
    PromptSpec,
    PromptText,
    check_balance,
    estimate_tokens,
    render_cot_block,
    render_prompt,
)
from .gateway import (
    GatewayConfig,
    MockBackend,
    LiveBackend,
    ParsedScore,
    ScoringRun,
    complete,
    parse_generation,
    score_batch,
)
from .irr import ConsensusRecord, IrrRound, compute_round, emit_exemplars, sample_for_irr
from .active_learning import (
    ALIteration,
    ALState,
    ErrorTag,
    StopDecision,
    StopStatus,
    advance,
    check_stop,
    run_validation,
    select_candidates,
)
from .storage import Dataset, ExperimentStore, Split, load_dataset, load_rubric, split_dataset

__version__ = "0.1.0"
