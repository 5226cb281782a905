"""Agreement and classification metrics, plus per-subscore error-trend analysis.

Conventions fixed here (and relied on by tests):

* Macro F1 averages over the classes present in ``gold`` union ``pred``; a
  per-class precision or recall with a 0/0 denominator is defined as 0.
* Kappa with a degenerate chance term (both raters constant and identical)
  returns 1.0 for perfect observed agreement, else 0.0, so the functions are
  total.
* The label range for quadratic weighted kappa is an explicit argument, never
  inferred: inferred ranges silently change the weight matrix.
* Everything is computed in double precision; rounding to two decimals happens
  only at display time.

For binary labels the quadratic weight matrix degenerates and
``quadratic_weighted_kappa`` equals ``cohen_kappa`` exactly; both are reported
because either may be wanted for binary subscores.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .model import Rubric, ScoreVector, fold_name

Labels = Sequence[int]


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts; pred=1/gold=0 is a false positive (overscoring)."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricReport:
    """One evaluated comparison: accuracy, macro F1, both kappas, per-class F1."""

    accuracy: float
    macro_f1: float
    qwk: float
    kappa: float
    per_class_f1: dict[int, float]
    n: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "qwk": self.qwk,
            "kappa": self.kappa,
            "per_class_f1": {str(k): v for k, v in self.per_class_f1.items()},
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MetricReport":
        return cls(
            accuracy=d["accuracy"],
            macro_f1=d["macro_f1"],
            qwk=d["qwk"],
            kappa=d["kappa"],
            per_class_f1={int(k): v for k, v in d["per_class_f1"].items()},
            n=d["n"],
        )


class ErrorDirection(str, Enum):
    OVERSCORING = "overscoring"
    UNDERSCORING = "underscoring"
    BALANCED = "balanced"


@dataclass(frozen=True)
class TrendReport:
    """False-positive vs false-negative skew for one subscore."""

    subscore: str
    fp_count: int
    fn_count: int
    direction: ErrorDirection


class AgreementBand(str, Enum):
    NONE_TO_WEAK = "none_to_weak"
    MODERATE = "moderate"
    STRONG = "strong"
    ALMOST_PERFECT = "almost_perfect"


def _check_pair(a: Labels, b: Labels) -> None:
    if len(a) != len(b):
        raise ValidationError(f"label lists differ in length: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValidationError("label lists must be non-empty")


def accuracy(pred: Labels, gold: Labels) -> float:
    """Exact-match fraction."""
    _check_pair(pred, gold)
    return sum(p == g for p, g in zip(pred, gold)) / len(pred)


def _f1_for_class(pred: Labels, gold: Labels, cls: int) -> float:
    tp = sum(p == cls and g == cls for p, g in zip(pred, gold))
    fp = sum(p == cls and g != cls for p, g in zip(pred, gold))
    fn = sum(p != cls and g == cls for p, g in zip(pred, gold))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def per_class_f1(pred: Labels, gold: Labels) -> dict[int, float]:
    """F1 per class over the union of classes seen in either list."""
    _check_pair(pred, gold)
    classes = sorted(set(pred) | set(gold))
    return {cls: _f1_for_class(pred, gold, cls) for cls in classes}


def macro_f1(pred: Labels, gold: Labels) -> float:
    """Unweighted mean of per-class F1 over classes present in gold or pred."""
    scores = per_class_f1(pred, gold)
    return sum(scores.values()) / len(scores)


def cohen_kappa(a: Labels, b: Labels) -> float:
    """Unweighted Cohen's kappa: (p_o - p_e) / (1 - p_e), p_e from marginal products."""
    _check_pair(a, b)
    n = len(a)
    labels = sorted(set(a) | set(b))
    index = {lab: i for i, lab in enumerate(labels)}
    table = np.zeros((len(labels), len(labels)))
    for x, y in zip(a, b):
        table[index[x], index[y]] += 1.0
    table /= n
    p_o = float(np.trace(table))
    p_e = float(table.sum(axis=1) @ table.sum(axis=0))
    if p_e >= 1.0:
        # Both raters constant and identical; keep the function total.
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def quadratic_weighted_kappa(a: Labels, b: Labels, label_min: int, label_max: int) -> float:
    """Weighted kappa with quadratic penalties over the closed label range.

    ``1 - sum(w * O) / sum(w * E)`` where ``w[i][j] = (i-j)^2 / (k-1)^2``,
    ``O`` is the observed proportion matrix and ``E`` the outer product of its
    marginals. The range ``[label_min, label_max]`` fixes the weight matrix
    even when some labels never occur.
    """
    _check_pair(a, b)
    if label_max < label_min:
        raise ValidationError(f"label_max {label_max} < label_min {label_min}")
    for lab in (*a, *b):
        if not label_min <= lab <= label_max:
            raise ValidationError(f"label {lab} outside range [{label_min}, {label_max}]")
    k = label_max - label_min + 1
    n = len(a)

    observed = np.zeros((k, k))
    for x, y in zip(a, b):
        observed[x - label_min, y - label_min] += 1.0
    observed /= n
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))

    if k == 1:
        weights = np.zeros((1, 1))
    else:
        grid = np.arange(k, dtype=float)
        weights = (grid[:, None] - grid[None, :]) ** 2 / (k - 1) ** 2

    num = float((weights * observed).sum())
    den = float((weights * expected).sum())
    if den == 0.0:
        return 1.0 if num == 0.0 else 0.0
    return 1.0 - num / den


def agreement_band(qwk: float) -> AgreementBand:
    """Qualitative agreement band for a kappa-style statistic.

    moderate: [0.6, 0.8); strong: [0.8, 0.9]; almost_perfect: (0.9, 1.0];
    anything below 0.6 is none_to_weak.
    """
    if not -1.0 <= qwk <= 1.0:
        raise ValidationError(f"kappa value {qwk} outside [-1, 1]")
    if qwk > 0.9:
        return AgreementBand.ALMOST_PERFECT
    if qwk >= 0.8:
        return AgreementBand.STRONG
    if qwk >= 0.6:
        return AgreementBand.MODERATE
    return AgreementBand.NONE_TO_WEAK


def confusion_counts(pred: Labels, gold: Labels) -> ConfusionCounts:
    """Binary confusion counts for one subscore."""
    _check_pair(pred, gold)
    tp = sum(p == 1 and g == 1 for p, g in zip(pred, gold))
    fp = sum(p == 1 and g == 0 for p, g in zip(pred, gold))
    fn = sum(p == 0 and g == 1 for p, g in zip(pred, gold))
    tn = sum(p == 0 and g == 0 for p, g in zip(pred, gold))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def error_trend(pred: Labels, gold: Labels, subscore: str) -> TrendReport:
    """Classify a subscore's error skew as overscoring, underscoring, or balanced."""
    counts = confusion_counts(pred, gold)
    if counts.fp > counts.fn:
        direction = ErrorDirection.OVERSCORING
    elif counts.fn > counts.fp:
        direction = ErrorDirection.UNDERSCORING
    else:
        direction = ErrorDirection.BALANCED
    return TrendReport(subscore=subscore, fp_count=counts.fp, fn_count=counts.fn, direction=direction)


def _report(pred: Labels, gold: Labels, label_min: int, label_max: int) -> MetricReport:
    return MetricReport(
        accuracy=accuracy(pred, gold),
        macro_f1=macro_f1(pred, gold),
        qwk=quadratic_weighted_kappa(pred, gold, label_min, label_max),
        kappa=cohen_kappa(pred, gold),
        per_class_f1=per_class_f1(pred, gold),
        n=len(pred),
    )


@dataclass(frozen=True)
class EvaluationReport:
    """Per-subscore metric reports plus a total-score report over integer totals."""

    per_subscore: dict[str, MetricReport]
    total: MetricReport

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_subscore": {k: v.to_dict() for k, v in self.per_subscore.items()},
            "total": self.total.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvaluationReport":
        return cls(
            per_subscore={k: MetricReport.from_dict(v) for k, v in d["per_subscore"].items()},
            total=MetricReport.from_dict(d["total"]),
        )


def evaluate_scores(
    pred: Sequence[ScoreVector], gold: Sequence[ScoreVector], rubric: Rubric
) -> EvaluationReport:
    """Compare predicted and gold score vectors aligned by response id.

    Binary metrics per subscore (label range [0, 1]); total-score metrics over
    integer totals with label range [0, max_total].
    """
    pred_by_id = {v.response_id: v for v in pred}
    gold_by_id = {v.response_id: v for v in gold}
    if set(pred_by_id) != set(gold_by_id):
        missing = sorted(set(gold_by_id) ^ set(pred_by_id))
        raise ValidationError(f"response id mismatch between pred and gold: {missing}")
    if not pred_by_id:
        raise ValidationError("nothing to evaluate: empty score lists")

    ids = sorted(pred_by_id)
    per_subscore: dict[str, MetricReport] = {}
    for name in rubric.subscore_names:
        folded = fold_name(name)

        def value(vec: ScoreVector) -> int:
            for key, val in vec.by_subscore.items():
                if fold_name(key) == folded:
                    return val
            raise ValidationError(f"vector {vec.response_id!r} lacks subscore {name!r}")

        p = [value(pred_by_id[i]) for i in ids]
        g = [value(gold_by_id[i]) for i in ids]
        per_subscore[name] = _report(p, g, 0, 1)

    totals_pred = [sum(pred_by_id[i].by_subscore.values()) for i in ids]
    totals_gold = [sum(gold_by_id[i].by_subscore.values()) for i in ids]
    total = _report(totals_pred, totals_gold, 0, rubric.max_total)
    return EvaluationReport(per_subscore=per_subscore, total=total)


def format_report_table(
    rows: Sequence[tuple[str, int, MetricReport]], title: str
) -> str:
    """Fixed-width comparison table: one row per implementation.

    ``rows`` are (implementation label, prompt exemplar count, report).
    Values are rounded to two decimals at display time only.
    """
    header = f"{title:<28}{'n':>4}  {'Acc':>5}  {'F1':>5}  {'QWK':>5}"
    lines = [header, "-" * len(header)]
    for label, n_shots, report in rows:
        lines.append(
            f"{label:<28}{n_shots:>4}  {report.accuracy:>5.2f}  {report.macro_f1:>5.2f}  {report.qwk:>5.2f}"
        )
    return "\n".join(lines)
