"""Agreement metrics walkthrough: accuracy, macro F1, both kappas, bands.

Run: python3 demos/01_metrics_and_agreement.py
"""

from rubric_loop.metrics import (
    accuracy,
    agreement_band,
    cohen_kappa,
    error_trend,
    macro_f1,
    quadratic_weighted_kappa,
)

print("Two raters scored five responses on one binary subscore:")
rater_a = [1, 1, 0, 0, 1]
rater_b = [1, 0, 0, 0, 1]
print(f"  rater A: {rater_a}")
print(f"  rater B: {rater_b}")
print(f"  raw agreement: {accuracy(rater_b, rater_a):.2f}")
print(f"  Cohen's kappa: {cohen_kappa(rater_a, rater_b):.4f}  (chance-corrected)")

print("\nMacro F1 treats both classes equally, which matters for skewed")
print("reasoning subscores where most students score 0:")
gold = [1, 0, 1, 1]
pred = [1, 0, 0, 1]
print(f"  gold {gold} vs pred {pred} -> macro F1 = {macro_f1(pred, gold):.4f}")

print("\nQuadratic weighted kappa penalizes distant disagreements more; for")
print("binary labels it coincides with the unweighted kappa exactly:")
print(f"  binary QWK  : {quadratic_weighted_kappa(rater_a, rater_b, 0, 1):.4f}")
print(f"  plain kappa : {cohen_kappa(rater_a, rater_b):.4f}")

print("\nOn 0..4 totals the weight matrix spreads out. Swapping extreme")
print("totals costs much more than neighbouring ones:")
near = quadratic_weighted_kappa([0, 1, 2, 3, 4], [1, 0, 2, 4, 3], 0, 4)
far = quadratic_weighted_kappa([0, 1, 2, 3, 4], [4, 1, 2, 3, 0], 0, 4)
print(f"  neighbour swaps: QWK = {near:.4f}")
print(f"  extreme swaps  : QWK = {far:.4f}")

print("\nQualitative bands used when reading results:")
for value in (0.59, 0.68, 0.80, 0.90, 0.91, 0.95):
    print(f"  QWK {value:.2f} -> {agreement_band(value).value}")

print("\nError trends say which way a scorer drifts on a subscore:")
pred = [1, 1, 1, 1, 1, 0, 0, 1, 0]
gold = [0, 0, 0, 0, 0, 1, 1, 1, 0]
report = error_trend(pred, gold, "runoff_direction")
print(f"  FP={report.fp_count}, FN={report.fn_count} -> {report.direction.value}")
