/**
 * Payload shapes of the /api/v1 review service.
 *
 * The UI holds no authoritative state: everything here mirrors what the
 * service persists, and every screen can be rebuilt from a reload.
 */

export interface SubscorePayload {
  name: string;
  kind: "concept" | "reasoning";
  criteria: string;
  points: number;
}

export interface RubricPayload {
  question_id: string;
  question_text: string;
  subscores: SubscorePayload[];
  max_total: number;
}

export interface ScoreVectorPayload {
  response_id: string;
  by_subscore: Record<string, number>;
  total: number;
}

export interface ResponsePayload {
  id: string;
  question_id: string;
  text: string;
}

export interface ExemplarPayload {
  response: ResponsePayload;
  gold: ScoreVectorPayload;
  reasoning: Record<string, string>;
  source: "irr_agreed" | "irr_disagreed_consensus" | "active_learning";
}

export interface ConsensusPayload {
  response_id: string;
  subscore: string;
  resolved_value: number;
  rationale: string;
  resolved_by: string[];
}

export interface DisagreementItem {
  response_id: string;
  subscore: string;
  a_value: number;
  b_value: number;
  response_text: string;
  criteria: string;
  consensus: ConsensusPayload | null;
}

export interface DisagreementQueue {
  round_digest: string;
  round_index: number;
  kappa_by_subscore: Record<string, number>;
  passed: boolean;
  items: DisagreementItem[];
  all_resolved: boolean;
  digest: string;
}

export interface MetricReportPayload {
  accuracy: number;
  macro_f1: number;
  qwk: number;
  kappa: number;
  per_class_f1: Record<string, number>;
  n: number;
}

export interface EvaluationReportPayload {
  per_subscore: Record<string, MetricReportPayload>;
  total: MetricReportPayload;
}

export interface MisclassificationPayload {
  response_id: string;
  subscore: string;
  pred: number | null;
  gold: number;
}

export interface ErrorTagPayload {
  pattern_id: string;
  description: string;
  instance_ids: string[];
  subscore: string;
  direction: "fp" | "fn";
}

export interface IterationPayload {
  index: number;
  prompt_spec_digest: string;
  run_digest: string;
  validation_ids: string[];
  reports: EvaluationReportPayload | null;
  misclassified: MisclassificationPayload[];
  tags: ErrorTagPayload[];
  added_exemplars: ExemplarPayload[];
  error_count: number;
}

export interface BalancePolicyPayload {
  strategy: "min_constraint" | "uniform" | "empirical";
  max_skew: number;
  rate_tolerance: number;
  gold_rates: Record<string, number>;
}

export interface BalanceReportPayload {
  per_subscore: Record<string, { positives: number; negatives: number }>;
  satisfied: boolean;
  violations: string[];
}

export interface BalanceOverview {
  report: BalanceReportPayload;
  policy: BalancePolicyPayload;
  pending: ExemplarPayload[];
}

export interface ALStatePayload {
  question_id: string;
  pool_ids: string[];
  exemplars: ExemplarPayload[];
  iterations: IterationPayload[];
  pending_candidates: ExemplarPayload[];
  balance_policy: BalancePolicyPayload;
  max_additions: number;
  max_rounds: number;
}

export interface StopDecisionPayload {
  status: "continue" | "converged" | "overfit_revert" | "exhausted";
  reason: string;
  revert_to: number | null;
}

export interface MisclassifiedInstance {
  response_id: string;
  response_text: string;
  gold: ScoreVectorPayload;
  parsed: { scores: ScoreVectorPayload; reasoning: Record<string, string> } | null;
  raw_generation: string | null;
  errors: MisclassificationPayload[];
}

export type ReviewKind = "irr_disagreement" | "misclassified_instance" | "candidate";

/** One unit of pending human work, whatever screen it belongs to. */
export interface ReviewQueueItem<P = unknown, D = unknown> {
  kind: ReviewKind;
  payload: P;
  status: "pending" | "resolved";
  decision?: D;
}

export interface ApiErrorBody {
  error: { module: string; code: string; message: string };
}
