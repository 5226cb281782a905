/** Review queue assembly: what still needs a human decision, per screen. */

import type {
  ConsensusPayload,
  DisagreementItem,
  ExemplarPayload,
  MisclassifiedInstance,
  ReviewQueueItem,
} from "./types.js";

export function disagreementQueue(
  items: DisagreementItem[],
): ReviewQueueItem<DisagreementItem, ConsensusPayload>[] {
  return items.map((item) => ({
    kind: "irr_disagreement",
    payload: item,
    status: item.consensus ? "resolved" : "pending",
    decision: item.consensus ?? undefined,
  }));
}

export function triageQueue(
  items: MisclassifiedInstance[],
  taggedIds: Set<string>,
): ReviewQueueItem<MisclassifiedInstance>[] {
  return items.map((item) => ({
    kind: "misclassified_instance",
    payload: item,
    status: taggedIds.has(item.response_id) ? "resolved" : "pending",
  }));
}

export function candidateQueue(
  candidates: ExemplarPayload[],
  decided: Map<string, "accepted" | "rejected">,
): ReviewQueueItem<ExemplarPayload, "accepted" | "rejected">[] {
  return candidates.map((candidate) => ({
    kind: "candidate",
    payload: candidate,
    status: decided.has(candidate.response.id) ? "resolved" : "pending",
    decision: decided.get(candidate.response.id),
  }));
}

export function pendingCount(queue: ReviewQueueItem[]): number {
  return queue.filter((item) => item.status === "pending").length;
}

/** The reliability round may advance only once every disagreement is resolved. */
export function canAdvanceRound(queue: ReviewQueueItem<DisagreementItem>[]): boolean {
  return pendingCount(queue) === 0;
}
