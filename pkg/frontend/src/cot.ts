/**
 * Reasoning-chain editor model. The editor is template-scaffolded, not free
 * text: each subscore's paragraph is composed from three ordered parts
 * (evidence quote, rubric reference, verdict), which keeps every accepted
 * exemplar in exactly the shape the prompt renderer expects.
 */

import type { RubricPayload } from "./types.js";

export interface CotDraft {
  subscore: string;
  /** verbatim quote picked from the response text */
  evidence: string;
  /** the rubric criteria line chosen from the dropdown */
  rubricRef: string;
  verdict: 0 | 1;
}

export interface DraftProblem {
  subscore: string;
  problem: string;
}

/** Compose the paragraph in the fixed order: evidence, rubric, verdict. */
export function composeParagraph(draft: CotDraft): string {
  const earned = draft.verdict === 1 ? "earned" : "did not earn";
  return (
    `The student says "${draft.evidence}". ` +
    `The rubric states "${draft.rubricRef}". ` +
    `Based on the rubric, the student ${earned} the ${draft.subscore} point, ` +
    `so the score is ${draft.verdict}.`
  );
}

/** Evidence must be a verbatim, non-empty quote from the response. */
export function validateDraft(draft: CotDraft, responseText: string): DraftProblem[] {
  const problems: DraftProblem[] = [];
  if (!draft.evidence.trim()) {
    problems.push({ subscore: draft.subscore, problem: "evidence quote is empty" });
  } else if (!responseText.includes(draft.evidence)) {
    problems.push({
      subscore: draft.subscore,
      problem: "evidence is not a verbatim quote from the response",
    });
  }
  if (!draft.rubricRef.trim()) {
    problems.push({ subscore: draft.subscore, problem: "rubric reference not selected" });
  }
  if (draft.verdict !== 0 && draft.verdict !== 1) {
    problems.push({ subscore: draft.subscore, problem: "verdict must be 0 or 1" });
  }
  return problems;
}

/**
 * Build the full reasoning map for an exemplar. Every rubric subscore needs
 * a valid draft before the exemplar may be submitted.
 */
export function buildReasoningMap(
  drafts: CotDraft[],
  rubric: RubricPayload,
  responseText: string,
): { reasoning: Record<string, string>; problems: DraftProblem[] } {
  const problems: DraftProblem[] = [];
  const bySubscore = new Map(drafts.map((d) => [d.subscore, d]));
  const reasoning: Record<string, string> = {};
  for (const sub of rubric.subscores) {
    const draft = bySubscore.get(sub.name);
    if (!draft) {
      problems.push({ subscore: sub.name, problem: "no reasoning drafted" });
      continue;
    }
    const own = validateDraft(draft, responseText);
    if (own.length > 0) {
      problems.push(...own);
      continue;
    }
    reasoning[sub.name] = composeParagraph(draft);
  }
  return { reasoning, problems };
}

/** Candidate evidence quotes: sentence-ish spans of the response text. */
export function evidenceOptions(responseText: string): string[] {
  return responseText
    .split(/(?<=[.!?])\s+|,\s+and\s+/)
    .map((s) => s.trim())
    .filter((s) => s.length > 0);
}
