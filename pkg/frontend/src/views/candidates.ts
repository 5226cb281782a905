/**
 * Candidate board: staged exemplars ranked by how many tagged instances they
 * cover, the balance delta each accept would cause, and a blocked state
 * (with the violating subscores named) when the policy would be broken.
 * The server re-checks on accept; this mirror only fails fast.
 */

import { checkAccept, countsFromReport, type AcceptCheck } from "../balance.js";
import type { BalanceOverview, ErrorTagPayload, ExemplarPayload } from "../types.js";
import { escapeHtml } from "./html.js";

export interface RankedCandidate {
  candidate: ExemplarPayload;
  coveredPatterns: string[];
  coveredInstances: number;
  accept: AcceptCheck;
}

/** Coverage = tags containing the candidate; weight = their cohort sizes. */
export function rankCandidates(
  candidates: ExemplarPayload[],
  tags: ErrorTagPayload[],
  balance: BalanceOverview,
): RankedCandidate[] {
  const counts = countsFromReport(balance.report);
  const ranked = candidates.map((candidate) => {
    const covering = tags.filter((t) => t.instance_ids.includes(candidate.response.id));
    return {
      candidate,
      coveredPatterns: covering.map((t) => t.pattern_id).sort(),
      coveredInstances: covering.reduce((acc, t) => acc + t.instance_ids.length, 0),
      accept: checkAccept(counts, balance.policy, candidate.gold),
    };
  });
  ranked.sort(
    (a, b) =>
      b.coveredInstances - a.coveredInstances ||
      a.candidate.response.id.localeCompare(b.candidate.response.id),
  );
  return ranked;
}

export function renderCandidates(ranked: RankedCandidate[]): string {
  const cards = ranked
    .map((entry) => {
      const c = entry.candidate;
      const blocked = !entry.accept.allowed;
      const deltas = Object.entries(entry.accept.delta)
        .map(([name, d]) => `<li>${escapeHtml(name)}: ${escapeHtml(d)}</li>`)
        .join("");
      const blockNote = blocked
        ? `<p class="blocked-note">accept blocked: would unbalance ${entry.accept.violating
            .map(escapeHtml)
            .join(", ")}</p>`
        : "";
      const reasoning = Object.entries(c.reasoning)
        .map(
          ([name, text]) =>
            `<details><summary>${escapeHtml(name)}</summary><p class="draft-cot">${escapeHtml(text)}</p></details>`,
        )
        .join("");
      return `<article class="candidate ${blocked ? "blocked" : "acceptable"}" data-response="${escapeHtml(c.response.id)}">
        <header><strong>${escapeHtml(c.response.id)}</strong>
          <span class="cover">covers ${entry.coveredInstances} tagged instance(s): ${entry.coveredPatterns
            .map(escapeHtml)
            .join(", ") || "untagged"}</span>
        </header>
        <blockquote>${escapeHtml(c.response.text)}</blockquote>
        <ul class="balance-delta">${deltas}</ul>
        ${blockNote}
        <div class="cot-drafts">${reasoning}</div>
        <button class="accept" data-response="${escapeHtml(c.response.id)}" ${blocked ? "disabled" : ""}>accept</button>
        <button class="reject" data-response="${escapeHtml(c.response.id)}">reject</button>
      </article>`;
    })
    .join("\n");
  return `<section id="candidates">
    <h2>Correction candidates</h2>
    ${cards || "<p>No candidates staged. Tag errors in the triage view first.</p>"}
  </section>`;
}
