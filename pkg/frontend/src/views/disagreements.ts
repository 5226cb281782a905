/**
 * Disagreement queue: side-by-side rater values, the response text, and the
 * rubric criteria, with a consensus form per unresolved pair. The advance
 * button stays disabled until every pair carries a consensus.
 */

import { canAdvanceRound, disagreementQueue } from "../queue.js";
import type { DisagreementQueue } from "../types.js";
import { escapeHtml } from "./html.js";

export function renderDisagreements(queue: DisagreementQueue): string {
  const items = disagreementQueue(queue.items);
  const advance = canAdvanceRound(items);
  const kappas = Object.entries(queue.kappa_by_subscore)
    .map(
      ([name, kappa]) =>
        `<span class="kappa ${kappa > 0.7 ? "ok" : "low"}">${escapeHtml(name)}: ${kappa.toFixed(3)}</span>`,
    )
    .join(" ");

  const rows = items
    .map((item) => {
      const d = item.payload;
      const resolved = item.status === "resolved";
      const form = resolved
        ? `<div class="consensus-done">consensus: ${item.decision!.resolved_value} — ${escapeHtml(
            item.decision!.rationale,
          )}</div>`
        : `<form class="consensus-form" data-response="${escapeHtml(d.response_id)}" data-subscore="${escapeHtml(d.subscore)}">
             <label>resolved value
               <select name="resolved_value"><option value="1">1</option><option value="0">0</option></select>
             </label>
             <label>rationale <input name="rationale" required placeholder="why this value is right"></label>
             <button type="submit">submit consensus</button>
           </form>`;
      return `<article class="disagreement ${resolved ? "resolved" : "pending"}">
        <header><strong>${escapeHtml(d.response_id)}</strong> / ${escapeHtml(d.subscore)}</header>
        <blockquote>${escapeHtml(d.response_text)}</blockquote>
        <p class="criteria">rubric: ${escapeHtml(d.criteria)}</p>
        <div class="side-by-side">
          <span class="rater">rater A: <b>${d.a_value}</b></span>
          <span class="rater">rater B: <b>${d.b_value}</b></span>
        </div>
        ${form}
      </article>`;
    })
    .join("\n");

  return `<section id="disagreements">
    <h2>Rater disagreements — round ${queue.round_index}</h2>
    <p class="kappas">${kappas} ${queue.passed ? "(gate passed)" : "(gate not passed)"}</p>
    ${rows || "<p>No disagreements in this round.</p>"}
    <button id="advance-round" ${advance ? "" : "disabled"}>advance: emit exemplars</button>
  </section>`;
}

export function advanceEnabled(queue: DisagreementQueue): boolean {
  return canAdvanceRound(disagreementQueue(queue.items));
}
