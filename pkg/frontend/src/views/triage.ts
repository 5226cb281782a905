/**
 * Error triage: each misclassified instance with its raw generation, parsed
 * scores against gold, and an FP/FN badge per subscore error. Selecting
 * instances and naming the shared pattern creates an error tag.
 */

import type { ErrorTagPayload, MisclassificationPayload, MisclassifiedInstance } from "../types.js";
import { escapeHtml } from "./html.js";

export function errorBadge(error: MisclassificationPayload): "FP" | "FN" | "PARSE" {
  if (error.pred === null) return "PARSE";
  return error.pred === 1 && error.gold === 0 ? "FP" : "FN";
}

export function renderTriage(items: MisclassifiedInstance[]): string {
  const cards = items
    .map((item) => {
      const badges = item.errors
        .map(
          (e) =>
            `<span class="badge badge-${errorBadge(e).toLowerCase()}">${errorBadge(e)} ${escapeHtml(
              e.subscore,
            )}</span>`,
        )
        .join(" ");
      const parsed = item.parsed
        ? Object.entries(item.parsed.scores.by_subscore)
            .map(([name, value]) => {
              const gold = item.gold.by_subscore[name];
              const cls = value === gold ? "match" : "mismatch";
              return `<tr class="${cls}"><td>${escapeHtml(name)}</td><td>${value}</td><td>${gold}</td></tr>`;
            })
            .join("")
        : `<tr class="mismatch"><td colspan="3">generation did not parse</td></tr>`;
      return `<article class="misclassified" data-response="${escapeHtml(item.response_id)}">
        <header>
          <input type="checkbox" class="tag-select" value="${escapeHtml(item.response_id)}">
          <strong>${escapeHtml(item.response_id)}</strong> ${badges}
        </header>
        <blockquote>${escapeHtml(item.response_text)}</blockquote>
        <details>
          <summary>raw generation</summary>
          <pre>${escapeHtml(item.raw_generation ?? "(no generation recorded)")}</pre>
        </details>
        <table class="scores"><thead><tr><th>subscore</th><th>model</th><th>gold</th></tr></thead>
        <tbody>${parsed}</tbody></table>
      </article>`;
    })
    .join("\n");

  return `<section id="triage">
    <h2>Model error triage</h2>
    ${cards || "<p>No misclassified instances in the latest iteration.</p>"}
    <form id="tag-form">
      <label>pattern id <input name="pattern_id" required placeholder="p_keyword_because"></label>
      <label>description <input name="description" placeholder="what reasoning went wrong"></label>
      <label>subscore <input name="subscore" required></label>
      <label>direction
        <select name="direction"><option value="fp">fp (overscoring)</option><option value="fn">fn (underscoring)</option></select>
      </label>
      <button type="submit">attach tag to selected instances</button>
    </form>
  </section>`;
}

/** Build a tag from the triage form; instance selection must be non-empty. */
export function makeTag(
  patternId: string,
  description: string,
  subscore: string,
  direction: "fp" | "fn",
  selectedIds: string[],
): ErrorTagPayload {
  if (selectedIds.length === 0) {
    throw new Error("select at least one misclassified instance for the tag");
  }
  if (!patternId.trim()) {
    throw new Error("pattern id is required");
  }
  return {
    pattern_id: patternId.trim(),
    description,
    instance_ids: [...selectedIds].sort(),
    subscore,
    direction,
  };
}
