/**
 * Iteration dashboard: per-subscore metric history with agreement-band
 * coloring, the error-count trajectory, and the stop-decision banner. When
 * the decision is an overfit revert the banner carries the revert action.
 */

import { agreementBand, bandColor } from "../bands.js";
import type { IterationPayload, StopDecisionPayload } from "../types.js";
import { escapeHtml } from "./html.js";

export function bannerClass(decision: StopDecisionPayload): string {
  return `banner banner-${decision.status}`;
}

export function renderBanner(decision: StopDecisionPayload): string {
  const labels: Record<StopDecisionPayload["status"], string> = {
    continue: "Loop may continue",
    converged: "Converged: no validation errors",
    overfit_revert: "Overfitting detected",
    exhausted: "Pool exhausted",
  };
  const revert =
    decision.status === "overfit_revert"
      ? `<button id="revert" data-iteration="${decision.revert_to}">revert to iteration ${decision.revert_to}</button>`
      : "";
  return `<div class="${bannerClass(decision)}">
    <strong>${labels[decision.status]}</strong>
    <span>${escapeHtml(decision.reason)}</span>
    ${revert}
  </div>`;
}

export function renderDashboard(
  iterations: IterationPayload[],
  decision: StopDecisionPayload,
): string {
  const errorTrajectory = iterations
    .map((it) => `<td class="${riskClass(iterations, it.index)}">${it.error_count}</td>`)
    .join("");

  const subscores = new Set<string>();
  for (const it of iterations) {
    for (const name of Object.keys(it.reports?.per_subscore ?? {})) {
      subscores.add(name);
    }
  }
  const metricRows = [...subscores]
    .sort()
    .map((name) => {
      const cells = iterations
        .map((it) => {
          const report = it.reports?.per_subscore[name];
          if (!report) return "<td>—</td>";
          const band = agreementBand(report.qwk);
          return `<td class="band-${band}" style="background:${bandColor(report.qwk)}" title="${band}">${report.qwk.toFixed(2)}</td>`;
        })
        .join("");
      return `<tr><th>${escapeHtml(name)}</th>${cells}</tr>`;
    })
    .join("\n");

  const header = iterations.map((it) => `<th>iter ${it.index}</th>`).join("");
  return `<section id="dashboard">
    <h2>Alignment loop dashboard</h2>
    ${renderBanner(decision)}
    <table class="history">
      <thead><tr><th></th>${header}</tr></thead>
      <tbody>
        <tr><th>validation errors</th>${errorTrajectory}</tr>
        ${metricRows}
      </tbody>
    </table>
  </section>`;
}

function riskClass(iterations: IterationPayload[], index: number): string {
  if (index === 0) return "steady";
  const current = iterations[index]?.error_count ?? 0;
  const previous = iterations[index - 1]?.error_count ?? 0;
  if (current > previous) return "rising";
  if (current < previous) return "falling";
  return "steady";
}
