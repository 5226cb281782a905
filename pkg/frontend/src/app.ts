/**
 * Browser entry: a hash-routed, stateless shell over the service API.
 * All authoritative state lives server-side; every screen re-fetches on
 * navigation and after each mutation, and stale-digest conflicts trigger a
 * reload prompt instead of a merge.
 */

import { ApiClient, ApiError } from "./api.js";
import { rankCandidates, renderCandidates } from "./views/candidates.js";
import { renderDashboard } from "./views/dashboard.js";
import { renderDisagreements } from "./views/disagreements.js";
import { makeTag, renderTriage } from "./views/triage.js";

const api = new ApiClient(window.location.origin.replace(/:\d+$/, ":8800"));

function view(): HTMLElement {
  return document.getElementById("view")!;
}

function currentExperiment(): string {
  return (document.getElementById("experiment") as HTMLSelectElement).value;
}

async function handleConflict(error: unknown, reload: () => Promise<void>): Promise<void> {
  if (error instanceof ApiError && error.isConflict) {
    alert("Someone else changed this experiment. Reloading the screen.");
    await reload();
    return;
  }
  if (error instanceof ApiError) {
    alert(`${error.code}: ${error.message}`);
    return;
  }
  throw error;
}

async function showDisagreements(): Promise<void> {
  const experiment = currentExperiment();
  const queue = await api.disagreements(experiment);
  view().innerHTML = renderDisagreements(queue);

  view().querySelectorAll<HTMLFormElement>(".consensus-form").forEach((form) => {
    form.addEventListener("submit", async (event) => {
      event.preventDefault();
      const data = new FormData(form);
      try {
        await api.submitConsensus(experiment, queue.digest, [
          {
            response_id: form.dataset.response!,
            subscore: form.dataset.subscore!,
            resolved_value: Number(data.get("resolved_value")),
            rationale: String(data.get("rationale") ?? ""),
            resolved_by: ["reviewer"],
          },
        ]);
        await showDisagreements();
      } catch (error) {
        await handleConflict(error, showDisagreements);
      }
    });
  });

  document.getElementById("advance-round")?.addEventListener("click", async () => {
    try {
      const fresh = await api.disagreements(experiment);
      await api.advanceIrr(experiment, fresh.digest);
      alert("Round advanced; exemplars emitted.");
    } catch (error) {
      await handleConflict(error, showDisagreements);
    }
  });
}

async function showTriage(): Promise<void> {
  const experiment = currentExperiment();
  const { items, digest } = await api.misclassified(experiment);
  view().innerHTML = renderTriage(items);

  document.getElementById("tag-form")?.addEventListener("submit", async (event) => {
    event.preventDefault();
    const form = event.currentTarget as HTMLFormElement;
    const data = new FormData(form);
    const selected = [...view().querySelectorAll<HTMLInputElement>(".tag-select:checked")].map(
      (box) => box.value,
    );
    try {
      const tag = makeTag(
        String(data.get("pattern_id") ?? ""),
        String(data.get("description") ?? ""),
        String(data.get("subscore") ?? ""),
        data.get("direction") === "fn" ? "fn" : "fp",
        selected,
      );
      await api.submitTags(experiment, digest, [tag]);
      window.location.hash = "#/candidates";
    } catch (error) {
      await handleConflict(error, showTriage);
    }
  });
}

async function showCandidates(): Promise<void> {
  const experiment = currentExperiment();
  const [{ candidates, balance, digest }, { iterations }] = await Promise.all([
    api.candidates(experiment),
    api.iterations(experiment),
  ]);
  const tags = iterations.at(-1)?.tags ?? [];
  const ranked = rankCandidates(candidates, tags, balance);
  view().innerHTML = renderCandidates(ranked);

  view().querySelectorAll<HTMLButtonElement>("button.accept").forEach((button) => {
    button.addEventListener("click", async () => {
      const id = button.dataset.response!;
      const entry = ranked.find((r) => r.candidate.response.id === id)!;
      try {
        await api.acceptCandidates(experiment, digest, [
          { response_id: id, reasoning: entry.candidate.reasoning },
        ]);
        await showCandidates();
      } catch (error) {
        await handleConflict(error, showCandidates);
      }
    });
  });
  view().querySelectorAll<HTMLButtonElement>("button.reject").forEach((button) => {
    button.addEventListener("click", () => {
      button.closest("article")?.classList.add("rejected");
      button.disabled = true;
    });
  });
}

async function showDashboard(): Promise<void> {
  const experiment = currentExperiment();
  const [{ iterations }, { decision, digest }] = await Promise.all([
    api.iterations(experiment),
    api.status(experiment),
  ]);
  view().innerHTML = renderDashboard(iterations, decision);

  document.getElementById("revert")?.addEventListener("click", async () => {
    try {
      await api.revert(experiment, digest);
      await showDashboard();
    } catch (error) {
      await handleConflict(error, showDashboard);
    }
  });
}

const routes: Record<string, () => Promise<void>> = {
  "#/disagreements": showDisagreements,
  "#/triage": showTriage,
  "#/candidates": showCandidates,
  "#/dashboard": showDashboard,
};

async function route(): Promise<void> {
  const handler = routes[window.location.hash] ?? showDashboard;
  try {
    await handler();
  } catch (error) {
    view().innerHTML = `<p class="error">${error instanceof Error ? error.message : String(error)}</p>`;
  }
}

async function boot(): Promise<void> {
  const select = document.getElementById("experiment") as HTMLSelectElement;
  const { experiments } = await api.listExperiments();
  select.innerHTML = experiments.map((e) => `<option value="${e}">${e}</option>`).join("");
  select.addEventListener("change", route);
  window.addEventListener("hashchange", route);
  await route();
}

boot().catch((error) => {
  view().innerHTML = `<p class="error">failed to reach the review service: ${String(error)}</p>`;
});
