/**
 * Integration against the real review service (spawned in globalSetup over a
 * seeded experiment; mock scoring backend, no live model anywhere):
 *
 * 1. resolving every rater disagreement enables the round advance;
 * 2. a balance-violating candidate accept is blocked client-side and
 *    rejected server-side;
 * 3. the dashboard renders the overfit banner on the 5 -> 8 history and the
 *    revert action restores iteration 0's prompt.
 */

import { readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { rankCandidates, renderCandidates } from "../src/views/candidates.js";
import { renderDashboard } from "../src/views/dashboard.js";
import { advanceEnabled, renderDisagreements } from "../src/views/disagreements.js";

interface Config {
  baseUrl: string;
  home: string;
  summary: {
    experiment_id: string;
    disagreement_ids: string[];
    error_counts: number[];
    accepted_first_round: string;
    allowed_candidate: string;
    blocked_candidate: string;
  };
}

let config: Config;
let api: ApiClient;
let experiment: string;

beforeAll(() => {
  const raw = readFileSync(join(tmpdir(), "rubric-loop-ui-test-config.json"), "utf-8");
  config = JSON.parse(raw);
  api = new ApiClient(config.baseUrl);
  experiment = config.summary.experiment_id;
});

describe("disagreement workflow", () => {
  it("lists the seeded disagreements with rubric context", async () => {
    const queue = await api.disagreements(experiment);
    const ids = new Set(queue.items.map((item) => item.response_id));
    expect(ids).toEqual(new Set(config.summary.disagreement_ids));
    for (const item of queue.items) {
      expect(item.response_text.length).toBeGreaterThan(0);
      expect(item.criteria.length).toBeGreaterThan(0);
    }
  });

  it("keeps advance disabled until all disagreements are resolved, then advances", async () => {
    let queue = await api.disagreements(experiment);
    expect(advanceEnabled(queue)).toBe(false);
    expect(renderDisagreements(queue)).toContain('id="advance-round" disabled');

    for (const item of queue.items) {
      if (item.consensus) continue;
      queue = await api.disagreements(experiment);
      await api.submitConsensus(experiment, queue.digest, [
        {
          response_id: item.response_id,
          subscore: item.subscore,
          resolved_value: item.a_value,
          rationale: "reviewers agreed the rubric wording decides this case",
          resolved_by: ["reviewer-one", "reviewer-two"],
        },
      ]);
    }

    queue = await api.disagreements(experiment);
    expect(queue.all_resolved).toBe(true);
    expect(advanceEnabled(queue)).toBe(true);
    expect(renderDisagreements(queue)).not.toContain('id="advance-round" disabled');

    const advanced = await api.advanceIrr(experiment, queue.digest);
    expect(advanced.emitted).toBeGreaterThan(0);
  });

  it("round-trips: a submitted consensus is what a re-fetch returns", async () => {
    const queue = await api.disagreements(experiment);
    for (const item of queue.items) {
      expect(item.consensus).not.toBeNull();
      expect(item.consensus!.rationale).toContain("rubric wording");
    }
  });
});

describe("candidate board", () => {
  it("blocks the balance-violating candidate client-side", async () => {
    const [{ candidates, balance }, { iterations }] = await Promise.all([
      api.candidates(experiment),
      api.iterations(experiment),
    ]);
    const tags = iterations.at(-1)?.tags ?? [];
    const ranked = rankCandidates(candidates, tags, balance);

    const blocked = ranked.find(
      (r) => r.candidate.response.id === config.summary.blocked_candidate,
    )!;
    const allowed = ranked.find(
      (r) => r.candidate.response.id === config.summary.allowed_candidate,
    )!;
    expect(blocked.accept.allowed).toBe(false);
    expect(blocked.accept.violating.length).toBeGreaterThan(0);
    expect(allowed.accept.allowed).toBe(true);

    const html = renderCandidates(ranked);
    expect(html).toContain("accept blocked");
    const blockedCard = html
      .split("<article")
      .find((part) => part.includes(config.summary.blocked_candidate))!;
    expect(blockedCard).toMatch(/<button class="accept"[^>]*disabled/);
  });

  it("is rejected server-side too, naming balance in the error", async () => {
    const { digest, candidates } = await api.candidates(experiment);
    const blocked = candidates.find(
      (c) => c.response.id === config.summary.blocked_candidate,
    )!;
    let failure: ApiError | undefined;
    try {
      await api.acceptCandidates(experiment, digest, [
        { response_id: blocked.response.id, reasoning: blocked.reasoning },
      ]);
    } catch (error) {
      failure = error as ApiError;
    }
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure!.status).toBe(422);
    expect(failure!.message).toMatch(/balance/);
  });

  it("stale digests are rejected with a conflict", async () => {
    let failure: ApiError | undefined;
    try {
      await api.acceptCandidates(experiment, "digest-from-another-era", []);
    } catch (error) {
      failure = error as ApiError;
    }
    expect(failure?.isConflict).toBe(true);
  });
});

describe("iteration dashboard", () => {
  it("renders the overfit banner on the 5 -> 8 fixture", async () => {
    const [{ iterations, error_counts }, { decision }] = await Promise.all([
      api.iterations(experiment),
      api.status(experiment),
    ]);
    expect(error_counts).toEqual([5, 8]);
    expect(decision.status).toBe("overfit_revert");
    expect(decision.revert_to).toBe(0);

    const html = renderDashboard(iterations, decision);
    expect(html).toContain("banner-overfit_revert");
    expect(html).toContain("Overfitting detected");
    expect(html).toContain("revert to iteration 0");
  });

  it("revert action restores the earlier prompt and returns the exemplar to the pool", async () => {
    const { digest } = await api.status(experiment);
    const result = await api.revert(experiment, digest);
    expect(result.reverted_to).toBe(0);

    const { state } = await api.alState(experiment);
    expect(state.pool_ids).toContain(config.summary.accepted_first_round);
    const sources = state.exemplars.map((e) => e.source);
    expect(sources).not.toContain("active_learning");
  });
});
