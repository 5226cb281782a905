/**
 * Typed client for the review service. All mutations carry the record digest
 * the screen was rendered from; the service rejects stale digests with 409
 * and this client surfaces that as a conflict the views can prompt-reload on.
 */

import type {
  ALStatePayload,
  ApiErrorBody,
  BalanceOverview,
  ConsensusPayload,
  DisagreementQueue,
  ErrorTagPayload,
  ExemplarPayload,
  IterationPayload,
  MisclassifiedInstance,
  StopDecisionPayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }

  get isConflict(): boolean {
    return this.status === 409;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}/api/v1${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let code = "unknown";
      let message = `HTTP ${response.status}`;
      try {
        const parsed = (await response.json()) as ApiErrorBody;
        code = parsed.error.code;
        message = parsed.error.message;
      } catch {
        // non-JSON error body; keep defaults
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  listExperiments(): Promise<{ experiments: string[] }> {
    return this.request("GET", "/experiments");
  }

  disagreements(experiment: string): Promise<DisagreementQueue> {
    return this.request("GET", `/experiments/${experiment}/irr/disagreements`);
  }

  submitConsensus(
    experiment: string,
    baseDigest: string,
    records: ConsensusPayload[],
  ): Promise<{ digest: string; recorded: number }> {
    return this.request("POST", `/experiments/${experiment}/irr/consensus`, {
      base_digest: baseDigest,
      records,
    });
  }

  advanceIrr(
    experiment: string,
    baseDigest: string,
    reasoningDrafts: Record<string, Record<string, string>> = {},
  ): Promise<{ digest: string; emitted: number }> {
    return this.request("POST", `/experiments/${experiment}/irr/advance`, {
      base_digest: baseDigest,
      reasoning_drafts: reasoningDrafts,
    });
  }

  alState(
    experiment: string,
  ): Promise<{ digest: string; state: ALStatePayload; validation_ratio: number | null }> {
    return this.request("GET", `/experiments/${experiment}/al/state`);
  }

  iterations(
    experiment: string,
  ): Promise<{ digest: string; iterations: IterationPayload[]; error_counts: number[] }> {
    return this.request("GET", `/experiments/${experiment}/al/iterations`);
  }

  misclassified(
    experiment: string,
  ): Promise<{ digest: string; iteration: number; items: MisclassifiedInstance[] }> {
    return this.request("GET", `/experiments/${experiment}/al/misclassified`);
  }

  candidates(
    experiment: string,
  ): Promise<{ digest: string; candidates: ExemplarPayload[]; balance: BalanceOverview }> {
    return this.request("GET", `/experiments/${experiment}/al/candidates`);
  }

  status(experiment: string): Promise<{ digest: string; decision: StopDecisionPayload }> {
    return this.request("GET", `/experiments/${experiment}/al/status`);
  }

  runValidation(experiment: string, baseDigest: string): Promise<{ digest: string }> {
    return this.request("POST", `/experiments/${experiment}/al/run`, {
      base_digest: baseDigest,
    });
  }

  submitTags(
    experiment: string,
    baseDigest: string,
    tags: ErrorTagPayload[],
  ): Promise<{ digest: string; selection: unknown }> {
    return this.request("POST", `/experiments/${experiment}/al/tags`, {
      base_digest: baseDigest,
      tags,
    });
  }

  acceptCandidates(
    experiment: string,
    baseDigest: string,
    accepted: Array<{ response_id: string; reasoning: Record<string, string> }>,
  ): Promise<{ digest: string; shots: number; pool: number }> {
    return this.request("POST", `/experiments/${experiment}/al/accept`, {
      base_digest: baseDigest,
      accepted,
    });
  }

  revert(experiment: string, baseDigest: string): Promise<{ digest: string; reverted_to: number }> {
    return this.request("POST", `/experiments/${experiment}/al/revert`, {
      base_digest: baseDigest,
    });
  }
}
