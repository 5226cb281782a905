/**
 * Client-side mirror of the service's exemplar balance policy, so the
 * candidate board can show the balance delta and block a violating accept
 * before the server does. The server remains authoritative; this only
 * prevents pointless round-trips.
 */

import type { BalancePolicyPayload, BalanceReportPayload, ScoreVectorPayload } from "./types.js";

export interface Counts {
  [subscore: string]: { positives: number; negatives: number };
}

export function countsFromReport(report: BalanceReportPayload): Counts {
  const out: Counts = {};
  for (const [name, c] of Object.entries(report.per_subscore)) {
    out[name] = { positives: c.positives, negatives: c.negatives };
  }
  return out;
}

/** Counts after adding one exemplar's gold vector. */
export function countsAfter(counts: Counts, gold: ScoreVectorPayload): Counts {
  const out: Counts = {};
  for (const [name, c] of Object.entries(counts)) {
    const value = gold.by_subscore[name];
    out[name] = {
      positives: c.positives + (value === 1 ? 1 : 0),
      negatives: c.negatives + (value === 0 ? 1 : 0),
    };
  }
  return out;
}

/** Subscores whose counts violate the policy; empty means allowed. */
export function violatingSubscores(counts: Counts, policy: BalancePolicyPayload): string[] {
  if (policy.strategy === "min_constraint") {
    return [];
  }
  const violating: string[] = [];
  for (const [name, c] of Object.entries(counts)) {
    if (policy.strategy === "uniform") {
      if (Math.abs(c.positives - c.negatives) > policy.max_skew) {
        violating.push(name);
      }
    } else {
      const total = c.positives + c.negatives;
      const target = policy.gold_rates[name];
      if (total === 0 || target === undefined) continue;
      if (Math.abs(c.positives / total - target) > policy.rate_tolerance) {
        violating.push(name);
      }
    }
  }
  return violating;
}

export interface AcceptCheck {
  allowed: boolean;
  violating: string[];
  delta: Record<string, string>;
}

/** Would accepting this candidate keep the exemplar balance legal? */
export function checkAccept(
  counts: Counts,
  policy: BalancePolicyPayload,
  gold: ScoreVectorPayload,
): AcceptCheck {
  const after = countsAfter(counts, gold);
  const violating = violatingSubscores(after, policy);
  const delta: Record<string, string> = {};
  for (const name of Object.keys(counts)) {
    const value = gold.by_subscore[name];
    delta[name] = value === 1 ? "+1 positive" : "+1 negative";
  }
  return { allowed: violating.length === 0, violating, delta };
}
