/** Agreement bands for kappa-style statistics, same cutoffs as the backend. */

export type Band = "none_to_weak" | "moderate" | "strong" | "almost_perfect";

export function agreementBand(qwk: number): Band {
  if (qwk > 0.9) return "almost_perfect";
  if (qwk >= 0.8) return "strong";
  if (qwk >= 0.6) return "moderate";
  return "none_to_weak";
}

export const BAND_COLORS: Record<Band, string> = {
  none_to_weak: "#d9534f",
  moderate: "#f0ad4e",
  strong: "#5bc0de",
  almost_perfect: "#5cb85c",
};

export function bandColor(qwk: number): string {
  return BAND_COLORS[agreementBand(qwk)];
}
