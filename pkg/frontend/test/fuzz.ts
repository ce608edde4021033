import { Span } from "../src/bio.js";

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Random non-overlapping span set over nTokens; may be empty. */
export function randomSpanSet(rand: () => number, nTokens: number): Span[] {
  const spans: Span[] = [];
  let cursor = 0;
  while (cursor < nTokens && rand() < 0.7) {
    const start = cursor + Math.floor(rand() * Math.min(3, nTokens - cursor));
    if (start >= nTokens) break;
    const end = Math.min(nTokens - 1, start + Math.floor(rand() * 3));
    spans.push({ start, end, slotType: rand() < 0.5 ? "Title" : "City" });
    cursor = end + 1 + Math.floor(rand() * 2);
  }
  return spans;
}
