import { describe, expect, it } from "vitest";

import { bioToSpans, spansToBio, validateSpans } from "../src/bio.js";

describe("spansToBio", () => {
  it("marks B- at span start and I- inside", () => {
    expect(spansToBio([{ start: 1, end: 2, slotType: "Title" }], 4)).toEqual([
      "O",
      "B-Title",
      "I-Title",
      "O",
    ]);
  });

  it("handles single-token spans and multiple spans", () => {
    expect(
      spansToBio(
        [
          { start: 0, end: 0, slotType: "A" },
          { start: 2, end: 3, slotType: "B" },
        ],
        5,
      ),
    ).toEqual(["B-A", "O", "B-B", "I-B", "O"]);
  });

  it("rejects overlapping spans before any conversion", () => {
    const spans = [
      { start: 0, end: 2, slotType: "A" },
      { start: 2, end: 3, slotType: "B" },
    ];
    expect(validateSpans(spans, 5)).toMatch(/overlapping/);
    expect(() => spansToBio(spans, 5)).toThrow(/overlapping/);
  });

  it("rejects out-of-range spans", () => {
    expect(validateSpans([{ start: 2, end: 5, slotType: "A" }], 4)).toMatch(/out of range/);
    expect(validateSpans([{ start: -1, end: 0, slotType: "A" }], 4)).toMatch(/out of range/);
    expect(validateSpans([{ start: 3, end: 2, slotType: "A" }], 4)).toMatch(/out of range/);
  });

  it("round-trips through bioToSpans", () => {
    const spans = [
      { start: 1, end: 3, slotType: "Title" },
      { start: 5, end: 5, slotType: "Author" },
    ];
    expect(bioToSpans(spansToBio(spans, 7))).toEqual(spans);
  });
});

import { mulberry32, randomSpanSet } from "./fuzz.js";

describe("fuzzed span sets", () => {
  it("always produce BIO that parses back to the same spans", () => {
    const rand = mulberry32(7);
    for (let round = 0; round < 200; round++) {
      const nTokens = 1 + Math.floor(rand() * 10);
      const spans = randomSpanSet(rand, nTokens);
      const tags = spansToBio(spans, nTokens);
      expect(tags).toHaveLength(nTokens);
      expect(bioToSpans(tags)).toEqual(spans);
      for (let i = 0; i < tags.length; i++) {
        if (tags[i].startsWith("I-")) {
          const prev = tags[i - 1];
          expect(prev === `B-${tags[i].slice(2)}` || prev === `I-${tags[i].slice(2)}`).toBe(true);
        }
      }
    }
  });
});
