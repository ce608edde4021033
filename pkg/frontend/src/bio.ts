/**
 * Token-span <-> BIO conversion.
 *
 * Spans are token-level and inclusive on both ends: {start: 1, end: 2} over
 * four tokens becomes ["O", "B-X", "I-X", "O"]. Conversion to BIO happens
 * only at submit time; drafts keep spans.
 */

export interface Span {
  start: number;
  end: number;
  slotType: string;
}

/** Human-readable problem with a span set, or null when valid. */
export function validateSpans(spans: Span[], nTokens: number): string | null {
  const covered = new Array<boolean>(nTokens).fill(false);
  for (const span of spans) {
    if (!span.slotType) {
      return "span has an empty slot type";
    }
    if (!Number.isInteger(span.start) || !Number.isInteger(span.end)) {
      return "span bounds must be token indices";
    }
    if (span.start < 0 || span.end >= nTokens || span.start > span.end) {
      return `span [${span.start}, ${span.end}] out of range for ${nTokens} tokens`;
    }
    for (let i = span.start; i <= span.end; i++) {
      if (covered[i]) {
        return `overlapping spans at token ${i}`;
      }
      covered[i] = true;
    }
  }
  return null;
}

/** BIO tags for a validated span set; B- at span start, I- inside, O elsewhere. */
export function spansToBio(spans: Span[], nTokens: number): string[] {
  const problem = validateSpans(spans, nTokens);
  if (problem !== null) {
    throw new Error(problem);
  }
  const tags = new Array<string>(nTokens).fill("O");
  for (const span of spans) {
    tags[span.start] = `B-${span.slotType}`;
    for (let i = span.start + 1; i <= span.end; i++) {
      tags[i] = `I-${span.slotType}`;
    }
  }
  return tags;
}

/** Inverse of spansToBio, for round-trip checks and rendering saved records. */
export function bioToSpans(tags: string[]): Span[] {
  const spans: Span[] = [];
  let current: Span | null = null;
  tags.forEach((tag, i) => {
    if (tag.startsWith("I-") && current !== null && tag.slice(2) === current.slotType) {
      current.end = i;
      return;
    }
    if (current !== null) {
      spans.push(current);
      current = null;
    }
    if (tag.startsWith("B-")) {
      current = { start: i, end: i, slotType: tag.slice(2) };
    }
  });
  if (current !== null) {
    spans.push(current);
  }
  return spans;
}
