/**
 * Headless annotation-session controller behind the DOM layer.
 *
 * Submits are optimistic: the item leaves the local queue immediately and
 * comes back (with the error attached) if the server rejects it. When the
 * last item of a batch is accepted the controller advances the session and
 * pulls the next batch.
 */

import { ApiClient, ApiError, BatchItem, SessionSnapshot } from "./api.js";
import { Span, spansToBio, validateSpans } from "./bio.js";

export interface Draft {
  domain?: string;
  intent?: string;
  spans: Span[];
  flag: "ok" | "unactionable" | "out_of_domain";
}

export interface SubmitResult {
  accepted: boolean;
  error?: string;
  advanced: boolean;
  done: boolean;
}

export type SessionListener = (controller: AnnotationSession) => void;

export class AnnotationSession {
  snapshot: SessionSnapshot | null = null;
  queue: BatchItem[] = [];
  banner: string | null = null;
  private listeners: SessionListener[] = [];

  constructor(
    private client: ApiClient,
    readonly sessionId: string,
    private annotator: string = "annotator",
  ) {}

  onChange(listener: SessionListener): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) {
      listener(this);
    }
  }

  current(): BatchItem | null {
    return this.queue.length > 0 ? this.queue[0] : null;
  }

  async refresh(): Promise<void> {
    this.snapshot = await this.client.getSession(this.sessionId);
    if (this.snapshot.status === "awaiting_annotation") {
      const batch = await this.client.getBatch(this.sessionId);
      this.queue = batch.items;
      this.banner = null;
    } else {
      this.queue = [];
      this.banner = this.snapshot.status === "done" ? "session complete" : this.snapshot.status;
    }
    this.notify();
  }

  /** Local validation used before any network call. */
  validateDraft(item: BatchItem, draft: Draft): string | null {
    if (draft.flag !== "ok") {
      return null;
    }
    if (!draft.domain) {
      return "pick a domain";
    }
    if (!draft.intent) {
      return "pick an intent";
    }
    return validateSpans(draft.spans, item.tokens.length);
  }

  async submit(item: BatchItem, draft: Draft): Promise<SubmitResult> {
    const problem = this.validateDraft(item, draft);
    if (problem !== null) {
      return { accepted: false, error: problem, advanced: false, done: false };
    }
    const record = {
      id: item.id,
      annotator: this.annotator,
      flag: draft.flag,
      ...(draft.flag === "ok"
        ? {
            domain: draft.domain,
            intent: draft.intent,
            bio_tags: spansToBio(draft.spans, item.tokens.length),
          }
        : {}),
    };

    // optimistic removal; rolled back on a 4xx answer
    const index = this.queue.findIndex((queued) => queued.id === item.id);
    if (index >= 0) {
      this.queue.splice(index, 1);
      this.notify();
    }
    try {
      await this.client.submitAnnotations(this.sessionId, [record]);
    } catch (error) {
      if (error instanceof ApiError && error.status < 500) {
        if (index >= 0) {
          this.queue.splice(index, 0, item);
        }
        this.notify();
        return {
          accepted: false,
          error: `${error.message}: ${error.details.join("; ")}`,
          advanced: false,
          done: false,
        };
      }
      throw error;
    }

    if (this.queue.length > 0) {
      return { accepted: true, advanced: false, done: false };
    }
    // batch complete: advance and pull the next one
    const snapshot = await this.client.advance(
      this.sessionId,
      this.snapshot?.iteration,
    );
    this.snapshot = snapshot;
    await this.refresh();
    return {
      accepted: true,
      advanced: true,
      done: snapshot.status === "done",
    };
  }
}
