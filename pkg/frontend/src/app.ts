/**
 * DOM layer: batch list, annotation panel, progress strip.
 *
 * Keyboard flow: digits pick the domain (then intent), click or shift+click
 * tokens to mark a span, "u"/"x" flag unactionable / out-of-domain, Enter
 * submits, Escape clears the draft. All numbers shown come from server
 * payloads; the page computes nothing beyond percentage formatting.
 */

import { ApiClient, ApiError, BatchItem, SessionMetrics } from "./api.js";
import { Span } from "./bio.js";
import { AnnotationSession, Draft } from "./state.js";

interface UiState {
  draft: Draft;
  pendingStart: number | null;
  slotType: string;
  message: string | null;
}

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function freshDraft(): Draft {
  return { spans: [], flag: "ok" };
}

export class AnnotationApp {
  private controller: AnnotationSession;
  private ui: UiState = { draft: freshDraft(), pendingStart: null, slotType: "", message: null };
  private domains: string[] = [];

  constructor(
    private root: HTMLElement,
    private client: ApiClient,
    sessionId: string,
  ) {
    this.controller = new AnnotationSession(client, sessionId);
    this.controller.onChange(() => this.render());
  }

  async start(): Promise<void> {
    try {
      await this.controller.refresh();
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        this.root.replaceChildren(el("div", "error-screen", "session not found"));
        return;
      }
      throw error;
    }
    this.domains = this.controller.snapshot?.targets ?? [];
    document.addEventListener("keydown", (event) => this.onKey(event));
    this.render();
    void this.renderProgress();
  }

  private onKey(event: KeyboardEvent): void {
    const item = this.controller.current();
    if (!item) return;
    if (event.key === "Enter") {
      void this.submit(item);
    } else if (event.key === "j" || event.key === "ArrowDown") {
      // next: rotate the queue so another utterance takes focus
      this.controller.queue.push(this.controller.queue.shift()!);
      this.ui.draft = freshDraft();
      this.ui.pendingStart = null;
      this.render();
    } else if (event.key === "k" || event.key === "ArrowUp") {
      this.controller.queue.unshift(this.controller.queue.pop()!);
      this.ui.draft = freshDraft();
      this.ui.pendingStart = null;
      this.render();
    } else if (event.key === "Escape") {
      this.ui.draft = freshDraft();
      this.ui.pendingStart = null;
      this.render();
    } else if (event.key === "u") {
      this.ui.draft.flag = "unactionable";
      void this.submit(item);
    } else if (event.key === "x") {
      this.ui.draft.flag = "out_of_domain";
      void this.submit(item);
    } else if (/^[1-9]$/.test(event.key)) {
      const index = Number(event.key) - 1;
      if (index < this.domains.length) {
        this.ui.draft.domain = this.domains[index];
        this.render();
      }
    }
  }

  private async submit(item: BatchItem): Promise<void> {
    if (this.ui.draft.flag === "ok" && !this.ui.draft.intent) {
      // default intent field: annotators type it; require non-empty
      const input = this.root.querySelector<HTMLInputElement>("#intent-input");
      this.ui.draft.intent = input?.value || undefined;
    }
    const result = await this.controller.submit(item, this.ui.draft);
    this.ui.message = result.error ?? null;
    if (result.accepted) {
      this.ui.draft = freshDraft();
      this.ui.pendingStart = null;
    }
    this.render();
    if (result.advanced) {
      void this.renderProgress();
    }
  }

  private toggleToken(index: number, extend: boolean): void {
    if (!this.ui.slotType) {
      this.ui.message = "pick a slot type before marking spans";
      this.render();
      return;
    }
    if (extend && this.ui.pendingStart !== null) {
      const start = Math.min(this.ui.pendingStart, index);
      const end = Math.max(this.ui.pendingStart, index);
      this.ui.draft.spans.push({ start, end, slotType: this.ui.slotType });
      this.ui.pendingStart = null;
    } else {
      this.ui.pendingStart = index;
    }
    this.render();
  }

  private spanAt(index: number): Span | undefined {
    return this.ui.draft.spans.find((span) => index >= span.start && index <= span.end);
  }

  render(): void {
    const snapshot = this.controller.snapshot;
    const container = el("div", "app");
    if (snapshot) {
      const header = el("div", "header");
      header.append(
        el("span", "title", `session ${snapshot.id}`),
        el(
          "span",
          "iteration",
          `iteration ${snapshot.iteration + 1} of ${snapshot.iterations_total}`,
        ),
        el("span", `status status-${snapshot.status}`, snapshot.status),
      );
      container.append(header);
    }

    if (this.controller.banner) {
      const banner = el("div", "banner", this.controller.banner);
      if (this.controller.snapshot?.status === "retraining") {
        banner.append(el("div", "hint", "advance available"));
        const button = el("button", "advance-button", "advance") as HTMLButtonElement;
        button.onclick = () => {
          void this.client
            .advance(this.controller.sessionId, this.controller.snapshot?.iteration)
            .then(() => this.controller.refresh());
        };
        banner.append(button);
      }
      container.append(banner);
    }

    const list = el("ul", "batch-list");
    this.controller.queue.forEach((queued, position) => {
      const row = el("li", position === 0 ? "item focused" : "item");
      row.append(el("span", "item-text", queued.text));
      row.append(el("span", "item-target", queued.target));
      list.append(row);
    });
    container.append(list);

    const item = this.controller.current();
    if (item) {
      container.append(this.renderPanel(item));
    }
    if (this.ui.message) {
      container.append(el("div", "message", this.ui.message));
    }
    container.append(el("div", "progress"));
    this.root.replaceChildren(container);
  }

  private renderPanel(item: BatchItem): HTMLElement {
    const panel = el("div", "panel");
    const tokens = el("div", "tokens");
    item.tokens.forEach((token, index) => {
      const span = this.spanAt(index);
      const cell = el(
        "button",
        span ? `token in-span slot-${span.slotType}` : "token",
        token,
      ) as HTMLButtonElement;
      if (this.ui.pendingStart === index) {
        cell.classList.add("pending");
      }
      cell.onclick = (event) => this.toggleToken(index, event.shiftKey || this.ui.pendingStart !== null);
      tokens.append(cell);
    });
    panel.append(tokens);

    const controls = el("div", "controls");
    const domainRow = el("div", "domain-row");
    this.domains.forEach((domain, index) => {
      const button = el(
        "button",
        this.ui.draft.domain === domain ? "domain selected" : "domain",
        `${index + 1} ${domain}`,
      ) as HTMLButtonElement;
      button.onclick = () => {
        this.ui.draft.domain = domain;
        this.render();
      };
      domainRow.append(button);
    });
    controls.append(domainRow);

    const intent = el("input", "intent") as HTMLInputElement;
    intent.id = "intent-input";
    intent.placeholder = "intent";
    intent.value = this.ui.draft.intent ?? "";
    intent.onchange = () => {
      this.ui.draft.intent = intent.value || undefined;
    };
    controls.append(intent);

    const slot = el("input", "slot-type") as HTMLInputElement;
    slot.placeholder = "slot type for new spans";
    slot.value = this.ui.slotType;
    slot.onchange = () => {
      this.ui.slotType = slot.value;
    };
    controls.append(slot);

    const actions = el("div", "actions");
    const submit = el("button", "submit", "submit (enter)") as HTMLButtonElement;
    submit.onclick = () => void this.submit(item);
    const unactionable = el("button", "flag", "unactionable (u)") as HTMLButtonElement;
    unactionable.onclick = () => {
      this.ui.draft.flag = "unactionable";
      void this.submit(item);
    };
    const outOfDomain = el("button", "flag", "out of domain (x)") as HTMLButtonElement;
    outOfDomain.onclick = () => {
      this.ui.draft.flag = "out_of_domain";
      void this.submit(item);
    };
    actions.append(submit, unactionable, outOfDomain);
    controls.append(actions);
    panel.append(controls);
    return panel;
  }

  private async renderProgress(): Promise<void> {
    let metrics: SessionMetrics;
    try {
      metrics = await this.client.metrics(this.controller.sessionId);
    } catch {
      return; // metrics missing: keep the panel hidden
    }
    const target = this.root.querySelector(".progress");
    if (!target) return;
    target.replaceChildren();
    if (metrics.empty) {
      target.append(el("div", "placeholder", "no annotations yet"));
      return;
    }
    for (const row of metrics.iterations) {
      const badge = el(
        "div",
        "progress-row",
        `iteration ${row.iteration + 1}: ${Math.round(row.in_target_fraction * 100)}% in-target, ` +
          `${Math.round(row.noise_fraction * 100)}% flagged`,
      );
      target.append(badge);
    }
  }
}

export async function boot(root: HTMLElement): Promise<void> {
  const client = new ApiClient("");
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  if (sessionId) {
    const app = new AnnotationApp(root, client, sessionId);
    await app.start();
    return;
  }
  const sessions = await client.listSessions();
  const list = el("div", "session-list");
  list.append(el("h2", undefined, "annotation sessions"));
  if (sessions.length === 0) {
    list.append(el("div", "placeholder", "no sessions yet; create one via the API"));
  }
  for (const session of sessions) {
    const link = el("a", "session-link", `${session.id} (${session.status})`) as HTMLAnchorElement;
    link.href = `?session=${session.id}`;
    list.append(link);
  }
  root.replaceChildren(list);
}
