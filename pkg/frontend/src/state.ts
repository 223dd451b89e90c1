// Session controller: the single state machine behind the console.
// The server is authoritative for every number; this object only tracks
// which item is on screen and which relations are toggled.

import { ApiClient, ApiError } from "./api.js";
import { hintCounts, visibleRelations, type ViewState } from "./render.js";
import type { QueueItemView, StatusView } from "./types.js";

export type Listener = (view: ViewState) => void;

export class SessionController {
  phase: ViewState["phase"] = "loading";
  item: QueueItemView | null = null;
  status: StatusView | null = null;
  selected = new Set<string>();
  filter = "";
  banner: string | null = null;

  constructor(
    private readonly api: ApiClient,
    public annotator: string = "console",
    private readonly onChange: Listener = () => {},
  ) {}

  view(): ViewState {
    return {
      phase: this.phase,
      item: this.item,
      status: this.status,
      selected: this.selected,
      filter: this.filter,
      banner: this.banner,
    };
  }

  private emit(): void {
    this.onChange(this.view());
  }

  private applyStatus(status: StatusView): void {
    this.status = status;
    if (status.phase === "terminal") {
      this.phase = "terminal";
      this.item = null;
    }
  }

  async start(): Promise<void> {
    this.phase = "loading";
    this.emit();
    await this.fetchNext();
  }

  /** Lease the next pending pair; an empty queue flips to the advance prompt. */
  async fetchNext(preserveBanner = false): Promise<void> {
    try {
      const payload = await this.api.next();
      this.applyStatus(payload.status);
      if (this.phase === "terminal") {
        this.emit();
        return;
      }
      if (!preserveBanner) {
        this.banner = null;
      }
      if (payload.item === null) {
        this.phase = "ready_to_advance";
        this.item = null;
      } else {
        this.phase = "annotating";
        this.item = payload.item;
        this.selected = new Set();
        this.filter = "";
      }
    } catch (err) {
      // lease stays with the server; surface a retry banner and keep state
      this.banner = err instanceof ApiError ? `service error ${err.status}` : "network error — retry";
    }
    this.emit();
  }

  toggle(relationId: string): void {
    if (this.item === null) return;
    if (this.selected.has(relationId)) {
      this.selected.delete(relationId);
    } else {
      this.selected.add(relationId);
    }
    this.emit();
  }

  toggleNth(position: number): void {
    if (this.item === null) return;
    const visible = visibleRelations(this.item, this.filter);
    const rel = visible[position];
    if (rel !== undefined) this.toggle(rel);
  }

  /** Pre-highlighted model hints become the selection (never pre-checked). */
  takeHints(): void {
    if (this.item === null) return;
    for (const rel of hintCounts(this.item).keys()) {
      this.selected.add(rel);
    }
    this.emit();
  }

  setFilter(filter: string): void {
    this.filter = filter;
    this.emit();
  }

  async submit(labels?: string[]): Promise<void> {
    if (this.item === null) return;
    const item = this.item;
    const body = {
      title: item.title,
      h_idx: item.h_idx,
      t_idx: item.t_idx,
      labels: labels ?? [...this.selected].sort(),
      annotator: this.annotator,
    };
    try {
      const result = await this.api.submit(body);
      this.applyStatus(result.status);
      this.banner = null;
      await this.fetchNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // stale lease: someone else answered or the lease lapsed; refetch
        this.banner = "lease expired for this pair — fetching a fresh one";
        await this.fetchNext(true);
      } else {
        this.banner = "submission failed — retry";
        this.emit();
      }
    }
  }

  submitNA(): Promise<void> {
    return this.submit([]);
  }

  async advance(): Promise<void> {
    this.phase = "training";
    this.emit();
    try {
      const status = await this.api.advance();
      this.applyStatus(status);
      this.banner = null;
      if (status.phase !== "terminal") {
        await this.fetchNext();
        return;
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        const detail = err.detail as { pending?: number } | string | null;
        const pending =
          typeof detail === "object" && detail?.pending != null ? detail.pending : "some";
        this.banner = `cannot advance: ${pending} pairs still pending`;
        await this.fetchNext(true);
        return;
      }
      this.banner = "advance failed — retry";
      this.phase = this.status?.phase === "annotating" ? "annotating" : "ready_to_advance";
    }
    this.emit();
  }
}
