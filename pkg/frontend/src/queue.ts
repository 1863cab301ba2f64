import { ApiError, type ApiClient } from './api';
import type { QueueItem, Verdict } from './types';

export interface QueueEvents {
  onChange: () => void;
  onNotice: (message: string) => void;
}

export type SubmitOutcome = 'posted' | 'ignored' | 'requeued' | 'dropped';

/**
 * The review queue holds pending candidates in exactly the server's order
 * (most ambiguous first). Verdicts POST optimistically: the item leaves the
 * list immediately, returns with a retry flag on transport failure, and is
 * dropped with a notice (plus a queue refresh) when the server no longer knows
 * the candidate. A submission in flight blocks further verdict keys, so one
 * keystroke never produces more than one POST.
 */
export class ReviewQueue {
  items: QueueItem[] = [];
  activeId: string | null = null;

  /** Network log: number of feedback POSTs issued. */
  postCount = 0;

  private submitting = false;

  constructor(
    private readonly api: ApiClient,
    private readonly operator: () => string,
    private readonly events: QueueEvents,
  ) {}

  async load(status: string = 'pending'): Promise<void> {
    this.items = await this.api.candidates(status);
    if (this.activeId === null || !this.items.some((i) => i.id === this.activeId)) {
      this.activeId = this.items[0]?.id ?? null;
    }
    this.events.onChange();
  }

  active(): QueueItem | null {
    return this.items.find((i) => i.id === this.activeId) ?? null;
  }

  activeIndex(): number {
    return this.items.findIndex((i) => i.id === this.activeId);
  }

  isComplete(): boolean {
    return this.items.length === 0;
  }

  select(id: string): void {
    if (this.items.some((i) => i.id === id)) {
      this.activeId = id;
      this.events.onChange();
    }
  }

  next(): void {
    this.step(1);
  }

  previous(): void {
    this.step(-1);
  }

  private step(delta: number): void {
    if (!this.items.length) return;
    const idx = Math.max(this.activeIndex(), 0);
    const next = Math.min(Math.max(idx + delta, 0), this.items.length - 1);
    this.activeId = this.items[next].id;
    this.events.onChange();
  }

  /** POST the verdict for the active candidate; exactly one POST per call. */
  async submit(verdict: Verdict): Promise<SubmitOutcome> {
    const item = this.active();
    if (!item || this.submitting) return 'ignored';
    this.submitting = true;

    // Optimistic removal; the follower becomes active.
    const index = this.activeIndex();
    this.items = this.items.filter((i) => i.id !== item.id);
    this.activeId = this.items[Math.min(index, this.items.length - 1)]?.id ?? null;
    this.events.onChange();

    try {
      this.postCount += 1;
      const res = await this.api.feedback(item.id, verdict, this.operator());
      if (res.status !== verdict) {
        this.events.onNotice(`server reconciled ${item.id} to ${res.status}`);
      }
      return 'posted';
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.events.onNotice(`candidate ${item.id} no longer exists; refreshing queue`);
        await this.load();
        return 'dropped';
      }
      // Transport or server failure: put the item back with a retry marker.
      const restored: QueueItem = { ...item, retrying: true };
      this.items = [
        ...this.items.slice(0, Math.min(index, this.items.length)),
        restored,
        ...this.items.slice(Math.min(index, this.items.length)),
      ];
      this.activeId = restored.id;
      this.events.onNotice(`feedback for ${item.id} failed; kept in queue for retry`);
      this.events.onChange();
      return 'requeued';
    } finally {
      this.submitting = false;
    }
  }
}
