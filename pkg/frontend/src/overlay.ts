import type { ApiClient } from './api';
import type { TileCoord } from './types';
import { tileKey } from './types';

export type CellStatus = 'done' | 'unavailable';

export interface OverlayCell {
  tile: TileCoord;
  key: string;
  status: CellStatus;
  probability?: number;
}

export const OVERLAY_OPACITY = 0.35;

/** Green-to-red tint for a probability, at the fixed overlay opacity. */
export function rampColor(probability: number): string {
  const p = Math.min(Math.max(probability, 0), 1);
  const r = Math.round(255 * p);
  const g = Math.round(255 * (1 - p));
  return `rgba(${r}, ${g}, 0, ${OVERLAY_OPACITY})`;
}

/**
 * Prediction overlay state: fetches /predict for the visible tiles, memoizes
 * results client-side, and aborts in-flight requests that leave the viewport.
 */
export class PredictionOverlay {
  private readonly memo = new Map<string, number>();
  private readonly failed = new Set<string>();
  private readonly inflight = new Map<string, AbortController>();

  /** Network log: number of /predict requests actually issued. */
  requestCount = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly onCell: (cell: OverlayCell) => void,
    private readonly onClear?: () => void,
  ) {}

  inflightCount(): number {
    return this.inflight.size;
  }

  /** Drop every in-flight request (e.g. when the layer is switched off). */
  cancelAll(): void {
    for (const controller of this.inflight.values()) controller.abort();
    this.inflight.clear();
    this.onClear?.();
  }

  /**
   * Reconcile the overlay with a new viewport: cached tiles render
   * immediately, requests for tiles no longer visible are aborted, and new
   * tiles are fetched. Resolves when every newly issued request settles.
   */
  async refresh(tiles: TileCoord[]): Promise<void> {
    const wanted = new Set(tiles.map(tileKey));
    for (const [key, controller] of this.inflight) {
      if (!wanted.has(key)) {
        controller.abort();
        this.inflight.delete(key);
      }
    }
    this.onClear?.();

    const pending: Promise<void>[] = [];
    for (const tile of tiles) {
      const key = tileKey(tile);
      const cached = this.memo.get(key);
      if (cached !== undefined) {
        this.onCell({ tile, key, status: 'done', probability: cached });
        continue;
      }
      if (this.failed.has(key)) {
        this.onCell({ tile, key, status: 'unavailable' });
        continue;
      }
      if (this.inflight.has(key)) continue;

      const controller = new AbortController();
      this.inflight.set(key, controller);
      this.requestCount += 1;
      pending.push(
        this.api
          .predict(tile, controller.signal)
          .then((res) => {
            this.memo.set(key, res.probability);
            this.onCell({ tile, key, status: 'done', probability: res.probability });
          })
          .catch((err: unknown) => {
            if (controller.signal.aborted) return; // viewport moved on
            this.failed.add(key);
            this.onCell({ tile, key, status: 'unavailable' });
            void err;
          })
          .finally(() => {
            if (this.inflight.get(key) === controller) this.inflight.delete(key);
          }),
      );
    }
    await Promise.allSettled(pending);
  }
}
