import type { ApiClient } from './api';
import type { TileCoord } from './types';
import { tileKey } from './types';

export type SaliencyTileState = 'shown' | 'none' | 'removed';

/**
 * Saliency layer: when enabled, fetches the /saliency PNG per visible tile and
 * reports whether the tile has an overlay ('shown') or the scorer provides no
 * saliency ('none'). When disabled it emits 'removed' and issues no fetches.
 */
export class SaliencyLayer {
  enabled = false;

  /** Network log: number of saliency requests issued. */
  requestCount = 0;

  private readonly blobs = new Map<string, Blob>();
  private readonly missing = new Set<string>();
  private readonly inflight = new Map<string, AbortController>();
  private shownKeys = new Set<string>();

  constructor(
    private readonly api: ApiClient,
    private readonly onTile: (tile: TileCoord, state: SaliencyTileState, blob?: Blob) => void,
  ) {}

  async setEnabled(enabled: boolean, tiles: TileCoord[]): Promise<void> {
    this.enabled = enabled;
    if (!enabled) {
      for (const controller of this.inflight.values()) controller.abort();
      this.inflight.clear();
      for (const key of this.shownKeys) {
        this.onTile(parseKey(key), 'removed');
      }
      this.shownKeys = new Set();
      return;
    }
    await this.refresh(tiles);
  }

  async toggle(tiles: TileCoord[]): Promise<boolean> {
    await this.setEnabled(!this.enabled, tiles);
    return this.enabled;
  }

  async refresh(tiles: TileCoord[]): Promise<void> {
    if (!this.enabled) return;
    const wanted = new Set(tiles.map(tileKey));
    for (const [key, controller] of this.inflight) {
      if (!wanted.has(key)) {
        controller.abort();
        this.inflight.delete(key);
      }
    }
    const pending: Promise<void>[] = [];
    for (const tile of tiles) {
      const key = tileKey(tile);
      const cached = this.blobs.get(key);
      if (cached) {
        this.shownKeys.add(key);
        this.onTile(tile, 'shown', cached);
        continue;
      }
      if (this.missing.has(key)) {
        this.onTile(tile, 'none');
        continue;
      }
      if (this.inflight.has(key)) continue;
      const controller = new AbortController();
      this.inflight.set(key, controller);
      this.requestCount += 1;
      pending.push(
        this.api
          .saliencyPng(tile, controller.signal)
          .then((blob) => {
            if (!this.enabled) return;
            if (blob === null) {
              this.missing.add(key);
              this.onTile(tile, 'none');
            } else {
              this.blobs.set(key, blob);
              this.shownKeys.add(key);
              this.onTile(tile, 'shown', blob);
            }
          })
          .catch(() => {
            // transport failure or abort; leave the tile untouched
          })
          .finally(() => {
            if (this.inflight.get(key) === controller) this.inflight.delete(key);
          }),
      );
    }
    await Promise.allSettled(pending);
  }
}

function parseKey(key: string): TileCoord {
  const [z, x, y] = key.split('/').map(Number);
  return { z, x, y };
}
