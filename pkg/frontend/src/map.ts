import type { ApiClient } from './api';
import { TILE_SIZE, latLonToPixel, pixelToLatLon, visibleTiles } from './tilemath';
import type { GroundTruthPoint, LatLon, QueueItem, TileCoord } from './types';
import { tileKey } from './types';

export interface MapView {
  centerLat: number;
  centerLon: number;
  zoom: number;
}

/**
 * Self-contained slippy map: a draggable grid of basemap tile images with
 * absolutely positioned overlay cells and markers. Deliberately small; it only
 * needs to support the review workflow.
 */
export class SlippyMap {
  view: MapView;

  private readonly basemap: HTMLElement;
  private readonly overlayPane: HTMLElement;
  private readonly saliencyPane: HTMLElement;
  private readonly markerPane: HTMLElement;
  private viewListeners: Array<(view: MapView) => void> = [];
  private dragging: { startX: number; startY: number; origin: MapView } | null = null;

  constructor(
    private readonly container: HTMLElement,
    private readonly api: ApiClient,
    initial: MapView,
  ) {
    this.view = { ...initial };
    container.classList.add('atlas-map');
    this.basemap = this.pane('atlas-basemap');
    this.overlayPane = this.pane('atlas-overlay');
    this.saliencyPane = this.pane('atlas-saliency');
    this.markerPane = this.pane('atlas-markers');
    container.addEventListener('mousedown', (e) => this.startDrag(e));
    container.addEventListener('mousemove', (e) => this.moveDrag(e));
    container.addEventListener('mouseup', () => (this.dragging = null));
    container.addEventListener('mouseleave', () => (this.dragging = null));
  }

  private pane(className: string): HTMLElement {
    const el = document.createElement('div');
    el.className = `atlas-pane ${className}`;
    this.container.appendChild(el);
    return el;
  }

  private size(): { w: number; h: number } {
    return {
      w: this.container.clientWidth || 768,
      h: this.container.clientHeight || 512,
    };
  }

  onViewChange(listener: (view: MapView) => void): void {
    this.viewListeners.push(listener);
  }

  private emitViewChange(): void {
    for (const fn of this.viewListeners) fn({ ...this.view });
  }

  setView(view: Partial<MapView>): void {
    this.view = { ...this.view, ...view };
    this.render();
    this.emitViewChange();
  }

  recenter(point: LatLon, zoom?: number): void {
    this.setView({ centerLat: point.lat, centerLon: point.lon, zoom: zoom ?? this.view.zoom });
  }

  tilesInView(): TileCoord[] {
    const { w, h } = this.size();
    return visibleTiles(this.view.centerLat, this.view.centerLon, this.view.zoom, w, h);
  }

  private place(el: HTMLElement, tile: TileCoord): void {
    const { w, h } = this.size();
    const bounds = tileBoundsTopLeft(tile);
    const { px, py } = latLonToPixel(bounds.lat, bounds.lon, this.view, w, h);
    el.style.left = `${Math.round(px)}px`;
    el.style.top = `${Math.round(py)}px`;
    el.style.width = `${TILE_SIZE}px`;
    el.style.height = `${TILE_SIZE}px`;
  }

  render(): void {
    this.basemap.replaceChildren();
    for (const tile of this.tilesInView()) {
      const img = document.createElement('img');
      img.className = 'atlas-tile';
      img.src = this.api.tileUrl(tile);
      img.alt = '';
      img.dataset.tile = tileKey(tile);
      this.place(img, tile);
      this.basemap.appendChild(img);
    }
  }

  clearOverlayCells(): void {
    this.overlayPane.replaceChildren();
  }

  paintOverlayCell(tile: TileCoord, cssBackground: string, unavailable = false): void {
    const cell = document.createElement('div');
    cell.className = unavailable ? 'atlas-cell atlas-cell-unavailable' : 'atlas-cell';
    if (!unavailable) cell.style.background = cssBackground;
    cell.dataset.tile = tileKey(tile);
    this.place(cell, tile);
    this.overlayPane.appendChild(cell);
  }

  setSaliencyTile(tile: TileCoord, blob: Blob | null): void {
    const key = tileKey(tile);
    const existing = this.saliencyPane.querySelector<HTMLElement>(`[data-tile="${key}"]`);
    if (existing) existing.remove();
    if (blob === null) return;
    const img = document.createElement('img');
    img.className = 'atlas-saliency-tile';
    img.src = URL.createObjectURL(blob);
    img.dataset.tile = key;
    this.place(img, tile);
    this.saliencyPane.appendChild(img);
  }

  clearSaliency(): void {
    this.saliencyPane.replaceChildren();
  }

  renderMarkers(groundtruth: GroundTruthPoint[], candidates: QueueItem[], activeId: string | null): void {
    const { w, h } = this.size();
    this.markerPane.replaceChildren();
    for (const g of groundtruth) {
      const marker = document.createElement('div');
      marker.className = 'atlas-marker atlas-marker-gt';
      marker.title = g.name ?? g.id;
      const { px, py } = latLonToPixel(g.lat, g.lon, this.view, w, h);
      marker.style.left = `${Math.round(px)}px`;
      marker.style.top = `${Math.round(py)}px`;
      this.markerPane.appendChild(marker);
    }
    for (const c of candidates) {
      const marker = document.createElement('div');
      marker.className =
        c.id === activeId ? 'atlas-marker atlas-marker-candidate active' : 'atlas-marker atlas-marker-candidate';
      marker.title = `${c.id} p=${c.probability.toFixed(2)}`;
      marker.dataset.candidate = c.id;
      const { px, py } = latLonToPixel(c.lat, c.lon, this.view, w, h);
      marker.style.left = `${Math.round(px)}px`;
      marker.style.top = `${Math.round(py)}px`;
      this.markerPane.appendChild(marker);
    }
  }

  private startDrag(e: MouseEvent): void {
    this.dragging = { startX: e.clientX, startY: e.clientY, origin: { ...this.view } };
  }

  private moveDrag(e: MouseEvent): void {
    if (!this.dragging) return;
    const { w, h } = this.size();
    const dx = e.clientX - this.dragging.startX;
    const dy = e.clientY - this.dragging.startY;
    const center = pixelToLatLon(w / 2 - dx, h / 2 - dy, this.dragging.origin, w, h);
    this.setView({ centerLat: center.lat, centerLon: center.lon });
  }
}

function tileBoundsTopLeft(tile: TileCoord): LatLon {
  const n = 2 ** tile.z;
  const lon = (tile.x / n) * 360 - 180;
  const lat = (Math.atan(Math.sinh(Math.PI * (1 - (2 * tile.y) / n))) * 180) / Math.PI;
  return { lat, lon };
}
