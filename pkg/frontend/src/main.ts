import { ApiClient } from './api';
import { bindReviewKeys } from './keyboard';
import { SlippyMap } from './map';
import { PredictionOverlay, rampColor } from './overlay';
import { ReviewQueue } from './queue';
import { SaliencyLayer } from './saliency';
import { tileCenter, tileToBounds } from './tilemath';
import type { GroundTruthPoint, LayerVisibility } from './types';
import { parseTileKey } from './types';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function startApp(): void {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient(params.get('api') ?? '');

  const layers: LayerVisibility = {
    basemap: true,
    predictions: true,
    saliency: false,
    groundtruth: true,
    candidates: true,
  };

  const map = new SlippyMap(el('map'), api, { centerLat: 0.1, centerLon: 30.1, zoom: 14 });
  let groundtruth: GroundTruthPoint[] = [];

  const noticeBox = el('notices');
  const notice = (message: string) => {
    const line = document.createElement('div');
    line.className = 'atlas-notice';
    line.textContent = message;
    noticeBox.prepend(line);
    setTimeout(() => line.remove(), 6000);
  };

  const overlay = new PredictionOverlay(
    api,
    (cell) => {
      if (!layers.predictions) return;
      if (cell.status === 'done' && cell.probability !== undefined) {
        map.paintOverlayCell(cell.tile, rampColor(cell.probability));
      } else {
        map.paintOverlayCell(cell.tile, '', true);
      }
    },
    () => map.clearOverlayCells(),
  );

  const saliency = new SaliencyLayer(api, (tile, state, blob) => {
    if (state === 'shown' && blob) map.setSaliencyTile(tile, blob);
    if (state === 'removed') map.setSaliencyTile(tile, null);
    if (state === 'none') notice(`no saliency for tile ${tile.z}/${tile.x}/${tile.y}`);
  });

  const queue = new ReviewQueue(
    api,
    () => (el<HTMLInputElement>('operator').value || 'anonymous'),
    {
      onChange: () => renderQueue(),
      onNotice: notice,
    },
  );

  const renderQueue = () => {
    const list = el('queue');
    list.replaceChildren();
    if (queue.isComplete()) {
      const done = document.createElement('li');
      done.className = 'atlas-queue-complete';
      done.textContent = 'review complete';
      list.appendChild(done);
    }
    for (const item of queue.items) {
      const row = document.createElement('li');
      row.className = item.id === queue.activeId ? 'atlas-queue-item active' : 'atlas-queue-item';
      row.dataset.candidate = item.id;
      row.textContent = `${item.id}  p=${item.probability.toFixed(2)}  ±${item.uncertainty.toFixed(2)}`
        + (item.retrying ? '  (retrying)' : '');
      row.addEventListener('click', () => {
        queue.select(item.id);
        focusActive();
      });
      list.appendChild(row);
    }
    const active = queue.active();
    el('detail').textContent = active
      ? `${active.id} — tile ${active.tile} — probability ${active.probability.toFixed(3)}`
      : 'no candidate selected';
    map.renderMarkers(layers.groundtruth ? groundtruth : [], layers.candidates ? queue.items : [], queue.activeId);
  };

  const focusActive = () => {
    const active = queue.active();
    if (!active) return;
    const tile = parseTileKey(active.tile);
    map.recenter(tileCenter(tile), Math.max(map.view.zoom, tile.z));
  };

  const viewportBbox = () => {
    const tiles = map.tilesInView();
    if (!tiles.length) return null;
    const bounds = tiles.map(tileToBounds);
    const minLon = Math.min(...bounds.map((b) => b.minLon));
    const maxLon = Math.max(...bounds.map((b) => b.maxLon));
    const minLat = Math.min(...bounds.map((b) => b.minLat));
    const maxLat = Math.max(...bounds.map((b) => b.maxLat));
    return `${minLon},${minLat},${maxLon},${maxLat}`;
  };

  const loadGroundtruth = async () => {
    const bbox = viewportBbox();
    if (!bbox || !layers.groundtruth) return;
    try {
      groundtruth = await api.groundtruth(bbox);
    } catch {
      groundtruth = [];
    }
    renderQueue();
  };

  const refreshLayers = async () => {
    const tiles = map.tilesInView();
    if (layers.predictions) await overlay.refresh(tiles);
    if (layers.saliency) await saliency.refresh(tiles);
  };

  let viewDebounce: ReturnType<typeof setTimeout> | undefined;
  map.onViewChange(() => {
    map.render();
    renderQueue();
    clearTimeout(viewDebounce);
    viewDebounce = setTimeout(() => {
      void refreshLayers();
      void loadGroundtruth();
    }, 150);
  });

  const submit = (verdict: 'confirmed' | 'rejected' | 'unsure') => {
    void queue.submit(verdict).then((outcome) => {
      if (outcome === 'posted') focusActive();
    });
  };

  bindReviewKeys(document, {
    confirm: () => submit('confirmed'),
    reject: () => submit('rejected'),
    unsure: () => submit('unsure'),
    next: () => {
      queue.next();
      focusActive();
    },
    previous: () => {
      queue.previous();
      focusActive();
    },
    toggleSaliency: () => void toggleSaliency(),
  });

  const toggleSaliency = async () => {
    layers.saliency = await saliency.toggle(map.tilesInView());
    el<HTMLInputElement>('layer-saliency').checked = layers.saliency;
    if (!layers.saliency) map.clearSaliency();
  };

  el<HTMLInputElement>('layer-saliency').addEventListener('change', () => void toggleSaliency());
  el<HTMLInputElement>('layer-predictions').addEventListener('change', (e) => {
    layers.predictions = (e.target as HTMLInputElement).checked;
    if (!layers.predictions) {
      overlay.cancelAll();
      map.clearOverlayCells();
    } else {
      void overlay.refresh(map.tilesInView());
    }
  });
  el<HTMLInputElement>('layer-groundtruth').addEventListener('change', (e) => {
    layers.groundtruth = (e.target as HTMLInputElement).checked;
    renderQueue();
  });

  void (async () => {
    await queue.load();
    focusActive();
    map.render();
    renderQueue();
    await loadGroundtruth();
    await refreshLayers();
  })();
}

if (typeof document !== 'undefined' && document.getElementById('map')) {
  startApp();
}
