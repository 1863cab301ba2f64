import type { LatLon, TileCoord } from './types';

export const TILE_SIZE = 256;

/** Fractional Web-Mercator tile coordinates of a point at a zoom level. */
export function pointToTileFraction(lat: number, lon: number, z: number): { x: number; y: number } {
  const n = 2 ** z;
  const latRad = (lat * Math.PI) / 180;
  return {
    x: ((lon + 180) / 360) * n,
    y: ((1 - Math.asinh(Math.tan(latRad)) / Math.PI) / 2) * n,
  };
}

export function pointToTile(lat: number, lon: number, z: number): TileCoord {
  const n = 2 ** z;
  const f = pointToTileFraction(lat, lon, z);
  const clamp = (v: number) => Math.min(Math.max(Math.floor(v), 0), n - 1);
  return { z, x: clamp(f.x), y: clamp(f.y) };
}

export function tileToBounds(t: TileCoord): { minLat: number; minLon: number; maxLat: number; maxLon: number } {
  const n = 2 ** t.z;
  const edgeLat = (y: number) => (Math.atan(Math.sinh(Math.PI * (1 - (2 * y) / n))) * 180) / Math.PI;
  return {
    minLon: (t.x / n) * 360 - 180,
    maxLon: ((t.x + 1) / n) * 360 - 180,
    minLat: edgeLat(t.y + 1),
    maxLat: edgeLat(t.y),
  };
}

export function tileCenter(t: TileCoord): LatLon {
  const b = tileToBounds(t);
  return { lat: (b.minLat + b.maxLat) / 2, lon: (b.minLon + b.maxLon) / 2 };
}

/**
 * Tiles covering a pixel viewport centered on (lat, lon), row-major from the
 * north-west corner. Coordinates are clamped to the valid tile range, so the
 * result never wraps the antimeridian.
 */
export function visibleTiles(
  lat: number,
  lon: number,
  z: number,
  widthPx: number,
  heightPx: number,
): TileCoord[] {
  const n = 2 ** z;
  const center = pointToTileFraction(lat, lon, z);
  const halfX = widthPx / 2 / TILE_SIZE;
  const halfY = heightPx / 2 / TILE_SIZE;
  const clamp = (v: number) => Math.min(Math.max(v, 0), n - 1);
  const x0 = clamp(Math.floor(center.x - halfX));
  const x1 = clamp(Math.floor(center.x + halfX));
  const y0 = clamp(Math.floor(center.y - halfY));
  const y1 = clamp(Math.floor(center.y + halfY));
  const tiles: TileCoord[] = [];
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      tiles.push({ z, x, y });
    }
  }
  return tiles;
}

/** Screen pixel of a lat/lon relative to the viewport center. */
export function latLonToPixel(
  lat: number,
  lon: number,
  view: { centerLat: number; centerLon: number; zoom: number },
  widthPx: number,
  heightPx: number,
): { px: number; py: number } {
  const c = pointToTileFraction(view.centerLat, view.centerLon, view.zoom);
  const p = pointToTileFraction(lat, lon, view.zoom);
  return {
    px: widthPx / 2 + (p.x - c.x) * TILE_SIZE,
    py: heightPx / 2 + (p.y - c.y) * TILE_SIZE,
  };
}

/** Inverse of latLonToPixel for drag handling. */
export function pixelToLatLon(
  px: number,
  py: number,
  view: { centerLat: number; centerLon: number; zoom: number },
  widthPx: number,
  heightPx: number,
): LatLon {
  const c = pointToTileFraction(view.centerLat, view.centerLon, view.zoom);
  const n = 2 ** view.zoom;
  const x = c.x + (px - widthPx / 2) / TILE_SIZE;
  const y = c.y + (py - heightPx / 2) / TILE_SIZE;
  const lon = (x / n) * 360 - 180;
  const lat = (Math.atan(Math.sinh(Math.PI * (1 - (2 * y) / n))) * 180) / Math.PI;
  return { lat, lon };
}
