import { describe, expect, it } from 'vitest';
import {
  latLonToPixel,
  pixelToLatLon,
  pointToTile,
  tileCenter,
  tileToBounds,
  visibleTiles,
} from '../src/tilemath';

describe('pointToTile', () => {
  it('maps the world to tile 0/0/0 at zoom 0', () => {
    expect(pointToTile(51.5, -0.1, 0)).toEqual({ z: 0, x: 0, y: 0 });
    expect(pointToTile(-80, 170, 0)).toEqual({ z: 0, x: 0, y: 0 });
  });

  it('matches hand-computed z1 tiles', () => {
    expect(pointToTile(0.1, 0.1, 1)).toEqual({ z: 1, x: 1, y: 0 });
    expect(pointToTile(0, 0, 1)).toEqual({ z: 1, x: 1, y: 1 });
  });

  it('round-trips through tile bounds', () => {
    for (const [lat, lon, z] of [
      [0.03, 30.16, 16],
      [-12.5, 45.2, 11],
      [48.85, 2.35, 14],
    ] as const) {
      const tile = pointToTile(lat, lon, z);
      const b = tileToBounds(tile);
      expect(lat).toBeGreaterThanOrEqual(b.minLat);
      expect(lat).toBeLessThanOrEqual(b.maxLat);
      expect(lon).toBeGreaterThanOrEqual(b.minLon);
      expect(lon).toBeLessThanOrEqual(b.maxLon);
    }
  });
});

describe('visibleTiles', () => {
  it('covers the tile under the center', () => {
    const tiles = visibleTiles(0.03, 30.16, 16, 768, 512);
    const center = pointToTile(0.03, 30.16, 16);
    expect(tiles.some((t) => t.x === center.x && t.y === center.y)).toBe(true);
  });

  it('spans enough columns and rows for the viewport', () => {
    const tiles = visibleTiles(0.03, 30.16, 16, 768, 512);
    const xs = new Set(tiles.map((t) => t.x));
    const ys = new Set(tiles.map((t) => t.y));
    expect(xs.size).toBeGreaterThanOrEqual(3); // 768 px = 3 tiles
    expect(ys.size).toBeGreaterThanOrEqual(2); // 512 px = 2 tiles
    expect(tiles.length).toBe(xs.size * ys.size);
  });

  it('clamps at the world edge', () => {
    const tiles = visibleTiles(84.9, -179.9, 3, 2048, 2048);
    for (const t of tiles) {
      expect(t.x).toBeGreaterThanOrEqual(0);
      expect(t.y).toBeGreaterThanOrEqual(0);
      expect(t.x).toBeLessThan(8);
      expect(t.y).toBeLessThan(8);
    }
  });
});

describe('pixel projection', () => {
  const view = { centerLat: 0.05, centerLon: 30.05, zoom: 15 };

  it('puts the view center at the viewport center', () => {
    const { px, py } = latLonToPixel(0.05, 30.05, view, 800, 600);
    expect(px).toBeCloseTo(400, 6);
    expect(py).toBeCloseTo(300, 6);
  });

  it('round-trips pixel to lat/lon', () => {
    const p = pixelToLatLon(530, 220, view, 800, 600);
    const back = latLonToPixel(p.lat, p.lon, view, 800, 600);
    expect(back.px).toBeCloseTo(530, 6);
    expect(back.py).toBeCloseTo(220, 6);
  });

  it('tile center lands inside the tile bounds', () => {
    const tile = { z: 16, x: 38258, y: 32762 };
    const c = tileCenter(tile);
    const b = tileToBounds(tile);
    expect(c.lat).toBeGreaterThan(b.minLat);
    expect(c.lat).toBeLessThan(b.maxLat);
    expect(c.lon).toBeGreaterThan(b.minLon);
    expect(c.lon).toBeLessThan(b.maxLon);
  });
});
