export interface TileCoord {
  z: number;
  x: number;
  y: number;
}

export interface LatLon {
  lat: number;
  lon: number;
}

export type Verdict = 'confirmed' | 'rejected' | 'unsure';

export type CandidateStatus = 'pending' | Verdict;

/** One review-queue entry; the array order is the server's ranking. */
export interface QueueItem {
  id: string;
  lat: number;
  lon: number;
  probability: number;
  uncertainty: number;
  status: CandidateStatus;
  tile: string; // "z/x/y"
  retrying?: boolean;
}

export interface PredictResponse {
  probability: number;
  model_version: string;
  cached: boolean;
}

export interface GroundTruthPoint {
  lat: number;
  lon: number;
  id: string;
  name?: string;
}

export interface LayerVisibility {
  basemap: boolean;
  predictions: boolean;
  saliency: boolean;
  groundtruth: boolean;
  candidates: boolean;
}

export interface ViewState {
  centerLat: number;
  centerLon: number;
  zoom: number;
  layers: LayerVisibility;
  activeCandidateId: string | null;
  operator: string;
}

export function parseTileKey(key: string): TileCoord {
  const [z, x, y] = key.split('/').map(Number);
  if (!Number.isInteger(z) || !Number.isInteger(x) || !Number.isInteger(y)) {
    throw new Error(`bad tile key: ${key}`);
  }
  return { z, x, y };
}

export function tileKey(t: TileCoord): string {
  return `${t.z}/${t.x}/${t.y}`;
}
