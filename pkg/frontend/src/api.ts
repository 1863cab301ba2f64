import type { GroundTruthPoint, PredictResponse, QueueItem, TileCoord, Verdict } from './types';
import { tileKey } from './types';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client over the review-service endpoints. */
export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  tileUrl(t: TileCoord): string {
    return `${this.baseUrl}/tiles/${tileKey(t)}.png`;
  }

  saliencyUrl(t: TileCoord): string {
    return `${this.baseUrl}/saliency/${tileKey(t)}.png`;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // body was not JSON; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  predict(t: TileCoord, signal?: AbortSignal): Promise<PredictResponse> {
    return this.json<PredictResponse>(`/predict/${tileKey(t)}`, { signal });
  }

  /** Pending (or otherwise filtered) candidates, preserving the server order. */
  async candidates(status?: string, bbox?: string): Promise<QueueItem[]> {
    const params = new URLSearchParams();
    if (status) params.set('status', status);
    if (bbox) params.set('bbox', bbox);
    const query = params.toString() ? `?${params.toString()}` : '';
    const doc = await this.json<{
      features: Array<{
        geometry: { coordinates: [number, number] };
        properties: {
          id: string;
          probability: number;
          uncertainty: number;
          status: QueueItem['status'];
          tile: string;
        };
      }>;
    }>(`/candidates${query}`);
    return doc.features.map((f) => ({
      id: f.properties.id,
      lon: f.geometry.coordinates[0],
      lat: f.geometry.coordinates[1],
      probability: f.properties.probability,
      uncertainty: f.properties.uncertainty,
      status: f.properties.status,
      tile: f.properties.tile,
    }));
  }

  async groundtruth(bbox: string): Promise<GroundTruthPoint[]> {
    const doc = await this.json<{
      features: Array<{
        geometry: { coordinates: [number, number] };
        properties: { id?: string; name?: string };
      }>;
    }>(`/groundtruth?bbox=${encodeURIComponent(bbox)}`);
    return doc.features.map((f, i) => ({
      lon: f.geometry.coordinates[0],
      lat: f.geometry.coordinates[1],
      id: f.properties.id ?? `gt-${i}`,
      name: f.properties.name,
    }));
  }

  feedback(candidateId: string, verdict: Verdict, operator: string): Promise<{ status: string }> {
    return this.json<{ status: string }>('/feedback', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ candidate_id: candidateId, verdict, operator }),
    });
  }

  /** Raw saliency PNG; resolves to null on 404 (scorer has no saliency). */
  async saliencyPng(t: TileCoord, signal?: AbortSignal): Promise<Blob | null> {
    const resp = await this.fetchFn(this.saliencyUrl(t), { signal });
    if (resp.status === 404) return null;
    if (!resp.ok) throw new ApiError(resp.status, `HTTP ${resp.status}`);
    return resp.blob();
  }
}
