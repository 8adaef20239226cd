// Thin typed client over the survey API. The fetch implementation is
// injectable so tests stub the transport without any network or DOM.

import type { Click, MapDocument, PairPayload, StatsPayload, VotePayload } from './types.js';

export interface HttpResponse {
  status: number;
  json(): Promise<unknown>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export type PairResult =
  | { kind: 'pair'; pair: PairPayload }
  | { kind: 'exhausted' };

export type VoteResult =
  | { kind: 'ok'; vote: VotePayload }
  | { kind: 'gone' }; // unknown/expired session or double submit

export type MapResult =
  | { kind: 'map'; doc: MapDocument }
  | { kind: 'missing' };

export class ApiError extends Error {
  constructor(readonly status: number, url: string) {
    super(`unexpected ${status} from ${url}`);
  }
}

export class ApiClient {
  constructor(
    private readonly fetchFn: FetchLike,
    private readonly baseUrl: string = '',
  ) {}

  async getPair(): Promise<PairResult> {
    const url = `${this.baseUrl}/api/pair`;
    const resp = await this.fetchFn(url);
    if (resp.status === 409) return { kind: 'exhausted' };
    if (resp.status !== 200) throw new ApiError(resp.status, url);
    return { kind: 'pair', pair: (await resp.json()) as PairPayload };
  }

  async postVote(sessionId: string, click: Click): Promise<VoteResult> {
    const url = `${this.baseUrl}/api/vote`;
    // The body carries the click identity only; vote coding is server-side.
    const resp = await this.fetchFn(url, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ session_id: sessionId, click }),
    });
    if (resp.status === 404 || resp.status === 409) return { kind: 'gone' };
    if (resp.status !== 200) throw new ApiError(resp.status, url);
    return { kind: 'ok', vote: (await resp.json()) as VotePayload };
  }

  async getStats(): Promise<StatsPayload> {
    const url = `${this.baseUrl}/api/stats`;
    const resp = await this.fetchFn(url);
    if (resp.status !== 200) throw new ApiError(resp.status, url);
    return (await resp.json()) as StatsPayload;
  }

  async getMap(zone: string): Promise<MapResult> {
    const url = `${this.baseUrl}/api/map/${encodeURIComponent(zone)}`;
    const resp = await this.fetchFn(url);
    if (resp.status === 404) return { kind: 'missing' };
    if (resp.status !== 200) throw new ApiError(resp.status, url);
    return { kind: 'map', doc: (await resp.json()) as MapDocument };
  }
}
