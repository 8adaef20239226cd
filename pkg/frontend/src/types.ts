// Payload shapes of the four API endpoints the client consumes.

export interface PairSide {
  image_id: string;
  image_url: string;
}

export interface PairPayload {
  session_id: string;
  left: PairSide;
  right: PairSide;
}

export type Click = 'left' | 'equal' | 'right';

export interface VotePayload {
  vote_id: string;
  code: number;
}

export interface StatsPayload {
  by_code: Record<string, number>;
  by_source: Record<string, number>;
  images: number;
  total: number;
}

export interface MapFeature {
  type: 'Feature';
  geometry: { type: 'Point'; coordinates: [number, number] };
  properties: {
    image_id: string;
    positive_pct: number;
    negative_pct: number;
    color: string;
  };
}

export interface MapDocument {
  type: 'FeatureCollection';
  name?: string;
  features: MapFeature[];
}
