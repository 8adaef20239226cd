// Zone map rendering: GeoJSON features -> positioned markers -> SVG string.
// Marker colors come verbatim from the server document, never recomputed,
// so the page can never disagree with the emitted GeoJSON.

import type { ApiClient } from './api.js';
import type { MapDocument } from './types.js';

export interface Marker {
  imageId: string;
  lon: number;
  lat: number;
  color: string;
  positivePct: number;
}

export interface PlacedMarker extends Marker {
  x: number;
  y: number;
}

export function markersFromFeatureCollection(doc: MapDocument): Marker[] {
  return doc.features.map((feature) => ({
    imageId: feature.properties.image_id,
    lon: feature.geometry.coordinates[0],
    lat: feature.geometry.coordinates[1],
    color: feature.properties.color,
    positivePct: feature.properties.positive_pct,
  }));
}

/** Fit markers into a width x height viewport with equirectangular scaling. */
export function placeMarkers(
  markers: Marker[],
  width: number,
  height: number,
  pad = 12,
): PlacedMarker[] {
  if (markers.length === 0) return [];
  const lons = markers.map((m) => m.lon);
  const lats = markers.map((m) => m.lat);
  const lonMin = Math.min(...lons);
  const lonMax = Math.max(...lons);
  const latMin = Math.min(...lats);
  const latMax = Math.max(...lats);
  const lonSpan = lonMax - lonMin || 1;
  const latSpan = latMax - latMin || 1;
  return markers.map((m) => ({
    ...m,
    x: pad + ((m.lon - lonMin) / lonSpan) * (width - 2 * pad),
    // SVG y grows downward; north stays up.
    y: pad + ((latMax - m.lat) / latSpan) * (height - 2 * pad),
  }));
}

export function renderMapSvg(doc: MapDocument, width = 640, height = 480): string {
  const placed = placeMarkers(markersFromFeatureCollection(doc), width, height);
  const circles = placed
    .map(
      (m) =>
        `<circle cx="${m.x.toFixed(1)}" cy="${m.y.toFixed(1)}" r="6" ` +
        `fill="${m.color}" data-image-id="${m.imageId}">` +
        `<title>${m.imageId}: ${m.positivePct.toFixed(0)}% positive</title></circle>`,
    )
    .join('');
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" ` +
    `width="${width}" height="${height}">${circles}</svg>`
  );
}

export interface MapView {
  showMap(svg: string, markerCount: number): void;
  showNotFound(zone: string): void;
  showError(message: string): void;
}

export class MapPage {
  constructor(
    private readonly api: ApiClient,
    private readonly view: MapView,
  ) {}

  async load(zone: string): Promise<void> {
    let result;
    try {
      result = await this.api.getMap(zone);
    } catch (err) {
      this.view.showError(String(err));
      return;
    }
    if (result.kind === 'missing') {
      this.view.showNotFound(zone);
      return;
    }
    this.view.showMap(renderMapSvg(result.doc), result.doc.features.length);
  }
}
