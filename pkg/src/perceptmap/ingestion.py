"""Image acquisition: crawl planning, provider fetching, filtering, features.

The street-imagery provider sits behind a small interface so tests and local
runs use a canned fake; the HTTP client reads its endpoint and key from
PERCEPTMAP_PROVIDER_URL / PERCEPTMAP_PROVIDER_KEY and caches responses on disk
keyed by (lat, lon, heading) so re-runs never burn quota.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import (
    ConfigurationError,
    ConflictError,
    FilteringError,
    FormatError,
    GeometryError,
    IngestionError,
)
from .geo import close_ring, meters_per_degree, point_in_ring
from .records import FEATURE_DIM, CorpusSnapshot, StreetImage
from .store import read_feature_index, read_feature_matrix

log = logging.getLogger(__name__)

PROVIDER_URL_ENV = "PERCEPTMAP_PROVIDER_URL"
PROVIDER_KEY_ENV = "PERCEPTMAP_PROVIDER_KEY"

DEFAULT_MIN_DESCRIPTORS = 420
DEFAULT_HEADINGS = (0.0, 90.0, 180.0, 270.0)


@dataclass
class Geofence:
    """A named zone boundary as a closed (lat, lon) ring."""

    polygon: list[tuple[float, float]]
    zone_name: str

    def closed_ring(self) -> list[tuple[float, float]]:
        return close_ring(self.polygon)

    @classmethod
    def from_geojson(cls, obj: dict) -> "Geofence":
        """Accept a GeoJSON Polygon feature with a "zone_name" property."""
        if obj.get("type") == "FeatureCollection":
            feats = obj.get("features") or []
            if not feats:
                raise GeometryError("fence FeatureCollection is empty")
            obj = feats[0]
        if obj.get("type") == "Feature":
            props = obj.get("properties") or {}
            geom = obj.get("geometry") or {}
        else:
            props, geom = {}, obj
        if geom.get("type") != "Polygon":
            raise GeometryError(f"fence geometry must be Polygon, got {geom.get('type')!r}")
        ring_lonlat = geom["coordinates"][0]
        polygon = [(float(lat), float(lon)) for lon, lat in ring_lonlat]
        return cls(polygon=polygon, zone_name=str(props.get("zone_name", "")))


@dataclass
class CrawlPlan:
    grid_step_m: float
    headings: tuple[float, ...] = DEFAULT_HEADINGS
    max_images: int | None = None

    def __post_init__(self) -> None:
        if self.grid_step_m <= 0:
            raise ValueError("grid_step_m must be positive")
        for h in self.headings:
            if not (0.0 <= h < 360.0):
                raise ValueError(f"heading {h} outside [0, 360)")


def plan_crawl(fence: Geofence, plan: CrawlPlan) -> list[tuple[float, float, float]]:
    """Lay a regular grid of spacing grid_step_m over the fence bbox and keep
    the points inside the polygon, crossed with the requested headings.

    The grid is anchored at the bbox minimum corner, so the result depends
    only on the polygon (not on its vertex-list rotation) and is deterministic.
    """
    ring = fence.closed_ring()
    lats = [v[0] for v in ring]
    lons = [v[1] for v in ring]
    lat_min, lat_max = min(lats), max(lats)
    lon_min, lon_max = min(lons), max(lons)

    m_lat, m_lon = meters_per_degree((lat_min + lat_max) / 2.0)
    dlat = plan.grid_step_m / m_lat
    dlon = plan.grid_step_m / m_lon

    # The epsilon keeps exact-fit bboxes inclusive despite float rounding;
    # overshoot from it is clamped back onto the bbox edge.
    eps = 1e-9
    points: list[tuple[float, float, float]] = []
    n_lat = int((lat_max - lat_min) / dlat + eps) + 1
    n_lon = int((lon_max - lon_min) / dlon + eps) + 1
    for i in range(n_lat):
        lat = min(lat_min + i * dlat, lat_max)
        for j in range(n_lon):
            lon = min(lon_min + j * dlon, lon_max)
            if point_in_ring(lat, lon, ring):
                for heading in plan.headings:
                    points.append((lat, lon, heading))

    if plan.max_images is not None:
        points = points[: plan.max_images]
    return points


# -- providers ----------------------------------------------------------------

@dataclass
class ProviderImage:
    """One provider response: where the image lives plus optional metadata."""

    uri: str
    metadata: dict = field(default_factory=dict)


class ProviderFailure(Exception):
    """A single sample point could not be fetched (logged and skipped)."""


class ImageProvider(Protocol):
    def fetch(self, lat: float, lon: float, heading: float) -> ProviderImage: ...


class FakeProvider:
    """Deterministic canned provider for tests and offline pipeline runs.

    `responses` maps (lat, lon, heading) to a ProviderImage or an Exception;
    unknown points get a synthesized URI unless strict=True.
    """

    def __init__(self, responses: dict | None = None, strict: bool = False,
                 descriptor_count: int | None = None):
        self.responses = responses or {}
        self.strict = strict
        self.descriptor_count = descriptor_count
        self.calls: list[tuple[float, float, float]] = []

    def fetch(self, lat: float, lon: float, heading: float) -> ProviderImage:
        self.calls.append((lat, lon, heading))
        key = (lat, lon, heading)
        if key in self.responses:
            resp = self.responses[key]
            if isinstance(resp, Exception):
                raise resp
            return resp
        if self.strict:
            raise ProviderFailure(f"no canned response for {key}")
        meta = {}
        if self.descriptor_count is not None:
            meta["descriptor_count"] = self.descriptor_count
        return ProviderImage(uri=f"fake://{lat:.6f},{lon:.6f},{heading:.1f}",
                             metadata=meta)


class HttpProvider:
    """Street-imagery client over HTTP, with an on-disk response cache."""

    def __init__(self, base_url: str | None = None, api_key: str | None = None,
                 cache_dir: Path | str | None = None, timeout_s: float = 30.0):
        self.base_url = base_url or os.environ.get(PROVIDER_URL_ENV)
        self.api_key = api_key or os.environ.get(PROVIDER_KEY_ENV)
        if not self.base_url:
            raise ConfigurationError(f"{PROVIDER_URL_ENV} is not set")
        if not self.api_key:
            raise ConfigurationError(f"{PROVIDER_KEY_ENV} is not set")
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.timeout_s = timeout_s

    def _cache_path(self, lat: float, lon: float, heading: float) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256(f"{lat!r},{lon!r},{heading!r}".encode()).hexdigest()[:24]
        return self.cache_dir / f"{key}.json"

    def fetch(self, lat: float, lon: float, heading: float) -> ProviderImage:
        cache = self._cache_path(lat, lon, heading)
        if cache is not None and cache.exists():
            obj = json.loads(cache.read_text())
            return ProviderImage(uri=obj["uri"], metadata=obj.get("metadata", {}))

        import requests

        try:
            resp = requests.get(self.base_url, params={
                "lat": lat, "lon": lon, "heading": heading, "key": self.api_key,
            }, timeout=self.timeout_s)
        except requests.RequestException as exc:
            raise ProviderFailure(f"request failed at ({lat}, {lon}, {heading}): {exc}")
        if resp.status_code != 200:
            raise ProviderFailure(
                f"HTTP {resp.status_code} at ({lat}, {lon}, {heading})")
        obj = resp.json()
        image = ProviderImage(uri=obj["uri"], metadata=obj.get("metadata", {}))
        if cache is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            cache.write_text(json.dumps({"uri": image.uri, "metadata": image.metadata}))
        return image


def fetch_images(points: list[tuple[float, float, float]], provider: ImageProvider,
                 zone: str = "", parallelism: int = 4,
                 id_prefix: str = "img") -> list[StreetImage]:
    """Fetch one image per sample point with bounded parallelism.

    Failures are logged and skipped; results are sorted on (lat, lon, heading)
    before image_ids are assigned so the output is deterministic regardless of
    completion order. Raises IngestionError when every point failed.
    """
    if not points:
        raise IngestionError("no sample points to fetch")

    def one(point):
        lat, lon, heading = point
        try:
            return point, provider.fetch(lat, lon, heading)
        except ProviderFailure as exc:
            log.warning("skipping sample point %s: %s", point, exc)
            return point, None

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        fetched = list(pool.map(one, points))

    ok = sorted((p for p in fetched if p[1] is not None), key=lambda p: p[0])
    if not ok:
        raise IngestionError(f"all {len(points)} sample points failed")

    images = []
    for idx, ((lat, lon, heading), payload) in enumerate(ok):
        meta = payload.metadata or {}
        dc = meta.get("descriptor_count")
        images.append(StreetImage(
            image_id=f"{id_prefix}-{idx:06d}",
            lat=lat, lon=lon, zone=zone, uri=payload.uri,
            descriptor_count=None if dc is None else int(dc),
        ))
    return images


# -- descriptor counts and filtering ------------------------------------------

class DescriptorCountProvider(Protocol):
    def count_for(self, image: StreetImage) -> int | None: ...


class MetadataDescriptorCounts:
    """Counts already carried on the image records (the normal path)."""

    def count_for(self, image: StreetImage) -> int | None:
        return image.descriptor_count


class CommandDescriptorCounts:
    """Run an external command per image and parse its stdout as the count.

    The command template may reference {uri}, e.g.
    "keypoint-count --image {uri}". Keypoint extraction itself lives outside
    this package.
    """

    def __init__(self, command_template: str):
        self.command_template = command_template

    def count_for(self, image: StreetImage) -> int | None:
        cmd = shlex.split(self.command_template.format(uri=image.uri))
        out = subprocess.run(cmd, capture_output=True, text=True, check=True)
        text = out.stdout.strip()
        return int(text) if text else None


def filter_images(images: list[StreetImage],
                  min_descriptors: int = DEFAULT_MIN_DESCRIPTORS,
                  counts: DescriptorCountProvider | None = None,
                  ) -> tuple[list[StreetImage], list[StreetImage]]:
    """Partition images into (kept, excluded) on the descriptor-count threshold."""
    counts = counts or MetadataDescriptorCounts()
    kept: list[StreetImage] = []
    excluded: list[StreetImage] = []
    for img in images:
        n = counts.count_for(img)
        if n is None:
            raise FilteringError(f"image {img.image_id!r} has no descriptor count")
        if img.descriptor_count is None:
            img.descriptor_count = int(n)
        (kept if n >= min_descriptors else excluded).append(img)
    return kept, excluded


def ingest_features(feature_path: Path | str, snapshot: CorpusSnapshot,
                    index_path: Path | str | None = None) -> list[str]:
    """Attach externally computed 512-dim vectors to the snapshot's images.

    Returns the ids of images still lacking a feature vector afterwards.
    """
    feature_path = Path(feature_path)
    if index_path is None:
        index_path = feature_path.with_suffix(".idx.jsonl")
    matrix = read_feature_matrix(feature_path)
    if matrix.shape[1] != FEATURE_DIM:
        raise FormatError(
            f"{feature_path}: feature dim is {matrix.shape[1]}, expected {FEATURE_DIM}")
    ids = read_feature_index(index_path)
    if len(ids) != matrix.shape[0]:
        raise FormatError(
            f"{index_path}: {len(ids)} index rows for {matrix.shape[0]} matrix rows")

    seen: set[str] = set()
    for row, image_id in enumerate(ids):
        if image_id in seen or image_id in snapshot.features:
            raise ConflictError(f"duplicate feature row for image {image_id!r}")
        seen.add(image_id)
        if image_id not in snapshot.images:
            log.warning("feature row %d references unknown image %r", row, image_id)
            continue
        vec = matrix[row]
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"feature vector for {image_id!r} has non-finite components")
        snapshot.features[image_id] = vec

    missing = sorted(i for i in snapshot.images if i not in snapshot.features)
    if missing:
        log.warning("%d images lack feature vectors: %s%s", len(missing),
                    ", ".join(missing[:5]), "..." if len(missing) > 5 else "")
    return missing
