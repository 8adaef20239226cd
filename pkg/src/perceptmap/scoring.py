"""Perception scores from counters, and color-graded GeoJSON point maps.

Neutral counters are redistributed onto positive/negative using the charged
counters of the images each image tied with (its code-0 partners), read from
a frozen pre-redistribution snapshot so the result is order-independent.
Scores map to colors on a red→green HSV hue sweep.
"""

from __future__ import annotations

import colorsys
import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmitError
from .records import StreetImage, Vote


@dataclass
class PerceptionScore:
    image_id: str
    positive_pct: float
    negative_pct: float
    neutral_pct: float
    score01: float
    color: str


def build_tie_graph(votes: Iterable[Vote]) -> dict[str, set[str]]:
    """Symmetric adjacency linking images that tied (code 0) with each other."""
    adjacency: dict[str, set[str]] = {}
    for vote in votes:
        if vote.code != 0 or vote.left_id == vote.right_id:
            continue
        adjacency.setdefault(vote.left_id, set()).add(vote.right_id)
        adjacency.setdefault(vote.right_id, set()).add(vote.left_id)
    return adjacency


def redistribute_neutral(image: StreetImage, tie_graph: Mapping[str, set[str]],
                         images: Mapping[str, StreetImage]) -> tuple[float, float]:
    """Fold one image's neutral counter into (pos, neg); returns the new pair.

    The split factors come from the summed charged counters of the tied
    neighbors as stored in `images` (the frozen snapshot). Neighbors with no
    charged evidence fall back to an even split. Conserves pos+neg+neu.
    """
    if image.neu == 0.0:
        return image.pos, image.neg
    neighbors = tie_graph.get(image.image_id, set())
    pos_sum = sum(images[i].pos for i in neighbors if i in images)
    neg_sum = sum(images[i].neg for i in neighbors if i in images)
    total = pos_sum + neg_sum
    if total > 0.0:
        pos_factor = pos_sum / total
    else:
        pos_factor = 0.5
    return image.pos + image.neu * pos_factor, image.neg + image.neu * (1.0 - pos_factor)


def redistribute_all(images: Mapping[str, StreetImage],
                     tie_graph: Mapping[str, set[str]]) -> dict[str, StreetImage]:
    """Apply redistribution to every image in one pass over a frozen snapshot."""
    out: dict[str, StreetImage] = {}
    for image_id, image in images.items():
        pos, neg = redistribute_neutral(image, tie_graph, images)
        updated = image.copy()
        updated.pos, updated.neg, updated.neu = pos, neg, 0.0
        out[image_id] = updated
    return out


def score(image: StreetImage) -> PerceptionScore | None:
    """Percentages and color once redistribution has zeroed the neutral counter.

    Images with no charged evidence at all are unscored (None) and stay off
    the maps rather than defaulting to 50%.
    """
    total = image.pos + image.neg
    if total <= 0.0:
        return None
    score01 = image.pos / total
    return PerceptionScore(
        image_id=image.image_id,
        positive_pct=100.0 * score01,
        negative_pct=100.0 * (1.0 - score01),
        neutral_pct=0.0,
        score01=score01,
        color=color_for(score01),
    )


def color_for(score01: float) -> str:
    """Linear hue sweep: 0.0 -> #FF0000 (red), 0.5 -> #FFFF00, 1.0 -> #00FF00."""
    if not (0.0 <= score01 <= 1.0):
        raise ValueError(f"score {score01} outside [0, 1]")
    hue = score01 * (120.0 / 360.0)
    r, g, b = colorsys.hsv_to_rgb(hue, 1.0, 1.0)
    return "#{:02X}{:02X}{:02X}".format(round(r * 255), round(g * 255), round(b * 255))


def score_zone(images: Mapping[str, StreetImage], votes: Iterable[Vote],
               zone: str | None = None) -> dict[str, PerceptionScore]:
    """Redistribute and score every (optionally zone-filtered) image."""
    tie_graph = build_tie_graph(votes)
    settled = redistribute_all(images, tie_graph)
    scores: dict[str, PerceptionScore] = {}
    for image_id, image in settled.items():
        if zone is not None and image.zone != zone:
            continue
        s = score(image)
        if s is not None:
            scores[image_id] = s
    return scores


def emit_map(zone: str, scores: Mapping[str, PerceptionScore],
             images: Mapping[str, StreetImage]) -> dict:
    """GeoJSON FeatureCollection of scored points, ordered by image_id."""
    if not scores:
        raise EmitError(f"zone {zone!r} has no scored images")
    features = []
    for image_id in sorted(scores):
        s = scores[image_id]
        img = images[image_id]
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [img.lon, img.lat]},
            "properties": {
                "image_id": image_id,
                "positive_pct": s.positive_pct,
                "negative_pct": s.negative_pct,
                "color": s.color,
            },
        })
    return {
        "type": "FeatureCollection",
        "name": zone,
        "features": features,
    }


def map_to_json_bytes(document: dict) -> bytes:
    """Canonical serialization: identical snapshots give identical bytes."""
    return json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_map(path: Path | str, document: dict) -> None:
    Path(path).write_bytes(map_to_json_bytes(document))


def write_scores_csv(path: Path | str, scores: Mapping[str, PerceptionScore],
                     images: Mapping[str, StreetImage]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "lat", "lon", "positive_pct", "negative_pct", "color"])
        for image_id in sorted(scores):
            s = scores[image_id]
            img = images[image_id]
            writer.writerow([image_id, img.lat, img.lon,
                             f"{s.positive_pct:.6f}", f"{s.negative_pct:.6f}", s.color])
