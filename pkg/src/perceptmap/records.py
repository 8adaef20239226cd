"""Domain records shared across the pipeline: images, feature vectors, votes.

Counters are stored as floats on purpose: human voting only ever adds whole
units, but neutral redistribution during scoring produces fractional counts,
and one representation serves both phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any

import numpy as np

FEATURE_DIM = 512

VOTE_CODES = (0, 1, 2)
VOTE_SOURCES = ("human", "synthetic")


@dataclass
class StreetImage:
    """A geotagged street image with its perception counters."""

    image_id: str
    lat: float
    lon: float
    zone: str = ""
    uri: str = ""
    descriptor_count: int | None = None
    pos: float = 0.0
    neg: float = 0.0
    neu: float = 0.0

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "lat": self.lat,
            "lon": self.lon,
            "zone": self.zone,
            "uri": self.uri,
            "descriptor_count": self.descriptor_count,
            "pos": self.pos,
            "neg": self.neg,
            "neu": self.neu,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "StreetImage":
        return cls(
            image_id=obj["image_id"],
            lat=float(obj["lat"]),
            lon=float(obj["lon"]),
            zone=obj.get("zone", ""),
            uri=obj.get("uri", ""),
            descriptor_count=(None if obj.get("descriptor_count") is None
                              else int(obj["descriptor_count"])),
            pos=float(obj.get("pos", 0.0)),
            neg=float(obj.get("neg", 0.0)),
            neu=float(obj.get("neu", 0.0)),
        )

    def copy(self) -> "StreetImage":
        return replace(self)


@dataclass
class Vote:
    """One pairwise comparison: code 1 = left safer, 2 = right safer, 0 = equal."""

    vote_id: str
    left_id: str
    right_id: str
    code: int
    source: str = "human"
    session_id: str = ""
    ts: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def unordered_pair(self) -> tuple[str, str]:
        a, b = sorted((self.left_id, self.right_id))
        return a, b

    def to_json(self) -> dict[str, Any]:
        return {
            "vote_id": self.vote_id,
            "left_id": self.left_id,
            "right_id": self.right_id,
            "code": self.code,
            "source": self.source,
            "session_id": self.session_id,
            "ts": rfc3339(self.ts),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "Vote":
        return cls(
            vote_id=obj["vote_id"],
            left_id=obj["left_id"],
            right_id=obj["right_id"],
            code=int(obj["code"]),
            source=obj.get("source", "human"),
            session_id=obj.get("session_id", ""),
            ts=parse_rfc3339(obj["ts"]),
        )


@dataclass
class CorpusSnapshot:
    """Immutable view of the corpus: images, their feature vectors, the vote log."""

    images: dict[str, StreetImage]
    features: dict[str, np.ndarray]
    votes: list[Vote]


def rfc3339(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat()


def parse_rfc3339(text: str) -> datetime:
    # Python 3.10 fromisoformat does not accept a trailing Z.
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts
