"""Corpus persistence: images.jsonl, votes.jsonl and the binary feature blob.

The vote log is the authority; image counters are a derived cache that can be
rebuilt by replaying the log against zeroed counters. Persistence is plain
files so runs stay diff-able and reproducible:

  images.jsonl        one StreetImage object per line
  votes.jsonl         one Vote object per line, ts as RFC 3339
  features.bin        "PMF1" magic, u32 row_count, u32 dim, f32-LE rows
  features.idx.jsonl  {"row", "image_id"} per line, row ordinal -> image
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    ConflictError,
    FormatError,
    InvalidVoteError,
    NotFoundError,
    ParseError,
    ReferentialIntegrityError,
)
from .records import FEATURE_DIM, VOTE_CODES, CorpusSnapshot, StreetImage, Vote

FEATURE_MAGIC = b"PMF1"

IMAGES_FILE = "images.jsonl"
VOTES_FILE = "votes.jsonl"
FEATURES_FILE = "features.bin"
FEATURES_IDX_FILE = "features.idx.jsonl"


class CorpusStore:
    """Single-writer in-memory corpus with explicit snapshot I/O.

    Mutations must be serialized by the caller (the API service wraps them in
    one lock); reads may happen concurrently against `snapshot()` copies.
    """

    def __init__(self) -> None:
        self.images: dict[str, StreetImage] = {}
        self.features: dict[str, np.ndarray] = {}
        self.votes: list[Vote] = []

    # -- images ----------------------------------------------------------

    def put_image(self, img: StreetImage) -> str:
        if not img.image_id:
            raise ValueError("image_id must be non-empty")
        if not (-90.0 <= img.lat <= 90.0) or not (-180.0 <= img.lon <= 180.0):
            raise ValueError(
                f"image {img.image_id!r}: coordinates ({img.lat}, {img.lon}) out of range")
        existing = self.images.get(img.image_id)
        if existing is not None:
            if existing.to_json() != img.to_json():
                raise ConflictError(
                    f"image {img.image_id!r} already stored with a different payload")
            return img.image_id
        self.images[img.image_id] = img.copy()
        return img.image_id

    def get_image(self, image_id: str) -> StreetImage:
        try:
            return self.images[image_id]
        except KeyError:
            raise NotFoundError(f"unknown image {image_id!r}") from None

    # -- features --------------------------------------------------------

    def put_feature(self, image_id: str, values: np.ndarray) -> None:
        if image_id not in self.images:
            raise ReferentialIntegrityError(
                f"feature references unknown image {image_id!r}")
        vec = np.asarray(values, dtype=np.float32)
        if vec.shape != (FEATURE_DIM,):
            raise FormatError(
                f"feature vector for {image_id!r} has length {vec.size}, "
                f"expected {FEATURE_DIM}")
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"feature vector for {image_id!r} has non-finite components")
        if image_id in self.features:
            raise ConflictError(f"duplicate feature row for image {image_id!r}")
        self.features[image_id] = vec

    # -- votes -----------------------------------------------------------

    def record_vote(self, vote: Vote) -> tuple[StreetImage, StreetImage]:
        """Append a vote to the log and charge both perception counters.

        Returns the updated (left, right) image records.
        """
        if vote.left_id == vote.right_id:
            raise InvalidVoteError(
                f"vote {vote.vote_id!r} compares image {vote.left_id!r} with itself")
        if vote.code not in VOTE_CODES:
            raise InvalidVoteError(f"vote {vote.vote_id!r} has code {vote.code}")
        left = self.get_image(vote.left_id)
        right = self.get_image(vote.right_id)
        apply_vote_to_counters(vote, left, right)
        self.votes.append(vote)
        return left, right

    def next_vote_id(self) -> str:
        return f"v{len(self.votes):08d}"

    def rebuild_counters(self) -> None:
        """Zero every counter and replay the vote log.

        The log is append-only, so this reproduces the stored counters exactly
        (modulo any scoring-time redistribution, which never touches the store).
        """
        for img in self.images.values():
            img.pos = img.neg = img.neu = 0.0
        for vote in self.votes:
            apply_vote_to_counters(vote, self.images[vote.left_id],
                                   self.images[vote.right_id])

    def vote_totals(self) -> dict[str, dict]:
        by_code = {0: 0, 1: 0, 2: 0}
        by_source = {"human": 0, "synthetic": 0}
        for v in self.votes:
            by_code[v.code] += 1
            by_source[v.source] = by_source.get(v.source, 0) + 1
        return {"by_code": by_code, "by_source": by_source,
                "images": len(self.images), "total": len(self.votes)}

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> CorpusSnapshot:
        return CorpusSnapshot(
            images={k: v.copy() for k, v in self.images.items()},
            features=dict(self.features),
            votes=list(self.votes),
        )


def apply_vote_to_counters(vote: Vote, left: StreetImage, right: StreetImage) -> None:
    if vote.code == 1:
        left.pos += 1.0
        right.neg += 1.0
    elif vote.code == 2:
        right.pos += 1.0
        left.neg += 1.0
    else:
        left.neu += 1.0
        right.neu += 1.0


# -- binary feature matrix --------------------------------------------------

def write_feature_matrix(path: Path | str, matrix: np.ndarray) -> None:
    """Write a (rows, dim) float32 matrix in the PMF1 layout."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise FormatError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    rows, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, dim))
        fh.write(matrix.tobytes())


def read_feature_matrix(path: Path | str) -> np.ndarray:
    """Read a PMF1 file back into a (rows, dim) float32 matrix."""
    path = str(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise ParseError(f"bad magic {magic!r}", path=path, offset=0)
        header = fh.read(8)
        if len(header) != 8:
            raise ParseError("truncated header", path=path, offset=4)
        rows, dim = struct.unpack("<II", header)
        payload = fh.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise ParseError(
            f"payload holds {len(payload)} bytes, expected {expected} "
            f"({rows} rows x {dim} floats)", path=path, offset=12 + len(payload))
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dim).copy()


def write_feature_index(path: Path | str, image_ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row, image_id in enumerate(image_ids):
            fh.write(json.dumps({"row": row, "image_id": image_id}) + "\n")


def read_feature_index(path: Path | str) -> list[str]:
    ids: list[str] = []
    for lineno, obj in iter_jsonl(path):
        row = obj.get("row")
        if row != len(ids):
            raise ParseError(f"row ordinal {row} out of order", path=str(path), line=lineno)
        ids.append(obj["image_id"])
    return ids


def iter_jsonl(path: Path | str):
    """Yield (lineno, parsed object) per non-empty line, with located errors."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path),
                                 line=lineno) from exc
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", path=str(path), line=lineno)
            yield lineno, obj


# -- snapshot I/O -------------------------------------------------------------

def save_snapshot(snapshot: CorpusSnapshot, data_dir: Path | str) -> None:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)

    with open(data_dir / IMAGES_FILE, "w", encoding="utf-8") as fh:
        for image_id in sorted(snapshot.images):
            fh.write(json.dumps(snapshot.images[image_id].to_json()) + "\n")

    with open(data_dir / VOTES_FILE, "w", encoding="utf-8") as fh:
        for vote in snapshot.votes:
            fh.write(json.dumps(vote.to_json()) + "\n")

    if snapshot.features:
        ids = sorted(snapshot.features)
        matrix = np.stack([snapshot.features[i] for i in ids])
        write_feature_matrix(data_dir / FEATURES_FILE, matrix)
        write_feature_index(data_dir / FEATURES_IDX_FILE, ids)


def load_snapshot(data_dir: Path | str) -> CorpusSnapshot:
    """Load a snapshot, enforcing referential integrity across the three files."""
    data_dir = Path(data_dir)

    images: dict[str, StreetImage] = {}
    images_path = data_dir / IMAGES_FILE
    if images_path.exists():
        for lineno, obj in iter_jsonl(images_path):
            try:
                img = StreetImage.from_json(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad image record: {exc}", path=str(images_path),
                                 line=lineno) from exc
            if img.image_id in images:
                raise ParseError(f"duplicate image_id {img.image_id!r}",
                                 path=str(images_path), line=lineno)
            images[img.image_id] = img

    votes: list[Vote] = []
    votes_path = data_dir / VOTES_FILE
    if votes_path.exists():
        for lineno, obj in iter_jsonl(votes_path):
            try:
                vote = Vote.from_json(obj)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad vote record: {exc}", path=str(votes_path),
                                 line=lineno) from exc
            for ref in (vote.left_id, vote.right_id):
                if ref not in images:
                    raise ReferentialIntegrityError(
                        f"{votes_path}:{lineno}: vote {vote.vote_id!r} references "
                        f"unknown image {ref!r}")
            votes.append(vote)

    features: dict[str, np.ndarray] = {}
    features_path = data_dir / FEATURES_FILE
    if features_path.exists():
        matrix = read_feature_matrix(features_path)
        ids = read_feature_index(data_dir / FEATURES_IDX_FILE)
        if len(ids) != matrix.shape[0]:
            raise ParseError(
                f"index lists {len(ids)} rows but matrix holds {matrix.shape[0]}",
                path=str(data_dir / FEATURES_IDX_FILE))
        for row, image_id in enumerate(ids):
            if image_id not in images:
                raise ReferentialIntegrityError(
                    f"feature row {row} references unknown image {image_id!r}")
            if image_id in features:
                raise ConflictError(f"duplicate feature rows for image {image_id!r}")
            features[image_id] = matrix[row]

    return CorpusSnapshot(images=images, features=features, votes=votes)


def store_from_snapshot(snapshot: CorpusSnapshot) -> CorpusStore:
    store = CorpusStore()
    store.images = {k: v.copy() for k, v in snapshot.images.items()}
    store.features = dict(snapshot.features)
    store.votes = list(snapshot.votes)
    return store


def append_vote_line(path: Path | str, vote: Vote) -> None:
    """Durably append one vote record (write-ahead for the API service)."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(vote.to_json()) + "\n")
        fh.flush()
