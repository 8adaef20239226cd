"""Synthetic pair generation and model-predicted votes for unlabeled zones.

A zone's images are split into two equal groups by interleaving their
Hilbert-curve order, so both groups cover the zone homogeneously. Each group
is cut into 10 contiguous subgroups, and every image is paired with one
uniformly drawn image from each subgroup of the opposite group: exactly
10 * 2 * floor(n / 2) pairs. Predicted votes are charged only when the
softmax probability gap clears the margin; otherwise they are ties.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import NormalizationStats, normalize
from .errors import PlanError, PredictionError
from .geo import hilbert_sort
from .network import ModelParams, predict_probs
from .records import FEATURE_DIM, StreetImage, Vote

SUBGROUP_COUNT = 10

DEFAULT_MARGIN = 0.25


@dataclass
class PredictionConfig:
    margin: float = DEFAULT_MARGIN

    def __post_init__(self) -> None:
        if not (0.0 <= self.margin < 1.0):
            raise ValueError(f"margin {self.margin} outside [0, 1)")


@dataclass
class SyntheticPairPlan:
    zone: str
    group_a: list[str]
    group_b: list[str]
    subgroups_a: list[list[str]]
    subgroups_b: list[list[str]]
    seed: int


def plan_pairs(images: Sequence[StreetImage], zone: str = "",
               seed: int = 0) -> tuple[SyntheticPairPlan, list[tuple[str, str]]]:
    """Build the two-group / ten-subgroup plan and its full pair list.

    Deterministic per seed. Odd image counts drop the last image in Hilbert
    order so the groups stay equal. Requires at least 20 images so every
    subgroup is populated.
    """
    n = len(images)
    if n < 2 * SUBGROUP_COUNT:
        raise PlanError(f"zone {zone!r} has {n} images; need at least {2 * SUBGROUP_COUNT}")

    ordered = hilbert_sort((img.image_id, img.lat, img.lon) for img in images)
    half = n // 2
    ordered = ordered[: 2 * half]
    group_a = ordered[0::2]
    group_b = ordered[1::2]
    subgroups_a = _contiguous_chunks(group_a, SUBGROUP_COUNT)
    subgroups_b = _contiguous_chunks(group_b, SUBGROUP_COUNT)
    plan = SyntheticPairPlan(zone=zone, group_a=group_a, group_b=group_b,
                             subgroups_a=subgroups_a, subgroups_b=subgroups_b,
                             seed=seed)

    rng = random.Random(seed)
    pairs: list[tuple[str, str]] = []
    for image_id in group_a:
        for subgroup in subgroups_b:
            pairs.append((image_id, rng.choice(subgroup)))
    for image_id in group_b:
        for subgroup in subgroups_a:
            pairs.append((image_id, rng.choice(subgroup)))
    return plan, pairs


def _contiguous_chunks(items: list[str], k: int) -> list[list[str]]:
    """Cut `items` into k contiguous runs whose sizes differ by at most 1."""
    n = len(items)
    base, extra = divmod(n, k)
    chunks = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        chunks.append(items[start:start + size])
        start += size
    return chunks


def expected_pair_count(n_images: int) -> int:
    return SUBGROUP_COUNT * 2 * (n_images // 2)


def decide_code(p_left: float, p_right: float,
                margin: float = DEFAULT_MARGIN) -> int:
    """Charged code from softmax outputs; ties when the gap is not above margin.

    The gap must be strictly higher than the margin: a difference of exactly
    `margin` stays a tie.
    """
    if abs(p_left - p_right) > margin:
        return 1 if p_left > p_right else 2
    return 0


def predict_pairs(pairs: Sequence[tuple[str, str]], params: ModelParams,
                  features: Mapping[str, np.ndarray], stats: NormalizationStats,
                  config: PredictionConfig | None = None, zone: str = "",
                  clock: Callable[[], datetime] | None = None,
                  batch_size: int = 1024) -> list[Vote]:
    """Annotate generated pairs with model predictions as synthetic votes.

    Votes carry source="synthetic" and are meant to be recorded through the
    store exactly like human votes, so counters update the same way.
    """
    config = config or PredictionConfig()
    clock = clock or (lambda: datetime.now(timezone.utc))

    image_ids = sorted({i for pair in pairs for i in pair})
    for image_id in image_ids:
        if image_id not in features:
            raise PredictionError(f"image {image_id!r} has no feature vector")

    row_of = {img: k for k, img in enumerate(image_ids)}
    normalized = np.stack([normalize(features[i], stats) for i in image_ids]) \
        if image_ids else np.zeros((0, FEATURE_DIM))

    votes: list[Vote] = []
    ts = clock()
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        left_idx = [row_of[l] for l, _ in chunk]
        right_idx = [row_of[r] for _, r in chunk]
        x = np.hstack([normalized[left_idx], normalized[right_idx]])
        probs = np.atleast_2d(predict_probs(params, x))
        for offset, (left_id, right_id) in enumerate(chunk):
            p_left, p_right = float(probs[offset, 0]), float(probs[offset, 1])
            code = decide_code(p_left, p_right, config.margin)
            votes.append(Vote(
                vote_id=f"sv{start + offset:08d}",
                left_id=left_id,
                right_id=right_id,
                code=code,
                source="synthetic",
                session_id=f"synth-{zone}" if zone else "synth",
                ts=ts,
            ))
    return votes
