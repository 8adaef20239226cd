"""Turn charged votes into normalized 1024-wide training rows.

Pipeline: per-component normalization stats over the zone's published image
set, tie votes dropped, each charged vote concatenated (left then right) and
labeled with its code, then swap doubling (halves exchanged, label flipped
1<->2). Splitting operates on the pre-doubling votes so swapped twins always
share a partition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BuildError, SplitError, StatsError
from .records import FEATURE_DIM, Vote
from .store import write_feature_matrix, read_feature_matrix, iter_jsonl

DEFAULT_EPSILON = 1e-8

EXAMPLE_DIM = 2 * FEATURE_DIM

PARTITIONS = ("train", "val", "test")


@dataclass
class NormalizationStats:
    """Component-wise mean and population standard deviation of a feature set."""

    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @property
    def constant_mask(self) -> np.ndarray:
        """Components whose spread is below epsilon; they normalize to 0."""
        return self.sigma < self.epsilon

    def to_json(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(),
                "epsilon": self.epsilon}

    @classmethod
    def from_json(cls, obj: dict) -> "NormalizationStats":
        return cls(mu=np.asarray(obj["mu"], dtype=np.float64),
                   sigma=np.asarray(obj["sigma"], dtype=np.float64),
                   epsilon=float(obj["epsilon"]))

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: Path | str) -> "NormalizationStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def compute_stats(vectors: Iterable[np.ndarray],
                  epsilon: float = DEFAULT_EPSILON) -> NormalizationStats:
    """Component-wise mean / population std over a designated image set."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    matrix = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise StatsError(
            f"need at least 2 feature vectors to compute stats, got {matrix.shape[0] if matrix.ndim == 2 else 0}")
    if matrix.shape[1] != FEATURE_DIM:
        raise StatsError(f"vectors have length {matrix.shape[1]}, expected {FEATURE_DIM}")
    mu = matrix.mean(axis=0)
    sigma = matrix.std(axis=0)  # population std (ddof=0)
    return NormalizationStats(mu=mu, sigma=sigma, epsilon=epsilon)


def normalize(vector: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """(f - mu) / sigma per component; constant components map to exactly 0."""
    vec = np.asarray(vector, dtype=np.float64)
    safe_sigma = np.maximum(stats.sigma, stats.epsilon)
    out = (vec - stats.mu) / safe_sigma
    return np.where(stats.constant_mask, 0.0, out)


@dataclass
class ExampleSet:
    """Training rows plus their per-row provenance, in deterministic order."""

    x: np.ndarray                  # (n, 1024) float64
    label: np.ndarray              # (n,) int, values in {1, 2}
    origin_vote_id: list[str]
    swapped: np.ndarray            # (n,) bool

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx: Sequence[int] | np.ndarray) -> "ExampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return ExampleSet(
            x=self.x[idx],
            label=self.label[idx],
            origin_vote_id=[self.origin_vote_id[i] for i in idx],
            swapped=self.swapped[idx],
        )


def build_examples(votes: Sequence[Vote], features: Mapping[str, np.ndarray],
                   stats: NormalizationStats) -> ExampleSet:
    """Build the doubled example set from charged votes.

    Ties (code 0) are dropped. Each charged vote yields
    (left || right, code) and its swapped twin (right || left, code flipped).
    Rows are ordered by (origin_vote_id, swapped) so builds are reproducible.
    """
    charged = sorted((v for v in votes if v.code in (1, 2)), key=lambda v: v.vote_id)
    for v in charged:
        for ref in (v.left_id, v.right_id):
            if ref not in features:
                raise BuildError(
                    f"vote {v.vote_id!r} references image {ref!r} with no feature vector")

    image_ids = sorted({i for v in charged for i in (v.left_id, v.right_id)})
    row_of = {img: k for k, img in enumerate(image_ids)}
    normalized = np.zeros((len(image_ids), FEATURE_DIM), dtype=np.float64)
    for img, k in row_of.items():
        normalized[k] = normalize(features[img], stats)

    n = len(charged)
    x = np.zeros((2 * n, EXAMPLE_DIM), dtype=np.float64)
    label = np.zeros(2 * n, dtype=np.int64)
    swapped = np.zeros(2 * n, dtype=bool)
    origin: list[str] = []
    for k, v in enumerate(charged):
        left, right = normalized[row_of[v.left_id]], normalized[row_of[v.right_id]]
        x[2 * k, :FEATURE_DIM] = left
        x[2 * k, FEATURE_DIM:] = right
        label[2 * k] = v.code
        x[2 * k + 1, :FEATURE_DIM] = right
        x[2 * k + 1, FEATURE_DIM:] = left
        label[2 * k + 1] = 3 - v.code
        swapped[2 * k + 1] = True
        origin.extend([v.vote_id, v.vote_id])

    return ExampleSet(x=x, label=label, origin_vote_id=origin, swapped=swapped)


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float] = (0.65, 0.07, 0.28)
    seed: int = 0

    def __post_init__(self) -> None:
        if any(f < 0.0 or f > 1.0 for f in self.fractions):
            raise SplitError(f"fractions {self.fractions} outside [0, 1]")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SplitError(f"fractions {self.fractions} sum to {sum(self.fractions)}")


@dataclass
class SplitResult:
    train: ExampleSet
    val: ExampleSet
    test: ExampleSet
    partition_of: list[str]  # per example row, aligned with the input set

    def partition(self, name: str) -> ExampleSet:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def split(examples: ExampleSet, spec: SplitSpec) -> SplitResult:
    """Seeded shuffle of origin votes, then floor-partition into train/val/test.

    Partitioning on votes (not rows) keeps each swapped twin with its
    original, so no comparison leaks across partitions.
    """
    vote_ids = sorted(set(examples.origin_vote_id))
    rng = np.random.default_rng(spec.seed)
    order = [vote_ids[i] for i in rng.permutation(len(vote_ids))]

    n_votes = len(order)
    f_train, f_val, f_test = spec.fractions
    n_train = int(f_train * n_votes)
    n_val = int(f_val * n_votes)
    assignment: dict[str, str] = {}
    for k, vid in enumerate(order):
        if k < n_train:
            assignment[vid] = "train"
        elif k < n_train + n_val:
            assignment[vid] = "val"
        else:
            assignment[vid] = "test"

    partition_of = [assignment[vid] for vid in examples.origin_vote_id]
    indices = {name: [i for i, p in enumerate(partition_of) if p == name]
               for name in PARTITIONS}
    for name, frac in zip(PARTITIONS, spec.fractions):
        if frac > 0 and frac * n_votes >= 1 and not indices[name]:
            raise SplitError(f"partition {name!r} came out empty at fraction {frac}")

    return SplitResult(
        train=examples.subset(indices["train"]),
        val=examples.subset(indices["val"]),
        test=examples.subset(indices["test"]),
        partition_of=partition_of,
    )


# -- persistence ----------------------------------------------------------------

def save_dataset(examples: ExampleSet, partition_of: Sequence[str],
                 matrix_path: Path | str, labels_path: Path | str) -> None:
    """dataset.bin (PMF1 layout, dim=1024, float32) plus labels.jsonl rows."""
    write_feature_matrix(matrix_path, examples.x.astype(np.float32))
    with open(labels_path, "w", encoding="utf-8") as fh:
        for row in range(len(examples)):
            fh.write(json.dumps({
                "row": row,
                "label": int(examples.label[row]),
                "origin_vote_id": examples.origin_vote_id[row],
                "swapped": bool(examples.swapped[row]),
                "partition": partition_of[row],
            }) + "\n")


def load_dataset(matrix_path: Path | str,
                 labels_path: Path | str) -> tuple[ExampleSet, list[str]]:
    matrix = read_feature_matrix(matrix_path)
    labels: list[int] = []
    origin: list[str] = []
    swapped: list[bool] = []
    partition_of: list[str] = []
    for lineno, obj in iter_jsonl(labels_path):
        labels.append(int(obj["label"]))
        origin.append(obj["origin_vote_id"])
        swapped.append(bool(obj["swapped"]))
        partition_of.append(obj["partition"])
    if len(labels) != matrix.shape[0]:
        raise SplitError(
            f"{labels_path} has {len(labels)} rows for {matrix.shape[0]} matrix rows")
    examples = ExampleSet(
        x=matrix.astype(np.float64),
        label=np.asarray(labels, dtype=np.int64),
        origin_vote_id=origin,
        swapped=np.asarray(swapped, dtype=bool),
    )
    return examples, partition_of
