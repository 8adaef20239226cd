"""Shared fixtures: corpus builders and a controllable clock."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from perceptmap.records import StreetImage, Vote
from perceptmap.store import CorpusStore


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.rsplit("::", 1)[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {outcome}", flush=True)


class TickingClock:
    """Deterministic clock advancing a fixed step per call."""

    def __init__(self, start: datetime | None = None, step_s: float = 1.0):
        self.now = start or datetime(2020, 1, 1, tzinfo=timezone.utc)
        self.step = timedelta(seconds=step_s)

    def __call__(self) -> datetime:
        current = self.now
        self.now = self.now + self.step
        return current

    def advance(self, seconds: float) -> None:
        self.now = self.now + timedelta(seconds=seconds)


@pytest.fixture
def clock() -> TickingClock:
    return TickingClock()


def grid_images(n: int, spacing_deg: float = 0.01, zone: str = "zona") -> list[StreetImage]:
    """n images on a lat/lon grid; 0.01 deg spacing keeps every pair >1 km apart."""
    side = int(np.ceil(np.sqrt(n)))
    images = []
    for k in range(n):
        i, j = divmod(k, side)
        images.append(StreetImage(
            image_id=f"img{k:05d}",
            lat=4.6 + i * spacing_deg,
            lon=-74.1 + j * spacing_deg,
            zone=zone,
            uri=f"file:///img{k:05d}.jpg",
            descriptor_count=500,
        ))
    return images


def store_with_images(n: int, **kwargs) -> CorpusStore:
    store = CorpusStore()
    for img in grid_images(n, **kwargs):
        store.put_image(img)
    return store


def vote(vote_id: str, left: str, right: str, code: int, **kwargs) -> Vote:
    return Vote(vote_id=vote_id, left_id=left, right_id=right, code=code, **kwargs)
