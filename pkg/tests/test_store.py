"""Corpus store: counters, vote log authority, and lossless persistence."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perceptmap.errors import (
    ConflictError,
    InvalidVoteError,
    NotFoundError,
    ParseError,
    ReferentialIntegrityError,
)
from perceptmap.records import FEATURE_DIM, StreetImage
from perceptmap.store import (
    CorpusStore,
    load_snapshot,
    read_feature_matrix,
    save_snapshot,
    store_from_snapshot,
    write_feature_matrix,
)

from conftest import store_with_images, vote


class TestPutImage:
    def test_fresh_record_retrievable(self):
        store = CorpusStore()
        store.put_image(StreetImage("a", 4.65, -74.06))
        img = store.get_image("a")
        assert (img.pos, img.neg, img.neu) == (0.0, 0.0, 0.0)

    def test_idempotent_on_identical_payload(self):
        store = CorpusStore()
        img = StreetImage("a", 4.65, -74.06)
        store.put_image(img)
        store.put_image(img)
        assert len(store.images) == 1

    def test_conflicting_payload_rejected(self):
        store = CorpusStore()
        store.put_image(StreetImage("a", 4.65, -74.06))
        with pytest.raises(ConflictError):
            store.put_image(StreetImage("a", 5.0, -74.06))

    @pytest.mark.parametrize("lat,lon", [(91, 0), (-91, 0), (0, 181), (0, -181)])
    def test_invalid_coordinates(self, lat, lon):
        with pytest.raises(ValueError):
            CorpusStore().put_image(StreetImage("a", lat, lon))

    def test_empty_id_rejected(self):
        with pytest.raises(ValueError):
            CorpusStore().put_image(StreetImage("", 0, 0))


class TestRecordVote:
    def test_code_1_charges_left_positive_right_negative(self):
        store = store_with_images(2)
        store.record_vote(vote("v1", "img00000", "img00001", 1))
        assert store.images["img00000"].pos == 1.0
        assert store.images["img00001"].neg == 1.0

    def test_code_2_charges_right_positive_left_negative(self):
        store = store_with_images(2)
        store.record_vote(vote("v1", "img00000", "img00001", 2))
        assert store.images["img00001"].pos == 1.0
        assert store.images["img00000"].neg == 1.0

    def test_code_0_charges_both_neutral(self):
        store = store_with_images(2)
        store.record_vote(vote("v1", "img00000", "img00001", 0))
        assert store.images["img00000"].neu == 1.0
        assert store.images["img00001"].neu == 1.0

    def test_self_comparison_rejected(self):
        store = store_with_images(2)
        with pytest.raises(InvalidVoteError):
            store.record_vote(vote("v1", "img00000", "img00000", 1))

    def test_unknown_image_rejected(self):
        store = store_with_images(2)
        with pytest.raises(NotFoundError):
            store.record_vote(vote("v1", "img00000", "ghost", 1))

    def test_bad_code_rejected(self):
        store = store_with_images(2)
        with pytest.raises(InvalidVoteError):
            store.record_vote(vote("v1", "img00000", "img00001", 3))


@given(codes=st.lists(st.integers(min_value=0, max_value=2), max_size=60))
@settings(max_examples=50, deadline=None)
def test_counter_conservation(codes):
    """After N votes the counters across all images sum to exactly 2N."""
    store = store_with_images(6)
    ids = sorted(store.images)
    for k, code in enumerate(codes):
        left, right = ids[k % 6], ids[(k + 1 + k % 5) % 6]
        if left == right:
            continue
        store.record_vote(vote(f"v{k}", left, right, code))
    total = sum(i.pos + i.neg + i.neu for i in store.images.values())
    assert total == 2 * len(store.votes)


def test_replaying_log_reproduces_counters():
    store = store_with_images(5)
    ids = sorted(store.images)
    rng = np.random.default_rng(3)
    for k in range(40):
        a, b = rng.choice(len(ids), size=2, replace=False)
        store.record_vote(vote(f"v{k}", ids[a], ids[b], int(rng.integers(0, 3))))
    before = {i: (img.pos, img.neg, img.neu) for i, img in store.images.items()}
    store.rebuild_counters()
    after = {i: (img.pos, img.neg, img.neu) for i, img in store.images.items()}
    assert before == after


class TestSnapshotRoundTrip:
    def test_save_load_identity(self, tmp_path):
        store = store_with_images(3)
        ids = sorted(store.images)
        # Awkward float counters exercise bit-exactness through JSON.
        store.images[ids[0]].pos = 0.1 + 0.2
        store.images[ids[1]].neu = 1.0 / 3.0
        rng = np.random.default_rng(0)
        for i in ids:
            store.put_feature(i, rng.normal(size=FEATURE_DIM).astype(np.float32))
        store.record_vote(vote("v1", ids[0], ids[1], 1))
        store.record_vote(vote("v2", ids[1], ids[2], 0))

        save_snapshot(store.snapshot(), tmp_path)
        loaded = load_snapshot(tmp_path)

        assert {i: img.to_json() for i, img in loaded.images.items()} == \
               {i: img.to_json() for i, img in store.images.items()}
        assert [v.to_json() for v in loaded.votes] == [v.to_json() for v in store.votes]
        for i in ids:
            assert loaded.features[i].tobytes() == store.features[i].tobytes()

    def test_dangling_vote_reference(self, tmp_path):
        store = store_with_images(2)
        save_snapshot(store.snapshot(), tmp_path)
        with open(tmp_path / "votes.jsonl", "a") as fh:
            fh.write(json.dumps(vote("v9", "img00000", "zz", 1).to_json()) + "\n")
        with pytest.raises(ReferentialIntegrityError):
            load_snapshot(tmp_path)

    def test_malformed_line_names_location(self, tmp_path):
        store = store_with_images(1)
        save_snapshot(store.snapshot(), tmp_path)
        with open(tmp_path / "images.jsonl", "a") as fh:
            fh.write("{not json\n")
        with pytest.raises(ParseError) as err:
            load_snapshot(tmp_path)
        assert "images.jsonl:2" in str(err.value)

    def test_truncated_feature_row_is_parse_error(self, tmp_path):
        matrix = np.ones((2, FEATURE_DIM), dtype=np.float32)
        path = tmp_path / "features.bin"
        write_feature_matrix(path, matrix)
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])  # drop one float: last row has 511 values
        with pytest.raises(ParseError):
            read_feature_matrix(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "features.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ParseError):
            read_feature_matrix(path)

    def test_store_from_snapshot_is_independent(self, tmp_path):
        store = store_with_images(2)
        snap = store.snapshot()
        clone = store_from_snapshot(snap)
        clone.images["img00000"].pos = 99.0
        assert store.images["img00000"].pos == 0.0


class TestFeatures:
    def test_put_feature_wrong_length(self):
        store = store_with_images(1)
        with pytest.raises(Exception):
            store.put_feature("img00000", np.zeros(511, dtype=np.float32))

    def test_duplicate_feature_conflict(self):
        store = store_with_images(1)
        store.put_feature("img00000", np.zeros(FEATURE_DIM, dtype=np.float32))
        with pytest.raises(ConflictError):
            store.put_feature("img00000", np.ones(FEATURE_DIM, dtype=np.float32))

    def test_feature_for_unknown_image(self):
        store = store_with_images(1)
        with pytest.raises(ReferentialIntegrityError):
            store.put_feature("ghost", np.zeros(FEATURE_DIM, dtype=np.float32))


def test_vote_totals():
    store = store_with_images(3)
    ids = sorted(store.images)
    store.record_vote(vote("v1", ids[0], ids[1], 0))
    store.record_vote(vote("v2", ids[1], ids[2], 1))
    store.record_vote(vote("v3", ids[0], ids[2], 2, source="synthetic"))
    totals = store.vote_totals()
    assert totals["by_code"] == {0: 1, 1: 1, 2: 1}
    assert totals["by_source"] == {"human": 2, "synthetic": 1}
    assert totals["images"] == 3
