"""Pair serving, vote submission, and vote-log housekeeping.

Serving policy: every image should get the same vote share, a pair is
compared at most once, self-comparisons are forbidden, and near images are
never paired. Balance is achieved constructively by always drawing both
images from the lowest-participation stratum that still admits a pair.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable

from .errors import AlreadyVotedError, InvalidVoteError, PairsExhaustedError, SessionError
from .geo import haversine_m
from .records import StreetImage, Vote
from .store import CorpusStore

CLICK_TO_CODE = {"left": 1, "equal": 0, "right": 2}


@dataclass
class PolicyConfig:
    min_pair_distance_m: float = 25.0
    session_ttl_s: float = 600.0
    max_participation_spread: int = 2

    def __post_init__(self) -> None:
        if self.min_pair_distance_m <= 0:
            raise ValueError("min_pair_distance_m must be positive")
        if self.session_ttl_s <= 0:
            raise ValueError("session_ttl_s must be positive")
        if self.max_participation_spread <= 0:
            raise ValueError("max_participation_spread must be positive")


@dataclass
class PairSession:
    session_id: str
    left_id: str
    right_id: str
    issued_at: datetime
    expires_at: datetime

    def unordered_pair(self) -> tuple[str, str]:
        a, b = sorted((self.left_id, self.right_id))
        return a, b


@dataclass
class HousekeepReport:
    removed_self: int = 0
    removed_near: int = 0
    removed_duplicate: int = 0
    kept: int = 0


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class SurveyEngine:
    """Issues pair sessions and accepts coded votes against a CorpusStore.

    Deterministic for a fixed seed, clock, and call sequence: session ids are
    sequential, pair choice consumes the seeded RNG, and vote ids come from
    the store's log position.
    """

    def __init__(self, store: CorpusStore, policy: PolicyConfig | None = None,
                 seed: int = 0, clock: Callable[[], datetime] = _utcnow):
        self.store = store
        self.policy = policy or PolicyConfig()
        self.clock = clock
        self._rng = random.Random(seed)
        self.sessions: dict[str, PairSession] = {}
        self._consumed: set[str] = set()
        self._session_counter = 0
        self._voted_pairs: set[tuple[str, str]] = {
            v.unordered_pair() for v in store.votes}
        self._participation: dict[str, int] = {}
        for v in store.votes:
            for i in (v.left_id, v.right_id):
                self._participation[i] = self._participation.get(i, 0) + 1
        self._distance_ok: dict[tuple[str, str], bool] = {}

    # -- pair serving ------------------------------------------------------

    def next_pair(self) -> PairSession:
        """Serve the lowest-participation admissible pair, or raise
        PairsExhaustedError when none remains."""
        self._purge_expired()
        images = self.store.images
        eligible = sorted(images)
        if len(eligible) < 2:
            raise PairsExhaustedError("fewer than two images in the corpus")

        # Lowest participation first; seeded shuffle breaks ties fairly.
        tiebreak = {i: self._rng.random() for i in eligible}
        order = sorted(eligible, key=lambda i: (self._participation.get(i, 0), tiebreak[i]))

        issued = {s.unordered_pair() for s in self.sessions.values()}
        chosen: tuple[str, str] | None = None
        for ai, a in enumerate(order):
            for b in order[ai + 1:]:
                if self._admissible(a, b, issued):
                    chosen = (a, b)
                    break
            if chosen:
                break
        if chosen is None:
            raise PairsExhaustedError("no admissible image pair remains")

        left, right = chosen if self._rng.random() < 0.5 else chosen[::-1]
        now = self.clock()
        session = PairSession(
            session_id=f"s{self._session_counter:08d}",
            left_id=left,
            right_id=right,
            issued_at=now,
            expires_at=now + timedelta(seconds=self.policy.session_ttl_s),
        )
        self._session_counter += 1
        self.sessions[session.session_id] = session
        for i in chosen:
            self._participation[i] = self._participation.get(i, 0) + 1
        return session

    def _admissible(self, a: str, b: str, issued: set[tuple[str, str]]) -> bool:
        pair = (a, b) if a < b else (b, a)
        if pair in self._voted_pairs or pair in issued:
            return False
        ok = self._distance_ok.get(pair)
        if ok is None:
            ia, ib = self.store.images[a], self.store.images[b]
            ok = haversine_m(ia.lat, ia.lon, ib.lat, ib.lon) >= self.policy.min_pair_distance_m
            self._distance_ok[pair] = ok
        return ok

    def _purge_expired(self) -> None:
        now = self.clock()
        for sid in [s for s, sess in self.sessions.items() if sess.expires_at <= now]:
            sess = self.sessions.pop(sid)
            for i in (sess.left_id, sess.right_id):
                self._participation[i] = self._participation.get(i, 1) - 1

    # -- vote submission -----------------------------------------------------

    def submit_vote(self, session_id: str, click: str,
                    on_vote: Callable[[Vote], None] | None = None) -> Vote:
        """Turn a click into a coded vote and record it.

        on_vote, when given, runs after validation but before the counters
        mutate; the API service uses it to append the vote durably first.
        """
        if click not in CLICK_TO_CODE:
            raise InvalidVoteError(f"unknown click {click!r}")
        if session_id in self._consumed:
            raise AlreadyVotedError(f"session {session_id!r} already voted")
        session = self.sessions.get(session_id)
        if session is None:
            raise SessionError(f"unknown session {session_id!r}")
        if session.expires_at <= self.clock():
            self._purge_expired()
            raise SessionError(f"session {session_id!r} expired")

        vote = Vote(
            vote_id=self.store.next_vote_id(),
            left_id=session.left_id,
            right_id=session.right_id,
            code=CLICK_TO_CODE[click],
            source="human",
            session_id=session_id,
            ts=self.clock(),
        )
        if on_vote is not None:
            on_vote(vote)
        self.store.record_vote(vote)
        del self.sessions[session_id]
        self._consumed.add(session_id)
        self._voted_pairs.add(vote.unordered_pair())
        # Participation was charged at issue time; the vote replaces the session.
        return vote

    def participation_counts(self) -> dict[str, int]:
        return dict(self._participation)


def housekeep(votes: Iterable[Vote], policy: PolicyConfig,
              images: dict[str, StreetImage],
              duplicates: str = "keep-earliest") -> tuple[list[Vote], HousekeepReport]:
    """Clean a vote log: drop self-pairs, near pairs, and repeated pairs.

    Pure function over the inputs. Repeated unordered pairs keep the earliest
    vote ("keep-earliest") or are dropped entirely ("drop-all"). Votes whose
    images are absent from `images` cannot be distance-checked and are kept.
    """
    if duplicates not in ("keep-earliest", "drop-all"):
        raise ValueError(f"unknown duplicates mode {duplicates!r}")
    report = HousekeepReport()

    survivors: list[Vote] = []
    for vote in votes:
        if vote.left_id == vote.right_id:
            report.removed_self += 1
            continue
        li, ri = images.get(vote.left_id), images.get(vote.right_id)
        if li is not None and ri is not None:
            if haversine_m(li.lat, li.lon, ri.lat, ri.lon) < policy.min_pair_distance_m:
                report.removed_near += 1
                continue
        survivors.append(vote)

    order = sorted(range(len(survivors)), key=lambda i: (survivors[i].ts, i))
    first_index: dict[tuple[str, str], int] = {}
    multiplicity: dict[tuple[str, str], int] = {}
    for i in order:
        pair = survivors[i].unordered_pair()
        multiplicity[pair] = multiplicity.get(pair, 0) + 1
        first_index.setdefault(pair, i)

    kept: list[Vote] = []
    for i, vote in enumerate(survivors):
        pair = vote.unordered_pair()
        if multiplicity[pair] > 1 and duplicates == "drop-all":
            report.removed_duplicate += 1
            continue
        if i != first_index[pair]:
            report.removed_duplicate += 1
            continue
        kept.append(vote)

    report.kept = len(kept)
    return kept, report
