"""Fingerprint database with exact max-overlap matching.

An inverted index (digest -> query ids) answers "does any stored
fingerprint share more than t digests with this one" in time proportional
to the postings touched, which on non-colliding traffic is a handful of
dictionary probes per query regardless of database size. Adversarially
hot digests degrade to the posting-list length; the periodic salt refresh
bounds that exposure per epoch.
"""

from __future__ import annotations

import sys
import threading
from dataclasses import dataclass

from .errors import CapacityExceeded, ConfigError
from .fingerprint import SALT_SIZE, Fingerprint

DEFAULT_CAPACITY = 10_000_000
# Declared per-posting overhead bound for memory accounting tests: digest
# payload is accounted separately, this covers dict slot, key object, list
# slot and the qid int. Measured CPython numbers sit near 200.
POSTING_OVERHEAD_BYTES = 320


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one fingerprint against the store."""

    max_overlap: int
    best_match: int | None
    flagged: bool


class FingerprintStore:
    """Inverted index over stored fingerprints with strict-threshold flagging.

    Overlap equal to the threshold does not flag; overlap of threshold + 1
    does. Ties on overlap report the lowest (earliest) query id.
    """

    def __init__(self, threshold: int, salt: bytes, capacity: int = DEFAULT_CAPACITY):
        if threshold < 0:
            raise ConfigError(f"threshold must be >= 0, got {threshold}")
        if len(salt) != SALT_SIZE:
            raise ConfigError(f"salt must be {SALT_SIZE} bytes, got {len(salt)}")
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        self.threshold = threshold
        self.salt = salt
        self.capacity = capacity
        self.epoch = 0
        self.count = 0
        self._index: dict[bytes, list[int]] = {}
        self._next_qid = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self.count

    def max_overlap(self, fp: Fingerprint) -> MatchResult:
        """Exact maximum digest overlap with any stored fingerprint.

        Counts per-query frequencies across the posting lists of the
        fingerprint's digests; the store is not modified.
        """
        with self._lock:
            return self._max_overlap_locked(fp)

    def _max_overlap_locked(self, fp: Fingerprint) -> MatchResult:
        counts: dict[int, int] = {}
        index = self._index
        for digest in fp.digests:
            postings = index.get(digest)
            if postings:
                for qid in postings:
                    counts[qid] = counts.get(qid, 0) + 1
        if not counts:
            return MatchResult(0, None, False)
        best_qid, best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
        return MatchResult(best, best_qid, best > self.threshold)

    def insert(self, fp: Fingerprint) -> int:
        """Store a fingerprint, returning its assigned query id."""
        with self._lock:
            return self._insert_locked(fp)

    def _insert_locked(self, fp: Fingerprint) -> int:
        if self.count >= self.capacity:
            raise CapacityExceeded(
                f"store holds {self.count} fingerprints; configure a reset policy"
            )
        qid = self._next_qid
        self._next_qid += 1
        index = self._index
        for digest in fp.digests:
            postings = index.get(digest)
            if postings is None:
                index[digest] = [qid]
            else:
                postings.append(qid)
        self.count += 1
        return qid

    def check_and_insert(self, fp: Fingerprint, store_flagged: bool = True) -> MatchResult:
        """Match then insert, atomically; returns the pre-insert result.

        The query never matches itself because the check runs first. With
        store_flagged=False a flagged fingerprint is not stored (drop mode);
        the default keeps it so later near-duplicates still match.
        """
        with self._lock:
            result = self._max_overlap_locked(fp)
            if store_flagged or not result.flagged:
                self._insert_locked(fp)
            return result

    def reset(self, new_salt: bytes) -> None:
        """Forget all fingerprints, bump the epoch, install a fresh salt."""
        if len(new_salt) != SALT_SIZE:
            raise ConfigError(f"salt must be {SALT_SIZE} bytes, got {len(new_salt)}")
        with self._lock:
            self._index.clear()
            self.count = 0
            self.epoch += 1
            self.salt = new_salt
            self._next_qid = 0

    def fingerprints(self) -> list[tuple[int, tuple[bytes, ...]]]:
        """Stored fingerprints as (qid, digests descending), ordered by qid.

        Reconstructed from the inverted index; digest order within a
        fingerprint is canonical (descending), matching how fingerprints
        are built, so serialization round-trips byte-identically.
        """
        per_qid: dict[int, list[bytes]] = {}
        for digest, postings in self._index.items():
            for qid in postings:
                per_qid.setdefault(qid, []).append(digest)
        out = []
        for qid in sorted(per_qid):
            digests = per_qid[qid]
            digests.sort(reverse=True)
            out.append((qid, tuple(digests)))
        return out

    def approx_memory_bytes(self) -> int:
        """Shallow-walk estimate of index memory for accounting tests."""
        total = sys.getsizeof(self._index)
        getsizeof = sys.getsizeof
        for digest, postings in self._index.items():
            total += getsizeof(digest) + getsizeof(postings)
            for qid in postings:
                total += getsizeof(qid)
        return total
