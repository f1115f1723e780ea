"""Probabilistic fingerprints for image queries.

A query image is quantized, flattened to a byte sequence, hashed through a
salted sliding window (SHA3-256 over salt || window), and reduced to the
numerically largest digests. Two near-identical images keep most window
hashes in common, so their fingerprints overlap heavily, while the salt
makes individual digests unpredictable to anyone who does not hold it.
"""

from __future__ import annotations

import hashlib
import heapq
import secrets
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InputTooSmall

DIGEST_SIZE = 32  # SHA3-256 output
SALT_SIZE = 16

# Per-task sliding window sizes; large or background-heavy inputs use w=50.
TASK_WINDOW = {"mnist": 50, "gtsrb": 20, "cifar10": 20, "imagenet": 50}
TASK_DIMS = {
    "mnist": (28, 28, 1),
    "gtsrb": (32, 32, 3),
    "cifar10": (32, 32, 3),
    "imagenet": (224, 224, 3),
}


def random_salt() -> bytes:
    """A fresh 16-byte salt from the OS cryptographic RNG."""
    return secrets.token_bytes(SALT_SIZE)


def salt_from_seed(seed: int) -> bytes:
    """Deterministic salt for reproducible experiments (not for production)."""
    return hashlib.sha3_256(b"queryguard-salt" + int(seed).to_bytes(8, "big")).digest()[:SALT_SIZE]


def next_salt(salt: bytes) -> bytes:
    """Salt for the next reset epoch, chained from the current one.

    Deterministic given the initial salt so seeded runs reproduce exactly,
    yet unpredictable to anyone who does not hold the current salt.
    """
    return hashlib.sha3_256(salt + b"reset").digest()[:SALT_SIZE]


@dataclass(frozen=True)
class QueryImage:
    """Raw 8-bit image, row-major with channels interleaved per pixel."""

    height: int
    width: int
    channels: int
    pixels: bytes

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        if self.height < 1 or self.width < 1:
            raise ConfigError("image dimensions must be positive")
        expect = self.height * self.width * self.channels
        if len(self.pixels) != expect:
            raise ConfigError(
                f"pixel buffer has {len(self.pixels)} bytes, expected {expect}"
            )

    @property
    def num_elements(self) -> int:
        return self.height * self.width * self.channels

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "QueryImage":
        """Build from an (h, w) or (h, w, c) uint8 array."""
        a = np.asarray(arr)
        if a.dtype != np.uint8:
            raise ConfigError(f"expected uint8 array, got {a.dtype}")
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3:
            raise ConfigError(f"expected 2-D or 3-D array, got {a.ndim}-D")
        h, w, c = a.shape
        return cls(h, w, c, np.ascontiguousarray(a).tobytes())

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )


@dataclass(frozen=True)
class DetectorConfig:
    """Every tunable of the detector.

    q: quantization step, w: window size, p: sliding step, s: digests kept
    per fingerprint, t: strict match threshold (overlap > t flags). The
    defaults are the standard configuration used throughout the test suite.
    """

    q: int = 50
    w: int = 20
    p: int = 1
    s: int = 50
    t: int = 25
    salt: bytes = field(default_factory=random_salt)
    reset_interval: int | None = None

    def __post_init__(self):
        if not 1 <= self.q <= 255:
            raise ConfigError(f"q must be in [1, 255], got {self.q}")
        if self.w < 1:
            raise ConfigError(f"w must be >= 1, got {self.w}")
        if not 1 <= self.p <= self.w:
            raise ConfigError(f"p must be in [1, w], got p={self.p} w={self.w}")
        if self.s < 1:
            raise ConfigError(f"s must be >= 1, got {self.s}")
        if not 0 <= self.t < self.s:
            raise ConfigError(f"t must satisfy 0 <= t < s, got t={self.t} s={self.s}")
        if len(self.salt) != SALT_SIZE:
            raise ConfigError(f"salt must be {SALT_SIZE} bytes, got {len(self.salt)}")
        if self.reset_interval is not None and self.reset_interval < 1:
            raise ConfigError("reset_interval must be >= 1 when set")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "DetectorConfig":
        """Defaults with the window size appropriate for a named task."""
        key = task.lower()
        if key not in TASK_WINDOW:
            raise ConfigError(f"unknown task {task!r}; choose from {sorted(TASK_WINDOW)}")
        overrides.setdefault("w", TASK_WINDOW[key])
        return cls(**overrides)

    def with_salt(self, salt: bytes) -> "DetectorConfig":
        return replace(self, salt=salt)


@dataclass(frozen=True)
class Fingerprint:
    """Top digests of a query, strictly descending by big-endian value.

    source_n is the full window-hash count before deduplication, so callers
    can reason about how much of the hash set the fingerprint sampled.
    """

    digests: tuple[bytes, ...]
    source_n: int

    def __len__(self) -> int:
        return len(self.digests)

    @property
    def payload_size(self) -> int:
        """Serialized digest payload in bytes."""
        return DIGEST_SIZE * len(self.digests)


def window_count(num_elements: int, w: int, p: int) -> int:
    """Number of sliding windows over a sequence of num_elements bytes."""
    if num_elements < w:
        raise InputTooSmall(f"input has {num_elements} elements, window needs {w}")
    return (num_elements - w) // p + 1


def quantize(img: QueryImage, q: int) -> bytes:
    """Map each 8-bit intensity v to its bucket floor(v / q)."""
    if q < 1:
        raise ConfigError(f"q must be >= 1, got {q}")
    arr = np.frombuffer(img.pixels, dtype=np.uint8)
    return (arr // q).astype(np.uint8).tobytes()

def window_hashes(qbytes: bytes, w: int, p: int, salt: bytes) -> list[bytes]:
    """All salted window digests, in window order (may contain duplicates)."""
    n_elem = len(qbytes)
    if n_elem < w:
        raise InputTooSmall(f"input has {n_elem} elements, window needs {w}")
    base = hashlib.sha3_256(salt)  # pre-absorbed salt, copied per window
    out = []
    append = out.append
    for i in range(0, n_elem - w + 1, p):
        h = base.copy()
        h.update(qbytes[i : i + w])
        append(h.digest())
    return out


def select_fingerprint(hashes: list[bytes], s: int) -> Fingerprint:
    """Deduplicate and keep the s numerically largest digests, descending.

    32-byte digests compare lexicographically exactly as big-endian
    integers, so plain bytes ordering is the numeric ordering.
    """
    if not hashes:
        raise ValueError("cannot select a fingerprint from an empty hash set")
    top = heapq.nlargest(s, set(hashes))
    return Fingerprint(tuple(top), len(hashes))


def fingerprint(img: QueryImage, cfg: DetectorConfig, salt: bytes | None = None) -> Fingerprint:
    """Full pipeline: quantize, hash sliding windows, keep the top digests.

    Pure function of (img, cfg, salt); salt defaults to cfg.salt and can be
    overridden so stores that refresh their salt on reset reuse one config.
    """
    qbytes = quantize(img, cfg.q)
    hashes = window_hashes(qbytes, cfg.w, cfg.p, salt if salt is not None else cfg.salt)
    return select_fingerprint(hashes, cfg.s)


def digest_value(digest: bytes) -> int:
    """Digest bytes as the unsigned big-endian integer they are ordered by."""
    return int.from_bytes(digest, "big")
