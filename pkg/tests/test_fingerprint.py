"""Fingerprint pipeline: quantization, window hashing, top-digest selection."""

import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queryguard import (
    ConfigError,
    DetectorConfig,
    InputTooSmall,
    QueryImage,
    digest_value,
    fingerprint,
    next_salt,
    quantize,
    select_fingerprint,
    window_count,
    window_hashes,
)

SALT = bytes(range(16))
CFG = DetectorConfig(salt=SALT)


def make_image(pixels: bytes, width: int | None = None) -> QueryImage:
    width = width if width is not None else len(pixels)
    assert len(pixels) % width == 0
    return QueryImage(len(pixels) // width, width, 1, pixels)


def rand_image(rng: np.random.Generator, h=8, w=8, c=3) -> QueryImage:
    return QueryImage.from_array(rng.integers(0, 256, (h, w, c)).astype(np.uint8))


class TestQuantize:
    def test_max_value_bucket(self):
        img = make_image(bytes([255]), width=1)
        assert quantize(img, 50) == bytes([5])

    def test_zero_bucket(self):
        img = make_image(bytes([0]), width=1)
        assert quantize(img, 50) == bytes([0])

    def test_output_range_and_length(self):
        img = make_image(bytes(range(256)), width=16)
        out = quantize(img, 50)
        assert len(out) == 256
        assert max(out) == 255 // 50

    def test_absorption_exhaustive_small_offsets(self):
        # Any two intensities <= 12 apart, both >= 13 away from a multiple
        # of 50, land in the same bucket.
        q = 50
        for v in range(256):
            for delta in range(-12, 13):
                u = v + delta
                if not 0 <= u <= 255:
                    continue
                if v % q < 13 or v % q > q - 13:
                    continue
                if u % q < 13 or u % q > q - 13:
                    continue
                assert v // q == u // q, (v, u)

    def test_identical_buckets_identical_fingerprints(self):
        rng = np.random.default_rng(7)
        base = rng.integers(0, 256, (6, 6, 3)).astype(np.int32)
        # nudge pixels without leaving their bucket (or the 8-bit range)
        jitter = rng.integers(0, 3, base.shape)
        ok = ((base % 50) + jitter <= 49) & (base + jitter <= 255)
        moved = np.where(ok, base + jitter, base).astype(np.uint8)
        base = base.astype(np.uint8)
        a = QueryImage.from_array(base)
        b = QueryImage.from_array(moved)
        assert quantize(a, 50) == quantize(b, 50)
        assert fingerprint(a, CFG) == fingerprint(b, CFG)


class TestWindowHashes:
    def test_cifar_scale_window_count(self):
        assert window_count(3072, 20, 1) == 3053

    def test_single_window(self):
        qb = bytes(range(20))
        for p in (1, 3, 20):
            assert len(window_hashes(qb, 20, p, SALT)) == 1

    def test_stride_window_positions(self):
        qb = bytes(range(10))
        hashes = window_hashes(qb, 4, 3, SALT)
        assert len(hashes) == 3
        expected = [
            hashlib.sha3_256(SALT + qb[off : off + 4]).digest() for off in (0, 3, 6)
        ]
        assert hashes == expected

    def test_digest_is_salted_sha3(self):
        qb = bytes([1, 2, 3, 4])
        (digest,) = window_hashes(qb, 4, 1, SALT)
        assert digest == hashlib.sha3_256(SALT + qb).digest()

    def test_too_small_raises(self):
        with pytest.raises(InputTooSmall):
            window_hashes(bytes(5), 6, 1, SALT)

    def test_count_formula_matches(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(5, 200))
            w = int(rng.integers(1, n + 1))
            p = int(rng.integers(1, w + 1))
            qb = bytes(rng.integers(0, 256, n).astype(np.uint8))
            assert len(window_hashes(qb, w, p, SALT)) == window_count(n, w, p)


class TestSelectFingerprint:
    def test_dedup_and_top3(self):
        hashes = [bytes([v]) * 32 for v in (9, 7, 7, 3, 1)]
        fp = select_fingerprint(hashes, 3)
        assert [d[0] for d in fp.digests] == [9, 7, 3]
        assert fp.source_n == 5

    def test_exactly_s_distinct(self):
        hashes = [bytes([v]) * 32 for v in range(5)]
        fp = select_fingerprint(hashes, 5)
        assert list(fp.digests) == sorted(hashes, reverse=True)

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(123)
        buf = rng.bytes(32 * 3053)
        hashes = [buf[i : i + 32] for i in range(0, len(buf), 32)]
        fp = select_fingerprint(hashes, 50)
        oracle = sorted(set(hashes), reverse=True)[:50]
        assert list(fp.digests) == oracle
        # bytes order equals big-endian numeric order
        values = [digest_value(d) for d in fp.digests]
        assert values == sorted(values, reverse=True)

    def test_shorter_than_s_on_low_entropy(self):
        hashes = [bytes([1]) * 32] * 10
        fp = select_fingerprint(hashes, 50)
        assert len(fp) == 1
        assert fp.source_n == 10


class TestFingerprint:
    def test_deterministic(self):
        rng = np.random.default_rng(5)
        img = rand_image(rng)
        assert fingerprint(img, CFG) == fingerprint(img, CFG)

    def test_salt_override_changes_digests(self):
        rng = np.random.default_rng(6)
        img = rand_image(rng)
        a = fingerprint(img, CFG)
        b = fingerprint(img, CFG, salt=next_salt(SALT))
        assert a != b

    def test_salt_sensitivity_monte_carlo(self):
        # Fresh salts rerandomize the digest ranking, so two fingerprints of
        # the same image overlap like two random s-subsets: mean near s^2/n.
        rng = np.random.default_rng(42)
        img = rand_image(rng, 16, 16, 3)
        cfg = CFG
        distinct = len(set(window_hashes(quantize(img, cfg.q), cfg.w, cfg.p, SALT)))
        pairs = 1000
        overlaps = []
        salt_a, salt_b = SALT, next_salt(SALT)
        for _ in range(pairs):
            fa = set(fingerprint(img, cfg, salt=salt_a).digests)
            fb = set(fingerprint(img, cfg, salt=salt_b).digests)
            overlaps.append(len(fa & fb))
            salt_a, salt_b = next_salt(salt_b), next_salt(next_salt(salt_b))
        mean = sum(overlaps) / pairs
        expected = cfg.s * cfg.s / distinct
        stderr = (np.std(overlaps, ddof=1) / np.sqrt(pairs)) or 1.0 / pairs
        assert mean <= expected + 3 * stderr

    def test_single_pixel_change_bounded_effect(self):
        # One pixel moved across a bucket boundary disturbs at most w window
        # hashes, so the fingerprints still overlap in at least s - w digests.
        rng = np.random.default_rng(9)
        arr = rng.integers(0, 256, (32, 32, 3)).astype(np.uint8)
        img = QueryImage.from_array(arr)
        changed = arr.copy()
        changed[10, 10, 1] = (changed[10, 10, 1] // 50) * 50 + 50 if changed[10, 10, 1] < 200 else 0
        img2 = QueryImage.from_array(changed)
        ha = window_hashes(quantize(img, 50), 20, 1, SALT)
        hb = window_hashes(quantize(img2, 50), 20, 1, SALT)
        diff = len(set(ha) - set(hb))
        assert diff <= 20
        fa = select_fingerprint(ha, 50)
        fb = select_fingerprint(hb, 50)
        assert len(set(fa.digests) & set(fb.digests)) >= 50 - 20

    def test_locality_bound_random_edits(self):
        # k changed pixels disturb at most k * ceil(w / p) window hashes.
        rng = np.random.default_rng(10)
        for _ in range(100):
            n = int(rng.integers(40, 300))
            w = int(rng.integers(2, 25))
            p = int(rng.integers(1, w + 1))
            if n < w:
                continue
            base = rng.integers(0, 256, n).astype(np.uint8)
            k = int(rng.integers(1, 6))
            positions = rng.choice(n, size=k, replace=False)
            edited = base.copy()
            edited[positions] = rng.integers(0, 256, k).astype(np.uint8)
            ha = set(window_hashes(base.tobytes(), w, p, SALT))
            hb = set(window_hashes(edited.tobytes(), w, p, SALT))
            bound = k * -(-w // p)
            assert len(ha - hb) <= bound

    def test_length_never_exceeds_min_s_n(self):
        rng = np.random.default_rng(11)
        img = rand_image(rng, 3, 7, 1)
        fp = fingerprint(img, CFG)
        n = window_count(21, CFG.w, CFG.p)
        assert len(fp) <= min(CFG.s, n)

    def test_input_too_small_propagates(self):
        img = QueryImage(2, 2, 1, bytes(4))
        with pytest.raises(InputTooSmall):
            fingerprint(img, CFG)


class TestDetectorConfig:
    def test_defaults(self):
        assert (CFG.q, CFG.w, CFG.p, CFG.s, CFG.t) == (50, 20, 1, 50, 25)

    def test_task_presets(self):
        assert DetectorConfig.for_task("mnist", salt=SALT).w == 50
        assert DetectorConfig.for_task("imagenet", salt=SALT).w == 50
        assert DetectorConfig.for_task("cifar10", salt=SALT).w == 20

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"q": 0},
            {"q": 256},
            {"p": 0},
            {"p": 21},
            {"t": 50},
            {"t": -1},
            {"s": 0},
            {"salt": b"short"},
            {"reset_interval": 0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            DetectorConfig(**{"salt": SALT, **kwargs})


class TestQueryImage:
    def test_pixel_length_validated(self):
        with pytest.raises(ConfigError):
            QueryImage(2, 2, 3, bytes(5))

    def test_channels_validated(self):
        with pytest.raises(ConfigError):
            QueryImage(2, 2, 2, bytes(8))

    def test_array_round_trip(self):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 256, (5, 4, 3)).astype(np.uint8)
        assert np.array_equal(QueryImage.from_array(arr).to_array(), arr)


@given(
    data=st.binary(min_size=20, max_size=120),
    q=st.integers(min_value=1, max_value=255),
)
@settings(max_examples=60, deadline=None)
def test_quantize_bucket_property(data, q):
    img = make_image(data)
    out = quantize(img, q)
    assert all(out[i] == data[i] // q for i in range(len(data)))
