"""Binary/text format round-trips; write -> read -> write must be byte-identical."""

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from queryguard import (
    DetectorConfig,
    Fingerprint,
    FingerprintStore,
    FormatError,
    QueryImage,
    QueryRecord,
    UnsupportedFormat,
    salt_from_seed,
)
from queryguard import formats

SALT = salt_from_seed(0)


def make_fp(values) -> Fingerprint:
    digests = sorted({int(v).to_bytes(32, "big") for v in values}, reverse=True)
    return Fingerprint(tuple(digests), len(values))


digest_strategy = st.lists(
    st.integers(min_value=0, max_value=2**256 - 1), min_size=1, max_size=60, unique=True
)


class TestFingerprintFormat:
    def test_layout(self):
        fp = make_fp([3, 1])
        data = formats.fingerprint_to_bytes(fp)
        assert data[:4] == b"BLFP"
        assert data[4] == 1  # version
        assert int.from_bytes(data[5:7], "big") == 2
        assert len(data) == 7 + 2 * 32

    def test_round_trip(self):
        fp = make_fp(range(50))
        data = formats.fingerprint_to_bytes(fp)
        back = formats.read_fingerprint(io.BytesIO(data))
        assert back.digests == fp.digests
        assert formats.fingerprint_to_bytes(back) == data

    def test_bad_magic(self):
        with pytest.raises(UnsupportedFormat):
            formats.read_fingerprint(io.BytesIO(b"NOPE" + bytes(10)))

    def test_truncated(self):
        data = formats.fingerprint_to_bytes(make_fp(range(5)))
        with pytest.raises(FormatError):
            formats.read_fingerprint(io.BytesIO(data[:-1]))

    def test_unsorted_rejected(self):
        bad = b"BLFP" + bytes([1]) + (2).to_bytes(2, "big")
        bad += (1).to_bytes(32, "big") + (2).to_bytes(32, "big")
        with pytest.raises(FormatError):
            formats.read_fingerprint(io.BytesIO(bad))

    @given(values=digest_strategy)
    @settings(max_examples=50, deadline=None)
    def test_round_trip_property(self, values):
        fp = make_fp(values)
        data = formats.fingerprint_to_bytes(fp)
        back = formats.read_fingerprint(io.BytesIO(data))
        assert formats.fingerprint_to_bytes(back) == data


class TestStoreFormat:
    def _store_with(self, rng, count):
        store = FingerprintStore(25, SALT)
        for _ in range(count):
            buf = rng.bytes(32 * 50)
            digests = sorted({buf[i : i + 32] for i in range(0, 1600, 32)}, reverse=True)
            store.insert(Fingerprint(tuple(digests), 50))
        return store

    def test_round_trip_identical_bytes_and_matches(self):
        rng = np.random.default_rng(1)
        store = self._store_with(rng, 20)
        buf = io.BytesIO()
        formats.write_store(store, buf)
        data = buf.getvalue()
        assert data[:4] == b"BLDB"
        loaded = formats.read_store(io.BytesIO(data), threshold=25)
        buf2 = io.BytesIO()
        formats.write_store(loaded, buf2)
        assert buf2.getvalue() == data
        # identical matching behavior
        probe = Fingerprint(store.fingerprints()[3][1], 50)
        assert loaded.max_overlap(probe) == store.max_overlap(probe)
        assert loaded.epoch == store.epoch
        assert loaded.salt == store.salt
        assert len(loaded) == len(store)

    def test_insert_after_load_continues_qids(self):
        rng = np.random.default_rng(2)
        store = self._store_with(rng, 5)
        buf = io.BytesIO()
        formats.write_store(store, buf)
        loaded = formats.read_store(io.BytesIO(buf.getvalue()), threshold=25)
        fp = Fingerprint(((123).to_bytes(32, "big"),), 1)
        assert loaded.insert(fp) == 5

    def test_bad_magic(self):
        with pytest.raises(UnsupportedFormat):
            formats.read_store(io.BytesIO(b"XXXX"), threshold=25)


class TestStreamFormat:
    def _records(self):
        rng = np.random.default_rng(3)
        recs = []
        for i in range(4):
            img = QueryImage.from_array(rng.integers(0, 256, (6, 5, 3)).astype(np.uint8))
            if i % 2:
                recs.append(QueryRecord(img, trace_id=1, step_index=i // 2, timestamp=i))
            else:
                recs.append(QueryRecord(img, timestamp=i))
        return recs

    def test_round_trip(self):
        records = self._records()
        buf = io.BytesIO()
        formats.write_stream(records, buf)
        data = buf.getvalue()
        assert data[:4] == b"BLQS"
        back = formats.read_stream(io.BytesIO(data))
        assert back == records
        buf2 = io.BytesIO()
        formats.write_stream(back, buf2)
        assert buf2.getvalue() == data

    def test_labels_preserved(self):
        back_buf = io.BytesIO()
        formats.write_stream(self._records(), back_buf)
        back = formats.read_stream(io.BytesIO(back_buf.getvalue()))
        assert [r.label for r in back] == ["benign", "attack:1:0", "benign", "attack:1:1"]

    def test_truncated_pixels(self):
        buf = io.BytesIO()
        formats.write_stream(self._records(), buf)
        with pytest.raises(FormatError):
            formats.read_stream(io.BytesIO(buf.getvalue()[:-5]))

    @given(
        h=st.integers(1, 8),
        w=st.integers(1, 8),
        c=st.sampled_from([1, 3]),
        n=st.integers(0, 5),
        seed=st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, h, w, c, n, seed):
        rng = np.random.default_rng(seed)
        records = [
            QueryRecord(
                QueryImage.from_array(rng.integers(0, 256, (h, w, c)).astype(np.uint8)),
                timestamp=i,
            )
            for i in range(n)
        ]
        buf = io.BytesIO()
        formats.write_stream(records, buf)
        assert formats.read_stream(io.BytesIO(buf.getvalue())) == records


class TestImageFormat:
    def test_pgm_round_trip(self):
        rng = np.random.default_rng(4)
        img = QueryImage.from_array(rng.integers(0, 256, (7, 9, 1)).astype(np.uint8))
        buf = io.BytesIO()
        formats.write_image(img, buf)
        assert buf.getvalue().startswith(b"P5\n9 7\n255\n")
        assert formats.read_image(io.BytesIO(buf.getvalue())) == img

    def test_ppm_round_trip(self):
        rng = np.random.default_rng(5)
        img = QueryImage.from_array(rng.integers(0, 256, (4, 3, 3)).astype(np.uint8))
        buf = io.BytesIO()
        formats.write_image(img, buf)
        assert formats.read_image(io.BytesIO(buf.getvalue())) == img

    def test_comments_and_whitespace(self):
        pixels = bytes(range(6))
        data = b"P5 # basic gray\n# a comment line\n 3\t2 \n255\n" + pixels
        img = formats.read_image(io.BytesIO(data))
        assert (img.width, img.height, img.channels) == (3, 2, 1)
        assert img.pixels == pixels

    def test_wide_samples_rejected(self):
        with pytest.raises(UnsupportedFormat):
            formats.read_image(io.BytesIO(b"P5\n2 2\n65535\n" + bytes(8)))

    def test_unknown_magic_rejected(self):
        with pytest.raises(UnsupportedFormat):
            formats.read_image(io.BytesIO(b"P3\n2 2\n255\n"))


class TestConfigFormat:
    def test_round_trip(self):
        cfg = DetectorConfig(q=40, w=30, p=2, s=60, t=20, salt=SALT, reset_interval=500)
        text = formats.write_config(cfg)
        assert formats.read_config(text) == cfg
        assert formats.write_config(formats.read_config(text)) == text

    def test_unknown_key_rejected(self):
        with pytest.raises(FormatError):
            formats.read_config("q=50\nbogus=1\n")

    def test_bad_salt_rejected(self):
        with pytest.raises(FormatError):
            formats.read_config("salt_hex=zz\n")

    def test_comments_ignored(self):
        cfg = formats.read_config("# comment\nq=10\nsalt_hex=" + SALT.hex() + "\n")
        assert cfg.q == 10


class TestExperimentFormat:
    def test_round_trip(self):
        text = (
            "benign_count=100\nbenign_seed=2\ninterleave_seed=3\ndims=16x16x3\n"
            "trace_count=2\ntrace_kind=probe_pair\ntrace_length=50\n"
            "trace_budget=12\ntrace_seed=100\nmitigation=on\nreset_interval=400\n"
        )
        cfg = DetectorConfig(salt=SALT)
        spec = formats.read_experiment(text, cfg)
        assert spec.benign_count == 100
        assert len(spec.traces) == 2
        assert spec.traces[0].seed == 100 and spec.traces[1].seed == 101
        assert spec.reset_interval == 400
        regenerated = formats.read_experiment(formats.write_experiment(spec), cfg)
        assert regenerated == spec

    def test_unknown_key_rejected(self):
        with pytest.raises(FormatError):
            formats.read_experiment("nope=1\n", DetectorConfig(salt=SALT))

    def test_bad_dims_rejected(self):
        with pytest.raises(FormatError):
            formats.read_experiment("dims=32x32\n", DetectorConfig(salt=SALT))
