"""Binary and text file formats.

All binary formats are fixed-layout big-endian and round-trip
byte-identically: fingerprint files (BLFP), store snapshots (BLDB), and
labeled query streams (BLQS). Images come in as binary PGM (P5) or PPM
(P6); configs and experiment specs are flat key=value text.
"""

from __future__ import annotations

import io
import struct

from .detector import QueryRecord
from .errors import FormatError, UnsupportedFormat
from .fingerprint import DIGEST_SIZE, SALT_SIZE, DetectorConfig, Fingerprint, QueryImage
from .simulate import ExperimentSpec, TraceKind, TraceSpec
from .store import FingerprintStore

FINGERPRINT_MAGIC = b"BLFP"
STORE_MAGIC = b"BLDB"
STREAM_MAGIC = b"BLQS"
FORMAT_VERSION = 1


def _read_exact(stream: io.BufferedIOBase, size: int, what: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise FormatError(f"truncated file while reading {what}")
    return data


# --- fingerprint files -------------------------------------------------

def write_fingerprint(fp: Fingerprint, stream: io.BufferedIOBase) -> None:
    stream.write(FINGERPRINT_MAGIC)
    stream.write(struct.pack(">BH", FORMAT_VERSION, len(fp.digests)))
    for digest in fp.digests:
        stream.write(digest)


def read_fingerprint(stream: io.BufferedIOBase) -> Fingerprint:
    magic = _read_exact(stream, 4, "magic")
    if magic != FINGERPRINT_MAGIC:
        raise UnsupportedFormat(f"bad fingerprint magic {magic!r}")
    version, count = struct.unpack(">BH", _read_exact(stream, 3, "header"))
    if version != FORMAT_VERSION:
        raise UnsupportedFormat(f"unsupported fingerprint version {version}")
    digests = tuple(
        _read_exact(stream, DIGEST_SIZE, f"digest {i}") for i in range(count)
    )
    for a, b in zip(digests, digests[1:]):
        if b >= a:
            raise FormatError("fingerprint digests are not strictly descending")
    return Fingerprint(digests, count)


def fingerprint_to_bytes(fp: Fingerprint) -> bytes:
    buf = io.BytesIO()
    write_fingerprint(fp, buf)
    return buf.getvalue()


# --- store snapshots ----------------------------------------------------

def write_store(store: FingerprintStore, stream: io.BufferedIOBase) -> None:
    entries = store.fingerprints()
    stream.write(STORE_MAGIC)
    stream.write(struct.pack(">BI", FORMAT_VERSION, store.epoch))
    stream.write(store.salt)
    stream.write(struct.pack(">Q", len(entries)))
    for qid, digests in entries:
        stream.write(struct.pack(">QH", qid, len(digests)))
        for digest in digests:
            stream.write(digest)


def read_store(
    stream: io.BufferedIOBase, threshold: int, capacity: int | None = None
) -> FingerprintStore:
    """Rebuild a store from a snapshot; matching behavior is identical."""
    magic = _read_exact(stream, 4, "magic")
    if magic != STORE_MAGIC:
        raise UnsupportedFormat(f"bad store magic {magic!r}")
    version, epoch = struct.unpack(">BI", _read_exact(stream, 5, "header"))
    if version != FORMAT_VERSION:
        raise UnsupportedFormat(f"unsupported store version {version}")
    salt = _read_exact(stream, SALT_SIZE, "salt")
    (count,) = struct.unpack(">Q", _read_exact(stream, 8, "count"))
    kwargs = {} if capacity is None else {"capacity": capacity}
    store = FingerprintStore(threshold, salt, **kwargs)
    store.epoch = epoch
    next_qid = 0
    for i in range(count):
        qid, digest_count = struct.unpack(">QH", _read_exact(stream, 10, f"entry {i}"))
        digests = tuple(
            _read_exact(stream, DIGEST_SIZE, f"entry {i} digest {j}")
            for j in range(digest_count)
        )
        for digest in digests:
            store._index.setdefault(digest, []).append(qid)
        store.count += 1
        next_qid = max(next_qid, qid + 1)
    store._next_qid = next_qid
    return store


# --- query streams ------------------------------------------------------

def write_stream(records: list[QueryRecord], stream: io.BufferedIOBase) -> None:
    stream.write(STREAM_MAGIC)
    stream.write(struct.pack(">BI", FORMAT_VERSION, len(records)))
    for record in records:
        img = record.image
        label = 1 if record.is_attack else 0
        trace_id = record.trace_id if record.is_attack else 0
        step = record.step_index if record.is_attack else 0
        stream.write(
            struct.pack(
                ">BIIHHB", label, trace_id, step, img.height, img.width, img.channels
            )
        )
        stream.write(img.pixels)


def read_stream(stream: io.BufferedIOBase) -> list[QueryRecord]:
    magic = _read_exact(stream, 4, "magic")
    if magic != STREAM_MAGIC:
        raise UnsupportedFormat(f"bad stream magic {magic!r}")
    version, count = struct.unpack(">BI", _read_exact(stream, 5, "header"))
    if version != FORMAT_VERSION:
        raise UnsupportedFormat(f"unsupported stream version {version}")
    records = []
    for i in range(count):
        label, trace_id, step, height, width, channels = struct.unpack(
            ">BIIHHB", _read_exact(stream, 14, f"record {i} header")
        )
        if label not in (0, 1):
            raise FormatError(f"record {i} has invalid label byte {label}")
        pixels = _read_exact(stream, height * width * channels, f"record {i} pixels")
        records.append(
            QueryRecord(
                QueryImage(height, width, channels, pixels),
                trace_id=trace_id if label else None,
                step_index=step if label else None,
                timestamp=i,
            )
        )
    return records


# --- PGM / PPM images ---------------------------------------------------

def _read_pnm_token(stream: io.BufferedIOBase) -> bytes:
    """Next whitespace-delimited token, skipping '#' comment lines."""
    token = b""
    while True:
        ch = stream.read(1)
        if not ch:
            if token:
                return token
            raise FormatError("truncated image header")
        if ch == b"#":
            while ch not in (b"", b"\n"):
                ch = stream.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_image(stream: io.BufferedIOBase) -> QueryImage:
    """Binary PGM (P5, grayscale) or PPM (P6, RGB) with 8-bit samples."""
    magic = _read_exact(stream, 2, "image magic")
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise UnsupportedFormat(f"unsupported image magic {magic!r}; need binary PGM or PPM")
    width = _to_int(_read_pnm_token(stream).decode("ascii", "replace"), "width")
    height = _to_int(_read_pnm_token(stream).decode("ascii", "replace"), "height")
    maxval = _to_int(_read_pnm_token(stream).decode("ascii", "replace"), "maxval")
    if not 0 < maxval <= 255:
        raise UnsupportedFormat(f"only 8-bit samples supported, maxval={maxval}")
    pixels = _read_exact(stream, height * width * channels, "pixel data")
    return QueryImage(height, width, channels, pixels)


def write_image(img: QueryImage, stream: io.BufferedIOBase) -> None:
    magic = b"P5" if img.channels == 1 else b"P6"
    stream.write(magic + b"\n%d %d\n255\n" % (img.width, img.height))
    stream.write(img.pixels)


# --- key=value configs --------------------------------------------------

def _parse_kv(text: str, what: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{what} line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _to_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise FormatError(f"{key} must be an integer, got {value!r}") from exc


def _to_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise FormatError(f"{key} must be a number, got {value!r}") from exc


_CONFIG_KEYS = {"q", "w", "p", "s", "t", "salt_hex", "reset_interval"}


def read_config(text: str) -> DetectorConfig:
    values = _parse_kv(text, "config")
    unknown = set(values) - _CONFIG_KEYS
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key in ("q", "w", "p", "s", "t"):
        if key in values:
            kwargs[key] = _to_int(values[key], key)
    if "salt_hex" in values:
        try:
            kwargs["salt"] = bytes.fromhex(values["salt_hex"])
        except ValueError as exc:
            raise FormatError(f"salt_hex is not valid hex: {exc}") from exc
    if "reset_interval" in values:
        kwargs["reset_interval"] = _to_int(values["reset_interval"], "reset_interval")
    return DetectorConfig(**kwargs)


def write_config(cfg: DetectorConfig) -> str:
    lines = [
        f"q={cfg.q}",
        f"w={cfg.w}",
        f"p={cfg.p}",
        f"s={cfg.s}",
        f"t={cfg.t}",
        f"salt_hex={cfg.salt.hex()}",
    ]
    if cfg.reset_interval is not None:
        lines.append(f"reset_interval={cfg.reset_interval}")
    return "\n".join(lines) + "\n"


_EXPERIMENT_KEYS = {
    "benign_count",
    "benign_seed",
    "interleave_seed",
    "dims",
    "trace_count",
    "trace_kind",
    "trace_length",
    "trace_budget",
    "trace_seed",
    "mitigation",
    "reset_interval",
}


def _parse_dims(value: str) -> tuple[int, int, int]:
    parts = value.lower().split("x")
    if len(parts) != 3:
        raise FormatError(f"dims must look like 32x32x3, got {value!r}")
    h, w, c = (_to_int(p, "dims") for p in parts)
    return (h, w, c)


def read_experiment(text: str, detector: DetectorConfig) -> ExperimentSpec:
    """Experiment spec from flat key=value text; traces are uniform."""
    values = _parse_kv(text, "experiment spec")
    unknown = set(values) - _EXPERIMENT_KEYS
    if unknown:
        raise FormatError(f"unknown experiment keys: {sorted(unknown)}")
    dims = _parse_dims(values.get("dims", "32x32x3"))
    trace_count = _to_int(values.get("trace_count", "0"), "trace_count")
    trace_seed = _to_int(values.get("trace_seed", "100"), "trace_seed")
    try:
        kind = TraceKind(values.get("trace_kind", "probe_pair"))
    except ValueError as exc:
        raise FormatError(f"unknown trace_kind {values.get('trace_kind')!r}") from exc
    traces = tuple(
        TraceSpec(
            kind=kind,
            length=_to_int(values.get("trace_length", "200"), "trace_length"),
            budget=_to_float(values.get("trace_budget", "12"), "trace_budget"),
            seed=trace_seed + i,
            dims=dims,
        )
        for i in range(trace_count)
    )
    mitigation = values.get("mitigation", "on").lower()
    if mitigation not in ("on", "off"):
        raise FormatError(f"mitigation must be on or off, got {mitigation!r}")
    reset_interval = (
        _to_int(values["reset_interval"], "reset_interval")
        if "reset_interval" in values
        else None
    )
    return ExperimentSpec(
        detector=detector,
        benign_count=_to_int(values.get("benign_count", "0"), "benign_count"),
        traces=traces,
        interleave_seed=_to_int(values.get("interleave_seed", "0"), "interleave_seed"),
        benign_seed=_to_int(values.get("benign_seed", "1"), "benign_seed"),
        benign_dims=dims,
        mitigation=mitigation == "on",
        reset_interval=reset_interval,
    )


def write_experiment(spec: ExperimentSpec) -> str:
    """Inverse of read_experiment for uniform-trace specs."""
    lines = [
        f"benign_count={spec.benign_count}",
        f"benign_seed={spec.benign_seed}",
        f"interleave_seed={spec.interleave_seed}",
        "dims=%dx%dx%d" % spec.benign_dims,
        f"trace_count={len(spec.traces)}",
        f"mitigation={'on' if spec.mitigation else 'off'}",
    ]
    if spec.traces:
        first = spec.traces[0]
        lines += [
            f"trace_kind={first.kind.value}",
            f"trace_length={first.length}",
            f"trace_budget={first.budget:g}",
            f"trace_seed={first.seed}",
        ]
    if spec.reset_interval is not None:
        lines.append(f"reset_interval={spec.reset_interval}")
    return "\n".join(lines) + "\n"
