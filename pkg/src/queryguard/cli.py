"""Command-line interface.

Subcommands: fingerprint (images or streams to fingerprint files), detect
(run the detector over a labeled stream), simulate (generate labeled
streams), theory (bound curves), bench (latency and storage). Exit codes:
0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats, plots
from .detector import (
    compute_metrics,
    process_stream,
    write_report_csv,
    write_report_json,
    write_verdict_csv,
)
from .errors import QueryGuardError, UnsupportedFormat
from .fingerprint import (
    DIGEST_SIZE,
    TASK_DIMS,
    TASK_WINDOW,
    DetectorConfig,
    Fingerprint,
    fingerprint,
    random_salt,
    salt_from_seed,
    window_count,
)
from .simulate import ExperimentSpec, TraceKind, TraceSpec, build_stream
from .store import FingerprintStore
from .theory import BoundParams, monte_carlo_q, q_lower, q_upper


def _parse_dims(value: str) -> tuple[int, int, int]:
    parts = value.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must look like 32x32x3, got {value!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


def _parse_salt(value: str) -> bytes:
    try:
        salt = bytes.fromhex(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not valid hex: {value!r}") from exc
    if len(salt) != 16:
        raise argparse.ArgumentTypeError("salt must be exactly 16 bytes (32 hex chars)")
    return salt


def _parse_int_list(value: str) -> list[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {value!r}") from exc


def _parse_range(value: str) -> list[int]:
    parts = value.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"range must be start:stop[:step], got {value!r}")
    start, stop = int(parts[0]), int(parts[1])
    step = int(parts[2]) if len(parts) == 3 else 1
    if step < 1:
        raise argparse.ArgumentTypeError("range step must be >= 1")
    return list(range(start, stop + 1, step))


def _resolve_config(args) -> DetectorConfig:
    """Detector config from --config file plus flag overrides.

    Salt priority: --salt-hex, then the config file's salt, then a salt
    derived from --seed, then fresh random bytes. Every other source of
    randomness is governed by --seed, so a run with --salt-hex or --seed
    is fully reproducible.
    """
    explicit_salt = False
    if getattr(args, "config", None):
        text = Path(args.config).read_text()
        cfg = formats.read_config(text)
        explicit_salt = "salt_hex" in formats._parse_kv(text, "config")
    else:
        cfg = DetectorConfig(salt=b"\x00" * 16)
    salt_hex = getattr(args, "salt_hex", None)
    if salt_hex is not None:
        cfg = cfg.with_salt(salt_hex)
    elif not explicit_salt:
        seed = getattr(args, "seed", None)
        cfg = cfg.with_salt(salt_from_seed(seed) if seed is not None else random_salt())
    if getattr(args, "reset_interval", None):
        cfg = replace(cfg, reset_interval=args.reset_interval)
    return cfg


def _sniff_input(path: Path) -> str:
    with path.open("rb") as f:
        magic = f.read(4)
    if magic[:4] == formats.STREAM_MAGIC:
        return "stream"
    if magic[:2] in (b"P5", b"P6"):
        return "image"
    raise UnsupportedFormat(f"{path}: unrecognized input format")


# --- fingerprint --------------------------------------------------------

def cmd_fingerprint(args) -> int:
    cfg = _resolve_config(args)
    source = Path(args.input)
    kind = _sniff_input(source)
    if kind == "image":
        with source.open("rb") as f:
            img = formats.read_image(f)
        fp = fingerprint(img, cfg)
        out = Path(args.out)
        with out.open("wb") as f:
            formats.write_fingerprint(fp, f)
        size = out.stat().st_size
        print(f"{out}: {len(fp)} digests, payload {fp.payload_size} B, file {size} B")
        return 0
    with source.open("rb") as f:
        records = formats.read_stream(f)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for idx, record in enumerate(records):
        fp = fingerprint(record.image, cfg)
        target = out_dir / f"query_{idx:05d}.blfp"
        with target.open("wb") as f:
            formats.write_fingerprint(fp, f)
    print(f"{out_dir}: wrote {len(records)} fingerprint files")
    return 0


# --- detect ---------------------------------------------------------------

def cmd_detect(args) -> int:
    cfg = _resolve_config(args)
    with Path(args.input).open("rb") as f:
        records = formats.read_stream(f)
    verdicts = process_stream(
        records,
        cfg,
        mitigation=args.mitigation == "on",
        store_flagged=not args.drop_flagged,
    )
    report = compute_metrics(verdicts)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    verdict_path = prefix.with_name(prefix.name + ".verdicts.csv")
    with verdict_path.open("w", newline="") as f:
        write_verdict_csv(verdicts, f)
    report_csv = prefix.with_name(prefix.name + ".report.csv")
    with report_csv.open("w", newline="") as f:
        write_report_csv(report, f)
    report_json = prefix.with_name(prefix.name + ".report.json")
    with report_json.open("w") as f:
        write_report_json(report, f)
    written = [verdict_path, report_csv, report_json]
    if not args.no_plot:
        figure = prefix.with_name(prefix.name + ".overlap.png")
        plots.plot_stream_overlap(verdicts, cfg.t, str(figure))
        written.append(figure)
    for path in written:
        print(f"wrote {path}")
    return 0


# --- simulate -------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    if args.spec:
        spec = formats.read_experiment(Path(args.spec).read_text(), cfg)
    else:
        dims = args.dims
        traces = tuple(
            TraceSpec(
                kind=TraceKind(args.kind),
                length=args.length,
                budget=args.budget,
                seed=(args.seed or 0) * 1_000_003 + 100 + i,
                dims=dims,
            )
            for i in range(args.traces)
        )
        spec = ExperimentSpec(
            detector=cfg,
            benign_count=args.benign,
            traces=traces,
            interleave_seed=args.seed or 0,
            benign_seed=(args.seed or 0) + 1,
            benign_dims=dims,
            mitigation=args.mitigation == "on",
            reset_interval=args.reset_interval,
        )
    records = build_stream(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("wb") as f:
        formats.write_stream(records, f)
    attack = sum(1 for r in records if r.is_attack)
    print(f"wrote {out}: {len(records)} records ({attack} attack, {len(records) - attack} benign)")
    return 0


# --- theory ---------------------------------------------------------------

def cmd_theory(args) -> int:
    if args.defaults_for:
        task = args.defaults_for.lower()
        h, w, c = TASK_DIMS[task]
        n_default = window_count(h * w * c, TASK_WINDOW[task], 1)
        n = args.n if args.n is not None else n_default
        s = args.s if args.s is not None else 50
        t = args.t if args.t is not None else 25
    else:
        if args.n is None or args.s is None or (args.t is None and not args.t_list):
            raise QueryGuardError("need either --defaults-for or all of --n/--s/--t")
        n, s, t = args.n, args.s, args.t
    if args.d_list is not None:
        ds = args.d_list
    elif args.d_range is not None:
        ds = args.d_range
    else:
        step = max(1, n // 60)
        ds = list(range(0, n + 1, step))
        if ds[-1] != n:
            ds.append(n)
    # a threshold sweep tabulates the detection/false-positive tradeoff so a
    # deployment can pick t against a target rate
    thresholds = args.t_list if args.t_list else [t]
    rows = []
    for t_value in thresholds:
        for d in ds:
            params = BoundParams(n, d, s, t_value)
            row = {
                "n": n,
                "d": d,
                "s": s,
                "t": t_value,
                "q_lower": q_lower(params),
                "q_upper": q_upper(params),
                "mc_estimate": None,
                "mc_stderr": None,
            }
            if args.mc:
                mc = monte_carlo_q(params, args.mc, args.seed if args.seed is not None else 0)
                row["mc_estimate"] = mc.estimate
                row["mc_stderr"] = mc.stderr
            rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["N", "D", "S", "T", "q_lower", "q_upper", "mc_estimate", "mc_stderr"])
        for row in rows:
            writer.writerow(
                [
                    row["n"],
                    row["d"],
                    row["s"],
                    row["t"],
                    f"{row['q_lower']:.17g}",
                    f"{row['q_upper']:.17g}",
                    "" if row["mc_estimate"] is None else f"{row['mc_estimate']:.17g}",
                    "" if row["mc_stderr"] is None else f"{row['mc_stderr']:.17g}",
                ]
            )
    print(f"wrote {out}: {len(rows)} rows")
    if not args.no_plot:
        figure = out.with_suffix(".png")
        plots.plot_bound_curves(rows, str(figure))
        print(f"wrote {figure}")
    return 0


# --- bench ------------------------------------------------------------------

def _random_fingerprint(rng: np.random.Generator, s: int, source_n: int) -> Fingerprint:
    buf = rng.bytes(DIGEST_SIZE * s)
    digests = {buf[i : i + DIGEST_SIZE] for i in range(0, DIGEST_SIZE * s, DIGEST_SIZE)}
    return Fingerprint(tuple(sorted(digests, reverse=True)), source_n)


def _timed_queries(store: FingerprintStore, queries: list[Fingerprint]) -> list[float]:
    times = []
    for fp in queries:
        t0 = time.perf_counter_ns()
        store.check_and_insert(fp)
        t1 = time.perf_counter_ns()
        times.append((t1 - t0) / 1e6)
    return times


def cmd_bench(args) -> int:
    h, w, c = args.dims
    cfg = DetectorConfig(salt=salt_from_seed(args.seed or 0))
    source_n = window_count(h * w * c, cfg.w, cfg.p)
    rng = np.random.default_rng(args.seed or 0)
    rows = []
    for n in args.n_range:
        store = FingerprintStore(
            cfg.t, cfg.salt, capacity=max(n + args.trials * max(1, args.threads) + 1, 1)
        )
        for _ in range(n):
            store.insert(_random_fingerprint(rng, cfg.s, source_n))
        query_batches = [
            [_random_fingerprint(rng, cfg.s, source_n) for _ in range(args.trials)]
            for _ in range(max(1, args.threads))
        ]
        if args.threads > 1:
            with ThreadPoolExecutor(max_workers=args.threads) as pool:
                per_thread = list(pool.map(lambda b: _timed_queries(store, b), query_batches))
        else:
            per_thread = [_timed_queries(store, query_batches[0])]
        payload = DIGEST_SIZE * cfg.s
        if args.threads > 1:
            for tid, times in enumerate(per_thread):
                rows.append(
                    {
                        "n": n,
                        "thread": str(tid),
                        "trials": len(times),
                        "mean_ms": statistics.fmean(times),
                        "p99_ms": float(np.percentile(times, 99)),
                        "bytes_per_fingerprint": payload,
                    }
                )
        all_times = [t for times in per_thread for t in times]
        rows.append(
            {
                "n": n,
                "thread": "all",
                "trials": len(all_times),
                "mean_ms": statistics.fmean(all_times),
                "p99_ms": float(np.percentile(all_times, 99)),
                "bytes_per_fingerprint": payload,
            }
        )
        print(
            f"n={n}: mean {rows[-1]['mean_ms']:.4f} ms, p99 {rows[-1]['p99_ms']:.4f} ms, "
            f"{payload} B/fingerprint"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["n", "thread", "trials", "mean_ms", "p99_ms", "bytes_per_fingerprint"])
        for row in rows:
            writer.writerow(
                [
                    row["n"],
                    row["thread"],
                    row["trials"],
                    f"{row['mean_ms']:.6f}",
                    f"{row['p99_ms']:.6f}",
                    row["bytes_per_fingerprint"],
                ]
            )
    print(f"wrote {out}")
    if not args.no_plot and rows:
        figure = out.with_suffix(".png")
        plots.plot_latency(rows, str(figure))
        print(f"wrote {figure}")
    return 0


# --- parser -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="queryguard",
        description="Salted probabilistic-fingerprint detection for image query streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value detector config file")
        p.add_argument("--salt-hex", type=_parse_salt, help="16-byte hash salt as hex")
        p.add_argument("--seed", type=int, help="seed for all simulated randomness")

    p = sub.add_parser("fingerprint", help="fingerprint an image or a query stream")
    add_common(p)
    p.add_argument("--input", required=True, help="PGM/PPM image or BLQS stream")
    p.add_argument("--out", required=True, help="output file (image) or directory (stream)")
    p.set_defaults(func=cmd_fingerprint)

    p = sub.add_parser("detect", help="run the detector over a labeled BLQS stream")
    add_common(p)
    p.add_argument("--input", required=True, help="BLQS stream file")
    p.add_argument("--out", required=True, help="output prefix for verdicts/report files")
    p.add_argument("--mitigation", choices=("on", "off"), default="on")
    p.add_argument("--reset-interval", type=int, help="reset the store every N queries")
    p.add_argument(
        "--drop-flagged",
        action="store_true",
        help="do not store fingerprints of flagged queries",
    )
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("simulate", help="generate a labeled benign/attack stream")
    add_common(p)
    p.add_argument("--spec", help="experiment spec file (key=value)")
    p.add_argument("--benign", type=int, default=0, help="benign query count")
    p.add_argument("--traces", type=int, default=0, help="attack trace count")
    p.add_argument(
        "--kind",
        choices=[k.value for k in TraceKind],
        default=TraceKind.PROBE_PAIR.value,
    )
    p.add_argument("--length", type=int, default=200, help="queries per trace")
    p.add_argument("--budget", type=float, default=12.0, help="trace max-norm budget (intensity)")
    p.add_argument("--dims", type=_parse_dims, default=(32, 32, 3))
    p.add_argument("--mitigation", choices=("on", "off"), default="on")
    p.add_argument("--reset-interval", type=int)
    p.add_argument("--out", required=True, help="output BLQS file")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("theory", help="tabulate flag-probability bound curves")
    p.add_argument("--n", type=int, help="full hash-set size")
    p.add_argument("--s", type=int, help="fingerprint size")
    p.add_argument("--t", type=int, help="match threshold")
    p.add_argument(
        "--defaults-for",
        choices=sorted(TASK_DIMS),
        help="derive N/S/T from a task's default configuration",
    )
    p.add_argument("--d-range", type=_parse_range, help="hash differences start:stop[:step]")
    p.add_argument("--d-list", type=_parse_int_list, help="explicit hash differences")
    p.add_argument(
        "--t-list",
        type=_parse_int_list,
        help="sweep several thresholds (tabulates the detection/FPR tradeoff)",
    )
    p.add_argument("--mc", type=int, help="Monte-Carlo trials per point (adds estimate columns)")
    p.add_argument("--seed", type=int, help="Monte-Carlo seed")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("bench", help="latency and storage benchmark")
    p.add_argument("--dims", type=_parse_dims, default=(32, 32, 3))
    p.add_argument(
        "--n-range",
        type=_parse_int_list,
        default=[1000, 10000, 100000],
        help="store sizes to benchmark, comma separated",
    )
    p.add_argument("--trials", type=int, default=200, help="queries measured per size")
    p.add_argument("--threads", type=int, default=1, help="concurrent query issuers")
    p.add_argument("--seed", type=int, help="fingerprint generation seed")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QueryGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
