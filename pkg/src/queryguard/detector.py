"""End-to-end detection pipeline and stream-level evaluation metrics.

process_stream fingerprints each labeled query in order, consults the
store, and applies the reject mitigation; compute_metrics turns the
verdict log into per-trace and stream-level statistics (detection rate,
coverage, queries-to-detect, false positive rate, mitigated success).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence, TextIO

from .errors import InputTooSmall, MissingLabels
from .fingerprint import DetectorConfig, QueryImage, fingerprint, next_salt
from .store import FingerprintStore


class Action(str, Enum):
    FORWARDED = "forwarded"
    REJECTED = "rejected"
    ERROR = "error"


@dataclass(frozen=True)
class QueryRecord:
    """One labeled query: benign (trace_id None) or step of an attack trace."""

    image: QueryImage
    trace_id: int | None = None
    step_index: int | None = None
    timestamp: int = 0

    @property
    def is_attack(self) -> bool:
        return self.trace_id is not None

    @property
    def label(self) -> str:
        if self.trace_id is None:
            return "benign"
        return f"attack:{self.trace_id}:{self.step_index}"


@dataclass(frozen=True)
class Verdict:
    record: QueryRecord
    flagged: bool
    overlap: int
    action: Action
    error: str | None = None


@dataclass(frozen=True)
class TraceReport:
    """Detection outcome for one attack trace."""

    trace_id: int
    length: int
    detected: bool
    queries_to_detect: int | None  # 1-based index of first flagged query
    coverage: float
    flagged_queries: int
    forwarded_queries: int
    succeeded: bool  # reached its required forwarded-query budget


@dataclass(frozen=True)
class DetectionReport:
    """Stream-level metrics plus the per-trace breakdown.

    Rates that have an empty denominator (no traces, no benign queries,
    nothing detected) are None rather than a fabricated number.
    """

    traces: tuple[TraceReport, ...]
    attack_detection_rate: float | None
    mean_queries_to_detect: float | None
    mean_coverage: float | None
    false_positive_rate: float | None
    attack_success_with_mitigation: float | None
    benign_total: int
    benign_flagged: int


def process_stream(
    stream: Iterable[QueryRecord],
    cfg: DetectorConfig,
    store: FingerprintStore | None = None,
    mitigation: bool = True,
    store_flagged: bool = True,
) -> list[Verdict]:
    """Run the detector over a stream in timestamp order.

    Every reset_interval queries the store is cleared and re-salted (salt
    chained from the current one so seeded runs stay reproducible). An
    undersized image yields an error verdict for that record; the stream
    continues. With mitigation on, flagged queries are rejected.
    """
    if store is None:
        store = FingerprintStore(cfg.t, cfg.salt)
    verdicts: list[Verdict] = []
    for position, record in enumerate(stream):
        if cfg.reset_interval and position > 0 and position % cfg.reset_interval == 0:
            store.reset(next_salt(store.salt))
        try:
            fp = fingerprint(record.image, cfg, salt=store.salt)
        except InputTooSmall as exc:
            verdicts.append(Verdict(record, False, 0, Action.ERROR, str(exc)))
            continue
        result = store.check_and_insert(fp, store_flagged=store_flagged)
        if result.flagged and mitigation:
            action = Action.REJECTED
        else:
            action = Action.FORWARDED
        verdicts.append(Verdict(record, result.flagged, result.max_overlap, action))
    return verdicts


def compute_metrics(
    verdicts: Sequence[Verdict],
    required_progress: Mapping[int, int] | None = None,
) -> DetectionReport:
    """Aggregate a verdict log into a DetectionReport.

    Per trace: detected means some query flagged before the final step;
    queries_to_detect is the 1-based index of the first flagged query
    among that trace's queries; coverage is the flagged fraction. A trace
    "succeeds" when its forwarded-query count reaches required_progress
    (defaults to the trace length, i.e. full forwarding).

    Pure function of its inputs; recomputation gives identical results.
    """
    benign_total = 0
    benign_flagged = 0
    trace_verdicts: dict[int, list[Verdict]] = {}
    for verdict in verdicts:
        record = verdict.record
        if record is None:
            raise MissingLabels("verdict carries no query record")
        if not record.is_attack:
            benign_total += 1
            if verdict.flagged:
                benign_flagged += 1
            continue
        if record.step_index is None:
            raise MissingLabels(f"attack record in trace {record.trace_id} lacks step_index")
        trace_verdicts.setdefault(record.trace_id, []).append(verdict)

    traces: list[TraceReport] = []
    for trace_id in sorted(trace_verdicts):
        entries = trace_verdicts[trace_id]
        steps = [v.record.step_index for v in entries]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise MissingLabels(f"trace {trace_id} step indices are not strictly increasing")
        length = len(entries)
        flagged_count = sum(1 for v in entries if v.flagged)
        first_flag = next(
            (pos for pos, v in enumerate(entries, start=1) if v.flagged), None
        )
        detected = first_flag is not None and first_flag < length
        forwarded = sum(1 for v in entries if v.action is Action.FORWARDED)
        required = length if required_progress is None else required_progress.get(trace_id, length)
        traces.append(
            TraceReport(
                trace_id=trace_id,
                length=length,
                detected=detected,
                queries_to_detect=first_flag,
                coverage=flagged_count / length,
                flagged_queries=flagged_count,
                forwarded_queries=forwarded,
                succeeded=forwarded >= required,
            )
        )

    detected_traces = [t for t in traces if t.detected]
    return DetectionReport(
        traces=tuple(traces),
        attack_detection_rate=len(detected_traces) / len(traces) if traces else None,
        mean_queries_to_detect=(
            sum(t.queries_to_detect for t in detected_traces) / len(detected_traces)
            if detected_traces
            else None
        ),
        mean_coverage=sum(t.coverage for t in traces) / len(traces) if traces else None,
        false_positive_rate=benign_flagged / benign_total if benign_total else None,
        attack_success_with_mitigation=(
            sum(1 for t in traces if t.succeeded) / len(traces) if traces else None
        ),
        benign_total=benign_total,
        benign_flagged=benign_flagged,
    )


def write_verdict_csv(verdicts: Sequence[Verdict], out: TextIO) -> None:
    """Verdict log: one row per query (timestamp, label, flagged, overlap, action)."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["timestamp", "label", "flagged", "overlap", "action"])
    for v in verdicts:
        writer.writerow(
            [v.record.timestamp, v.record.label, int(v.flagged), v.overlap, v.action.value]
        )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def write_report_csv(report: DetectionReport, out: TextIO) -> None:
    """Per-trace rows plus a stream summary row."""
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["trace_id", "detected", "queries_to_detect", "coverage"])
    for t in report.traces:
        writer.writerow(
            [t.trace_id, int(t.detected), _fmt(t.queries_to_detect), _fmt(t.coverage)]
        )
    writer.writerow(
        [
            "summary",
            _fmt(report.attack_detection_rate),
            _fmt(report.mean_queries_to_detect),
            _fmt(report.mean_coverage),
        ]
    )


def report_to_dict(report: DetectionReport) -> dict:
    return {
        "attack_detection_rate": report.attack_detection_rate,
        "mean_queries_to_detect": report.mean_queries_to_detect,
        "mean_coverage": report.mean_coverage,
        "false_positive_rate": report.false_positive_rate,
        "attack_success_with_mitigation": report.attack_success_with_mitigation,
        "benign_total": report.benign_total,
        "benign_flagged": report.benign_flagged,
        "traces": [
            {
                "trace_id": t.trace_id,
                "length": t.length,
                "detected": t.detected,
                "queries_to_detect": t.queries_to_detect,
                "coverage": t.coverage,
                "flagged_queries": t.flagged_queries,
                "forwarded_queries": t.forwarded_queries,
                "succeeded": t.succeeded,
            }
            for t in report.traces
        ],
    }


def write_report_json(report: DetectionReport, out: TextIO) -> None:
    json.dump(report_to_dict(report), out, indent=2, sort_keys=True)
    out.write("\n")
