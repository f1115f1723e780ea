"""Synthetic benign and attack query streams.

Attack generators are model-free: they reproduce only the geometric
structure that iterative query attacks share, namely that each query lies
within a small distance of some earlier query. That property is asserted
on every generated trace. Benign queries are smoothed noise, distinct
enough that fingerprints never collide at default settings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .detector import DetectionReport, QueryRecord, Verdict, compute_metrics, process_stream
from .errors import BudgetInfeasible, ConfigError, DomainError
from .fingerprint import DetectorConfig, QueryImage, fingerprint, next_salt, window_count
from .store import FingerprintStore

# Probe amplitude in intensity units. Gradient-probe attacks sample with a
# smoothing radius far below their outer perturbation budget; the budget in
# TraceSpec is the bound, not the amplitude.
PROBE_AMPLITUDE = 2.0
PATCH_BLOCK = 4
INTERP_SHRINK = 0.97


class TraceKind(str, Enum):
    PROBE_PAIR = "probe_pair"
    INTERPOLATION = "interpolation"
    PATCH_FLIP = "patch_flip"


@dataclass(frozen=True)
class TraceSpec:
    """Shape of one synthetic attack trace."""

    kind: TraceKind
    length: int
    budget: float  # max-norm bound, 8-bit intensity units
    seed: int
    dims: tuple[int, int, int] = (32, 32, 3)

    def __post_init__(self):
        if self.length < 2:
            raise ConfigError(f"trace length must be >= 2, got {self.length}")
        if self.budget <= 0:
            raise ConfigError(f"budget must be positive, got {self.budget}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One reproducible detection experiment."""

    detector: DetectorConfig
    benign_count: int = 0
    traces: tuple[TraceSpec, ...] = ()
    interleave_seed: int = 0
    benign_seed: int = 1
    benign_dims: tuple[int, int, int] = (32, 32, 3)
    mitigation: bool = True
    reset_interval: int | None = None

    def __post_init__(self):
        if self.benign_count < 0:
            raise ConfigError("benign_count must be >= 0")
        if self.reset_interval is not None and self.reset_interval < 1:
            raise ConfigError("reset_interval must be >= 1 when set")


def _smooth_noise(rng: np.random.Generator, dims: tuple[int, int, int]) -> np.ndarray:
    """Uniform noise through a 3x3 box filter, back to 8-bit."""
    h, w, c = dims
    noise = rng.integers(0, 256, size=(h, w, c)).astype(np.float64)
    padded = np.pad(noise, ((1, 1), (1, 1), (0, 0)), mode="edge")
    acc = np.zeros_like(noise)
    for dy in range(3):
        for dx in range(3):
            acc += padded[dy : dy + h, dx : dx + w]
    return np.clip(np.rint(acc / 9.0), 0, 255).astype(np.uint8)


def gen_benign(count: int, dims: tuple[int, int, int], seed: int) -> list[QueryRecord]:
    """Distinct natural-ish benign queries, deterministic under the seed."""
    if count < 0:
        raise ConfigError("count must be >= 0")
    rng = np.random.default_rng(seed)
    return [
        QueryRecord(QueryImage.from_array(_smooth_noise(rng, dims)), timestamp=i)
        for i in range(count)
    ]


def _linf(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.max(np.abs(a.astype(np.int16) - b.astype(np.int16))))


def _check_trace_invariant(images: list[np.ndarray], budget: int) -> None:
    """Every query past the first sits within budget of some earlier query."""
    for i in range(1, len(images)):
        if _linf(images[i], images[i - 1]) <= budget:
            continue
        if _linf(images[i], images[0]) <= budget:
            continue
        best = min(_linf(images[i], images[j]) for j in range(i))
        if best > budget:
            raise AssertionError(
                f"trace query {i} is {best} away from its nearest predecessor, budget {budget}"
            )


def gen_attack_trace(spec: TraceSpec, trace_id: int = 0) -> list[QueryRecord]:
    """Generate one labeled attack trace obeying the closeness invariant."""
    if spec.budget < 1.0:
        raise BudgetInfeasible(
            f"budget {spec.budget} is below one intensity unit; 8-bit pixels cannot move"
        )
    rng = np.random.default_rng(spec.seed)
    amp = int(math.floor(spec.budget))
    base = _smooth_noise(rng, spec.dims).astype(np.int16)

    if spec.kind is TraceKind.PROBE_PAIR:
        images = [base.copy()]
        probe = min(PROBE_AMPLITUDE, spec.budget)
        while len(images) < spec.length:
            direction = rng.standard_normal(spec.dims)
            scaled = direction * (probe / max(np.abs(direction).max(), 1e-12))
            offset = np.clip(np.rint(scaled), -amp, amp).astype(np.int16)
            images.append(base + offset)
            if len(images) < spec.length:
                images.append(base - offset)
    elif spec.kind is TraceKind.INTERPOLATION:
        target = _smooth_noise(rng, spec.dims).astype(np.int16)
        diff = base - target
        max_gap = int(np.abs(diff).max())
        # alpha step sized so each rounded move stays within the budget
        # (one unit of headroom absorbs the rounding).
        step = (amp - 1) / max_gap if max_gap > 0 else 0.0
        images = [target.copy()]
        alpha = 0.0
        for _ in range(1, spec.length):
            alpha = min(1.0, alpha + step)
            images.append(np.rint(target + alpha * diff).astype(np.int16))
            step *= INTERP_SHRINK
    elif spec.kind is TraceKind.PATCH_FLIP:
        h, w, _ = spec.dims
        block = min(PATCH_BLOCK, h, w)
        images = [base.copy()]
        for _ in range(1, spec.length):
            img = base.copy()
            by = int(rng.integers(0, h - block + 1))
            bx = int(rng.integers(0, w - block + 1))
            sign = 1 if rng.random() < 0.5 else -1
            img[by : by + block, bx : bx + block, :] += sign * amp
            images.append(img)
    else:
        raise ConfigError(f"unknown trace kind {spec.kind!r}")

    clipped = [np.clip(img, 0, 255).astype(np.uint8) for img in images]
    _check_trace_invariant(clipped, amp)
    return [
        QueryRecord(
            QueryImage.from_array(img),
            trace_id=trace_id,
            step_index=i,
            timestamp=i,
        )
        for i, img in enumerate(clipped)
    ]


def interleave(
    benign: list[QueryRecord], traces: list[list[QueryRecord]], seed: int
) -> list[QueryRecord]:
    """Seeded uniform shuffle that preserves order within each source."""
    sources = [list(benign)] + [list(t) for t in traces]
    tags = np.concatenate(
        [np.full(len(src), idx, dtype=np.int64) for idx, src in enumerate(sources)]
    ) if sources else np.empty(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    rng.shuffle(tags)
    iters = [iter(src) for src in sources]
    return [
        replace(next(iters[int(tag)]), timestamp=pos) for pos, tag in enumerate(tags)
    ]


def build_stream(spec: ExperimentSpec) -> list[QueryRecord]:
    """Materialize the experiment's full labeled query stream."""
    benign = gen_benign(spec.benign_count, spec.benign_dims, spec.benign_seed)
    traces = [
        gen_attack_trace(trace_spec, trace_id=idx)
        for idx, trace_spec in enumerate(spec.traces)
    ]
    return interleave(benign, traces, spec.interleave_seed)


def _effective_config(spec: ExperimentSpec) -> DetectorConfig:
    if spec.reset_interval is not None:
        return replace(spec.detector, reset_interval=spec.reset_interval)
    return spec.detector


def run_experiment_with_verdicts(
    spec: ExperimentSpec,
) -> tuple[DetectionReport, list[Verdict]]:
    verdicts = process_stream(
        build_stream(spec), _effective_config(spec), mitigation=spec.mitigation
    )
    return compute_metrics(verdicts), verdicts


def run_experiment(spec: ExperimentSpec) -> DetectionReport:
    """Interleave, detect, and score one experiment."""
    report, _ = run_experiment_with_verdicts(spec)
    return report


def pause_resume(spec: ExperimentSpec, reset_interval: int) -> list[int]:
    """Reset epochs an attacker needs to push each trace through, pausing on rejection.

    The attacker submits its trace in order, stops for the epoch at the
    first rejection, and resumes from the first unforwarded query after the
    next reset. Returns the epoch count per trace (benign traffic does not
    interact with the attack queries and is left out).
    """
    if not spec.mitigation:
        raise ConfigError("pause_resume models an attacker facing the reject mitigation")
    if reset_interval < 1:
        raise ConfigError("reset_interval must be >= 1")
    cfg = spec.detector
    cycles_per_trace: list[int] = []
    for idx, trace_spec in enumerate(spec.traces):
        records = gen_attack_trace(trace_spec, trace_id=idx)
        images = [r.image for r in records]
        store = FingerprintStore(cfg.t, cfg.salt)
        position = 0
        cycles = 0
        while position < len(images):
            cycles += 1
            if cycles > 1:
                store.reset(next_salt(store.salt))
            submitted = 0
            while position < len(images) and submitted < reset_interval:
                fp = fingerprint(images[position], cfg, salt=store.salt)
                result = store.check_and_insert(fp)
                submitted += 1
                if result.flagged:
                    break
                position += 1
        cycles_per_trace.append(cycles)
    return cycles_per_trace


def guided_evasion_cost(
    cfg: DetectorConfig,
    dims: tuple[int, int, int],
    allowed_overlap: int,
    budget: float,
    metric: str = "l2",
) -> int | None:
    """Queries until an oracle evader's perturbation exceeds the budget.

    Cost model: to leave at most allowed_overlap of the s fingerprint
    digests shared with prior queries, a salt-blind attacker must disturb a
    matching fraction of all windows, i.e. change ceil(n*(s-K)/s / ceil(w/p))
    pixels per query, spaced a window apart so the disturbed windows are
    disjoint. Each change must jump a full quantization step to matter, and
    every query's pattern must be fresh, so pixels drain through their
    available shift magnitudes (floor(255/q) levels, cost level*q each) and
    per-query cost grows as cheap slots run out.

    With metric="linf" the budget is in intensity units and a single
    quantization-step change usually exceeds it outright; metric="l2"
    compares the per-query root-mean-square perturbation on [0, 1] pixels
    against the budget. Returns the 1-based index of the first query whose
    perturbation exceeds the budget (or exhausts the fresh-pattern space);
    None when no perturbation is needed at all.
    """
    if not 0 <= allowed_overlap <= cfg.s:
        raise DomainError(f"allowed overlap must be in [0, s], got {allowed_overlap}")
    if metric not in ("l2", "linf"):
        raise ConfigError(f"metric must be 'l2' or 'linf', got {metric!r}")
    h, w, c = dims
    numel = h * w * c
    n_windows = window_count(numel, cfg.w, cfg.p)
    windows_per_pixel = math.ceil(cfg.w / cfg.p)
    fresh_needed = math.ceil(n_windows * (cfg.s - allowed_overlap) / cfg.s)
    if fresh_needed <= 0:
        return None
    pixels_per_query = math.ceil(fresh_needed / windows_per_pixel)
    spacing_cap = math.ceil(numel / cfg.w)
    pixels_per_query = min(pixels_per_query, spacing_cap)
    levels = 255 // cfg.q
    pools = [numel] * levels
    query_index = 0
    while True:
        query_index += 1
        need = pixels_per_query
        cost_sq = 0.0
        max_shift = 0
        for level in range(levels):
            take = min(need, pools[level])
            if take:
                pools[level] -= take
                need -= take
                shift = (level + 1) * cfg.q
                cost_sq += take * float(shift) * float(shift)
                max_shift = shift
            if need == 0:
                break
        if need > 0:
            return query_index  # fresh-pattern space exhausted
        if metric == "linf":
            per_query = float(max_shift)
        else:
            per_query = math.sqrt(cost_sq) / 255.0 / math.sqrt(numel)
        if per_query > budget:
            return query_index
