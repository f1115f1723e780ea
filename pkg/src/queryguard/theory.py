"""Flagging-probability bounds for fingerprint matching.

Model: a query produces n window hashes, each an independent uniform draw
from a huge hash space. Two queries whose full hash sets differ in d
entries per side (n - d shared) are compared by the overlap of their
top-s fingerprints; they flag when the overlap strictly exceeds t.

q_upper(..) and q_lower(..) bound the flag probability analytically;
monte_carlo_q(..) estimates it by direct simulation of the sampling
process and serves as the independent check on both bounds.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError

_NEG_INF = float("-inf")
# Sum-of-log-ratios is exact to ~1e-14 and cheap for the small k used by the
# bound sums; fall back to log-gamma for large k where the loop would drag.
_EXACT_K_LIMIT = 1024


@dataclass(frozen=True)
class BoundParams:
    """Parameters of one bound evaluation.

    n: full hash-set size, d: per-side hash difference, s: fingerprint
    size, t: strict match threshold.
    """

    n: int
    d: int
    s: int
    t: int

    def __post_init__(self):
        if not 0 <= self.d <= self.n:
            raise DomainError(f"need 0 <= d <= n, got d={self.d} n={self.n}")
        if not 0 < self.s <= self.n:
            raise DomainError(f"need 0 < s <= n, got s={self.s} n={self.n}")
        if not 0 <= self.t < self.s:
            raise DomainError(f"need 0 <= t < s, got t={self.t} s={self.s}")


@dataclass(frozen=True)
class DeltaModel:
    """Typical per-side hash differences for benign and attack query pairs."""

    delta_benign: int
    delta_attack: int

    def __post_init__(self):
        if self.delta_benign <= self.delta_attack:
            raise DomainError(
                "delta_benign must exceed delta_attack, got "
                f"{self.delta_benign} <= {self.delta_attack}"
            )


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float


@lru_cache(maxsize=1 << 18)
def _log_choose(n: int, k: int) -> float:
    """log C(n, k), -inf outside the domain (zero-mass terms)."""
    if n < 0 or k < 0 or k > n:
        return _NEG_INF
    k = min(k, n - k)
    if k == 0:
        return 0.0
    if k <= _EXACT_K_LIMIT:
        s = 0.0
        for i in range(1, k + 1):
            s += math.log(n - k + i) - math.log(i)
        return s
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def log_binomial(n: int, k: int) -> float:
    """Natural log of the binomial coefficient C(n, k).

    Evaluated in log space so coefficients far beyond float range stay
    representable (C(150479, 50) and up).
    """
    if n < 0 or k < 0:
        raise DomainError(f"negative arguments: n={n} k={k}")
    if k > n:
        raise DomainError(f"k={k} exceeds n={n}")
    return _log_choose(n, k)


def _log_sum_exp(terms: list[float]) -> float:
    live = [t for t in terms if t != _NEG_INF]
    if not live:
        return _NEG_INF
    m = max(live)
    return m + math.log(math.fsum(math.exp(t - m) for t in live))


def _clamp_prob(log_value: float) -> float:
    if log_value == _NEG_INF:
        return 0.0
    return min(1.0, math.exp(log_value))


def q_upper(params: BoundParams) -> float:
    """Upper bound on the flag probability for a pair differing by d hashes.

    Hypergeometric tail: the chance that a size-s sample from the n hashes
    lands more than t entries inside the n - d shared ones,

        sum_{k=t+1}^{min(s, n-d)} C(n-d, k) C(d, s-k) / C(n, s).
    """
    n, d, s, t = params.n, params.d, params.s, params.t
    hi = min(s, n - d)
    log_total = _log_choose(n, s)
    terms = [
        _log_choose(n - d, k) + _log_choose(d, s - k) - log_total
        for k in range(t + 1, hi + 1)
    ]
    return _clamp_prob(_log_sum_exp(terms))


def _log_a_term(n: int, d: int, s: int, i: int, hi: int, corrected: bool) -> float:
    """log A_i, the case count for i overlapping picks from the shared hashes.

    A_i = C(d, s-i) C(n-d, i) [ C(d, s-i)
          + 2 sum_{t=i+1}^{hi} C(n-d-i, t-i) C(d, s-j) ]
    with j = i in the published form and j = t in the corrected variant
    (the inner factor looks like a transcription slip; both are shipped and
    the Monte-Carlo sandwich test reports which one holds).
    """
    outer = _log_choose(d, s - i) + _log_choose(n - d, i)
    if outer == _NEG_INF:
        return _NEG_INF
    inner = [_log_choose(d, s - i)]
    log2 = math.log(2.0)
    for t in range(i + 1, hi + 1):
        term = _log_choose(n - d - i, t - i) + _log_choose(d, s - (t if corrected else i))
        if term != _NEG_INF:
            inner.append(log2 + term)
    inner_sum = _log_sum_exp(inner)
    if inner_sum == _NEG_INF:
        return _NEG_INF
    return outer + inner_sum


def _q_lower_impl(params: BoundParams, corrected: bool) -> float:
    n, d, s, t = params.n, params.d, params.s, params.t
    hi = min(s, n - d)
    logs = [_log_a_term(n, d, s, i, hi, corrected) for i in range(0, hi + 1)]
    denominator = _log_sum_exp(logs)
    if denominator == _NEG_INF:
        warnings.warn(
            "all lower-bound case counts are zero; returning 0", RuntimeWarning
        )
        return 0.0
    numerator = _log_sum_exp(logs[t + 1 :])
    if numerator == _NEG_INF:
        return 0.0
    return _clamp_prob(numerator - denominator)


def q_lower(params: BoundParams) -> float:
    """Lower bound on the flag probability, published A_i form.

    Ratio of case counts for two fully independent size-s selections
    choosing more than t overlapping entries among the shared hashes.
    """
    return _q_lower_impl(params, corrected=False)


def q_lower_alt(params: BoundParams) -> float:
    """Lower bound with the inner factor read as C(d, s-t) instead of C(d, s-i)."""
    return _q_lower_impl(params, corrected=True)


def _digest_prefixes(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Leading 8 bytes of uniform 32-byte digests, as big-endian integers."""
    if cols == 0:
        return np.empty((rows, 0), dtype=np.uint64)
    buf = rng.bytes(rows * cols * 8)
    return np.frombuffer(buf, dtype=">u8").reshape(rows, cols).astype(np.uint64)


def _exact_overlap(
    shared_w0: np.ndarray,
    ux_w0: np.ndarray,
    uy_w0: np.ndarray,
    rng: np.random.Generator,
    s: int,
) -> int:
    """Full-width top-s intersection for one trial.

    Completes each digest with its remaining 24 random bytes (deferred
    sampling; the tail is independent of everything observed so far) and
    ranks by the complete 32-byte value.
    """
    shared = [int(v).to_bytes(8, "big") + rng.bytes(24) for v in shared_w0]
    side_x = shared + [int(v).to_bytes(8, "big") + rng.bytes(24) for v in ux_w0]
    side_y = shared + [int(v).to_bytes(8, "big") + rng.bytes(24) for v in uy_w0]
    top_x = set(heapq.nlargest(s, side_x))
    top_y = set(heapq.nlargest(s, side_y))
    return len(top_x & top_y)


def monte_carlo_q(params: BoundParams, trials: int, seed: int) -> MonteCarloEstimate:
    """Estimate the true flag probability by simulating the hash model.

    Per trial: draw n - d shared digests plus d unique digests per side
    (uniform 256-bit, so collisions never occur in practice), take each
    side's top-s by numeric value, and count how often the intersection
    exceeds t.

    Digest sampling is deferred: the 8-byte big-endian prefix is drawn for
    every digest and decides all rankings unless two prefixes tie exactly
    at a top-s boundary, in which case that trial is recomputed with fully
    materialized 32-byte digests. Deferring unread random bytes leaves the
    sampled distribution unchanged. Trials run in fixed-size chunks with
    substreams derived from (seed, chunk index), so results are
    reproducible for a given (params, trials, seed).
    """
    if trials < 1000:
        raise DomainError(f"need at least 1000 trials, got {trials}")
    n, d, s, t = params.n, params.d, params.s, params.t
    # Fixed function of the params only, so chunking never alters results.
    chunk = max(1, (1 << 23) // max(n + d, 1))
    flagged = 0
    done = 0
    chunk_index = 0
    while done < trials:
        m = min(chunk, trials - done)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(seed), spawn_key=(chunk_index,))
        )
        shared = _digest_prefixes(rng, m, n - d)
        unique_x = _digest_prefixes(rng, m, d)
        unique_y = _digest_prefixes(rng, m, d)
        side_x = np.hstack([shared, unique_x])
        side_y = np.hstack([shared, unique_y])
        # smallest prefix inside each side's top-s
        cut_x = np.partition(side_x, n - s, axis=1)[:, n - s]
        cut_y = np.partition(side_y, n - s, axis=1)[:, n - s]
        ambiguous = ((side_x == cut_x[:, None]).sum(axis=1) > 1) | (
            (side_y == cut_y[:, None]).sum(axis=1) > 1
        )
        in_x = shared >= cut_x[:, None]
        in_y = shared >= cut_y[:, None]
        overlap = (in_x & in_y).sum(axis=1)
        clear = ~ambiguous
        flagged += int((overlap[clear] > t).sum())
        for row in np.nonzero(ambiguous)[0]:
            exact = _exact_overlap(shared[row], unique_x[row], unique_y[row], rng, s)
            flagged += int(exact > t)
        done += m
        chunk_index += 1
    estimate = flagged / trials
    stderr = math.sqrt(estimate * (1.0 - estimate) / trials)
    return MonteCarloEstimate(estimate, stderr)


def fpr_and_detection(
    model: DeltaModel, n: int, s: int, t: int
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Bound the false-positive and detection probabilities of a config.

    Returns ((fp_lower, fp_upper), (detect_lower, detect_upper)): the flag
    probability bounds evaluated at the benign and attack hash differences.
    """
    fp_params = BoundParams(n, model.delta_benign, s, t)
    detect_params = BoundParams(n, model.delta_attack, s, t)
    return (
        (q_lower(fp_params), q_upper(fp_params)),
        (q_lower(detect_params), q_upper(detect_params)),
    )
