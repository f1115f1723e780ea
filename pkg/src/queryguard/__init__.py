"""Salted probabilistic-fingerprint detection for near-duplicate query streams."""

from .detector import (
    Action,
    DetectionReport,
    QueryRecord,
    TraceReport,
    Verdict,
    compute_metrics,
    process_stream,
)
from .errors import (
    BudgetInfeasible,
    CapacityExceeded,
    ConfigError,
    DomainError,
    FormatError,
    InputTooSmall,
    MissingLabels,
    QueryGuardError,
    UnsupportedFormat,
)
from .fingerprint import (
    DetectorConfig,
    Fingerprint,
    QueryImage,
    digest_value,
    fingerprint,
    next_salt,
    quantize,
    random_salt,
    salt_from_seed,
    select_fingerprint,
    window_count,
    window_hashes,
)
from .simulate import (
    ExperimentSpec,
    TraceKind,
    TraceSpec,
    build_stream,
    gen_attack_trace,
    gen_benign,
    guided_evasion_cost,
    pause_resume,
    run_experiment,
)
from .store import FingerprintStore, MatchResult
from .theory import (
    BoundParams,
    DeltaModel,
    MonteCarloEstimate,
    fpr_and_detection,
    log_binomial,
    monte_carlo_q,
    q_lower,
    q_lower_alt,
    q_upper,
)

__version__ = "0.1.0"
