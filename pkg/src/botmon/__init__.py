"""Streaming botnet detection from web server access logs.

Pipeline: parse log lines into (timestamp, host, request) records, keep a
sliding-window request-host count matrix, update the host-host correlation
matrix incrementally after each slide, estimate its principal weight with
an early-terminating Krylov iteration, and flag groups of hosts whose
traffic moves together.
"""

from .logs import LogEntry, ParseError, ParseStats, anonymize, iter_entries, parse_line
from .window import CountMatrix, SlidingWindowEngine, WindowConfig, WindowDelta, diff_counts
from .correlation import (
    CorrelationState,
    DegenerateWindowError,
    align_columns,
    apply_slide,
    from_counts,
    init_state,
    update_centered,
    update_correlation,
    update_means,
    update_stddevs,
)
from .lanczos import (
    LanczosState,
    PrincipalEstimate,
    bisect_largest,
    eig_bounds,
    error_bound,
    estimate_principal,
    lanczos_extend,
    recover_eigenvector,
    sturm_count,
)
from .detector import (
    BotnetAlert,
    BotnetRegistry,
    DetectionParams,
    Detector,
    host_scores,
    knee_cutoff,
    merge_botnets,
)
from .oracle import EigenResult, jacobi_eigen, recompute_correlation

__version__ = "0.1.0"

__all__ = [
    "LogEntry", "ParseError", "ParseStats", "anonymize", "iter_entries", "parse_line",
    "CountMatrix", "SlidingWindowEngine", "WindowConfig", "WindowDelta", "diff_counts",
    "CorrelationState", "DegenerateWindowError", "align_columns", "apply_slide",
    "from_counts", "init_state", "update_centered", "update_correlation",
    "update_means", "update_stddevs",
    "LanczosState", "PrincipalEstimate", "bisect_largest", "eig_bounds", "error_bound",
    "estimate_principal", "lanczos_extend", "recover_eigenvector", "sturm_count",
    "BotnetAlert", "BotnetRegistry", "DetectionParams", "Detector", "host_scores",
    "knee_cutoff", "merge_botnets",
    "EigenResult", "jacobi_eigen", "recompute_correlation",
    "__version__",
]
