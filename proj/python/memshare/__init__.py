from ._memshare import (
    StepRecord,
    Trace,
    __version__,
    generate_trace,
    run_cli,
    similarity_ratio,
    softmax,
    throughput_gain,
    verify_bounds,
)

__all__ = [
    "StepRecord",
    "Trace",
    "__version__",
    "generate_trace",
    "run_cli",
    "similarity_ratio",
    "softmax",
    "throughput_gain",
    "verify_bounds",
]
