"""Console entry point.

BLAS thread pools must be capped before numpy loads: the experiment drivers
issue thousands of small factorizations, and oversubscribed pools slow those
down by an order of magnitude inside CPU-limited containers.
"""

import os


def _cap_blas_threads() -> None:
    try:
        allowed = len(os.sched_getaffinity(0))
    except AttributeError:
        allowed = os.cpu_count() or 1
    value = str(max(1, min(allowed, 8)))
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, value)


_cap_blas_threads()

from .bench_cli import main  # noqa: E402


if __name__ == "__main__":
    raise SystemExit(main())
