"""Cooperative rearrangement gridworld with population training and zero-shot
coordination evaluation.

Importing this package pins BLAS thread pools to a single thread (must happen
before numpy loads): the matrices here are far too small to benefit from
threading, and single-threaded reductions are what make `--deterministic`
runs bit-reproducible.
"""

import os as _os

for _var in (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
