"""
avconf - Audio-Visual Efficient Conformer toolkit

Audio, visual and audio-visual Conformer speech recognizers with efficient attention,
intermediate CTC, n-gram beam search and a complexity profiler, on a numpy autodiff
engine.
"""

import os
from typing import Optional

__version__ = "0.1.0"

THREAD_ENV = "AVCONF_THREADS"
BLAS_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

# BLAS reads its thread count when numpy is first imported
if os.environ.get(THREAD_ENV, "").isdigit():
    for _var in BLAS_ENV:
        os.environ.setdefault(_var, os.environ[THREAD_ENV])


def _blas_threads() -> Optional[int]:
    for var in BLAS_ENV:
        raw = os.environ.get(var, "")
        if raw.isdigit() and int(raw) > 0:
            return int(raw)
    return None


# None when no variable pins it (the BLAS library picks)
BLAS_THREADS = _blas_threads()

from avconf.backend.config import ModelConfig  # noqa: E402
from avconf.backend.model import AVConformer, ModelOutput  # noqa: E402
from avconf.core.rng import Rng  # noqa: E402
from avconf.core.tensor import Tensor, no_grad  # noqa: E402

__all__ = ["AVConformer", "ModelConfig", "ModelOutput", "Rng", "Tensor", "no_grad"]
