"""Instrumented buffer allocation.

Every array buffer the inference runtime creates goes through
``new_array``, which bumps a process-wide counter. Tests snapshot the
counter around the audio path to prove that setup performed all allocation
up front: the counter must not move across render calls or worker
inferences.
"""

from __future__ import annotations

import numpy as np

_count = 0


def new_array(shape, dtype=np.float32) -> np.ndarray:
    """Allocate a zeroed buffer, counting the allocation."""
    global _count
    _count += 1
    return np.zeros(shape, dtype=dtype)


def allocation_count() -> int:
    return _count
