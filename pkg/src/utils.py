import logging
import time
from functools import wraps

import numpy as np

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


class ResourceLimitError(Exception):
    """A configured size or time cap was hit; results would otherwise be biased or unbounded."""


def elapsed(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed_time = time.perf_counter() - start
        logger.info(f"Elapsed time for {func.__name__}: {elapsed_time*1000:.2f} ms")
        return result
    return wrapper


def make_stream(seed: int, chain_id: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by (global seed, chain id)."""
    seq = np.random.SeedSequence([seed & SEED_MASK, chain_id])
    return np.random.Generator(np.random.Philox(seq))
