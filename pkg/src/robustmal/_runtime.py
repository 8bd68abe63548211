"""Process-level tuning for the numpy workload."""

import ctypes
import ctypes.util
import logging

logger = logging.getLogger(__name__)

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune_allocator(threshold=64 * 1024 * 1024):
    """Keep large temporaries on the glibc heap instead of fresh mmap pages.

    The training loop allocates many half-megabyte arrays per step; serving
    them from mmap costs a page fault per page, roughly tripling runtime.
    No-op where glibc is unavailable.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, threshold) and libc.mallopt(_M_TRIM_THRESHOLD, 2 * threshold)
    except (OSError, AttributeError):
        return False
    if not ok:
        logger.debug("mallopt rejected the allocator settings")
    return bool(ok)
