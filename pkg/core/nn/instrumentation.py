"""
Operation counters and patch-buffer accounting

Counters are a plain registry of name -> integer. The CKAN operator reports
gathered patch elements, projection multiply-adds and spline basis
evaluations here, and tracks how many patch-buffer elements are alive.
"""
import threading
from contextlib import contextmanager
from typing import Dict, Iterator

UNFOLD_ELEMENTS = "unfold.elements"
PROJ_LINEAR_MACS = "proj.linear_macs"
PROJ_SPLINE_MACS = "proj.spline_macs"
BASIS_EVALS = "spline.basis_evals"
BUFFER_LIVE = "patch_buffer.live"
BUFFER_PEAK = "patch_buffer.peak"


class CounterRegistry:
    """Thread-safe name -> integer counters"""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts: Dict[str, int] = {}

    def increment(self, name: str, amount: int = 1) -> None:
        with self._lock:
            self._counts[name] = self._counts.get(name, 0) + int(amount)

    def get(self, name: str) -> int:
        with self._lock:
            return self._counts.get(name, 0)

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()

    def allocate_buffer(self, elements: int) -> None:
        """Register a live patch buffer and update the peak"""
        with self._lock:
            live = self._counts.get(BUFFER_LIVE, 0) + int(elements)
            self._counts[BUFFER_LIVE] = live
            if live > self._counts.get(BUFFER_PEAK, 0):
                self._counts[BUFFER_PEAK] = live

    def release_buffer(self, elements: int) -> None:
        with self._lock:
            self._counts[BUFFER_LIVE] = self._counts.get(BUFFER_LIVE, 0) - int(elements)


REGISTRY = CounterRegistry()


@contextmanager
def counting() -> Iterator[CounterRegistry]:
    """Reset the global registry and hand it to the caller"""
    REGISTRY.reset()
    yield REGISTRY
