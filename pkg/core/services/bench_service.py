"""
Complexity benchmark of the CKAN operator

Sweeps geometry and chunk sizes, records the instrumentation counters and
the peak patch buffer, and compares them with the closed-form cost model.
"""
import csv
import itertools
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from core.exceptions import ConfigurationError
from core.nn.ckan import (
    CkanConfig, CostEstimate, LinearProjector, ckan_forward, ckan_forward_chunked,
    cost_model, output_dims,
)
from core.nn.instrumentation import BUFFER_PEAK, UNFOLD_ELEMENTS, counting
from core.nn.kan import KanNetwork
from core.nn.spline import SplineGrid
from core.nn.tensor import Tensor, no_grad
from core.utils.logger import get_logger

logger = get_logger(__name__)

CSV_HEADER = (
    "mode", "batch", "c_in", "c_out", "kernel", "height", "width", "chunk_pixels", "K", "L",
    "unfold_measured", "unfold_predicted", "total_full", "total_chunked", "total_predicted",
    "peak_buffer", "peak_bound", "seconds",
)


@dataclass
class BenchPoint:
    """Measurements of one (geometry, chunk_pixels) configuration"""
    mode: str
    batch: int
    c_in: int
    c_out: int
    kernel: int
    height: int
    width: int
    chunk_pixels: int
    patch_dim: int
    locations: int
    measured_full: Dict[str, int]
    measured_chunked: Dict[str, int]
    predicted: CostEstimate
    peak_buffer: int
    seconds: float

    @property
    def peak_bound(self) -> int:
        return self.batch * self.patch_dim * min(self.chunk_pixels, self.locations)

    @property
    def unfold_exact(self) -> bool:
        return self.measured_chunked.get(UNFOLD_ELEMENTS, 0) == self.predicted.unfold_elements

    @staticmethod
    def _total(counters: Dict[str, int], predicted: CostEstimate) -> int:
        return sum(counters.get(name, 0) for name in predicted.as_counters())

    @property
    def total_full(self) -> int:
        return self._total(self.measured_full, self.predicted)

    @property
    def total_chunked(self) -> int:
        return self._total(self.measured_chunked, self.predicted)

    @property
    def total_relative_diff(self) -> float:
        if self.total_full == 0:
            return 0.0
        return abs(self.total_chunked - self.total_full) / self.total_full

    def row(self) -> List:
        return [
            self.mode, self.batch, self.c_in, self.c_out, self.kernel, self.height, self.width,
            self.chunk_pixels, self.patch_dim, self.locations,
            self.measured_chunked.get(UNFOLD_ELEMENTS, 0), self.predicted.unfold_elements,
            self.total_full, self.total_chunked, self.predicted.total,
            self.peak_buffer, self.peak_bound, f"{self.seconds:.6f}",
        ]


@dataclass
class PeakFit:
    """Least-squares line of peak buffer against chunk_pixels"""
    slope: float
    intercept: float
    r_squared: float
    points: int


@dataclass
class BenchReport:
    points: List[BenchPoint] = field(default_factory=list)
    fits: Dict[str, PeakFit] = field(default_factory=dict)

    @property
    def unfold_exact(self) -> bool:
        return all(p.unfold_exact for p in self.points)

    @property
    def peak_within_bound(self) -> bool:
        return all(p.peak_buffer <= p.peak_bound for p in self.points)

    @property
    def max_total_diff(self) -> float:
        return max((p.total_relative_diff for p in self.points), default=0.0)

    @property
    def min_r_squared(self) -> Optional[float]:
        values = [fit.r_squared for fit in self.fits.values()]
        return min(values) if values else None

    def passed(self, r_squared: float = 0.999, total_diff: float = 0.01) -> bool:
        fit_ok = self.min_r_squared is None or self.min_r_squared > r_squared
        return self.unfold_exact and self.peak_within_bound and self.max_total_diff < total_diff and fit_ok

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for point in self.points:
                writer.writerow(point.row())

    def summary(self) -> Dict:
        return {
            "points": len(self.points),
            "unfold_exact": self.unfold_exact,
            "peak_within_bound": self.peak_within_bound,
            "max_total_relative_diff": self.max_total_diff,
            "fits": {
                key: {"slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared,
                      "points": f.points}
                for key, f in self.fits.items()
            },
        }


def build_config(mode: str, c_in: int, c_out: int, kernel: int, chunk_pixels: int,
                 rng: np.random.Generator, grid: Optional[SplineGrid] = None,
                 hidden: Optional[int] = None) -> CkanConfig:
    """Same-padded stride-1 geometry with a linear or two-layer KAN projector"""
    patch_dim = c_in * kernel * kernel
    if mode == "linear":
        projector = LinearProjector(rng.standard_normal((c_out, patch_dim)) / np.sqrt(patch_dim))
    elif mode == "kan":
        projector = KanNetwork.build([patch_dim, hidden or patch_dim, c_out], grid=grid, rng=rng)
    else:
        raise ConfigurationError(f"Unknown bench mode {mode!r}, expected 'linear' or 'kan'")
    return CkanConfig(c_in, c_out, kernel=kernel, padding=kernel // 2,
                      chunk_pixels=chunk_pixels, projector=projector)


def measure_point(mode: str, height: int, width: int, chunk_pixels: int, kernel: int,
                  c_in: int, c_out: int, batch: int = 1, seed: int = 0,
                  grid: Optional[SplineGrid] = None) -> BenchPoint:
    """Counters of one full and one chunked forward in inference mode"""
    rng = np.random.default_rng([seed, height, width, kernel, c_in, c_out])
    cfg = build_config(mode, c_in, c_out, kernel, chunk_pixels, rng, grid=grid)
    x = Tensor(rng.uniform(-1.0, 1.0, size=(batch, c_in, height, width)))
    _, _, locations, patch_dim = output_dims(height, width, cfg)

    with no_grad():
        with counting() as registry:
            ckan_forward(x, cfg)
            measured_full = registry.snapshot()
        with counting() as registry:
            started = time.perf_counter()
            ckan_forward_chunked(x, cfg)
            seconds = time.perf_counter() - started
            measured_chunked = registry.snapshot()

    predicted = cost_model(cfg, height, width, batch=batch)
    return BenchPoint(
        mode=mode, batch=batch, c_in=c_in, c_out=c_out, kernel=kernel,
        height=height, width=width, chunk_pixels=chunk_pixels,
        patch_dim=patch_dim, locations=locations,
        measured_full=measured_full, measured_chunked=measured_chunked,
        predicted=predicted, peak_buffer=measured_chunked.get(BUFFER_PEAK, 0),
        seconds=seconds,
    )


def fit_peak(points: Sequence[BenchPoint]) -> Optional[PeakFit]:
    """
    Regress peak buffer on chunk_pixels over points with chunk_pixels <= L

    Beyond L the peak saturates at B*K*L, so those points are left out.
    """
    usable = [p for p in points if p.chunk_pixels <= p.locations]
    chunks = sorted({p.chunk_pixels for p in usable})
    if len(chunks) < 2:
        return None
    result = stats.linregress([p.chunk_pixels for p in usable], [p.peak_buffer for p in usable])
    return PeakFit(float(result.slope), float(result.intercept), float(result.rvalue ** 2), len(usable))


class BenchService:
    """Sweeps over the CKAN operator"""

    @staticmethod
    def sweep(sizes: Sequence[int], chunks: Sequence[int], kernels: Sequence[int],
              channels: Sequence[int], modes: Sequence[str] = ("linear", "kan"),
              batch: int = 1, seed: int = 0, grid: Optional[SplineGrid] = None) -> BenchReport:
        """
        Measure every combination and fit peak buffer against chunk size

        Args:
            sizes: Square input sizes H = W
            chunks: chunk_pixels values
            kernels: Odd kernel sizes
            channels: Channel counts, used for both c_in and c_out
            modes: Projector kinds
            batch: Batch size B
            seed: Input and parameter seed

        Returns:
            BenchReport with one point per combination and one fit per geometry
        """
        report = BenchReport()
        combos = list(itertools.product(modes, sizes, kernels, channels))
        logger.info(f"Benchmark sweep: {len(combos)} geometries x {len(chunks)} chunk sizes")
        for mode, size, kernel, channel in combos:
            group = []
            for chunk in chunks:
                point = measure_point(mode, size, size, chunk, kernel, channel, channel,
                                      batch=batch, seed=seed, grid=grid)
                group.append(point)
                logger.debug(
                    f"{mode} {size}px k={kernel} c={channel} chunk={chunk}: "
                    f"peak {point.peak_buffer} (bound {point.peak_bound})"
                )
            report.points.extend(group)
            fit = fit_peak(group)
            if fit is not None:
                report.fits[f"{mode}/{size}px/k{kernel}/c{channel}"] = fit

        logger.info(
            f"Benchmark done: unfold exact={report.unfold_exact}, "
            f"peak within bound={report.peak_within_bound}, "
            f"max total diff={report.max_total_diff:.3e}, min R^2={report.min_r_squared}"
        )
        return report
