"""
Image quality metrics on the luminance channel and the seeded perceptual distance
"""
import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

import config
from core.exceptions import DataError, GeometryError, ShapeError
from core.nn.tensor import Tensor, no_grad
from core.services.data_service import ImageBuffer
from core.services.loss_service import PerceptualExtractor, default_extractor
from core.utils.logger import get_logger

logger = get_logger(__name__)

ImageLike = Union[ImageBuffer, Tensor, np.ndarray]

CSV_HEADER = ("image", "psnr_y", "ssim_y", "msssim_y", "perc_dist")


def _pixels(img: ImageLike) -> np.ndarray:
    if isinstance(img, ImageBuffer):
        return img.pixels
    if isinstance(img, Tensor):
        img = img.data
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 4 and img.shape[0] == 1:
        img = img[0]
    return img


def to_luminance(rgb: ImageLike) -> np.ndarray:
    """BT.601 luma Y = 0.299 R + 0.587 G + 0.114 B of a (3, H, W) image"""
    pixels = _pixels(rgb)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ShapeError(f"Luminance needs a (3, H, W) image, got {pixels.shape}")
    r, g, b = config.LUMA_WEIGHTS
    return r * pixels[0] + g * pixels[1] + b * pixels[2]


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"Image shapes differ: {a.shape} vs {b.shape}")


def psnr(a, b, max_val: float = config.MAX_PIXEL_VALUE) -> float:
    """10 log10(MAX^2 / MSE); identical images give +inf"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    if max_val <= 0:
        raise ValueError(f"max_val must be positive, got {max_val}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def gaussian_window(size: int = config.SSIM_WINDOW, sigma: float = config.SSIM_SIGMA) -> np.ndarray:
    axis = np.arange(size) - (size - 1) / 2.0
    profile = np.exp(-0.5 * (axis / sigma) ** 2)
    window = np.outer(profile, profile)
    return window / window.sum()


def _ssim_maps(a: np.ndarray, b: np.ndarray, max_val: float) -> Tuple[np.ndarray, np.ndarray]:
    """Local luminance term and contrast-structure term over valid windows"""
    window = gaussian_window()
    if min(a.shape) < window.shape[0]:
        raise GeometryError(f"Image {a.shape} is smaller than the {window.shape[0]}px SSIM window")
    c1 = (config.SSIM_K1 * max_val) ** 2
    c2 = (config.SSIM_K2 * max_val) ** 2

    def filt(x):
        return signal.correlate2d(x, window, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    contrast_structure = (2.0 * cov + c2) / (var_a + var_b + c2)
    return luminance, contrast_structure


def ssim(a, b, max_val: float = config.MAX_PIXEL_VALUE) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5)"""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    luminance, contrast_structure = _ssim_maps(a, b, max_val)
    return float(np.mean(luminance * contrast_structure))


def _average_pool(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim_scales(height: int, width: int) -> int:
    """Dyadic scales that keep the coarsest level at least one window wide"""
    scales = 0
    size = min(height, width)
    while scales < len(config.MS_SSIM_WEIGHTS) and size >= config.SSIM_WINDOW:
        scales += 1
        size //= 2
    return scales


def ms_ssim(a, b, max_val: float = config.MAX_PIXEL_VALUE) -> float:
    """
    Multi-scale SSIM with weights (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

    Images too small for five scales drop the coarsest scales and use the
    remaining weights renormalized to sum to one.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    scales = ms_ssim_scales(*a.shape)
    if scales == 0:
        raise GeometryError(f"Image {a.shape} is smaller than the SSIM window")
    weights = np.asarray(config.MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()

    result = 1.0
    for level in range(scales):
        luminance, contrast_structure = _ssim_maps(a, b, max_val)
        if level == scales - 1:
            value = float(np.mean(luminance * contrast_structure))
        else:
            value = float(np.mean(contrast_structure))
            a, b = _average_pool(a), _average_pool(b)
        result *= max(value, 0.0) ** weights[level]
    return float(result)


def perceptual_distance(a: ImageLike, b: ImageLike,
                        ex: Optional[PerceptualExtractor] = None) -> float:
    """
    sum_l w_l * mean over locations of ||f_l(a) - f_l(b)||^2

    Features are unit-normalized over channels at every location first.
    Values are only comparable between runs using the same extractor seed.
    """
    pa, pb = _pixels(a), _pixels(b)
    _check_pair(pa, pb)
    ex = ex or default_extractor()
    with no_grad():
        feats_a = ex.features(Tensor(pa[None]))
        feats_b = ex.features(Tensor(pb[None]))
    total = 0.0
    for weight, fa, fb in zip(ex.layer_weights, feats_a, feats_b):
        na = fa.data / (np.sqrt((fa.data ** 2).sum(axis=1, keepdims=True)) + 1e-10)
        nb = fb.data / (np.sqrt((fb.data ** 2).sum(axis=1, keepdims=True)) + 1e-10)
        total += weight * float(((na - nb) ** 2).sum(axis=1).mean())
    return total


@dataclass
class ImageMetrics:
    image: str
    psnr_y: float
    ssim_y: float
    msssim_y: float
    perc_dist: float

    @property
    def identical(self) -> bool:
        return math.isinf(self.psnr_y)


@dataclass
class MetricReport:
    """Per-image metrics and their arithmetic means"""
    rows: List[ImageMetrics] = field(default_factory=list)

    @property
    def mean(self) -> ImageMetrics:
        if not self.rows:
            raise DataError("Metric report is empty")
        columns = [f.name for f in fields(ImageMetrics)][1:]
        means = {name: float(np.mean([getattr(row, name) for row in self.rows])) for name in columns}
        return ImageMetrics(image="MEAN", **means)

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in self.rows + [self.mean]:
                writer.writerow([row.image] + [_format(getattr(row, name)) for name in CSV_HEADER[1:]])

    @classmethod
    def from_csv(cls, path) -> "MetricReport":
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = tuple(next(reader, ()))
            if header != CSV_HEADER:
                raise DataError(f"Unexpected metrics CSV header: {header}")
            rows = [
                ImageMetrics(record[0], *(float(value) for value in record[1:]))
                for record in reader if record and record[0] != "MEAN"
            ]
        return cls(rows)

    def to_dict(self) -> Dict[str, float]:
        mean = self.mean
        return {name: getattr(mean, name) for name in CSV_HEADER[1:]}


def _format(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))


def evaluate_image(name: str, hr: ImageLike, sr: ImageLike,
                   ex: Optional[PerceptualExtractor] = None) -> ImageMetrics:
    y_hr, y_sr = to_luminance(hr), to_luminance(sr)
    scales = ms_ssim_scales(*y_hr.shape)
    return ImageMetrics(
        image=name,
        psnr_y=psnr(y_hr, y_sr),
        ssim_y=ssim(y_hr, y_sr) if scales else float("nan"),
        msssim_y=ms_ssim(y_hr, y_sr) if scales else float("nan"),
        perc_dist=perceptual_distance(hr, sr, ex),
    )


def evaluate_set(pairs: Sequence[Tuple[str, ImageLike, ImageLike]],
                 ex: Optional[PerceptualExtractor] = None) -> MetricReport:
    """
    Metrics for every (name, hr, sr) triple

    PSNR, SSIM and MS-SSIM use the luminance channel; the perceptual
    distance uses RGB. Images smaller than the SSIM window report NaN for
    both SSIM variants.
    """
    if not pairs:
        raise DataError("Evaluation set is empty")
    report = MetricReport()
    for name, hr, sr in pairs:
        report.rows.append(evaluate_image(name, hr, sr, ex))
    mean = report.mean
    logger.info(
        f"Evaluated {len(report.rows)} images: PSNR-Y {mean.psnr_y:.4f} dB, "
        f"SSIM-Y {mean.ssim_y:.4f}, MS-SSIM-Y {mean.msssim_y:.4f}, perc {mean.perc_dist:.4f}"
    )
    return report


def comparison_table(reports: Dict[str, MetricReport]) -> str:
    """Markdown table with one row of means per model"""
    lines = [
        "| Model | PSNR-Y (dB) | SSIM-Y | MS-SSIM-Y | perc_dist |",
        "|---|---|---|---|---|",
    ]
    for model, report in reports.items():
        mean = report.mean
        lines.append(
            f"| {model} | {mean.psnr_y:.4f} | {mean.ssim_y:.4f} | "
            f"{mean.msssim_y:.4f} | {mean.perc_dist:.4f} |"
        )
    return "\n".join(lines) + "\n"
