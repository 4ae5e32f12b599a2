"""
Images, degradation, patch sampling and synthetic datasets
"""
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

import config
from core.exceptions import DataError, GeometryError, ImageFormatError
from core.nn.tensor import Tensor
from core.utils.logger import get_logger
from core.utils.ppm import decode_ppm, encode_ppm

logger = get_logger(__name__)

PNG_MAGIC = b"\x89PNG"


@dataclass(eq=False)
class ImageBuffer:
    """RGB image stored channel-first, values in [0, 1]"""
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3:
            raise ImageFormatError(f"Expected a (3, H, W) image, got {self.pixels.shape}")
        if self.pixels.shape[1] < 1 or self.pixels.shape[2] < 1:
            raise ImageFormatError("Image dimensions must be >= 1")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ImageFormatError("Image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def crop(self, x: int, y: int, width: int, height: int) -> "ImageBuffer":
        return ImageBuffer(self.pixels[:, y:y + height, x:x + width])

    def to_tensor(self) -> Tensor:
        """(1, 3, H, W) batch of one"""
        return Tensor(self.pixels[None])

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "ImageBuffer":
        """Clamp any (3, H, W) or (1, 3, H, W) array into an image"""
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.ndim == 4:
            pixels = pixels[0]
        return cls(np.clip(pixels, 0.0, 1.0))

    def to_uint8(self) -> np.ndarray:
        """(H, W, 3) 8-bit quantization"""
        return np.round(self.pixels.transpose(1, 2, 0) * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, pixels: np.ndarray) -> "ImageBuffer":
        return cls(pixels.astype(np.float64).transpose(2, 0, 1) / 255.0)


def load_image(path) -> ImageBuffer:
    """
    Read a PPM (P6) file, or a PNG when PNG support is enabled

    The format is chosen by file magic, not by extension.
    """
    data = Path(path).read_bytes()
    if data[:2] == b"P6":
        return ImageBuffer.from_uint8(decode_ppm(data))
    if data[:4] == PNG_MAGIC:
        if not config.PNG_SUPPORT:
            raise ImageFormatError(f"PNG support is disabled: {path}")
        with Image.open(path) as image:
            return ImageBuffer.from_uint8(np.asarray(image.convert("RGB")))
    raise ImageFormatError(f"Unsupported image magic {data[:4]!r} in {path}")


def save_image(path, img: ImageBuffer) -> None:
    """Write PPM, or PNG for a .png path when PNG support is enabled"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        if not config.PNG_SUPPORT:
            raise ImageFormatError(f"PNG support is disabled: {path}")
        Image.fromarray(img.to_uint8(), mode="RGB").save(path, format="PNG")
        return
    path.write_bytes(encode_ppm(img.to_uint8()))


def cubic_kernel(t: np.ndarray, a: float = config.BICUBIC_A) -> np.ndarray:
    """Cubic convolution kernel, support [-2, 2]"""
    t = np.abs(t)
    near = (a + 2.0) * t ** 3 - (a + 3.0) * t ** 2 + 1.0
    far = a * t ** 3 - 5.0 * a * t ** 2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def resample_weights(in_size: int, out_size: int, a: float = config.BICUBIC_A) -> np.ndarray:
    """
    (out_size, in_size) interpolation matrix along one axis

    The kernel is stretched by the scale factor when shrinking (anti-aliasing),
    taps beyond the border are clamped to the edge sample, rows sum to one.
    """
    scale = out_size / in_size
    kernel_scale = min(scale, 1.0)
    support = 2.0 / kernel_scale
    centers = (np.arange(out_size) + 0.5) / scale - 0.5
    taps = int(np.ceil(2.0 * support)) + 1
    first = np.floor(centers - support).astype(int) + 1
    index = first[:, None] + np.arange(taps)
    weights = cubic_kernel((centers[:, None] - index) * kernel_scale, a)
    weights /= weights.sum(axis=1, keepdims=True)

    matrix = np.zeros((out_size, in_size))
    rows = np.broadcast_to(np.arange(out_size)[:, None], index.shape)
    np.add.at(matrix, (rows, np.clip(index, 0, in_size - 1)), weights)
    return matrix


def bicubic_resample(img: ImageBuffer, new_w: int, new_h: int) -> ImageBuffer:
    if new_w < 1 or new_h < 1:
        raise GeometryError(f"Target size {new_w}x{new_h} must be positive")
    rows = resample_weights(img.height, new_h)
    cols = resample_weights(img.width, new_w)
    out = np.einsum("oh,chw,pw->cop", rows, img.pixels, cols)
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def gaussian_blur_kernel(sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian of radius ceil(3 sigma)"""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    axis = np.arange(-radius, radius + 1)
    profile = np.exp(-0.5 * (axis / sigma) ** 2)
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def degrade(hr: ImageBuffer, s: int, blur_kernel: Optional[np.ndarray] = None,
            noise_sigma: float = 0.0, seed: int = config.SEED) -> ImageBuffer:
    """
    LR = (HR * k) downscaled by s, plus seeded Gaussian noise, clamped to [0, 1]

    Without a kernel and noise this is exactly bicubic_resample to 1/s.
    """
    if s < 1 or hr.width % s or hr.height % s:
        raise GeometryError(f"Image {hr.width}x{hr.height} is not divisible by scale {s}")
    pixels = hr.pixels
    if blur_kernel is not None:
        kernel = np.asarray(blur_kernel, dtype=np.float64)
        pixels = np.stack([ndimage.convolve(channel, kernel, mode="nearest") for channel in pixels])
        pixels = np.clip(pixels, 0.0, 1.0)
    lr = bicubic_resample(ImageBuffer(pixels), hr.width // s, hr.height // s)
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        noisy = lr.pixels + rng.normal(0.0, noise_sigma, size=lr.pixels.shape)
        lr = ImageBuffer(np.clip(noisy, 0.0, 1.0))
    return lr


@dataclass(eq=False)
class PatchPair:
    """Aligned HR/LR crops; (x, y) is the HR top-left corner"""
    hr_patch: ImageBuffer
    lr_patch: ImageBuffer
    x: int
    y: int

    @property
    def lr_coords(self) -> Tuple[int, int]:
        scale = self.hr_patch.width // self.lr_patch.width
        return self.x // scale, self.y // scale


def extract_patch_pairs(hr: ImageBuffer, s: int, patch_size: int, count: int, seed: int,
                        blur_kernel: Optional[np.ndarray] = None,
                        noise_sigma: float = 0.0) -> List[PatchPair]:
    """
    Seeded random crops with top-left corners on multiples of s

    Each LR patch is degrade() of exactly its HR crop.
    """
    if patch_size % s:
        raise GeometryError(f"Patch size {patch_size} is not divisible by scale {s}")
    if hr.width < patch_size or hr.height < patch_size:
        raise GeometryError(f"Image {hr.width}x{hr.height} is smaller than patch {patch_size}")
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, (hr.width - patch_size) // s + 1, size=count) * s
    ys = rng.integers(0, (hr.height - patch_size) // s + 1, size=count) * s

    pairs = []
    for index, (x, y) in enumerate(zip(xs.tolist(), ys.tolist())):
        crop = hr.crop(x, y, patch_size, patch_size)
        lr = degrade(crop, s, blur_kernel=blur_kernel, noise_sigma=noise_sigma,
                     seed=seed + index)
        pairs.append(PatchPair(crop, lr, x, y))
    return pairs


@dataclass(eq=False)
class DatasetManifest:
    """HR files with optional pre-computed LR counterparts"""
    entries: List[Tuple[Path, Optional[Path]]] = field(default_factory=list)
    scale: int = config.UPSCALE_FACTOR
    split: str = "train"

    def __len__(self):
        return len(self.entries)

    def validate(self) -> "DatasetManifest":
        if not self.entries:
            raise DataError("Manifest lists no images")
        for hr_path, lr_path in self.entries:
            for path in (hr_path, lr_path):
                if path is not None and not Path(path).is_file():
                    raise DataError(f"Manifest references a missing file: {path}")
        return self

    def save(self, path) -> None:
        path = Path(path)
        base = path.parent
        lines = [f"# scale={self.scale}", f"# split={self.split}"]
        for hr_path, lr_path in self.entries:
            line = _relative(hr_path, base)
            if lr_path is not None:
                line += "\t" + _relative(lr_path, base)
            lines.append(line)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / config.MANIFEST_NAME
        if not path.is_file():
            raise DataError(f"Manifest not found: {path}")
        manifest = cls()
        for raw in path.read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "scale" and value.strip():
                    manifest.scale = int(value)
                elif key.strip() == "split" and value.strip():
                    manifest.split = value.strip()
                continue
            parts = raw.rstrip("\n").split("\t")
            if len(parts) > 2:
                raise DataError(f"Malformed manifest line: {raw!r}")
            hr_path = path.parent / parts[0].strip()
            lr_path = path.parent / parts[1].strip() if len(parts) == 2 and parts[1].strip() else None
            manifest.entries.append((hr_path, lr_path))
        return manifest

    def load_pairs(self, blur_kernel: Optional[np.ndarray] = None, noise_sigma: float = 0.0,
                   seed: int = config.SEED) -> List[Tuple[str, ImageBuffer, ImageBuffer]]:
        """(name, hr, lr) for every entry; LR is degraded on the fly when absent"""
        self.validate()
        pairs = []
        for index, (hr_path, lr_path) in enumerate(self.entries):
            hr = load_image(hr_path)
            if lr_path is not None:
                lr = load_image(lr_path)
            else:
                lr = degrade(hr, self.scale, blur_kernel=blur_kernel,
                             noise_sigma=noise_sigma, seed=seed + index)
            pairs.append((Path(hr_path).stem, hr, lr))
        return pairs


def _relative(path: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(Path(path).resolve(), base.resolve())).as_posix()
    except ValueError:
        return Path(path).resolve().as_posix()


def synth_image(size: int, rng: np.random.Generator) -> ImageBuffer:
    """Oriented sinusoids + checkerboard + filtered noise, rescaled to [0, 1]"""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    channels = []
    period = int(rng.integers(4, 17))
    checker = ((xx // period + yy // period) % 2) * 2.0 - 1.0
    for _ in range(3):
        angle = rng.uniform(0.0, np.pi)
        freq = rng.uniform(0.05, 0.3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(2.0 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)
        noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma=1.0)
        noise /= max(noise.std(), 1e-12)
        mix = rng.dirichlet(np.ones(3))
        channels.append(mix[0] * wave + mix[1] * checker + mix[2] * noise)
    stack = np.stack(channels)
    low, high = stack.min(), stack.max()
    return ImageBuffer((stack - low) / (high - low))


class DatasetService:
    """Dataset generation and degradation on disk"""

    @staticmethod
    def synth_dataset(n: int, size: int, seed: int, out_dir, split: str = "train",
                      scale: int = config.UPSCALE_FACTOR) -> DatasetManifest:
        """
        Write n procedural images and a manifest listing them

        Args:
            n: Number of images
            size: Width and height in pixels
            seed: Image i is drawn from default_rng([seed, i])
            out_dir: Output directory
            split: Split tag stored in the manifest
            scale: Scale stored in the manifest

        Returns:
            The written manifest
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Synthesizing {n} images of {size}px into {out_dir} (seed {seed})")
        manifest = DatasetManifest(scale=scale, split=split)
        for index in range(n):
            image = synth_image(size, np.random.default_rng([seed, index]))
            path = out_dir / f"img_{index:04d}.ppm"
            save_image(path, image)
            manifest.entries.append((path, None))
        manifest.save(out_dir / config.MANIFEST_NAME)
        logger.info(f"Manifest written: {out_dir / config.MANIFEST_NAME}")
        return manifest

    @staticmethod
    def degrade_manifest(manifest: DatasetManifest, out_dir, scale: int,
                         blur_kernel: Optional[np.ndarray] = None,
                         noise_sigma: float = 0.0, seed: int = config.SEED) -> DatasetManifest:
        """Write an LR file for every HR entry and a manifest pairing them"""
        manifest.validate()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result = DatasetManifest(scale=scale, split=manifest.split)
        for index, (hr_path, _) in enumerate(manifest.entries):
            hr = load_image(hr_path)
            lr = degrade(hr, scale, blur_kernel=blur_kernel, noise_sigma=noise_sigma,
                         seed=seed + index)
            lr_path = out_dir / f"{Path(hr_path).stem}_x{scale}.ppm"
            save_image(lr_path, lr)
            result.entries.append((Path(hr_path), lr_path))
        result.save(out_dir / config.MANIFEST_NAME)
        logger.info(f"Degraded {len(result)} images by x{scale} into {out_dir}")
        return result
