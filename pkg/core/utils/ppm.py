"""
Binary PPM (P6, 8-bit) reader and writer
"""
import numpy as np

from core.exceptions import ImageFormatError

MAGIC = b"P6"
_WHITESPACE = b" \t\n\r\x0b\x0c"


def encode_ppm(pixels: np.ndarray) -> bytes:
    """(H, W, 3) uint8 array -> P6 file contents"""
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ImageFormatError(f"PPM needs an (H, W, 3) uint8 array, got {pixels.shape} {pixels.dtype}")
    height, width, _ = pixels.shape
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels).tobytes()


def _read_token(data: bytes, pos: int):
    """Next whitespace-delimited header token, skipping # comments"""
    while pos < len(data):
        byte = data[pos:pos + 1]
        if byte == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        elif byte in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("Truncated PPM header")
    return data[start:pos], pos


def decode_ppm(data: bytes) -> np.ndarray:
    """P6 file contents -> (H, W, 3) uint8 array"""
    if data[:2] != MAGIC:
        raise ImageFormatError(f"Unsupported image magic {data[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ImageFormatError(f"Malformed PPM header field {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"Invalid PPM size {width}x{height}")
    if not 1 <= maxval <= 255:
        raise ImageFormatError(f"Only 8-bit PPM is supported, maxval={maxval}")
    if pos >= len(data) or data[pos:pos + 1] not in _WHITESPACE:
        raise ImageFormatError("Missing whitespace after PPM header")
    pos += 1

    expected = width * height * 3
    body = data[pos:pos + expected]
    if len(body) != expected:
        raise ImageFormatError(f"PPM body has {len(body)} bytes, expected {expected}")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)
    if maxval != 255:
        pixels = np.round(pixels.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return pixels.copy()
