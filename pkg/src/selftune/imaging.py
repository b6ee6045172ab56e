"""Grayscale images: file I/O, quality metrics and overlapping patch grids.

Images are plain 2-D ``float64`` numpy arrays, indexed ``[row, col]``, with a
nominal intensity range of [0, 1].  Noisy images may leave that range; only
:func:`save_image` clamps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """The file is not a grayscale PGM/PNG we can read."""


def as_image(data) -> np.ndarray:
    """Validate and convert ``data`` to a 2-D finite float64 array."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf")
    return img


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _pgm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping comments.

    Returns the integers and the offset of the single whitespace byte that
    terminates the header.
    """
    tokens: list[int] = []
    pos = 2  # past the magic number
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(int(buf[start:pos]))
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise ImageFormatError("truncated header")
    return tokens, pos


def _read_pgm(buf: bytes) -> np.ndarray:
    (width, height, maxval), pos = _pgm_tokens(buf, 3)
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid PGM header ({width}x{height}, maxval {maxval})")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    body = buf[pos + 1 :]
    need = width * height * dtype.itemsize
    if len(body) < need:
        raise ImageFormatError(f"truncated pixel data: {len(body)} of {need} bytes")
    pixels = np.frombuffer(body[:need], dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("L", "1"):
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
    raise ImageFormatError(f"unsupported PNG color format {mode!r}: only grayscale is supported")


def load_image(path) -> np.ndarray:
    """Load a binary PGM (P5, 8/16-bit) or grayscale PNG scaled to [0, 1]."""
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 2:
        raise ImageFormatError("truncated header")
    if buf.startswith(_PNG_SIGNATURE):
        return _read_png(path)
    magic = buf[:2]
    if magic == b"P5":
        return _read_pgm(buf)
    if magic in (b"P6", b"P3"):
        raise ImageFormatError(f"unsupported format {magic.decode()} (color PPM); only grayscale is supported")
    if magic in (b"P1", b"P2", b"P4"):
        raise ImageFormatError(f"unsupported format {magic.decode()}; only binary P5 PGM is supported")
    raise ImageFormatError("unrecognised image format (expected P5 PGM or PNG)")


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to 8-bit."""
    scaled = np.clip(as_image(img), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as an 8-bit binary PGM."""
    pixels = quantize(img)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are equal."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


# --------------------------------------------------------------------------
# patches
# --------------------------------------------------------------------------

def patch_starts(length: int, size: int, stride: int) -> np.ndarray:
    """Start offsets along one axis; the last patch is clamped to the edge."""
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return np.asarray(starts, dtype=np.intp)


@dataclass(frozen=True)
class PatchGrid:
    """Overlapping ``s x s`` patches laid out on a regular grid.

    ``patches`` has shape ``(rows, cols, s, s)``; ``row_starts``/``col_starts``
    give the top-left pixel of each grid row/column.
    """

    patch_size: int
    stride: int
    row_starts: np.ndarray
    col_starts: np.ndarray
    patches: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_starts), len(self.col_starts)

    @property
    def positions(self) -> np.ndarray:
        """Top-left ``(row, col)`` of every patch, row-major, shape ``(n, 2)``."""
        rr, cc = np.meshgrid(self.row_starts, self.col_starts, indexing="ij")
        return np.stack([rr.ravel(), cc.ravel()], axis=1)

    @property
    def image_shape(self) -> tuple[int, int]:
        s = self.patch_size
        return int(self.row_starts[-1]) + s, int(self.col_starts[-1]) + s

    def with_patches(self, patches: np.ndarray) -> PatchGrid:
        patches = np.asarray(patches, dtype=np.float64).reshape(self.patches.shape)
        return PatchGrid(self.patch_size, self.stride, self.row_starts, self.col_starts, patches)

    def coverage(self) -> np.ndarray:
        """Number of patches covering each pixel."""
        counts = np.zeros(self.image_shape)
        s = self.patch_size
        for r in self.row_starts:
            for c in self.col_starts:
                counts[r : r + s, c : c + s] += 1
        return counts


def extract_patches(img, s: int, t: int) -> PatchGrid:
    img = as_image(img)
    height, width = img.shape
    if not 1 <= s <= min(height, width):
        raise ValueError(f"patch size {s} out of range for a {width}x{height} image")
    if not 1 <= t <= s:
        raise ValueError(f"stride {t} must satisfy 1 <= t <= patch size {s}")
    rows = patch_starts(height, s, t)
    cols = patch_starts(width, s, t)
    view = np.lib.stride_tricks.sliding_window_view(img, (s, s))
    patches = view[np.ix_(rows, cols)].copy()
    return PatchGrid(s, t, rows, cols, patches)


def reassemble(grid: PatchGrid, width: int, height: int) -> np.ndarray:
    """Average overlapping patch values back into a ``height x width`` image."""
    if grid.image_shape != (height, width):
        raise ValueError(
            f"grid covers {grid.image_shape[1]}x{grid.image_shape[0]}, "
            f"not the requested {width}x{height}"
        )
    return _overlap_average(grid.patches, grid.row_starts, grid.col_starts, (height, width))


def _overlap_average(patches: np.ndarray, rows, cols, shape) -> np.ndarray:
    s = patches.shape[-1]
    acc = np.zeros(shape)
    counts = np.zeros(shape)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            acc[r : r + s, c : c + s] += patches[i, j]
            counts[r : r + s, c : c + s] += 1
    if np.any(counts == 0):
        raise ValueError("inconsistent grid: some pixels are not covered")
    return acc / counts
