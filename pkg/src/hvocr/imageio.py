"""Page image I/O, Sauvola binarization, projection profiles and connected components.

Images are immutable wrappers around 2-D numpy arrays indexed ``[row, col]``.
Binary images store ink as 1 and background as 0.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy import ndimage

PathLike = Union[str, os.PathLike]

SAUVOLA_R = 128.0


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported Netpbm input."""


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        pix = np.asarray(self.pixels)
        if pix.ndim != 2 or pix.shape[0] == 0 or pix.shape[1] == 0:
            raise ValueError(f"gray image must be a non-empty 2-D array, got shape {pix.shape}")
        if pix.size and (pix.min() < 0 or pix.max() > 255):
            raise ValueError("gray intensities must lie in [0, 255]")
        object.__setattr__(self, "pixels", _frozen(pix, np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> List[int]:
        return self.pixels.ravel().tolist()

    @classmethod
    def from_data(cls, width: int, height: int, data) -> "GrayImage":
        flat = np.asarray(data)
        if flat.size != width * height:
            raise ValueError(f"data length {flat.size} != width*height {width * height}")
        return cls(flat.reshape(height, width))

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class BinaryImage:
    pixels: np.ndarray

    def __post_init__(self):
        pix = np.asarray(self.pixels)
        if pix.ndim != 2:
            raise ValueError(f"binary image must be 2-D, got shape {pix.shape}")
        if pix.size and not np.isin(pix, (0, 1)).all():
            raise ValueError("binary image values must be 0 or 1")
        object.__setattr__(self, "pixels", _frozen(pix, np.uint8))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def data(self) -> List[int]:
        return self.pixels.ravel().tolist()

    @property
    def ink(self) -> int:
        return int(self.pixels.sum())

    @classmethod
    def from_data(cls, width: int, height: int, data) -> "BinaryImage":
        flat = np.asarray(data)
        if flat.size != width * height:
            raise ValueError(f"data length {flat.size} != width*height {width * height}")
        return cls(flat.reshape(height, width))

    @classmethod
    def blank(cls, width: int, height: int) -> "BinaryImage":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def crop(self, x0: int, y0: int, x1: int, y1: int) -> "BinaryImage":
        """Inclusive crop; coordinates must lie inside the image."""
        if not (0 <= x0 <= x1 < self.width and 0 <= y0 <= y1 < self.height):
            raise ValueError(f"crop box ({x0},{y0},{x1},{y1}) outside {self.width}x{self.height} image")
        return BinaryImage(self.pixels[y0:y1 + 1, x0:x1 + 1])

    def __eq__(self, other):
        return isinstance(other, BinaryImage) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True)
class ConnectedComponent:
    x0: int
    y0: int
    x1: int
    y1: int
    pixel_count: int

    @property
    def box(self):
        return (self.x0, self.y0, self.x1, self.y1)


# ---------------------------------------------------------------------------
# Netpbm


def _tokenize_header(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    pos = 2
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed header: unexpected end of file")
        tokens.append(buf[start:pos])
    try:
        values = [int(t) for t in tokens]
    except ValueError as exc:
        raise ImageFormatError(f"malformed header: {exc}") from None
    return values, pos


def _ascii_body(buf: bytes) -> bytes:
    lines = []
    for line in buf.splitlines():
        lines.append(line.split(b"#", 1)[0])
    return b" ".join(lines)


def load_image(path: PathLike) -> Union[GrayImage, BinaryImage]:
    """Load a PBM (P1/P4) or PGM (P2/P5) file.

    PBM black maps to ink=1. PGM intensities with a maxval other than 255 are
    rescaled to [0, 255].
    """
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic in (b"P1", b"P4"):
        (width, height), pos = _tokenize_header(buf, 2)
        maxval = 1
    elif magic in (b"P2", b"P5"):
        (width, height, maxval), pos = _tokenize_header(buf, 3)
        if not 0 < maxval < 65536:
            raise ImageFormatError(f"malformed header: maxval {maxval} out of range")
    else:
        raise ImageFormatError(f"unsupported magic number {magic!r}")
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"malformed header: dimensions {width}x{height}")

    if magic == b"P4":
        body = buf[pos + 1:]
        row_bytes = (width + 7) // 8
        if len(body) < row_bytes * height:
            raise ImageFormatError("payload shorter than declared dimensions")
        packed = np.frombuffer(body[:row_bytes * height], dtype=np.uint8).reshape(height, row_bytes)
        bits = np.unpackbits(packed, axis=1)[:, :width]
        return BinaryImage(bits)
    if magic == b"P1":
        digits = [c for c in _ascii_body(buf[pos:]) if c in b"01"]
        if len(digits) < width * height:
            raise ImageFormatError("payload shorter than declared dimensions")
        bits = np.array(digits[:width * height], dtype=np.uint8) - ord("0")
        return BinaryImage(bits.reshape(height, width))
    if magic == b"P5":
        body = buf[pos + 1:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        need = width * height * dtype.itemsize
        if len(body) < need:
            raise ImageFormatError("payload shorter than declared dimensions")
        values = np.frombuffer(body[:need], dtype=dtype).astype(np.int64)
    else:
        try:
            values = np.array([int(t) for t in _ascii_body(buf[pos:]).split()], dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError(f"malformed payload: {exc}") from None
        if values.size < width * height:
            raise ImageFormatError("payload shorter than declared dimensions")
        values = values[:width * height]
    if values.size and values.max() > maxval:
        raise ImageFormatError("sample exceeds maxval")
    if maxval != 255:
        values = np.rint(values * (255.0 / maxval)).astype(np.int64)
    return GrayImage(values.reshape(height, width))


def save_pbm(img: BinaryImage, path: PathLike) -> None:
    """Write a binary image as raw PBM (P4)."""
    packed = np.packbits(img.pixels, axis=1)
    header = f"P4\n{img.width} {img.height}\n".encode("ascii")
    Path(path).write_bytes(header + packed.tobytes())


def save_pgm(img: GrayImage, path: PathLike) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


# ---------------------------------------------------------------------------
# Binarization


def _window_sums(values: np.ndarray, window: int):
    """Sums over a ``window``-square neighbourhood clipped to the image bounds."""
    h, w = values.shape
    r = window // 2
    integral = np.zeros((h + 1, w + 1), dtype=values.dtype)
    integral[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    rows = np.arange(h)
    cols = np.arange(w)
    top = np.clip(rows - r, 0, h)
    bottom = np.clip(rows + r + 1, 0, h)
    left = np.clip(cols - r, 0, w)
    right = np.clip(cols + r + 1, 0, w)
    total = (integral[np.ix_(bottom, right)] - integral[np.ix_(top, right)]
             - integral[np.ix_(bottom, left)] + integral[np.ix_(top, left)])
    count = np.outer(bottom - top, right - left)
    return total, count


def sauvola_threshold(mean, sq_mean, k: float):
    """Threshold ``m * (1 + k * (s / R - 1))`` from a local mean and mean square."""
    std = np.sqrt(np.maximum(sq_mean - mean * mean, 0.0))
    return mean * (1.0 + k * (std / SAUVOLA_R - 1.0))


def sauvola_binarize(img: GrayImage, window: int = 31, k: float = 0.2) -> BinaryImage:
    """Sauvola local thresholding with borders clipped to the image.

    A pixel is ink when its intensity is strictly below the local threshold.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if not 0.0 < k < 1.0:
        raise ValueError(f"k must lie in (0, 1), got {k}")
    vals = img.pixels.astype(np.int64)
    total, count = _window_sums(vals, window)
    total_sq, _ = _window_sums(vals * vals, window)
    mean = total / count
    thresh = sauvola_threshold(mean, total_sq / count, k)
    return BinaryImage((vals < thresh).astype(np.uint8))


# ---------------------------------------------------------------------------
# Profiles and components


def horizontal_projection(img: BinaryImage) -> np.ndarray:
    """Ink count per row."""
    return img.pixels.sum(axis=1, dtype=np.int64)


def vertical_projection(img: BinaryImage) -> np.ndarray:
    """Ink count per column."""
    return img.pixels.sum(axis=0, dtype=np.int64)


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(img: BinaryImage) -> List[ConnectedComponent]:
    """8-connected ink components sorted by ``(y0, x0)``."""
    labels, n = ndimage.label(img.pixels, structure=_EIGHT)
    if n == 0:
        return []
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    comps = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = sl
        comps.append(ConnectedComponent(xs.start, ys.start, xs.stop - 1, ys.stop - 1, int(counts[idx])))
    comps.sort(key=lambda c: (c.y0, c.x0, c.y1, c.x1))
    return comps


def despeckle(img: BinaryImage, max_size: int) -> BinaryImage:
    """Clear every 8-connected component with at most ``max_size`` pixels."""
    if max_size <= 0:
        return img
    labels, n = ndimage.label(img.pixels, structure=_EIGHT)
    if n == 0:
        return img
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    keep = counts > max_size
    keep[0] = False
    return BinaryImage(keep[labels].astype(np.uint8))
