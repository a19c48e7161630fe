"""
Raster image type and the pixel-level primitives every stage builds on.

Images are stored as ``(height, width, channels)`` uint8 arrays, interleaved
row-major. All operations are pure: they never modify their inputs and the
pixel buffer of an :class:`Image` is marked read-only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import EmptyCrop, EvenKernel, ImageDecodeError

__all__ = [
    "Image", "Kernel", "BBox", "LetterboxTransform", "LAPLACIAN",
    "to_grayscale", "convolve", "box_blur", "crop", "crop_region",
    "resize", "letterbox", "unletterbox", "round_half_up",
    "load_image", "save_image", "LETTERBOX_FILL",
]

LETTERBOX_FILL = 114


def round_half_up(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer with halves going up, then clamp to uint8."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


class Image:
    """An immutable 8-bit raster with 1 (gray) or 3 (RGB) channels."""

    __slots__ = ("_pixels",)

    def __init__(self, pixels):
        arr = np.asarray(pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w) or (h, w, 1|3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
        arr.setflags(write=False)
        self._pixels = arr

    @classmethod
    def filled(cls, width: int, height: int, value=0, channels: int = 1) -> "Image":
        arr = np.empty((height, width, channels), dtype=np.uint8)
        arr[...] = value
        return cls(arr)

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return self._pixels.shape[1]

    @property
    def height(self) -> int:
        return self._pixels.shape[0]

    @property
    def channels(self) -> int:
        return self._pixels.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self._pixels.shape

    @property
    def data(self) -> bytes:
        return self._pixels.tobytes()

    def plane(self) -> np.ndarray:
        """Grayscale samples as a float64 ``(h, w)`` array."""
        return to_grayscale(self)._pixels[:, :, 0].astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._pixels, other._pixels)

    def __hash__(self):
        return hash((self.shape, self._pixels.tobytes()))

    def __repr__(self):
        return f"Image(width={self.width}, height={self.height}, channels={self.channels})"


@dataclass(frozen=True)
class Kernel:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("kernel must be square")
        if w.shape[0] % 2 == 0:
            raise EvenKernel(f"kernel size must be odd, got {w.shape[0]}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def box(cls, size: int) -> "Kernel":
        _check_odd(size)
        return cls(np.full((size, size), 1.0 / (size * size)))


LAPLACIAN = Kernel(np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64))


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box: {vals}")
        for name, v in zip(("x_min", "y_min", "x_max", "y_max"), vals):
            object.__setattr__(self, name, float(v))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)


def _check_odd(size: int) -> None:
    if size < 1 or size % 2 == 0:
        raise EvenKernel(f"kernel size must be a positive odd integer, got {size}")


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    rgb = img.pixels.astype(np.float64)
    gray = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return Image(round_half_up(gray))


def _as_plane(img) -> np.ndarray:
    if isinstance(img, Image):
        if img.channels != 1:
            raise ValueError("convolve expects a single-channel image")
        return img.pixels[:, :, 0].astype(np.float64)
    plane = np.asarray(img, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("convolve expects a 2-D plane")
    return plane


def convolve(img, k: Kernel) -> np.ndarray:
    """True 2-D convolution with replicate-edge padding.

    Accepts a 1-channel :class:`Image` or a 2-D array and returns an
    unclamped float64 plane of the same shape.
    """
    if not isinstance(k, Kernel):
        k = Kernel(k)
    plane = _as_plane(img)
    h, w = plane.shape
    r = k.size // 2
    padded = np.pad(plane, r, mode="edge")
    flipped = k.weights[::-1, ::-1]
    out = np.zeros_like(plane)
    for i in range(k.size):
        for j in range(k.size):
            c = flipped[i, j]
            if c != 0.0:
                out += c * padded[i:i + h, j:j + w]
    return out


def _box_sum_1d(plane: np.ndarray, size: int, axis: int) -> np.ndarray:
    r = size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r + 1, r)
    padded = np.pad(plane, pad, mode="edge")
    csum = np.cumsum(padded, axis=axis)
    n = plane.shape[axis]
    hi = np.take(csum, np.arange(size, size + n), axis=axis)
    lo = np.take(csum, np.arange(0, n), axis=axis)
    return hi - lo


def box_blur(img: Image, size: int) -> Image:
    """Uniform ``size``x``size`` blur per channel, rounded and clamped to 8 bits."""
    _check_odd(size)
    src = img.pixels.astype(np.float64)
    out = np.empty_like(src)
    for c in range(img.channels):
        # the box kernel is separable and replicate padding clamps each axis
        # independently, so two 1-D passes equal the 2-D convolution; sums of
        # integers stay exact until the single final division
        out[:, :, c] = _box_sum_1d(_box_sum_1d(src[:, :, c], size, 0), size, 1) / (size * size)
    return Image(round_half_up(out))


def crop_region(img: Image, box: BBox, margin_fraction: float = 0.0) -> Tuple[int, int, int, int]:
    """Integer pixel bounds ``(x0, y0, x1, y1)`` of an inflated, clamped crop."""
    if margin_fraction < 0:
        raise ValueError("margin_fraction must be >= 0")
    mx = margin_fraction * box.width
    my = margin_fraction * box.height
    x0 = max(0.0, box.x_min - mx)
    y0 = max(0.0, box.y_min - my)
    x1 = min(float(img.width), box.x_max + mx)
    y1 = min(float(img.height), box.y_max + my)
    ix0, iy0 = int(math.floor(x0)), int(math.floor(y0))
    ix1, iy1 = int(math.ceil(x1)), int(math.ceil(y1))
    if ix1 <= ix0 or iy1 <= iy0:
        raise EmptyCrop(f"crop of {box.as_tuple()} is empty inside {img.width}x{img.height}")
    return ix0, iy0, ix1, iy1


def crop(img: Image, box: BBox, margin_fraction: float = 0.0) -> Image:
    x0, y0, x1, y1 = crop_region(img, box, margin_fraction)
    return Image(img.pixels[y0:y1, x0:x1])


def _bilinear(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    in_h, in_w = src.shape[:2]

    def axis(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, fy = axis(out_h, in_h)
    x0, x1, fx = axis(out_w, in_w)
    s = src.astype(np.float64)
    fx = fx[None, :, None]
    rows = s[:, x0] * (1 - fx) + s[:, x1] * fx
    fy = fy[:, None, None]
    return rows[y0] * (1 - fy) + rows[y1] * fy


@dataclass(frozen=True)
class LetterboxTransform:
    """Maps coordinates between a source image and its letterboxed canvas."""

    src_width: int
    src_height: int
    dst_width: int
    dst_height: int
    content_width: int
    content_height: int
    pad_x: int
    pad_y: int

    @property
    def scale_x(self) -> float:
        return self.content_width / self.src_width

    @property
    def scale_y(self) -> float:
        return self.content_height / self.src_height

    def forward(self, box: BBox) -> BBox:
        return BBox(box.x_min * self.scale_x + self.pad_x, box.y_min * self.scale_y + self.pad_y,
                    box.x_max * self.scale_x + self.pad_x, box.y_max * self.scale_y + self.pad_y)

    def inverse_coords(self, x_min, y_min, x_max, y_max):
        return ((x_min - self.pad_x) / self.scale_x, (y_min - self.pad_y) / self.scale_y,
                (x_max - self.pad_x) / self.scale_x, (y_max - self.pad_y) / self.scale_y)

    def inverse(self, box: BBox) -> BBox:
        return BBox(*self.inverse_coords(*box.as_tuple()))


def letterbox(img: Image, w: int, h: int, fill: int = LETTERBOX_FILL) -> Tuple[Image, LetterboxTransform]:
    """Aspect-preserving bilinear resize centred on a ``fill``-valued canvas."""
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be >= 1")
    scale = min(w / img.width, h / img.height)
    cw = min(w, max(1, int(math.floor(img.width * scale + 0.5))))
    ch = min(h, max(1, int(math.floor(img.height * scale + 0.5))))
    pad_x, pad_y = (w - cw) // 2, (h - ch) // 2
    canvas = np.full((h, w, img.channels), fill, dtype=np.uint8)
    if (cw, ch) == (img.width, img.height):
        content = img.pixels
    else:
        content = round_half_up(_bilinear(img.pixels, cw, ch))
    canvas[pad_y:pad_y + ch, pad_x:pad_x + cw] = content
    tf = LetterboxTransform(img.width, img.height, w, h, cw, ch, pad_x, pad_y)
    return Image(canvas), tf


def unletterbox(img: Image, tf: LetterboxTransform) -> Image:
    """Cut the content region out of a letterboxed canvas and restore source dims."""
    if (img.width, img.height) != (tf.dst_width, tf.dst_height):
        raise ValueError("canvas size does not match the letterbox transform")
    content = Image(img.pixels[tf.pad_y:tf.pad_y + tf.content_height,
                               tf.pad_x:tf.pad_x + tf.content_width])
    return resize(content, tf.src_width, tf.src_height, mode="stretch")


def resize(img: Image, w: int, h: int, mode: str = "stretch") -> Image:
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be >= 1")
    if mode == "letterbox":
        return letterbox(img, w, h)[0]
    if mode != "stretch":
        raise ValueError(f"unknown resize mode {mode!r}")
    if (w, h) == (img.width, img.height):
        return img
    return Image(round_half_up(_bilinear(img.pixels, w, h)))


def load_image(path: Union[str, Path]) -> Image:
    from PIL import Image as PILImage, UnidentifiedImageError

    try:
        with PILImage.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("L" if im.mode in ("1", "I;16", "I", "F", "LA") else "RGB")
            return Image(np.asarray(im))
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc


def save_image(img: Image, path: Union[str, Path]) -> None:
    from PIL import Image as PILImage

    arr = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    PILImage.fromarray(np.ascontiguousarray(arr)).save(path)
