"""
Dataset synthesis tools.

Weather augmentation and paired sharp/blurred corpora grow training data.
Annotation files hold one normalized ``class cx cy w h`` box per line.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, TypeVar

import numpy as np

from .errors import EvenKernel, ParseError, RangeError
from .imaging import BBox, Image, box_blur, load_image, round_half_up, save_image

__all__ = [
    "AUGMENT_TAGS", "augment", "AnnotationRecord", "read_annotations", "write_annotations",
    "parse_annotations", "format_annotations", "denormalize", "normalize",
    "CorpusEntry", "CorpusManifest", "synth_blur_corpus", "DEBLUR_KERNEL_SIZES", "split_dataset",
]

AUGMENT_TAGS = ("rain", "shine", "snow", "fog", "unlit")
DEBLUR_KERNEL_SIZES = (7, 9, 11, 13, 15, 17, 19)

T = TypeVar("T")


def _rain(px: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = px.shape[:2]
    out = px.astype(np.float64)
    n = max(1, (h * w) // 300)
    length = rng.integers(max(2, h // 20), max(3, h // 6) + 1, size=n)
    x0 = rng.integers(0, w, size=n)
    y0 = rng.integers(0, h, size=n)
    slant = rng.uniform(-0.3, 0.3)
    mask = np.zeros((h, w), dtype=bool)
    for step in range(int(length.max())):
        live = step < length
        ys = y0 + step
        xs = np.floor(x0 + slant * step).astype(int)
        ok = live & (ys < h) & (xs >= 0) & (xs < w)
        mask[ys[ok], xs[ok]] = True
    out[mask] = 0.4 * out[mask] + 0.6 * 220.0
    return out


def _shine(px: np.ndarray) -> np.ndarray:
    h, w = px.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.hypot(yy - (h - 1) / 2.0, xx - (w - 1) / 2.0)
    radius = max(1.0, 0.5 * math.hypot(h, w))
    glow = 60.0 * np.clip(1.0 - r / radius, 0.0, 1.0)
    return px.astype(np.float64) + 40.0 + glow[:, :, None]


def _snow(px: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = px.astype(np.float64)
    out[rng.random(px.shape[:2]) < 0.03] = 255.0
    return out


def augment(img: Image, seed: int) -> Dict[str, Image]:
    """Five deterministic weather variants of ``img``, keyed by tag.

    Together with the original this gives six images per source.
    """
    seq = np.random.SeedSequence(seed)
    rain_rng, snow_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    px = img.pixels
    variants = {
        "rain": _rain(px, rain_rng),
        "shine": _shine(px),
        "snow": _snow(px, snow_rng),
        "fog": 0.5 * px.astype(np.float64) + 0.5 * 200.0,
        "unlit": px.astype(np.float64) - 60.0,
    }
    return {tag: Image(round_half_up(variants[tag])) for tag in AUGMENT_TAGS}


@dataclass(frozen=True)
class AnnotationRecord:
    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width and height must be > 0")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")


def parse_annotations(text: str) -> List[AnnotationRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ParseError(f"expected 5 fields, got {len(fields)}", lineno)
        try:
            cls = int(fields[0])
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from exc
        try:
            records.append(AnnotationRecord(cls, *vals))
        except ValueError as exc:
            raise RangeError(str(exc), lineno) from exc
    return records


def format_annotations(records: Iterable[AnnotationRecord]) -> str:
    return "".join(f"{r.class_id} {r.cx:.6f} {r.cy:.6f} {r.w:.6f} {r.h:.6f}\n" for r in records)


def read_annotations(path) -> List[AnnotationRecord]:
    return parse_annotations(Path(path).read_text(encoding="utf-8"))


def write_annotations(records: Iterable[AnnotationRecord], path) -> None:
    Path(path).write_text(format_annotations(records), encoding="utf-8")


def denormalize(rec: AnnotationRecord, w: int, h: int) -> BBox:
    return BBox((rec.cx - rec.w / 2) * w, (rec.cy - rec.h / 2) * h,
                (rec.cx + rec.w / 2) * w, (rec.cy + rec.h / 2) * h)


def normalize(box: BBox, w: int, h: int, class_id: int = 0) -> AnnotationRecord:
    cx, cy = box.center
    return AnnotationRecord(class_id, cx / w, cy / h, box.width / w, box.height / h)


@dataclass(frozen=True)
class CorpusEntry:
    sharp_path: str
    blurred_path: str
    kernel_size: int

    def to_dict(self):
        return {"sharp_path": self.sharp_path, "blurred_path": self.blurred_path,
                "kernel_size": self.kernel_size}


@dataclass(frozen=True)
class CorpusManifest:
    entries: Tuple[CorpusEntry, ...]
    seed: int = 0

    def __post_init__(self):
        blurred = [e.blurred_path for e in self.entries]
        if len(set(blurred)) != len(blurred):
            raise ValueError("blurred paths in a manifest must be unique")
        for e in self.entries:
            _check_corpus_kernel(e.kernel_size)

    def to_dict(self):
        return {"seed": self.seed, "entries": [e.to_dict() for e in self.entries]}

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "CorpusManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(tuple(CorpusEntry(**e) for e in d["entries"]), int(d.get("seed", 0)))


def _check_corpus_kernel(k: int) -> None:
    if k % 2 == 0:
        raise EvenKernel(f"blur kernel size must be odd, got {k}")
    if not DEBLUR_KERNEL_SIZES[0] <= k <= DEBLUR_KERNEL_SIZES[-1]:
        raise EvenKernel(f"blur kernel size must lie in [7, 19], got {k}")


def synth_blur_corpus(sharp_paths: Sequence, kernel_sizes: Sequence[int], out_dir,
                      seed: int = 0) -> CorpusManifest:
    """Write one box-blurred copy per (image, kernel size) pair into ``out_dir``.

    ``sharp_paths`` holds image files or in-memory :class:`Image` objects;
    the latter are saved next to their blurred copies first.

    The manifest is returned and also written as ``out_dir/manifest.json``.
    """
    for k in kernel_sizes:
        _check_corpus_kernel(k)
    out = Path(out_dir)
    # decode everything up front so a bad input cannot leave orphaned blurred files
    sources = [(src, None) if isinstance(src, Image) else (load_image(src), Path(src))
               for src in sharp_paths]
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, src) in enumerate(sources):
        if src is None:
            src = out / f"{i:05d}_sharp.png"
            save_image(img, src)
        for k in kernel_sizes:
            dst = out / f"{i:05d}_{src.stem}_k{k}.png"
            save_image(box_blur(img, k), dst)
            entries.append(CorpusEntry(str(src), str(dst), int(k)))
    manifest = CorpusManifest(tuple(entries), seed)
    manifest.write(out / "manifest.json")
    return manifest


def split_dataset(items: Sequence[T], seed: int = 0,
                  fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> Tuple[List[T], List[T], List[T]]:
    """Seeded train/validation/test partition (80/10/10 by default)."""
    if not math.isclose(sum(fractions), 1.0) or min(fractions) < 0:
        raise ValueError("fractions must be non-negative and sum to 1")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(fractions[0] * len(items)))
    n_val = int(round(fractions[1] * len(items)))
    pick = [items[i] for i in order]
    return pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:]
