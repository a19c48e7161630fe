"""
Synthetic frames and scripted mock backends for tests and demos.

Characters are drawn as seeded blocky glyphs on a light plate placed over a
textured background, so frames are edge-rich and distinct per seed.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .backends import IdentityDeblurrer, ScriptedDetector
from .detect import Detection
from .imaging import BBox, Image, crop, crop_region, round_half_up
from .pipeline import Backends, PipelineConfig

__all__ = ["SyntheticPlate", "edge_fixture", "render_plate_frame", "script_backends", "register_sample",
           "glyph"]


@dataclass(frozen=True)
class SyntheticPlate:
    image: Image
    plate_box: BBox
    char_boxes: Tuple[BBox, ...]
    text: str


def edge_fixture(size: int = 256, seed: int = 0) -> Image:
    """Random axis-aligned rectangles over a checkerboard: strong edges at many scales."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    px = np.where(((yy // 16) + (xx // 16)) % 2 == 0, 60.0, 190.0)
    for _ in range(40):
        x0, y0 = rng.integers(0, size - 8, size=2)
        w, h = rng.integers(4, max(5, size // 4), size=2)
        px[y0:y0 + h, x0:x0 + w] = rng.integers(0, 256)
    return Image(round_half_up(px))


def glyph(label: str) -> np.ndarray:
    """A deterministic 7x5 on/off pattern for ``label``."""
    rng = np.random.default_rng(zlib.crc32(label.encode("utf-8")))
    g = rng.random((7, 5)) < 0.5
    g[0, :] |= True  # every glyph has a top bar so none is blank
    return g


def render_plate_frame(text: str, width: int = 256, height: int = 256, seed: int = 0,
                       plate_box: Optional[BBox] = None) -> SyntheticPlate:
    rng = np.random.default_rng(seed)
    base = rng.integers(40, 200)
    yy, xx = np.mgrid[0:height, 0:width]
    bg = base + 30 * np.sin(xx / rng.uniform(5, 15)) * np.cos(yy / rng.uniform(5, 15))
    bg = bg + rng.normal(0, 6, size=(height, width))
    px = np.repeat(bg[:, :, None], 3, axis=2)

    cell_w, cell_h = 10, 14
    pw, ph = cell_w * len(text) + 12, cell_h + 10
    if plate_box is None:
        x0 = int(rng.integers(2, max(3, width - pw - 2)))
        y0 = int(rng.integers(2, max(3, height - ph - 2)))
        plate_box = BBox(x0, y0, x0 + pw, y0 + ph)
    x0, y0 = int(plate_box.x_min), int(plate_box.y_min)
    px[y0:y0 + ph, x0:x0 + pw] = (232, 232, 228)

    boxes = []
    for i, ch in enumerate(text):
        cx0, cy0 = x0 + 6 + i * cell_w, y0 + 5
        g = np.kron(glyph(ch), np.ones((2, 2), dtype=bool))
        region = px[cy0:cy0 + g.shape[0], cx0 + 1:cx0 + 1 + g.shape[1]]
        region[g[:region.shape[0], :region.shape[1]]] = (20, 20, 30)
        boxes.append(BBox(cx0, cy0, cx0 + cell_w, cy0 + cell_h))
    return SyntheticPlate(Image(round_half_up(px)), plate_box, tuple(boxes), text)


def script_backends(samples: Sequence[SyntheticPlate], cfg: PipelineConfig = PipelineConfig(),
                    plate_confidence: float = 0.95, deblur=None, delay: float = 0.0) -> Backends:
    """Mock LPD/CR backends that read every sample correctly when sharp."""
    lpd = ScriptedDetector(cfg.lpd.spec, delay=delay)
    cr = ScriptedDetector(cfg.cr.spec, delay=delay)
    for s in samples:
        register_sample(lpd, cr, s, cfg, plate_confidence)
    return Backends(lpd, cr, IdentityDeblurrer(delay) if deblur is None else deblur)


def register_sample(lpd: ScriptedDetector, cr: ScriptedDetector, s: SyntheticPlate,
                    cfg: PipelineConfig, plate_confidence: float = 0.95,
                    char_order: Optional[Sequence[int]] = None) -> None:
    lpd.register(s.image, [Detection(s.plate_box, 0, plate_confidence)])
    patch = crop(s.image, s.plate_box, cfg.crop_margin)
    ox, oy, _, _ = crop_region(s.image, s.plate_box, cfg.crop_margin)
    labels = cr.spec.class_labels
    order = range(len(s.text)) if char_order is None else char_order
    dets: List[Detection] = [
        Detection(s.char_boxes[i].shifted(-ox, -oy), labels.index(s.text[i]), 0.9 - 0.01 * i)
        for i in order
    ]
    cr.register(patch, dets)
