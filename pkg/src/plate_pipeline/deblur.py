"""
Deblurrer backend contract and the multi-scale input it consumes.

The generator takes three copies of the frame at 256, 128 and 64 pixels
square and returns its finest-scale output, which is mapped back to the
frame's original size here.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .errors import BackendFailure, PlatePipelineError
from .imaging import Image, LetterboxTransform, letterbox, resize, unletterbox

__all__ = ["MultiScaleInput", "DeblurResult", "DeblurBackend", "build_multiscale", "deblur",
           "SCALES"]

SCALES = (256, 128, 64)


@dataclass(frozen=True)
class MultiScaleInput:
    b1: Image
    b2: Image
    b3: Image
    transform: LetterboxTransform

    def __post_init__(self):
        for img, s in zip((self.b1, self.b2, self.b3), SCALES):
            if (img.width, img.height) != (s, s):
                raise ValueError(f"scale input must be {s}x{s}, got {img.width}x{img.height}")


@dataclass(frozen=True)
class DeblurResult:
    sharp: Image
    scale_output: Image


class DeblurBackend(Protocol):
    concurrent_safe: bool

    def restore(self, inputs: MultiScaleInput) -> Image:
        """Return the 256x256 finest-scale sharp output."""
        ...


def build_multiscale(img: Image) -> MultiScaleInput:
    b1, tf = letterbox(img, SCALES[0], SCALES[0])
    return MultiScaleInput(b1, resize(b1, SCALES[1], SCALES[1]), resize(b1, SCALES[2], SCALES[2]), tf)


def deblur(backend: DeblurBackend, img: Image) -> DeblurResult:
    ms = build_multiscale(img)
    try:
        s1 = backend.restore(ms)
    except PlatePipelineError:
        raise
    except Exception as exc:
        raise BackendFailure(f"deblur inference failed: {exc}", stage="deblur") from exc
    if not isinstance(s1, Image) or (s1.width, s1.height) != (SCALES[0], SCALES[0]):
        raise BackendFailure("deblur backend must return a 256x256 image", stage="deblur")
    return DeblurResult(sharp=unletterbox(s1, ms.transform), scale_output=s1)
