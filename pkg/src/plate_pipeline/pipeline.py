"""
End-to-end plate reading: blur gate, selective deblur, plate detection,
per-plate crop, character detection and left-to-right string assembly.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .backends import (IdentityDeblurrer, OnnxDeblurrer, OnnxDetector, ScriptedDeblurrer,
                       ScriptedDetector, SharpenDeblurrer, serialized)
from .blur_gate import BlurGateConfig, BlurVerdict, check
from .deblur import DeblurBackend, deblur
from .detect import Detection, DetectionConfig, DetectorBackend, DetectorSpec, detect
from .errors import ConfigError, EmptyCrop, NoCharacters
from .imaging import BBox, Image, crop, crop_region, load_image

log = logging.getLogger(__name__)

__all__ = [
    "StageConfig", "BackendConfig", "PipelineConfig", "PlateReading", "PipelineResult", "Backends",
    "assemble_plate", "validate_plate_format", "run", "run_batch", "build_backends",
    "build_deblurrer", "STAGES",
]

STAGES = ("gate", "deblur", "lpd", "cr", "assemble")
DEBLUR_MODES = ("auto", "force", "skip")


@dataclass(frozen=True)
class BackendConfig:
    """Which backend implementation to build for a stage.

    ``kind`` is ``mock`` / ``onnx`` for detectors and ``identity`` / ``sharpen``
    / ``scripted`` / ``onnx`` for the deblurrer. ``path`` is a fixture JSON
    (mock, scripted) or model file (onnx).
    """

    kind: str
    path: Optional[str] = None
    options: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.path is not None:
            d["path"] = self.path
        if self.options:
            d["options"] = dict(self.options)
        return d

    @classmethod
    def from_dict(cls, d, base: Optional[Path] = None):
        if d is None:
            return None
        if "kind" not in d:
            raise ConfigError("backend entry needs a 'kind'")
        path = d.get("path")
        if path is not None and base is not None and not Path(path).is_absolute():
            path = str(base / path)
        return cls(d["kind"], path, dict(d.get("options", {})))


@dataclass(frozen=True)
class StageConfig:
    detection: DetectionConfig
    spec: DetectorSpec
    backend: Optional[BackendConfig] = None

    def to_dict(self):
        d = {"iou_threshold": self.detection.iou_threshold,
             "confidence_threshold": self.detection.confidence_threshold,
             "input_size": self.spec.input_size,
             "class_labels": list(self.spec.class_labels)}
        if self.backend is not None:
            d["backend"] = self.backend.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, default: "StageConfig", base=None):
        det = DetectionConfig(d.get("iou_threshold", default.detection.iou_threshold),
                              d.get("confidence_threshold", default.detection.confidence_threshold))
        labels = d.get("class_labels", default.spec.class_labels)
        spec = replace(default.spec, class_count=len(labels), class_labels=tuple(labels),
                       input_size=d.get("input_size", default.spec.input_size))
        backend = BackendConfig.from_dict(d.get("backend"), base) if "backend" in d else default.backend
        return cls(det, spec, backend)


@dataclass(frozen=True)
class PipelineConfig:
    gate: BlurGateConfig = BlurGateConfig()
    lpd: StageConfig = StageConfig(DetectionConfig(), DetectorSpec.plate())
    cr: StageConfig = StageConfig(DetectionConfig(), DetectorSpec.characters())
    crop_margin: float = 0.05
    deblur_mode: str = "auto"
    deblur: Optional[BackendConfig] = None

    def __post_init__(self):
        if self.lpd.spec.class_count != 1:
            raise ConfigError(f"plate detector must have 1 class, got {self.lpd.spec.class_count}")
        if self.cr.spec.class_count != 44:
            raise ConfigError(f"character detector must have 44 classes, got {self.cr.spec.class_count}")
        if not 0.0 <= self.crop_margin <= 0.5:
            raise ConfigError(f"crop_margin must lie in [0, 0.5], got {self.crop_margin}")
        if self.deblur_mode not in DEBLUR_MODES:
            raise ConfigError(f"deblur_mode must be one of {DEBLUR_MODES}, got {self.deblur_mode!r}")

    def to_dict(self):
        d = {"gate": {"threshold": self.gate.threshold}, "lpd": self.lpd.to_dict(),
             "cr": self.cr.to_dict(), "crop_margin": self.crop_margin,
             "deblur_mode": self.deblur_mode}
        if self.deblur is not None:
            d["deblur"] = self.deblur.to_dict()
        return d

    @classmethod
    def from_dict(cls, d, base: Optional[Path] = None) -> "PipelineConfig":
        default = cls()
        try:
            gate = BlurGateConfig(float(d.get("gate", {}).get("threshold", default.gate.threshold)))
            return cls(
                gate=gate,
                lpd=StageConfig.from_dict(d.get("lpd", {}), default.lpd, base),
                cr=StageConfig.from_dict(d.get("cr", {}), default.cr, base),
                crop_margin=float(d.get("crop_margin", default.crop_margin)),
                deblur_mode=d.get("deblur_mode", default.deblur_mode),
                deblur=BackendConfig.from_dict(d.get("deblur"), base),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid pipeline config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, base=path.parent)


@dataclass(frozen=True)
class PlateReading:
    plate_box: BBox
    plate_confidence: float
    crop_origin: Tuple[int, int]
    characters: Tuple[Tuple[str, Detection], ...]
    text: str
    mean_char_confidence: float
    format_valid: bool

    def to_dict(self):
        return {
            "box": list(self.plate_box.as_tuple()),
            "confidence": self.plate_confidence,
            "crop_origin": list(self.crop_origin),
            "text": self.text,
            "format_valid": self.format_valid,
            "mean_char_confidence": self.mean_char_confidence,
            "characters": [dict(label=label, **d.to_dict()) for label, d in self.characters],
        }


@dataclass(frozen=True)
class PipelineResult:
    verdict: BlurVerdict
    deblur_applied: bool
    plates: Tuple[PlateReading, ...]
    stage_times: Dict[str, float]
    detail_times: Dict[str, float] = field(default_factory=dict)
    total_time: float = 0.0

    @property
    def texts(self) -> List[str]:
        return [p.text for p in self.plates]

    def to_dict(self, timings: bool = True):
        d = {"verdict": self.verdict.to_dict(), "deblur_applied": self.deblur_applied,
             "plates": [p.to_dict() for p in self.plates]}
        if timings:
            d["stage_times"] = dict(self.stage_times)
            d["detail_times"] = dict(self.detail_times)
        return d


@dataclass
class Backends:
    lpd: DetectorBackend
    cr: DetectorBackend
    deblur: Optional[DeblurBackend] = None

    def serialized(self) -> "Backends":
        return Backends(serialized(self.lpd), serialized(self.cr), serialized(self.deblur))


def assemble_plate(chars: Sequence[Detection], spec: DetectorSpec) -> Tuple[Tuple[Tuple[str, Detection], ...], str, float]:
    """Order character detections left to right and join their labels.

    Returns ``(characters, text, mean_confidence)``. Ties in x-centre fall
    back to y-centre, then to higher confidence first.
    """
    if not chars:
        raise NoCharacters("no character detections to assemble")

    def key(d):
        cx, cy = d.box.center
        return (cx, cy, -d.confidence)

    ordered = tuple((spec.class_labels[d.class_id], d) for d in sorted(chars, key=key))
    text = "".join(label for label, _ in ordered)
    mean_conf = sum(d.confidence for _, d in ordered) / len(ordered)
    return ordered, text, mean_conf


# digit, digit, letter, five digits
PLATE_PATTERN = "DDLDDDDD"


def validate_plate_format(text: str, labels: Optional[Sequence[str]] = None) -> bool:
    """Advisory check of the single-row Iranian layout; never rejects a reading."""
    if len(text) != len(PLATE_PATTERN):
        return False
    for ch, kind in zip(text, PLATE_PATTERN):
        if labels is not None and ch not in labels:
            return False
        if ch.isdigit() != (kind == "D"):
            return False
    return True


def _read_plate(frame: Image, plate: Detection, cfg: PipelineConfig, backend: DetectorBackend,
                detail: Dict[str, float]) -> Optional[Tuple[PlateReading, float, float]]:
    try:
        x0, y0, _, _ = crop_region(frame, plate.box, cfg.crop_margin)
        patch = crop(frame, plate.box, cfg.crop_margin)
    except EmptyCrop:
        return None
    t0 = time.perf_counter()
    timings: Dict[str, float] = {}
    chars = detect(backend, patch, cfg.cr.detection, timings=timings, stage="cr")
    t1 = time.perf_counter()
    detail["cr_infer"] = detail.get("cr_infer", 0.0) + timings.get("infer", 0.0)
    detail["cr_post"] = detail.get("cr_post", 0.0) + timings.get("post", 0.0)
    try:
        ordered, text, mean_conf = assemble_plate(chars, cfg.cr.spec)
    except NoCharacters:
        ordered, text, mean_conf = (), "", 0.0
    reading = PlateReading(plate.box, plate.confidence, (x0, y0), ordered, text, mean_conf,
                           validate_plate_format(text, cfg.cr.spec.class_labels))
    return reading, t1 - t0, time.perf_counter() - t1


def run(img: Image, cfg: PipelineConfig, backends: Backends) -> PipelineResult:
    times = {s: 0.0 for s in STAGES}
    detail: Dict[str, float] = {}
    start = time.perf_counter()

    t = time.perf_counter()
    verdict = check(img, cfg.gate)
    times["gate"] = time.perf_counter() - t

    want_deblur = cfg.deblur_mode == "force" or (cfg.deblur_mode == "auto" and verdict.is_blurred)
    frame, applied = img, False
    if want_deblur:
        if backends.deblur is None:
            log.warning("frame needs deblurring but no deblur backend is configured")
        else:
            t = time.perf_counter()
            frame = deblur(backends.deblur, img).sharp
            times["deblur"] = time.perf_counter() - t
            applied = True

    t = time.perf_counter()
    timings: Dict[str, float] = {}
    plates = detect(backends.lpd, frame, cfg.lpd.detection, timings=timings, stage="lpd")
    times["lpd"] = time.perf_counter() - t
    detail["lpd_infer"], detail["lpd_post"] = timings["infer"], timings["post"]
    detail.setdefault("cr_infer", 0.0)
    detail.setdefault("cr_post", 0.0)

    readings = []
    for plate in plates:
        out = _read_plate(frame, plate, cfg, backends.cr, detail)
        if out is None:
            continue
        reading, cr_time, asm_time = out
        times["cr"] += cr_time
        times["assemble"] += asm_time
        readings.append(reading)

    return PipelineResult(verdict, applied, tuple(readings), times, detail,
                          time.perf_counter() - start)


def run_batch(images: Sequence[Image], cfg: PipelineConfig, backends: Backends,
              jobs: int = 1) -> List[PipelineResult]:
    """Run many frames; results keep input order whatever ``jobs`` is."""
    if jobs <= 1 or len(images) <= 1:
        return [run(img, cfg, backends) for img in images]
    safe = backends.serialized()
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda im: run(im, cfg, safe), images))


def _build_detector(stage: StageConfig, role: str) -> DetectorBackend:
    b = stage.backend
    if b is None:
        raise ConfigError(f"no {role} backend configured")
    if b.kind == "mock":
        if b.path is None:
            raise ConfigError(f"{role} mock backend needs a fixture path")
        return ScriptedDetector.from_json(b.path, stage.spec, delay=float(b.options.get("delay", 0.0)))
    if b.kind == "onnx":
        return OnnxDetector(b.path, stage.spec)
    raise ConfigError(f"unknown {role} backend kind {b.kind!r}")


def build_deblurrer(b: Optional[BackendConfig]) -> Optional[DeblurBackend]:
    if b is None:
        return None
    delay = float(b.options.get("delay", 0.0))
    if b.kind == "identity":
        return IdentityDeblurrer(delay)
    if b.kind == "sharpen":
        return SharpenDeblurrer(float(b.options.get("amount", 1.0)), delay)
    if b.kind == "scripted":
        if b.path is None:
            raise ConfigError("scripted deblur backend needs a pairs file")
        base = Path(b.path).parent
        pairs = json.loads(Path(b.path).read_text(encoding="utf-8"))
        return ScriptedDeblurrer(((load_image(base / p["blurred"]), load_image(base / p["sharp"]))
                                  for p in pairs), delay)
    if b.kind == "onnx":
        return OnnxDeblurrer(b.path, b.options.get("value_range", "unit"))
    raise ConfigError(f"unknown deblur backend kind {b.kind!r}")


def build_backends(cfg: PipelineConfig) -> Backends:
    return Backends(_build_detector(cfg.lpd, "lpd"), _build_detector(cfg.cr, "cr"),
                    build_deblurrer(cfg.deblur))
