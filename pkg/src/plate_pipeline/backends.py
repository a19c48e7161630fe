"""
Concrete detector and deblurrer backends.

Scripted mocks replay fixture detections keyed by an image fingerprint, so
the whole pipeline runs without trained weights. The ONNX backends load
interchange-format models through onnxruntime and check the model's output
layout against the :class:`~plate_pipeline.detect.DetectorSpec` at load time.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .deblur import SCALES, MultiScaleInput
from .detect import Detection, DetectorInput, DetectorSpec
from .errors import BackendFailure, ConfigError, SpecMismatch
from .imaging import LAPLACIAN, Image, box_blur, convolve, letterbox, round_half_up, to_grayscale

__all__ = [
    "Fingerprint", "fingerprint", "ScriptedDetector", "IdentityDeblurrer", "SharpenDeblurrer",
    "ScriptedDeblurrer", "OnnxDetector", "OnnxDeblurrer", "check_output_shapes", "serialized",
]

GRID = 8
MEAN_TOLERANCE = 4.0
SHARPNESS_TOLERANCE = 6.0
SHARPNESS_RELATIVE = 0.3


@dataclass(frozen=True)
class Fingerprint:
    """Coarse appearance summary of an image: size, block means, block edge energy.

    Two fingerprints match when sizes agree and every block statistic is
    within a small tolerance, which absorbs resampling noise of a few levels
    while still telling a sharp frame from a blurred copy of it.
    """

    width: int
    height: int
    means: Tuple[int, ...]
    sharpness: Tuple[int, ...]

    def __str__(self):
        return f"{self.width}x{self.height}:{bytes(self.means).hex()}:{bytes(self.sharpness).hex()}"

    @classmethod
    def parse(cls, text: str) -> "Fingerprint":
        try:
            dims, means, sharp = text.split(":")
            w, h = (int(v) for v in dims.split("x"))
            return cls(w, h, tuple(bytes.fromhex(means)), tuple(bytes.fromhex(sharp)))
        except ValueError as exc:
            raise ConfigError(f"malformed image fingerprint {text!r}") from exc

    def distance(self, other: "Fingerprint") -> Optional[float]:
        """L1 distance when the fingerprints match, else ``None``."""
        if (self.width, self.height) != (other.width, other.height):
            return None
        if len(self.means) != len(other.means):
            return None
        m1, m2 = np.array(self.means, float), np.array(other.means, float)
        s1, s2 = np.array(self.sharpness, float), np.array(other.sharpness, float)
        if np.any(np.abs(m1 - m2) > MEAN_TOLERANCE):
            return None
        tol = np.maximum(SHARPNESS_TOLERANCE, SHARPNESS_RELATIVE * np.maximum(s1, s2))
        if np.any(np.abs(s1 - s2) > tol):
            return None
        return float(np.abs(m1 - m2).sum() + np.abs(s1 - s2).sum())


def _block_edges(n: int) -> np.ndarray:
    # same near-equal split as np.array_split
    k = min(GRID, n)
    sizes = np.full(k, n // k)
    sizes[:n % k] += 1
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]), sizes


def _block_stat(plane: np.ndarray) -> np.ndarray:
    """Means over a near-equal ``GRID`` x ``GRID`` block partition, row-major."""
    r0, rn = _block_edges(plane.shape[0])
    c0, cn = _block_edges(plane.shape[1])
    sums = np.add.reduceat(np.add.reduceat(plane, r0, axis=0), c0, axis=1)
    return (sums / np.outer(rn, cn)).ravel()


def fingerprint(img: Image) -> Fingerprint:
    plane = to_grayscale(img).pixels[:, :, 0].astype(np.float64)
    edges = np.abs(convolve(plane, LAPLACIAN))
    means = tuple(int(v) for v in round_half_up(_block_stat(plane)))
    sharp = tuple(int(v) for v in round_half_up(_block_stat(edges)))
    return Fingerprint(img.width, img.height, means, sharp)


def _best_match(key: Fingerprint, table):
    best, best_d = None, None
    for fp, value in table:
        d = key.distance(fp)
        if d is not None and (best_d is None or d < best_d):
            best, best_d = value, d
    return best


class _CallCounter:
    def __init__(self, delay: float = 0.0):
        self.delay = delay
        self.calls = 0
        self._count_lock = threading.Lock()

    def _tick(self):
        with self._count_lock:
            self.calls += 1
        if self.delay > 0:
            time.sleep(self.delay)


WILDCARD = "*"


class ScriptedDetector(_CallCounter):
    """Replays fixture detections, given in source-image pixels.

    Fixtures are looked up by the fingerprint of the frame handed to
    :func:`~plate_pipeline.detect.detect`; an ``image_id`` of ``"*"`` is used
    when nothing else matches. Unmatched frames yield no detections.
    """

    concurrent_safe = True

    def __init__(self, spec: DetectorSpec, fixtures: Iterable[Tuple[str, Sequence[Detection]]] = (),
                 delay: float = 0.0):
        super().__init__(delay)
        self.spec = spec
        self._table: List[Tuple[Fingerprint, List[Detection]]] = []
        self._fallback: Optional[List[Detection]] = None
        for image_id, dets in fixtures:
            self.add(image_id, dets)

    def add(self, image_id: str, dets: Sequence[Detection]) -> None:
        dets = list(dets)
        for d in dets:
            if d.class_id >= self.spec.class_count:
                raise ConfigError(f"fixture class_id {d.class_id} >= class count {self.spec.class_count}")
        if image_id == WILDCARD:
            self._fallback = dets
        else:
            self._table.append((Fingerprint.parse(image_id), dets))

    def register(self, img: Image, dets: Sequence[Detection]) -> str:
        key = str(fingerprint(img))
        self.add(key, dets)
        return key

    @classmethod
    def from_json(cls, path, spec: DetectorSpec, delay: float = 0.0) -> "ScriptedDetector":
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
        fixtures = [(r["image_id"], [Detection.from_dict(d) for d in r["detections"]]) for r in records]
        return cls(spec, fixtures, delay)

    def to_records(self) -> list:
        out = [{"image_id": str(fp), "detections": [d.to_dict() for d in dets]}
               for fp, dets in self._table]
        if self._fallback is not None:
            out.append({"image_id": WILDCARD, "detections": [d.to_dict() for d in self._fallback]})
        return out

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=1) + "\n", encoding="utf-8")

    def infer(self, request: DetectorInput) -> List[np.ndarray]:
        self._tick()
        dets = _best_match(fingerprint(request.source), self._table)
        if dets is None:
            dets = self._fallback or []
        cands = np.zeros((len(dets), self.spec.candidate_width))
        for row, d in zip(cands, dets):
            b = request.transform.forward(d.box)
            row[:4] = (*b.center, b.width, b.height)
            row[4] = d.confidence
            row[5 + d.class_id] = 1.0
        return [cands]


class IdentityDeblurrer(_CallCounter):
    concurrent_safe = True

    def restore(self, inputs: MultiScaleInput) -> Image:
        self._tick()
        return inputs.b1


class SharpenDeblurrer(_CallCounter):
    """Unsharp mask ``I + amount * (I - box_blur(I, 3))`` on the finest scale."""

    concurrent_safe = True

    def __init__(self, amount: float = 1.0, delay: float = 0.0):
        super().__init__(delay)
        self.amount = amount

    def restore(self, inputs: MultiScaleInput) -> Image:
        self._tick()
        src = inputs.b1.pixels.astype(np.float64)
        low = box_blur(inputs.b1, 3).pixels.astype(np.float64)
        return Image(round_half_up(src + self.amount * (src - low)))


class ScriptedDeblurrer(_CallCounter):
    """Maps known blurred frames to their sharp originals; identity otherwise."""

    concurrent_safe = True

    def __init__(self, pairs: Iterable[Tuple[Image, Image]] = (), delay: float = 0.0):
        super().__init__(delay)
        self._table: List[Tuple[Fingerprint, Image]] = []
        for blurred, sharp in pairs:
            self.register(blurred, sharp)

    def register(self, blurred: Image, sharp: Image) -> None:
        b1, _ = letterbox(blurred, SCALES[0], SCALES[0])
        s1, _ = letterbox(sharp, SCALES[0], SCALES[0])
        self._table.append((fingerprint(b1), s1))

    def restore(self, inputs: MultiScaleInput) -> Image:
        self._tick()
        hit = _best_match(fingerprint(inputs.b1), self._table)
        return inputs.b1 if hit is None else hit


class _Serialized:
    def __init__(self, inner):
        self._inner = inner
        self._lock = threading.Lock()
        self.concurrent_safe = True

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def infer(self, request):
        with self._lock:
            return self._inner.infer(request)

    def restore(self, inputs):
        with self._lock:
            return self._inner.restore(inputs)


def serialized(backend):
    """Wrap ``backend`` in a lock unless it declares concurrent-call safety."""
    if backend is None or getattr(backend, "concurrent_safe", False):
        return backend
    return _Serialized(backend)


def _static(dim):
    return dim if isinstance(dim, int) and dim > 0 else None


def check_output_shapes(shapes: Sequence[Sequence], spec: DetectorSpec) -> str:
    """Validate declared model output shapes; returns ``"heads"`` or ``"candidates"``.

    Dynamic dimensions (``None`` or symbolic names) are not checked here;
    :func:`~plate_pipeline.detect.decode_outputs` re-checks actual outputs.
    """
    shapes = [list(s) for s in shapes]
    if len(shapes) == 1 and len(shapes[0]) == 3:
        width = _static(shapes[0][2])
        if width is not None and width != spec.candidate_width:
            raise SpecMismatch(f"model candidate width {width} != {spec.candidate_width}")
        return "candidates"
    if len(shapes) != len(spec.anchors) or any(len(s) not in (4, 5) for s in shapes):
        raise SpecMismatch(f"expected {len(spec.anchors)} head outputs, got shapes {shapes}")
    for s in shapes:
        if len(s) == 4:
            ch = _static(s[1])
            if ch is not None and ch != spec.head_width:
                raise SpecMismatch(f"model head width {ch} != {spec.head_width} (shape {s})")
        else:
            a, w = _static(s[1]), _static(s[4])
            if (a is not None and a != spec.anchor_count) or (w is not None and w != spec.candidate_width):
                raise SpecMismatch(f"model head layout {s} does not give head width {spec.head_width}")
    return "heads"


def _session(model_path, providers):
    try:
        import onnxruntime as ort
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("onnxruntime is required for model backends (pip install onnxruntime)") from exc
    if not Path(model_path).is_file():
        raise ConfigError(f"model file not found: {model_path}")
    try:
        return ort.InferenceSession(str(model_path), providers=providers or ["CPUExecutionProvider"])
    except Exception as exc:
        raise BackendFailure(f"cannot load model {model_path}: {exc}", stage="load") from exc


def _to_tensor(img: Image) -> np.ndarray:
    px = img.pixels
    if img.channels == 1:
        px = np.repeat(px, 3, axis=2)
    return (px.astype(np.float32) / 255.0).transpose(2, 0, 1)[None]


class OnnxDetector:
    """YOLO-style detector loaded from an ONNX file."""

    concurrent_safe = True

    def __init__(self, model_path, spec: DetectorSpec, providers=None):
        self.spec = spec
        self.model_path = str(model_path)
        self.session = _session(model_path, providers)
        self.input_name = self.session.get_inputs()[0].name
        self.layout = check_output_shapes([o.shape for o in self.session.get_outputs()], spec)

    def infer(self, request: DetectorInput) -> List[np.ndarray]:
        outputs = self.session.run(None, {self.input_name: _to_tensor(request.image)})
        result = []
        for o in outputs:
            o = np.asarray(o)[0]
            if o.ndim == 4:  # (anchors, gh, gw, 5+C)
                a, gh, gw, w5 = o.shape
                o = o.transpose(0, 3, 1, 2).reshape(a * w5, gh, gw)
            result.append(o)
        return result


class OnnxDeblurrer:
    """Multi-scale generator loaded from an ONNX file.

    The model takes three float RGB tensors (256, 128 and 64 pixels square)
    and its first output is the 256x256 sharp estimate. ``value_range`` is
    ``"unit"`` for ``[0, 1]`` tensors or ``"symmetric"`` for ``[-1, 1]``.
    """

    concurrent_safe = True

    def __init__(self, model_path, value_range: str = "unit", providers=None):
        if value_range not in ("unit", "symmetric"):
            raise ConfigError(f"unknown value_range {value_range!r}")
        self.value_range = value_range
        self.model_path = str(model_path)
        self.session = _session(model_path, providers)
        inputs = self.session.get_inputs()
        if len(inputs) != 3:
            raise SpecMismatch(f"deblur model must take 3 inputs, has {len(inputs)}")
        sizes = [_static(i.shape[-1]) if len(i.shape) == 4 else None for i in inputs]
        if all(s is not None for s in sizes):
            if sorted(sizes, reverse=True) != list(SCALES):
                raise SpecMismatch(f"deblur model input sizes {sizes} != {list(SCALES)}")
            self._names = [inputs[sizes.index(s)].name for s in SCALES]
        else:
            self._names = [i.name for i in inputs]

    def _encode(self, img):
        t = _to_tensor(img)
        return t * 2.0 - 1.0 if self.value_range == "symmetric" else t

    def restore(self, inputs: MultiScaleInput) -> Image:
        feed = {n: self._encode(img) for n, img in zip(self._names, (inputs.b1, inputs.b2, inputs.b3))}
        out = np.asarray(self.session.run(None, feed)[0], dtype=np.float64)[0]
        if self.value_range == "symmetric":
            out = (out + 1.0) / 2.0
        img = Image(round_half_up(out.transpose(1, 2, 0) * 255.0))
        return to_grayscale(img) if inputs.b1.channels == 1 else img
