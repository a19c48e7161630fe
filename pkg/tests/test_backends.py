import threading
import time

import numpy as np
import pytest

import onnx_models
from plate_pipeline.backends import (Fingerprint, IdentityDeblurrer, OnnxDeblurrer, OnnxDetector,
                                     ScriptedDeblurrer, ScriptedDetector, SharpenDeblurrer,
                                     check_output_shapes, fingerprint, serialized)
from plate_pipeline.deblur import build_multiscale, deblur
from plate_pipeline.detect import Detection, DetectorSpec, detect
from plate_pipeline.errors import BackendFailure, ConfigError, SpecMismatch
from plate_pipeline.imaging import BBox, Image, box_blur, letterbox
from plate_pipeline.synthetic import edge_fixture

PLATE64 = DetectorSpec(1, ("plate",), 64)


# -- fingerprints ---------------------------------------------------------

def test_fingerprint_text_roundtrip():
    fp = fingerprint(edge_fixture(64))
    assert Fingerprint.parse(str(fp)) == fp


def test_fingerprint_malformed():
    with pytest.raises(ConfigError):
        Fingerprint.parse("not-a-fingerprint")


def test_fingerprint_tolerates_small_noise(rng):
    img = edge_fixture(128)
    noisy = Image(np.clip(img.pixels.astype(int) + rng.integers(-1, 2, img.shape), 0, 255))
    assert fingerprint(img).distance(fingerprint(noisy)) is not None


def test_fingerprint_separates_blur_and_size():
    img = edge_fixture(128)
    assert fingerprint(img).distance(fingerprint(box_blur(img, 9))) is None
    assert fingerprint(img).distance(fingerprint(edge_fixture(96))) is None


# -- scripted detector -----------------------------------------------------

def test_scripted_json_roundtrip(tmp_path):
    img = edge_fixture(64)
    a = ScriptedDetector(DetectorSpec.plate())
    a.register(img, [Detection(BBox(1, 2, 30, 40), 0, 0.8)])
    a.add("*", [Detection(BBox(0, 0, 5, 5), 0, 0.5)])
    a.to_json(tmp_path / "fx.json")
    b = ScriptedDetector.from_json(tmp_path / "fx.json", DetectorSpec.plate())
    assert b.to_records() == a.to_records()
    assert detect(b, img)[0].box.as_tuple() == pytest.approx((1, 2, 30, 40))
    # anything else falls through to the wildcard
    assert detect(b, Image.filled(10, 10, 0))[0].box.as_tuple() == pytest.approx((0, 0, 5, 5))


def test_scripted_rejects_out_of_range_class():
    with pytest.raises(ConfigError):
        ScriptedDetector(DetectorSpec.plate(), [("*", [Detection(BBox(0, 0, 1, 1), 3, 0.5)])])


def test_scripted_unmatched_gives_nothing():
    backend = ScriptedDetector(DetectorSpec.plate())
    assert detect(backend, Image.filled(20, 20, 0)) == []
    assert backend.calls == 1


# -- mock deblurrers -------------------------------------------------------

def test_sharpen_raises_edge_energy():
    from plate_pipeline.blur_gate import laplacian_variance
    blurred = box_blur(edge_fixture(256), 7)
    out = deblur(SharpenDeblurrer(), blurred).sharp
    assert laplacian_variance(out) > laplacian_variance(blurred)


def test_scripted_deblurrer_maps_known_frames():
    sharp = edge_fixture(256)
    blurred = box_blur(sharp, 15)
    backend = ScriptedDeblurrer([(blurred, sharp)])
    assert deblur(backend, blurred).sharp == sharp
    other = edge_fixture(256, seed=9)
    assert deblur(backend, other).sharp == other


# -- serialization wrapper --------------------------------------------------

class _Unsafe:
    concurrent_safe = False
    spec = DetectorSpec.plate()

    def __init__(self):
        self.active = 0
        self.peak = 0
        self._lock = threading.Lock()

    def infer(self, request):
        with self._lock:
            self.active += 1
            self.peak = max(self.peak, self.active)
        time.sleep(0.002)
        with self._lock:
            self.active -= 1
        return [np.zeros((0, 6))]


def test_serialized_wraps_only_unsafe_backends():
    safe = IdentityDeblurrer()
    assert serialized(safe) is safe
    assert serialized(None) is None
    unsafe = _Unsafe()
    wrapped = serialized(unsafe)
    assert wrapped is not unsafe and wrapped.spec is unsafe.spec
    threads = [threading.Thread(target=detect, args=(wrapped, Image.filled(8, 8, 0)))
               for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert unsafe.peak == 1


# -- ONNX model backends ----------------------------------------------------

@pytest.mark.parametrize("channels,spec", [(18, DetectorSpec.plate(64)),
                                           (147, DetectorSpec.characters(64))])
def test_onnx_heads_accept_matching_width(tmp_path, channels, spec):
    path = onnx_models.head_detector(tmp_path / "m.onnx", 64, channels)
    backend = OnnxDetector(path, spec)
    assert backend.layout == "heads"
    assert detect(backend, Image.filled(64, 64, 90, channels=3)) == []


@pytest.mark.parametrize("channels,spec", [(19, DetectorSpec.plate(64)), (18, DetectorSpec.characters(64)),
                                           (146, DetectorSpec.characters(64))])
def test_onnx_heads_reject_wrong_width(tmp_path, channels, spec):
    path = onnx_models.head_detector(tmp_path / "m.onnx", 64, channels)
    with pytest.raises(SpecMismatch):
        OnnxDetector(path, spec)


def test_onnx_head_logits_decode(tmp_path):
    # zero box logits and a confident anchor 0 in every cell of every scale
    bias = np.full(18, -20.0)
    for a in range(3):
        bias[a * 6:a * 6 + 4] = 0.0
    bias[4:6] = 20.0
    path = onnx_models.head_detector(tmp_path / "m.onnx", 64, 18, bias)
    dets = detect(OnnxDetector(path, PLATE64), Image.filled(64, 64, 0))
    # stride-8 cells give 10x13 boxes centred at 8 * (cell + 0.5), clipped to the frame;
    # those overlap each other far below 0.6, so all 64 survive
    got = {tuple(round(v, 6) for v in d.box.as_tuple()) for d in dets}
    for gy in range(8):
        for gx in range(8):
            cx, cy = 8 * gx + 4, 8 * gy + 4
            want = (max(0, cx - 5), max(0, cy - 6.5), min(64, cx + 5), min(64, cy + 6.5))
            assert tuple(round(v, 6) for v in want) in got


def test_onnx_candidates(tmp_path):
    path = onnx_models.candidate_detector(tmp_path / "c.onnx", 64, [[32, 32, 20, 10, 0.9, 1.0],
                                                                  [32, 32, 20, 10, 0.1, 1.0]])
    dets = detect(OnnxDetector(path, PLATE64), Image.filled(64, 64, 0))
    assert len(dets) == 1
    assert dets[0].box.as_tuple() == pytest.approx((22, 27, 42, 37), abs=1e-4)


def test_onnx_candidates_wrong_width(tmp_path):
    path = onnx_models.candidate_detector(tmp_path / "c.onnx", 64, [[0] * 7])
    with pytest.raises(SpecMismatch):
        OnnxDetector(path, PLATE64)


def test_check_output_shapes_layouts():
    spec = DetectorSpec.plate()
    assert check_output_shapes([[1, "n", 6]], spec) == "candidates"
    assert check_output_shapes([[1, 3, 80, 80, 6], [1, 3, 40, 40, 6], [1, 3, 20, 20, 6]], spec) == "heads"
    with pytest.raises(SpecMismatch):
        check_output_shapes([[1, 3, 80, 80, 7]] * 3, spec)
    with pytest.raises(SpecMismatch):
        check_output_shapes([[1, 18, 80, 80]] * 2, spec)


def test_onnx_missing_and_corrupt_files(tmp_path):
    with pytest.raises(ConfigError):
        OnnxDetector(tmp_path / "nope.onnx", PLATE64)
    (tmp_path / "bad.onnx").write_bytes(b"garbage")
    with pytest.raises(BackendFailure):
        OnnxDetector(tmp_path / "bad.onnx", PLATE64)


@pytest.mark.parametrize("value_range", ["unit", "symmetric"])
def test_onnx_identity_deblurrer(tmp_path, value_range):
    path = onnx_models.identity_deblurrer(tmp_path / "d.onnx")
    img = edge_fixture(256)
    res = deblur(OnnxDeblurrer(path, value_range), img)
    assert res.sharp == img
    assert (res.scale_output.width, res.scale_output.height) == (256, 256)


def test_onnx_deblurrer_input_order_by_size(tmp_path):
    # inputs declared smallest first still receive the right scales
    path = onnx_models.identity_deblurrer(tmp_path / "d.onnx", sizes=(64, 128, 256))
    img = Image(np.random.default_rng(0).integers(0, 256, (256, 256, 3), dtype=np.uint8))
    assert deblur(OnnxDeblurrer(path), img).sharp == img


def test_onnx_deblurrer_rejects_wrong_sizes(tmp_path):
    path = onnx_models.identity_deblurrer(tmp_path / "d.onnx", sizes=(256, 128, 32))
    with pytest.raises(SpecMismatch):
        OnnxDeblurrer(path)
    with pytest.raises(ConfigError):
        OnnxDeblurrer(path, value_range="bogus")
