from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenarios import blurred_corpus, ten_image_fixture, write_dataset
from plate_pipeline.backends import IdentityDeblurrer, ScriptedDetector, SharpenDeblurrer
from plate_pipeline.detect import Detection, DetectionConfig, DetectorSpec, nms
from plate_pipeline.errors import BackendFailure, ConfigError, EmptySet
from plate_pipeline.evaluation import (EvalSample, GroundTruthPlate, bench, evaluate_pipeline,
                                       load_ground_truth, match_detections, precision_recall)
from plate_pipeline.imaging import BBox, box_blur
from plate_pipeline.pipeline import STAGES, Backends, PipelineConfig, StageConfig
from plate_pipeline.synthetic import register_sample, render_plate_frame, script_backends

GT = [BBox(0, 0, 10, 10), BBox(50, 50, 60, 60)]


def _det(box, conf=0.9):
    return Detection(box, 0, conf)


# -- matching --------------------------------------------------------------

def test_perfect_match():
    assert match_detections([_det(GT[0])], GT[:1]) == (1, 0, 0)
    assert precision_recall(1, 0, 0) == (1.0, 1.0)


def test_no_predictions():
    counts = match_detections([], GT)
    assert counts == (0, 0, 2)
    assert precision_recall(*counts) == (0.0, 0.0)


def test_nothing_at_all():
    assert precision_recall(0, 0, 0) == (1.0, 1.0)


def test_hand_counted_three_box_fixture():
    preds = [_det(BBox(1, 0, 11, 10), 0.8), _det(BBox(100, 100, 110, 110), 0.9)]
    counts = match_detections(preds, GT)
    assert counts == (1, 1, 1)
    assert precision_recall(*counts) == (0.5, 0.5)


def test_greedy_prefers_confident_prediction():
    # both preds overlap the single GT; only the more confident one is a tp
    preds = [_det(BBox(0, 0, 10, 9), 0.6), _det(BBox(0, 0, 10, 8), 0.9)]
    assert match_detections(preds, GT[:1]) == (1, 1, 0)


def test_iou_bound_is_inclusive():
    # IoU exactly 0.5
    assert match_detections([_det(BBox(0, 0, 10, 5))], [BBox(0, 0, 10, 10)]) == (1, 0, 0)


def test_match_threshold_validated():
    with pytest.raises(ValueError):
        match_detections([], GT, iou_threshold=1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 8), st.integers(0, 5))
def test_counting_invariants(seed, n_pred, n_gt):
    import numpy as np
    r = np.random.default_rng(seed)

    def box():
        x, y = r.integers(0, 30, size=2)
        return BBox(float(x), float(y), float(x + r.integers(3, 12)), float(y + r.integers(3, 12)))

    preds = [_det(box(), float(r.uniform(0.05, 1))) for _ in range(n_pred)]
    gts = [box() for _ in range(n_gt)]
    tp, fp, fn = match_detections(preds, gts)
    assert tp + fn == len(gts) and tp + fp == len(preds)
    # raising the confidence threshold keeps fewer predictions and cannot raise recall
    last_recall = None
    for t in (0.1, 0.3, 0.5, 0.7, 0.9):
        kept = nms(preds, DetectionConfig(0.99, t))
        _, recall = precision_recall(*match_detections(kept, gts))
        assert last_recall is None or recall <= last_recall
        last_recall = recall


# -- end-to-end evaluation -------------------------------------------------

def test_all_correct_fixture():
    samples = [render_plate_frame("12ب34567", seed=s) for s in range(4)]
    cfg = PipelineConfig()
    data = [EvalSample(f"{i}.png", s.image, (GroundTruthPlate(s.plate_box, s.text),))
            for i, s in enumerate(samples)]
    report = evaluate_pipeline(data, cfg, script_backends(samples, cfg))
    assert report.plate_accuracy == 1.0 and (report.tp, report.fp, report.fn) == (4, 0, 0)


def test_ten_image_fixture():
    samples, backends = ten_image_fixture()
    report = evaluate_pipeline(samples, PipelineConfig(), backends)
    assert abs(report.plate_accuracy - 0.7) <= 1e-12
    assert (report.correct_plates, report.total_plates) == (7, 10)
    assert (report.tp, report.fp, report.fn) == (8, 1, 2)
    assert report.precision == pytest.approx(8 / 9) and report.recall == pytest.approx(0.8)
    assert set(report.mean_stage_times) == set(STAGES)


def test_evaluation_is_deterministic_and_parallel_safe():
    samples, backends = ten_image_fixture()
    a = evaluate_pipeline(samples, PipelineConfig(), backends)
    b = evaluate_pipeline(samples, PipelineConfig(), backends, jobs=3)
    strip = lambda r: {k: v for k, v in r.to_dict().items() if k != "mean_stage_times"}
    assert strip(a) == strip(b)


def test_deblur_beats_skip_on_blurred_corpus():
    samples, cfg, backends, _ = blurred_corpus()
    on = evaluate_pipeline(samples, cfg, backends)
    off = evaluate_pipeline(samples, replace(cfg, deblur_mode="skip"), backends)
    assert on.plate_accuracy > off.plate_accuracy
    assert on.deblurred_images == 6 and off.deblurred_images == 0
    assert (on.plate_accuracy, off.plate_accuracy) == (1.0, 0.25)


def test_unsharp_mock_also_helps_when_detectors_know_its_output():
    # detectors scripted on what the unsharp mask makes of a 9x9 blur
    sharp = [render_plate_frame("12ب34567", seed=300 + i) for i in range(4)]
    cfg = PipelineConfig(gate=replace(PipelineConfig().gate, threshold=500.0))
    sharpen = SharpenDeblurrer()
    lpd, cr = ScriptedDetector(cfg.lpd.spec), ScriptedDetector(cfg.cr.spec)
    data = []
    from plate_pipeline.deblur import deblur
    from plate_pipeline.synthetic import SyntheticPlate
    for i, s in enumerate(sharp):
        frame = box_blur(s.image, 9) if i < 3 else s.image
        seen = deblur(sharpen, frame).sharp if i < 3 else frame
        register_sample(lpd, cr, SyntheticPlate(seen, s.plate_box, s.char_boxes, s.text), cfg)
        data.append(EvalSample(f"{i}.png", frame, (GroundTruthPlate(s.plate_box, s.text),)))
    backends = Backends(lpd, cr, sharpen)
    on = evaluate_pipeline(data, cfg, backends)
    off = evaluate_pipeline(data, replace(cfg, deblur_mode="skip"), backends)
    assert on.plate_accuracy > off.plate_accuracy


def test_failure_names_the_image():
    class Boom:
        concurrent_safe = True
        spec = DetectorSpec.plate()

        def infer(self, request):
            raise RuntimeError("dead")

    s = render_plate_frame("1", seed=0)
    with pytest.raises(BackendFailure) as info:
        evaluate_pipeline([EvalSample("bad.png", s.image, ())], PipelineConfig(),
                          Backends(Boom(), Boom()))
    assert "bad.png" in str(info.value) and info.value.stage == "lpd"


def test_empty_dataset():
    with pytest.raises(EmptySet):
        evaluate_pipeline([], PipelineConfig(), Backends(None, None))


# -- ground truth on disk --------------------------------------------------

def test_load_ground_truth_roundtrip(tmp_path):
    samples, backends = ten_image_fixture()
    _, images = write_dataset(tmp_path, samples, backends)
    loaded = load_ground_truth(images)
    assert [s.name for s in loaded] == [s.name for s in samples]
    for a, b in zip(loaded, samples):
        assert a.image == b.image and a.plates[0].text == b.plates[0].text
        assert a.plates[0].box.as_tuple() == pytest.approx(b.plates[0].box.as_tuple(), abs=1e-3)


def test_load_ground_truth_count_mismatch(tmp_path):
    samples, backends = ten_image_fixture()
    _, images = write_dataset(tmp_path, samples[:1], backends)
    (images / "plates.json").write_text("{}")
    with pytest.raises(ConfigError):
        load_ground_truth(images)


# -- bench -----------------------------------------------------------------

def _fast_config():
    return PipelineConfig(lpd=StageConfig(DetectionConfig(), DetectorSpec.plate(64)),
                          cr=StageConfig(DetectionConfig(), DetectorSpec.characters(64)),
                          deblur_mode="force")


def test_bench_injected_delays():
    cfg = _fast_config()
    samples = [render_plate_frame("12ب34567", seed=i) for i in range(4)]
    frames = [s.image for s in samples]

    fast = script_backends(samples, cfg, deblur=IdentityDeblurrer(0.0), delay=0.0)
    slow = script_backends(samples, cfg, deblur=IdentityDeblurrer(0.001), delay=0.001)
    bench(frames, cfg, fast, warmup=1, repeats=1)
    bench(frames, cfg, slow, warmup=1, repeats=1)
    # paired rounds cancel slow drift in machine speed; the median rejects scheduler spikes
    deltas = {s: [] for s in ("deblur", "lpd", "cr")}
    for _ in range(15):
        base = bench(frames, cfg, fast, warmup=0, repeats=1)["warm"]
        late = bench(frames, cfg, slow, warmup=0, repeats=1)["warm"]
        for stage, d in deltas.items():
            d.append(late[stage]["mean"] - base[stage]["mean"])
    # every backend-backed stage gains the injected millisecond, within +-50%
    for stage, d in deltas.items():
        assert 0.0005 <= float(np.median(d)) <= 0.0015, (stage, sorted(d))


def test_bench_sample_counts_and_bounds():
    samples = [render_plate_frame("12ب34567", seed=i) for i in range(3)]
    cfg = _fast_config()
    table = bench([s.image for s in samples], cfg, script_backends(samples, cfg), warmup=1, repeats=1)
    assert table["warm"]["gate"]["samples"] == 3 and table["cold"]["lpd"]["samples"] == 3
    warm = table["warm"]
    assert set(warm) == set(STAGES) | {"end_to_end"}
    assert warm["end_to_end"]["mean"] >= max(warm[s]["mean"] for s in STAGES)
    assert all(v["p95"] >= 0 for v in warm.values())
    assert bench([samples[0].image], cfg, script_backends(samples, cfg), warmup=0)["cold"] is None


def test_bench_validates_arguments():
    img = render_plate_frame("1").image
    with pytest.raises(ValueError):
        bench([img], PipelineConfig(), Backends(None, None), repeats=0)
    with pytest.raises(EmptySet):
        bench([], PipelineConfig(), Backends(None, None))
