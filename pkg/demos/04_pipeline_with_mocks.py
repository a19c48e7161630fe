"""
Reading a plate end to end with scripted backends.

The mocks recognise frames by fingerprint and answer with fixed boxes, so
the whole pipeline runs without trained models. A sharp frame goes straight
to detection. A blurred copy fails unless the deblur path restores it.
"""
from plate_pipeline.backends import ScriptedDeblurrer
from plate_pipeline.blur_gate import BlurGateConfig, calibrate
from plate_pipeline.imaging import box_blur
from plate_pipeline.pipeline import PipelineConfig, run
from plate_pipeline.synthetic import render_plate_frame, script_backends


def main():
    sample = render_plate_frame("12ب34567", seed=5)
    blurred = box_blur(sample.image, 19)
    cfg = PipelineConfig(gate=BlurGateConfig(calibrate([sample.image], [blurred]).threshold))
    backends = script_backends([sample], cfg, deblur=ScriptedDeblurrer([(blurred, sample.image)]))

    for name, frame, mode in [("sharp", sample.image, "auto"), ("blurred", blurred, "auto"),
                              ("blurred, deblur skipped", blurred, "skip")]:
        result = run(frame, PipelineConfig(gate=cfg.gate, deblur_mode=mode), backends)
        print(f"{name:24s} deblurred={result.deblur_applied!s:5s} plates={result.texts}")
        for stage, seconds in result.stage_times.items():
            print(f"    {stage:8s} {seconds * 1000:7.2f} ms")


if __name__ == "__main__":
    main()
