"""
From raw detector output to clean boxes.

A detector backend returns flat ``(N, 5+C)`` candidates here. ``detect``
letterboxes the frame, keeps confident candidates, maps them back to frame
coordinates and suppresses duplicates class by class.
"""
import numpy as np

from plate_pipeline.detect import DetectionConfig, DetectorSpec, detect, head_width
from plate_pipeline.imaging import Image


class FixedCandidates:
    """A stand-in backend that always proposes the same rows."""

    concurrent_safe = True

    def __init__(self, spec, rows):
        self.spec, self.rows = spec, np.asarray(rows, dtype=np.float64)

    def infer(self, request):
        return [self.rows]


def main():
    print("head width for 3 anchors, 1 class:", head_width(3, 1))
    print("head width for 3 anchors, 44 classes:", head_width(3, 44))

    spec = DetectorSpec.plate(input_size=128)
    # cx, cy, w, h, objectness, class score; in 128x128 input pixels
    rows = [[64, 64, 40, 16, 0.95, 1.0],
            [66, 65, 40, 16, 0.80, 1.0],   # near duplicate of the first
            [30, 70, 30, 12, 0.70, 1.0],
            [90, 20, 20, 10, 0.10, 1.0]]   # below the confidence threshold
    frame = Image.filled(256, 128, 90, channels=3)  # fills input rows 32-96 after letterboxing
    for d in detect(FixedCandidates(spec, rows), frame, DetectionConfig(iou_threshold=0.45)):
        print(f"  class {d.class_id} conf {d.confidence:.2f} box {tuple(round(v, 1) for v in d.box.as_tuple())}")


if __name__ == "__main__":
    main()
