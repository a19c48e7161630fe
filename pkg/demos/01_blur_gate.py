"""
How the blur gate decides which frames need deblurring.

We blur one edge-rich frame harder and harder and watch the Laplacian
variance fall. Then we let ``calibrate`` pick a threshold from one sharp and
one heavily blurred copy, and check a few frames against it.
"""
from plate_pipeline.blur_gate import BlurGateConfig, calibrate, check, laplacian_variance
from plate_pipeline.imaging import box_blur
from plate_pipeline.synthetic import edge_fixture


def main():
    frame = edge_fixture(256)
    print(f"sharp frame       variance {laplacian_variance(frame):10.1f}")
    for k in range(7, 20, 2):
        print(f"box blur {k:2d}x{k:<2d}    variance {laplacian_variance(box_blur(frame, k)):10.1f}")

    cal = calibrate([frame], [box_blur(frame, 19)])
    print(f"\ncalibrated threshold {cal.threshold:.1f} (separable: {cal.separable})")
    gate = BlurGateConfig(cal.threshold)
    for name, img in [("sharp", frame), ("blur 7", box_blur(frame, 7)), ("blur 19", box_blur(frame, 19))]:
        v = check(img, gate)
        print(f"  {name:8s} -> {'blurred' if v.is_blurred else 'sharp'} ({v.variance:.1f})")


if __name__ == "__main__":
    main()
