"""
Image quality scores along a blur ladder.

PSNR, global SSIM and windowed MSSIM all drop as the blur kernel grows.
Comparing a frame with itself gives the ceiling: infinite PSNR and
similarity 1.
"""
from plate_pipeline.imaging import box_blur
from plate_pipeline.metrics import quality_report
from plate_pipeline.synthetic import edge_fixture


def main():
    ref = edge_fixture(256, seed=3)
    print(f"{'kernel':>7} {'PSNR dB':>9} {'SSIM':>7} {'MSSIM':>7}")
    print(f"{'none':>7} {quality_report(ref, ref).psnr_db:>9} {1.0:7.4f} {1.0:7.4f}")
    for k in range(7, 20, 2):
        q = quality_report(ref, box_blur(ref, k))
        print(f"{k:>7} {q.psnr_db:9.2f} {q.ssim:7.4f} {q.mssim:7.4f}")


if __name__ == "__main__":
    main()
