"""
Growing a training set from a handful of frames.

Each source frame yields five weather variants plus a ladder of
box-blurred copies paired with the original. Box annotations are stored
normalized and survive a write/read round trip.
"""
import tempfile
from pathlib import Path

from plate_pipeline.dataset import augment, normalize, read_annotations, split_dataset, synth_blur_corpus, write_annotations
from plate_pipeline.imaging import save_image
from plate_pipeline.synthetic import render_plate_frame


def main():
    samples = [render_plate_frame(t, seed=i) for i, t in enumerate(["12ب34567", "45د67812", "78س12345"])]
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        paths = []
        for i, s in enumerate(samples):
            paths.append(root / f"frame{i}.png")
            save_image(s.image, paths[-1])
            write_annotations([normalize(s.plate_box, s.image.width, s.image.height)], paths[-1].with_suffix(".txt"))

        variants = augment(samples[0].image, seed=1)
        print("augment variants:", ", ".join(variants))

        manifest = synth_blur_corpus(paths, [7, 11, 15, 19], root / "corpus", seed=0)
        print(f"blur corpus: {len(manifest.entries)} pairs from {len(paths)} frames")
        for e in manifest.entries[:4]:
            print(f"  k={e.kernel_size:2d} {Path(e.blurred_path).name}")

        rec = read_annotations(paths[0].with_suffix(".txt"))[0]
        print(f"annotation for frame0: class {rec.class_id} cx={rec.cx:.6f} cy={rec.cy:.6f} w={rec.w:.6f} h={rec.h:.6f}")

    train, val, test = split_dataset(list(range(100)), seed=0)
    print(f"split of 100 items: {len(train)}/{len(val)}/{len(test)}")


if __name__ == "__main__":
    main()
