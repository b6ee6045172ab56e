"""Regenerate the 96x96 grayscale PGM crops in tests/data from the sample
photographs bundled with scikit-image."""
from pathlib import Path

import numpy as np
from skimage import color, data

from selftune.imaging import save_image

SOURCES = {
    "camera": data.camera,
    "astronaut": data.astronaut,
    "coins": data.coins,
    "chelsea": data.chelsea,
    "coffee": data.coffee,
    "clock": data.clock,
    "rocket": data.rocket,
}
SIZE = 96


def main(out=Path(__file__).resolve().parents[1] / "tests" / "data"):
    out.mkdir(parents=True, exist_ok=True)
    for name, loader in SOURCES.items():
        img = loader()
        if img.ndim == 3:
            img = color.rgb2gray(img)
        else:
            img = img / 255.0
        h, w = img.shape
        top, left = (h - SIZE) // 2, (w - SIZE) // 2
        crop = np.asarray(img[top : top + SIZE, left : left + SIZE], dtype=np.float64)
        save_image(crop, out / f"{name}.pgm")
        print(name, crop.mean().round(3), crop.std().round(3))


if __name__ == "__main__":
    main()
