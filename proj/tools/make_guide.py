"""Draws the bundled 64x64 guide image: a sunflower on a sky gradient."""

import argparse

import numpy as np
from PIL import Image


def draw(size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    img = np.zeros((size, size, 3))
    t = y / (size - 1)
    img[..., 0] = 0.45 + 0.25 * t
    img[..., 1] = 0.70 + 0.15 * t
    img[..., 2] = 0.95 - 0.10 * t

    r = np.hypot(x - c, y - c)
    theta = np.arctan2(y - c, x - c)
    petal_edge = size * (0.30 + 0.10 * np.cos(12 * theta))
    petals = r < petal_edge
    img[petals] = [0.98, 0.80, 0.10]
    shade = petals & (np.cos(12 * theta) < -0.4)
    img[shade] = [0.90, 0.62, 0.05]

    disk = r < size * 0.17
    seeds = 0.5 + 0.5 * np.sin(r * 1.9) * np.cos(theta * 8)
    img[disk, 0] = 0.35 + 0.15 * seeds[disk]
    img[disk, 1] = 0.20 + 0.08 * seeds[disk]
    img[disk, 2] = 0.05
    return np.clip(img, 0.0, 1.0)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--out", default="data/guide.png")
    args = parser.parse_args()
    pixels = np.round(draw(args.size) * 255).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(args.out)


if __name__ == "__main__":
    main()
