"""Deterministic synthetic images used as desk-scale fixtures."""
from __future__ import annotations

import csv
import os

import numpy as np

from .image import write_image

__all__ = ["desk_photo", "desk_scene", "write_desk_scenes", "DESK_BOXES"]

# (x, y, w, h) of the patch box in each fixture scene.
DESK_BOXES = ((34, 10, 60, 112), (20, 24, 72, 96))


def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return yy / max(h - 1, 1), xx / max(w - 1, 1)


def desk_photo(size=64):
    """A piecewise-smooth color image: sky gradient, sun, hills and a house."""
    y, x = _grid(size, size)
    img = np.stack([0.35 + 0.3 * y, 0.55 + 0.25 * y, 0.9 - 0.2 * y], axis=-1)
    sun = (x - 0.75) ** 2 + (y - 0.22) ** 2 < 0.012
    img[sun] = (0.98, 0.85, 0.3)
    hill = y > 0.62 + 0.08 * np.sin(6.0 * x)
    img[hill] = np.stack([0.2 + 0.1 * x, 0.55 - 0.2 * y, 0.2 + 0.0 * x], axis=-1)[hill]
    house = (x > 0.15) & (x < 0.42) & (y > 0.45) & (y < 0.78)
    img[house] = (0.75, 0.3, 0.25)
    door = (x > 0.25) & (x < 0.32) & (y > 0.6) & (y < 0.78)
    img[door] = (0.3, 0.2, 0.1)
    return np.clip(img, 0.0, 1.0)


def desk_scene(index, size=128):
    """Smooth background with a soft dark figure standing in for a person."""
    y, x = _grid(size, size)
    phase = 0.7 * index
    base = np.stack(
        [
            0.55 + 0.2 * np.sin(2.0 * x + phase),
            0.6 + 0.15 * np.cos(1.5 * y + phase),
            0.5 + 0.2 * x * y,
        ],
        axis=-1,
    )
    bx, by, bw, bh = DESK_BOXES[index % len(DESK_BOXES)]
    cx, cy = (bx + bw / 2) / size, (by + bh / 2) / size
    r2 = ((x - cx) / (bw / size / 2)) ** 2 + ((y - cy) / (bh / size / 2)) ** 2
    figure = np.exp(-2.0 * r2)[..., None]
    color = np.array([0.3, 0.25, 0.35])
    return np.clip((1 - 0.8 * figure) * base + 0.8 * figure * color, 0.0, 1.0)


def write_desk_scenes(directory, count=2):
    """Write ``count`` scene PPMs and their ``scenes.csv`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "scenes.csv"), "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["image_path", "x", "y", "w", "h"])
        for i in range(count):
            name = f"scene_{i}.ppm"
            write_image(desk_scene(i), os.path.join(directory, name))
            out.writerow([name, *DESK_BOXES[i % len(DESK_BOXES)]])
    return directory
