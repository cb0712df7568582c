"""Float RGB image container plus 8-bit PNG I/O.

Pixel values are linear in [0, 1]; PNG export rounds straight to 8 bits with
no gamma, so on-disk bytes compare like-for-like with quality metrics run on
the float data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage


@dataclass(frozen=True, eq=False)
class Image:
    """RGB image, data shaped (height, width, 3), float in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"image data must be (h, w, 3), got {d.shape}")
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


def save_png(path, image: Image) -> None:
    PILImage.fromarray(image.to_uint8(), mode="RGB").save(Path(path), format="PNG")


def load_png(path) -> Image:
    with PILImage.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)
