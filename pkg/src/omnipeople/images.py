"""Image file I/O and resampling helpers (PNG/JPEG read, PNG write).

Downscaling uses area-averaging (box) resampling, which mimics a physically
low-resolution sensor.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


class ImageReadError(RuntimeError):
    pass


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG frame as uint8, grayscale (H, W) or RGB (H, W, 3)."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            return np.asarray(img)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageReadError(f"{path}: {exc}") from exc


def save_png(path, array: np.ndarray) -> None:
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path, format="PNG")


def downscale_area(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Area-average (box) downscale to ``size`` = (width, height)."""
    pil = Image.fromarray(np.asarray(img, dtype=np.uint8))
    return np.asarray(pil.resize(size, resample=Image.BOX))
