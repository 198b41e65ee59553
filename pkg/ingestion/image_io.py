"""Pixmap (PPM/PGM) reading and writing"""

import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from core.errors import ContractError, DataCorruptionError

logger = logging.getLogger(__name__)


def to_uint8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] not in (1, 3):
        raise ContractError(f"pixmaps are (H, W, 1) or (H, W, 3), got shape {image.shape}")
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def write_pixmap(path: Union[str, Path], image: np.ndarray) -> None:
    """Write an (H, W, C) image with values in [0, 1] as binary PPM (C=3) or PGM (C=1)"""
    pixels = to_uint8(image)
    # (H, W) uint8 is read as mode L, (H, W, 3) as RGB
    picture = Image.fromarray(pixels[..., 0] if pixels.shape[-1] == 1 else pixels)
    picture.save(Path(path), format="PPM")


def read_pixmap(path: Union[str, Path]) -> np.ndarray:
    """(H, W, C) float64 array in [0, 1]"""
    path = Path(path)
    try:
        with Image.open(path) as picture:
            picture.load()
            pixels = np.asarray(picture)
    except FileNotFoundError as e:
        raise DataCorruptionError(f"image file missing: {path}") from e
    except (UnidentifiedImageError, OSError) as e:
        raise DataCorruptionError(f"unreadable image {path}: {e}") from e
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    return pixels.astype(np.float64) / 255.0
