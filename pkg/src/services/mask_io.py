"""PNG persistence for masks and frames, and masked-frame rendering."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from errors import DimensionMismatch, UnreadableMask, UnsupportedDepth
from masks import BinaryMask

FOREGROUND = 255


def load_mask(path: Path | str) -> BinaryMask:
    """Read an 8-bit single-channel image; any nonzero value is foreground."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode != "L":
                raise UnsupportedDepth(f"{path}: expected 8-bit grayscale, got mode {image.mode}")
            array = np.asarray(image)
    except UnsupportedDepth:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise UnreadableMask(path, str(exc)) from exc
    return BinaryMask.from_array(array)


def store_mask(mask: BinaryMask, path: Path | str) -> None:
    """Write 0 background / 255 foreground as grayscale PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = mask.bits.astype(np.uint8) * FOREGROUND
    Image.fromarray(pixels).save(path, format="PNG")


def load_frame(path: Path | str) -> np.ndarray:
    """Read a frame as an (H, W, 3) uint8 RGB array."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB")).copy()
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise UnreadableMask(path, str(exc)) from exc


def store_frame(frame: np.ndarray, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(path, format="PNG")


def render_masked_frame(frame: np.ndarray, mask: BinaryMask) -> np.ndarray:
    """Keep frame pixels under the mask, black elsewhere."""
    frame = np.asarray(frame)
    if frame.shape[:2] != mask.shape:
        raise DimensionMismatch(frame.shape[:2], mask.shape)
    keep = mask.bits if frame.ndim == 2 else mask.bits[..., np.newaxis]
    return np.where(keep, frame, 0).astype(frame.dtype)
