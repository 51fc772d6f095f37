"""Plain-array image helpers shared by augmentation and data loading.

Convention: images are float64 numpy arrays, channel-first (C, H, W),
values in [0, 1].  Everything here works on raw arrays — autodiff never
sees augmentation or file IO.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DataError

# Rec. 601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])


def _axis_lerp(n_in: int, n_out: int):
    """Source indices and blend weights for one axis, half-pixel centers."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of a (C, H, W) image, half-pixel centers."""
    if img.ndim != 3:
        raise DataError(f"expected (C, H, W) image, got shape {img.shape}")
    _, h, w = img.shape
    ylo, yhi, wy = _axis_lerp(h, out_h)
    rows = img[:, ylo, :] * (1.0 - wy)[None, :, None] + img[:, yhi, :] * wy[None, :, None]
    xlo, xhi, wx = _axis_lerp(w, out_w)
    return rows[:, :, xlo] * (1.0 - wx)[None, None, :] + rows[:, :, xhi] * wx[None, None, :]


def luminance(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma of a (3, H, W) image -> (H, W)."""
    if img.shape[0] != 3:
        raise DataError(f"expected 3-channel image, got shape {img.shape}")
    return np.tensordot(_LUMA, img, axes=(0, 0))


def rotate_reflect(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate a (C, H, W) image about its center: bilinear, reflect padding."""
    if degrees == 0.0:
        return img.copy()
    return ndimage.rotate(
        img, degrees, axes=(2, 1), reshape=False, order=1, mode="reflect"
    )


def clip01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def read_png(path) -> np.ndarray:
    """Load an RGB PNG as float64 (3, H, W) in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return np.transpose(arr, (2, 0, 1)) / 255.0


def write_png(path, img: np.ndarray) -> None:
    """Write a float (3, H, W) image in [0, 1] to an 8-bit RGB PNG."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"expected (3, H, W) image, got shape {img.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.transpose(quantized, (1, 2, 0)), mode="RGB").save(path, format="PNG")
