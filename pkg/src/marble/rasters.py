"""Raster loading, conversion, and digest helpers (PNG/JPEG in, uint8 out)."""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InvalidImage

ImageLike = "str | Path | bytes | Image.Image | np.ndarray"


def load_rgb(source) -> np.ndarray:
    """Decode ``source`` into an (H, W, 3) uint8 array.

    Accepts a path, raw encoded bytes, a PIL image, or an array already in
    (H, W, 3) uint8 layout. Anything undecodable raises InvalidImage.
    """
    if isinstance(source, np.ndarray):
        arr = source
        if arr.ndim == 2:
            arr = np.stack([arr] * 3, axis=-1)
        if arr.ndim != 3 or arr.shape[2] not in (3, 4):
            raise InvalidImage(f"expected (H, W, 3) array, got shape {arr.shape}")
        arr = arr[:, :, :3]
        if arr.dtype != np.uint8:
            arr = np.clip(np.rint(np.asarray(arr, dtype=np.float64)), 0, 255).astype(np.uint8)
        return np.ascontiguousarray(arr)
    if isinstance(source, Image.Image):
        return np.asarray(source.convert("RGB"), dtype=np.uint8)
    if isinstance(source, (bytes, bytearray)):
        try:
            with Image.open(io.BytesIO(source)) as img:
                return np.asarray(img.convert("RGB"), dtype=np.uint8)
        except UnidentifiedImageError as exc:
            raise InvalidImage("could not decode image bytes") from exc
    path = Path(source)
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise InvalidImage(f"could not decode image at {path}") from exc


def load_mask(source, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Decode a binary mask: foreground where the gray value exceeds 127."""
    if isinstance(source, np.ndarray) and source.dtype == bool:
        mask = source
    else:
        rgb = load_rgb(source)
        mask = rgb.mean(axis=2) > 127
    if shape is not None and mask.shape != shape:
        raise InvalidImage(f"mask shape {mask.shape} != image shape {shape}")
    return mask


def luma_rec601(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) uint8 image, rounded to uint8."""
    arr = rgb.astype(np.float64)
    luma = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return np.rint(luma).astype(np.uint8)


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(png_bytes(rgb))
    return path


def image_digest(rgb: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(rgb.shape).encode())
    h.update(np.ascontiguousarray(rgb).tobytes())
    return h.hexdigest()


def bytes_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
