"""Encoder registry and adapters turning images into material embeddings.

The engine never trains the encoder; it consumes a pinned, pre-trained
image head as configuration. Two dependency-free encoder families keep the
whole stack runnable at desk scale:

* ``mock-<dim>`` - tiny deterministic featurizer for tests, any dimension.
* ``patchstat-256`` - the pinned default: 32x32 patch statistics pushed
  through a fixed seeded projection, standing in for a heavyweight
  image-text encoder head.

A lazy adapter for a real CLIP-style vision head (``clip-vit-large-patch14``)
registers when its optional dependencies and weights are present.
"""

from __future__ import annotations

import hashlib
import io
import re
import threading
from typing import Callable, Protocol

import numpy as np
from PIL import Image

from .embedding import EncoderConfig, MaterialEmbedding
from .errors import EncoderNotFound, EncoderUnavailable, InvalidImage
from .rasters import load_rgb

DEFAULT_ENCODER_ID = "patchstat-256"


class EncoderAdapter(Protocol):
    """Adapter contract: a pinned config plus a deterministic embed call."""

    config: EncoderConfig

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        """Map an (H, W, 3) uint8 image to a float32-exact (dim,) vector."""
        ...


def _projection(seed: int, n_features: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((dim, n_features)) / np.sqrt(n_features)


class MockEncoder:
    """8x8 nearest-neighbor downsample through a fixed seeded projection."""

    def __init__(self, dim: int):
        self.config = EncoderConfig(f"mock-{dim}", dim, "mock8-nearest-v1")
        self._proj = _projection(0x5EED + dim, 8 * 8 * 3, dim)

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        img = Image.fromarray(rgb, mode="RGB").resize((8, 8), Image.NEAREST)
        feats = np.asarray(img, dtype=np.float64).reshape(-1) / 255.0
        return (self._proj @ feats).astype(np.float32).astype(np.float64)


class PatchStatEncoder:
    """Pinned default head: color planes + luma gradients at 32x32.

    The projection matrix is fixed by seed and recipe version, so the
    encoder behaves like any other frozen pre-trained head: same image in,
    bitwise-same vector out.
    """

    RECIPE = "rgb32-bilinear-grad-v1"
    SEED = 0x3A7B1E

    def __init__(self, dim: int = 256):
        self.config = EncoderConfig(f"patchstat-{dim}", dim, self.RECIPE)
        # 3 color planes + 2 gradient planes at 32x32
        self._proj = _projection(self.SEED + dim, 32 * 32 * 5, dim)

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        img = Image.fromarray(rgb, mode="RGB").resize((32, 32), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float64) / 255.0
        luma = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
        gy, gx = np.gradient(luma)
        feats = np.concatenate(
            [arr.reshape(-1), gx.reshape(-1), gy.reshape(-1)]
        )
        return (self._proj @ feats).astype(np.float32).astype(np.float64)


class ClipVisionEncoder:
    """Optional adapter over a real CLIP vision tower with projection head."""

    MODEL_ID = "openai/clip-vit-large-patch14"

    def __init__(self, model_id: str = MODEL_ID, dim: int = 768):
        try:
            import torch
            from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection
        except ImportError as exc:
            raise EncoderUnavailable(
                "clip encoder needs the [clip] extra (torch + transformers)"
            ) from exc
        try:
            self._processor = CLIPImageProcessor.from_pretrained(model_id)
            self._model = CLIPVisionModelWithProjection.from_pretrained(model_id).eval()
        except Exception as exc:  # weights missing offline
            raise EncoderUnavailable(f"could not load weights for {model_id}: {exc}") from exc
        self._torch = torch
        self.config = EncoderConfig(model_id.split("/")[-1], dim, f"hf-{model_id}")

    def embed(self, rgb: np.ndarray) -> np.ndarray:
        inputs = self._processor(images=Image.fromarray(rgb), return_tensors="pt")
        with self._torch.no_grad():
            out = self._model(**inputs)
        vec = out.image_embeds[0].cpu().numpy().astype(np.float32)
        return vec.astype(np.float64)


_MOCK_PATTERN = re.compile(r"^mock-(\d+)$")
_PATCHSTAT_PATTERN = re.compile(r"^patchstat-(\d+)$")

_factories: dict[str, Callable[[], EncoderAdapter]] = {
    "clip-vit-large-patch14": ClipVisionEncoder,
}
_instances: dict[str, EncoderAdapter] = {}
_lock = threading.Lock()


def register_encoder(encoder_id: str, factory: Callable[[], EncoderAdapter]) -> None:
    _factories[encoder_id] = factory


def get_encoder(encoder_id: str) -> EncoderAdapter:
    """Resolve an adapter instance; unknown ids raise EncoderNotFound."""
    with _lock:
        if encoder_id in _instances:
            return _instances[encoder_id]
        if encoder_id in _factories:
            adapter = _factories[encoder_id]()
        elif m := _MOCK_PATTERN.match(encoder_id):
            adapter = MockEncoder(int(m.group(1)))
        elif m := _PATCHSTAT_PATTERN.match(encoder_id):
            adapter = PatchStatEncoder(int(m.group(1)))
        else:
            raise EncoderNotFound(f"unknown encoder_id {encoder_id!r}")
        _instances[encoder_id] = adapter
        return adapter


def encoder_config(encoder_id: str) -> EncoderConfig:
    return get_encoder(encoder_id).config


def available_encoders() -> list[str]:
    """Builtin families plus anything registered explicitly."""
    return sorted({DEFAULT_ENCODER_ID, "mock-<dim>", "patchstat-<dim>", *_factories})


def _source_digest(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return "sha256:" + hashlib.sha256(source).hexdigest()[:16]
    if isinstance(source, np.ndarray):
        h = hashlib.sha256(np.ascontiguousarray(source).tobytes())
        return "sha256:" + h.hexdigest()[:16]
    if isinstance(source, Image.Image):
        buf = io.BytesIO()
        source.convert("RGB").save(buf, format="PNG")
        return "sha256:" + hashlib.sha256(buf.getvalue()).hexdigest()[:16]
    try:
        data = open(source, "rb").read()
    except OSError as exc:
        raise InvalidImage(f"cannot read image source {source}") from exc
    return "sha256:" + hashlib.sha256(data).hexdigest()[:16]


def encode_image(image, encoder: EncoderConfig | str) -> MaterialEmbedding:
    """Encode an image into a material embedding with the given encoder.

    Pure function of (image bytes, encoder config): repeated calls return
    bitwise-identical vectors.
    """
    encoder_id = encoder if isinstance(encoder, str) else encoder.encoder_id
    adapter = get_encoder(encoder_id)
    if isinstance(encoder, EncoderConfig) and adapter.config != encoder:
        raise EncoderNotFound(
            f"registered encoder {encoder_id!r} has config {adapter.config}, "
            f"request asked for {encoder}"
        )
    rgb = load_rgb(image)
    values = adapter.embed(rgb)
    if values.shape != (adapter.config.dim,):
        raise EncoderUnavailable(
            f"adapter {encoder_id!r} returned shape {values.shape}, expected ({adapter.config.dim},)"
        )
    return MaterialEmbedding(values, encoder=adapter.config, source_digest=_source_digest(image))
