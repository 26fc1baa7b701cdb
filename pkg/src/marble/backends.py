"""Generation backends: deterministic mocks plus an optional real adapter.

The mock family renders procedurally from the conditioning bundle and the
injected feature, records every injection for routing assertions, and can
be planted with the single block that actually changes pixels - which is
exactly the structure the block sweep has to discover.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Callable

import numpy as np

from .embedding import MaterialEmbedding
from .errors import BackendError
from .injection import DiffusionBackend, GenerationContext, InjectionConfig


def _u64(*parts: bytes) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return int.from_bytes(h.digest()[:8], "little")


class GenerationRecord:
    """Trace of one backend invocation (for routing tests)."""

    __slots__ = ("blocks", "scale", "seed", "ctx_digest")

    def __init__(self, blocks: frozenset[str], scale: float, seed: int, ctx_digest: str):
        self.blocks = blocks
        self.scale = scale
        self.seed = seed
        self.ctx_digest = ctx_digest


class MockBackend:
    """Procedural inpainting stand-in with a planted material block.

    Output is a pure function of (context, embedding, effective injection):
    the foreground is shaded from the init luma and depth, and only when a
    sensitive block receives the feature does a material tint derived from
    the embedding appear. Non-sensitive blocks change nothing, so a sweep
    must rank the planted block first.
    """

    def __init__(
        self,
        backend_id: str = "mock",
        n_blocks: int = 9,
        sensitive_blocks: tuple[str, ...] = ("B4",),
        expected_encoder_id: str | None = None,
    ):
        self.backend_id = backend_id
        self.block_list = tuple(f"B{i}" for i in range(n_blocks))
        unknown = set(sensitive_blocks) - set(self.block_list)
        if unknown:
            raise ValueError(f"sensitive blocks {unknown} outside block list")
        self.sensitive_blocks = frozenset(sensitive_blocks)
        self.capabilities = frozenset({"inpainting", "depth_conditioning"})
        self.expected_encoder_id = expected_encoder_id
        self.trace: list[GenerationRecord] = []
        self._busy = threading.Lock()

    def generate(
        self, ctx: GenerationContext, z: MaterialEmbedding, cfg: InjectionConfig
    ) -> np.ndarray:
        if not self._busy.acquire(blocking=False):
            raise BackendError(f"backend {self.backend_id!r} is busy (one in-flight generation)")
        try:
            self.trace.append(
                GenerationRecord(cfg.blocks, cfg.scale, ctx.seed, ctx.digest())
            )
            return self._render(ctx, z, cfg)
        finally:
            self._busy.release()

    def _render(
        self, ctx: GenerationContext, z: MaterialEmbedding, cfg: InjectionConfig
    ) -> np.ndarray:
        fg = ctx.mask
        # Base: depth-shaded relight of the grayscale init (keeps depth edges).
        luma = ctx.init_image.astype(np.float64).mean(axis=2)
        shade = 0.35 + 0.65 * ctx.depth
        base = luma * shade
        out = ctx.init_image.astype(np.float64).copy()
        for c in range(3):
            channel = out[:, :, c]
            channel[fg] = base[fg]

        effective = cfg.blocks & self.sensitive_blocks
        if effective and cfg.scale > 0:
            # Material tint: stable per-channel gains from the feature vector.
            zb = z.values.astype("<f8").tobytes()
            seed = _u64(zb, ctx.digest().encode(), str(sorted(effective)).encode(),
                        np.float64(cfg.scale).tobytes())
            rng = np.random.default_rng(seed)
            raw = z.values
            gains = 1.0 + cfg.scale * 0.6 * np.tanh(
                [raw[: raw.size // 3].mean() * 3,
                 raw[raw.size // 3 : 2 * raw.size // 3].mean() * 3,
                 raw[2 * raw.size // 3 :].mean() * 3]
            )
            grain = rng.normal(0.0, 4.0, size=ctx.mask.shape)
            for c in range(3):
                channel = out[:, :, c]
                channel[fg] = channel[fg] * gains[c] + grain[fg]
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)


class CallbackBackend:
    """Backend whose output comes from a resolver callable.

    Used for evaluation ceilings: a resolver that looks up the ground-truth
    image for the context turns the whole protocol into its own oracle.
    """

    def __init__(
        self,
        resolver: Callable[[GenerationContext], np.ndarray],
        backend_id: str = "mock-oracle",
    ):
        self.backend_id = backend_id
        self.block_list = ("B0",)
        self.capabilities = frozenset({"inpainting", "depth_conditioning"})
        self.expected_encoder_id = None
        self._resolver = resolver

    def generate(self, ctx, z, cfg):
        return np.asarray(self._resolver(ctx), dtype=np.uint8)


class UneditedBackend:
    """Returns the conditioning init image unchanged (a do-nothing editor)."""

    def __init__(self, backend_id: str = "mock-unedited"):
        self.backend_id = backend_id
        self.block_list = ("B0",)
        self.capabilities = frozenset({"inpainting", "depth_conditioning"})
        self.expected_encoder_id = None

    def generate(self, ctx, z, cfg):
        return ctx.init_image.copy()


def load_real_backend(
    model_id: str = "diffusers/stable-diffusion-xl-1.0-inpainting-0.1",
    ip_adapter_id: str = "h94/IP-Adapter",
    device: str = "cuda",
):
    """Adapter over a pre-trained inpainting pipeline with feature injection.

    Requires the [real-backend] extra plus downloaded weights and a GPU;
    import and construction are deferred so the rest of the package never
    touches these dependencies.
    """
    try:
        import torch
        from diffusers import AutoPipelineForInpainting
    except ImportError as exc:
        raise BackendError(
            "real backend needs the [real-backend] extra (torch + diffusers)"
        ) from exc

    try:
        pipe = AutoPipelineForInpainting.from_pretrained(
            model_id, torch_dtype=torch.float16 if device == "cuda" else torch.float32
        )
        pipe.load_ip_adapter(
            ip_adapter_id, subfolder="sdxl_models", weight_name="ip-adapter_sdxl.bin"
        )
        pipe.to(device)
    except Exception as exc:
        raise BackendError(f"could not load real backend {model_id!r}: {exc}") from exc

    class RealBackend:
        backend_id = f"real:{model_id.split('/')[-1]}"
        capabilities = frozenset({"inpainting", "depth_conditioning"})
        expected_encoder_id = None

        def __init__(self):
            # Cross-attention processors that accept image-prompt features.
            names = [
                n for n in pipe.unet.attn_processors if n.endswith("attn2.processor")
            ]
            self.block_list = tuple(names)

        def _scale_config(self, cfg: InjectionConfig):
            return {name: (cfg.scale if name in cfg.blocks else 0.0) for name in self.block_list}

        def generate(self, ctx, z, cfg):
            from PIL import Image

            scales = self._scale_config(cfg)
            for name, proc in pipe.unet.attn_processors.items():
                if name in scales and hasattr(proc, "scale"):
                    proc.scale = [scales[name]]
            image = Image.fromarray(ctx.init_image)
            mask = Image.fromarray((ctx.mask * 255).astype(np.uint8))
            embeds = torch.tensor(z.values[None, None, :], dtype=pipe.dtype, device=device)
            generator = torch.Generator(device=device).manual_seed(ctx.seed)
            result = pipe(
                prompt=ctx.prompt or "",
                image=image,
                mask_image=mask,
                ip_adapter_image_embeds=[embeds],
                num_inference_steps=ctx.steps,
                guidance_scale=ctx.guidance,
                generator=generator,
            ).images[0]
            return np.asarray(result.convert("RGB"), dtype=np.uint8)

    return RealBackend()


def make_backend(backend_id: str, **kwargs) -> DiffusionBackend:
    """Construct a backend by id: ``mock``, ``mock-unedited``, or ``real``."""
    if backend_id == "mock" or backend_id.startswith("mock:"):
        return MockBackend(backend_id=backend_id, **kwargs)
    if backend_id == "mock-unedited":
        return UneditedBackend()
    if backend_id == "real" or backend_id.startswith("real:"):
        return load_real_backend(**kwargs)
    raise BackendError(f"unknown backend {backend_id!r}")
