"""Conditioning preparation and targeted feature injection.

The generation contract: an inpainting backend receives a grayscale
foreground init image (illumination cue), the foreground mask, a depth map
(geometric cue), and a material embedding injected via cross-attention at
a configurable set of attention blocks. Restricting injection to the
single material-responsive block preserves geometry far better than
injecting everywhere; ``block_sweep`` locates that block per backend.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np

from .embedding import MaterialEmbedding
from .errors import (
    BackendError,
    DepthUnavailable,
    EmptyMask,
    InvalidInjectionConfig,
    MarbleError,
)
from .rasters import image_digest, load_mask, load_rgb, luma_rec601, save_png


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GenerationContext:
    """Immutable conditioning bundle for one generation."""

    init_image: np.ndarray  # (H, W, 3) uint8, grayscale inside the mask
    mask: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float64 in [0, 1]
    seed: int
    steps: int = 30
    guidance: float = 5.0
    prompt: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "init_image", _frozen(self.init_image.astype(np.uint8)))
        object.__setattr__(self, "mask", _frozen(self.mask.astype(bool)))
        object.__setattr__(self, "depth", _frozen(self.depth.astype(np.float64)))
        h, w = self.mask.shape
        if self.init_image.shape != (h, w, 3):
            raise ValueError(
                f"init image shape {self.init_image.shape} != mask shape {(h, w)}"
            )
        if self.depth.shape != (h, w):
            raise ValueError(f"depth shape {self.depth.shape} != mask shape {(h, w)}")
        if not self.mask.any():
            raise EmptyMask("mask selects no foreground pixels")
        if self.depth.min() < -1e-9 or self.depth.max() > 1.0 + 1e-9:
            raise ValueError("depth values must lie in [0, 1]")

    @property
    def size(self) -> tuple[int, int]:
        return self.mask.shape

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.init_image.tobytes())
        h.update(self.mask.tobytes())
        h.update(self.depth.tobytes())
        h.update(json.dumps([self.seed, self.steps, self.guidance, self.prompt]).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class InjectionConfig:
    """Which attention blocks receive the material feature, and how hard."""

    blocks: frozenset[str]
    scale: float = 1.0

    def __init__(self, blocks, scale: float = 1.0):
        object.__setattr__(self, "blocks", frozenset(blocks))
        object.__setattr__(self, "scale", float(scale))
        if not np.isfinite(self.scale) or self.scale < 0:
            raise InvalidInjectionConfig(f"scale must be finite and >= 0, got {scale}")


@runtime_checkable
class DiffusionBackend(Protocol):
    """Pluggable generation backend (pre-trained; never trained here)."""

    backend_id: str
    block_list: tuple[str, ...]
    capabilities: frozenset[str]
    expected_encoder_id: str | None

    def generate(
        self, ctx: GenerationContext, z: MaterialEmbedding, cfg: InjectionConfig
    ) -> np.ndarray:
        """Produce an (H, W, 3) uint8 image; deterministic per inputs."""
        ...


# --- depth estimators -------------------------------------------------------

DepthEstimator = Callable[[np.ndarray], np.ndarray]

_DEPTH_ESTIMATORS: dict[str, DepthEstimator] = {}


def register_depth_estimator(estimator_id: str, fn: DepthEstimator) -> None:
    _DEPTH_ESTIMATORS[estimator_id] = fn


def _luma_depth(rgb: np.ndarray) -> np.ndarray:
    # Brightness as a crude depth proxy; deterministic and dependency-free.
    return luma_rec601(rgb).astype(np.float64)


register_depth_estimator("luma-v1", _luma_depth)


def normalize_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth contains non-finite values")
    lo, hi = float(depth.min()), float(depth.max())
    if hi - lo <= 0:
        return np.zeros_like(depth)
    return (depth - lo) / (hi - lo)


def prepare_context(
    input_image,
    mask,
    depth_source=None,
    *,
    seed: int = 0,
    steps: int = 30,
    guidance: float = 5.0,
    prompt: str | None = None,
) -> GenerationContext:
    """Build the conditioning bundle from raw inputs.

    Foreground pixels of the init image are replaced by their Rec.601 luma
    (R=G=B); background stays untouched. Depth is either a provided raster
    (min-max normalized to [0, 1]) or produced by a registered estimator.
    """
    rgb = load_rgb(input_image)
    mask_arr = load_mask(mask, shape=rgb.shape[:2])
    if not mask_arr.any():
        raise EmptyMask("mask selects no foreground pixels")

    init = rgb.copy()
    luma = luma_rec601(rgb)
    for c in range(3):
        channel = init[:, :, c]
        channel[mask_arr] = luma[mask_arr]

    if depth_source is None:
        raise DepthUnavailable("no depth raster provided and no estimator requested")
    if isinstance(depth_source, str):
        estimator = _DEPTH_ESTIMATORS.get(depth_source)
        if estimator is None:
            raise DepthUnavailable(f"unknown depth estimator {depth_source!r}")
        raw_depth = estimator(rgb)
    else:
        raw_depth = np.asarray(depth_source, dtype=np.float64)
        if raw_depth.shape != rgb.shape[:2]:
            raise ValueError(
                f"depth shape {raw_depth.shape} != image shape {rgb.shape[:2]}"
            )
    depth = normalize_depth(raw_depth)

    return GenerationContext(
        init_image=init,
        mask=mask_arr,
        depth=depth,
        seed=int(seed),
        steps=int(steps),
        guidance=float(guidance),
        prompt=prompt,
    )


def generate(
    ctx: GenerationContext,
    z: MaterialEmbedding,
    cfg: InjectionConfig,
    backend: DiffusionBackend,
) -> np.ndarray:
    """Run one generation with injection restricted to ``cfg.blocks``.

    Invokes the backend exactly once, validates the routing config against
    the backend's advertised block list, and enforces the inpainting
    contract by pasting the original background back over the output.
    """
    unknown = cfg.blocks - set(backend.block_list)
    if unknown:
        raise InvalidInjectionConfig(
            f"blocks {sorted(unknown)} not advertised by backend {backend.backend_id!r} "
            f"(available: {list(backend.block_list)})"
        )
    expected = getattr(backend, "expected_encoder_id", None)
    if expected is not None and z.encoder.encoder_id != expected:
        raise InvalidInjectionConfig(
            f"backend {backend.backend_id!r} expects features from {expected!r}, "
            f"got {z.encoder.encoder_id!r}"
        )
    try:
        out = backend.generate(ctx, z, cfg)
    except MarbleError:
        raise
    except Exception as exc:
        raise BackendError(f"backend {backend.backend_id!r} failed: {exc}") from exc

    out = np.asarray(out, dtype=np.uint8)
    if out.shape != ctx.init_image.shape:
        raise BackendError(
            f"backend returned shape {out.shape}, expected {ctx.init_image.shape}"
        )
    composed = out.copy()
    composed[~ctx.mask] = ctx.init_image[~ctx.mask]
    return composed


# --- block sweep ------------------------------------------------------------


def _edge_map(gray: np.ndarray, percentile: float = 80.0) -> np.ndarray:
    gy, gx = np.gradient(gray.astype(np.float64))
    mag = np.hypot(gx, gy)
    if mag.max() <= 0:
        return np.zeros_like(mag, dtype=bool)
    return mag > np.percentile(mag, percentile)


def structure_preservation(output: np.ndarray, depth: np.ndarray) -> float:
    """F1 overlap between output luma edges and depth edges."""
    out_edges = _edge_map(luma_rec601(output))
    depth_edges = _edge_map(depth * 255.0)
    inter = np.logical_and(out_edges, depth_edges).sum()
    total = out_edges.sum() + depth_edges.sum()
    if total == 0:
        return 1.0
    return float(2.0 * inter / total)


@dataclass
class SweepEntry:
    block: str
    digest: str | None
    score: float
    material_change: float
    structure: float
    path: str | None = None
    error: str | None = None


@dataclass
class SweepReport:
    backend_id: str
    entries: list[SweepEntry] = field(default_factory=list)
    ranking: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "entries": [
                {
                    "block": e.block,
                    "digest": e.digest,
                    "score": e.score,
                    "material_change": e.material_change,
                    "structure": e.structure,
                    "path": e.path,
                    "error": e.error,
                }
                for e in self.entries
            ],
            "ranking": self.ranking,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def block_sweep(
    ctx: GenerationContext,
    z: MaterialEmbedding,
    backend: DiffusionBackend,
    *,
    out_dir: str | Path | None = None,
    scale: float = 1.0,
) -> SweepReport:
    """Generate once per block with injection isolated to that block.

    Blocks are ranked by material change under geometry preservation:
    mean foreground change against a no-injection baseline, weighted by
    the edge overlap between the output and the depth map. The top-ranked
    block is the material block for this backend version.
    """
    if not backend.block_list:
        raise InvalidInjectionConfig(f"backend {backend.backend_id!r} advertises no blocks")
    baseline = generate(ctx, z, InjectionConfig(frozenset(), scale), backend)
    fg = ctx.mask

    report = SweepReport(backend_id=backend.backend_id)
    for block in backend.block_list:
        try:
            out = generate(ctx, z, InjectionConfig({block}, scale), backend)
        except MarbleError as exc:
            report.entries.append(
                SweepEntry(block=block, digest=None, score=0.0,
                           material_change=0.0, structure=0.0, error=str(exc))
            )
            continue
        change = float(
            np.mean(np.abs(out[fg].astype(np.float64) - baseline[fg].astype(np.float64)))
            / 255.0
        )
        structure = structure_preservation(out, ctx.depth)
        path = None
        if out_dir is not None:
            path = str(save_png(out, Path(out_dir) / f"sweep_{block}.png"))
        report.entries.append(
            SweepEntry(
                block=block,
                digest=image_digest(out),
                score=change * structure,
                material_change=change,
                structure=structure,
                path=path,
            )
        )
    ok = [e for e in report.entries if e.error is None]
    failed = [e for e in report.entries if e.error is not None]
    report.ranking = [e.block for e in sorted(ok, key=lambda e: -e.score)] + [
        e.block for e in failed
    ]
    return report


def write_block_defaults(report: SweepReport, defaults_dir: str | Path) -> Path:
    """Persist the sweep winner as the backend's default injection block."""
    defaults_dir = Path(defaults_dir)
    defaults_dir.mkdir(parents=True, exist_ok=True)
    path = defaults_dir / f"{report.backend_id}.blocks.json"
    payload = {
        "backend_id": report.backend_id,
        "blocks": report.ranking[:1],
        "ranking": report.ranking,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def load_block_defaults(backend_id: str, defaults_dir: str | Path) -> list[str] | None:
    path = Path(defaults_dir) / f"{backend_id}.blocks.json"
    if not path.exists():
        return None
    data = json.loads(path.read_text())
    return list(data.get("blocks", []))
