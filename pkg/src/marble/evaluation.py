"""Metric suite and validation protocol.

PSNR is computed directly; LPIPS / DreamSim / the embedding cosine score
are pluggable models behind a registry so CI never needs metric weights:
the registered defaults are deterministic stubs (downsampled-image
distances) plus the real encoder-cosine score. The validation protocol
edits each held-out object along adjacent step pairs and compares against
the ground-truth render of the target step.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .backends import CallbackBackend
from .dataset import DatasetManifest, ProxyDataset, attribute_range, synth_proxy_dataset
from .directions import fit_basis, extract_directions
from .editor import AttributeEditorModel, Hyperparams, predict_direction, train_editor
from .embedding import Attribute, apply_direction
from .encoders import DEFAULT_ENCODER_ID, encode_image
from .errors import (
    BackendError,
    IncompatibleImages,
    MarbleError,
    MetricUnavailable,
)
from .injection import DiffusionBackend, GenerationContext, InjectionConfig, generate, prepare_context
from .rasters import load_rgb

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over 8-bit images.

    ``10 * log10(255^2 / MSE)``; identical inputs return the 99 dB cap so
    reports stay finite and sortable.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise IncompatibleImages(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(255.0**2 / mse)), PSNR_CAP_DB)


# --- metric registry ---------------------------------------------------------

MetricFn = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class MetricModel:
    metric_id: str
    model_version: str
    fn: MetricFn

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        if a.shape != b.shape:
            raise IncompatibleImages(f"shape mismatch: {a.shape} vs {b.shape}")
        return float(self.fn(a, b))


def _downsample(img: np.ndarray, size: int = 16) -> np.ndarray:
    small = Image.fromarray(img.astype(np.uint8), mode="RGB").resize(
        (size, size), Image.BILINEAR
    )
    return np.asarray(small, dtype=np.float64) / 255.0


def _stub_lpips(a: np.ndarray, b: np.ndarray) -> float:
    # Normalized per-pixel distance on a 16x16 thumbnail; 0 iff identical.
    da, db = _downsample(a), _downsample(b)
    return float(np.sqrt(np.mean((da - db) ** 2)))


def _stub_dreamsim(a: np.ndarray, b: np.ndarray) -> float:
    # Cosine distance between thumbnail layouts; coarser than the lpips stub.
    da, db = _downsample(a, 8).reshape(-1), _downsample(b, 8).reshape(-1)
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0.0 or nb == 0.0:
        return 0.0 if na == nb else 1.0
    return float(np.clip(1.0 - np.dot(da, db) / (na * nb), 0.0, 2.0))


def make_clip_score(encoder_id: str = DEFAULT_ENCODER_ID) -> MetricFn:
    """Cosine similarity of the two images' encoder embeddings."""

    def fn(a: np.ndarray, b: np.ndarray) -> float:
        za = encode_image(a, encoder_id).values
        zb = encode_image(b, encoder_id).values
        na, nb = np.linalg.norm(za), np.linalg.norm(zb)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(za, zb) / (na * nb))

    return fn


class MetricRegistry:
    def __init__(self):
        self._models: dict[str, MetricModel] = {}

    def register(self, model: MetricModel) -> None:
        self._models[model.metric_id] = model

    def get(self, metric_id: str) -> MetricModel:
        try:
            return self._models[metric_id]
        except KeyError:
            raise MetricUnavailable(
                f"metric {metric_id!r} not registered (have {sorted(self._models)})"
            ) from None

    def versions(self) -> dict[str, str]:
        return {k: m.model_version for k, m in sorted(self._models.items())}


def default_metric_registry(encoder_id: str = DEFAULT_ENCODER_ID) -> MetricRegistry:
    reg = MetricRegistry()
    reg.register(MetricModel("lpips", "stub-thumb16-v1", _stub_lpips))
    reg.register(MetricModel("dreamsim", "stub-thumb8-v1", _stub_dreamsim))
    reg.register(MetricModel("clip_score", f"cosine-{encoder_id}", make_clip_score(encoder_id)))
    return reg


def perceptual_metrics(
    a, b, metric_id: str, registry: MetricRegistry | None = None
) -> float:
    registry = registry or default_metric_registry()
    return registry.get(metric_id)(load_rgb(a), load_rgb(b))


# --- validation protocol -----------------------------------------------------


@dataclass
class MetricReport:
    attribute: Attribute
    psnr_db: float
    lpips: float
    clip_score: float
    dreamsim: float
    n_pairs: int
    n_failed: int = 0
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute.value,
            "psnr_db": self.psnr_db,
            "lpips": self.lpips,
            "clip_score": self.clip_score,
            "dreamsim": self.dreamsim,
            "n_pairs": self.n_pairs,
            "n_failed": self.n_failed,
            "config_digest": self.config_digest,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = ["attribute", "psnr_db", "lpips", "clip_score", "dreamsim",
                  "n_pairs", "n_failed", "config_digest"]
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerow(self.to_dict())
        return path


def pair_seed(object_id: str, value_a: float, value_b: float) -> int:
    """Deterministic seed naming one evaluation pair.

    Shared convention between the protocol and oracle backends: the seed
    is the only pair-specific field in the generation context, so an
    oracle keyed on it can resolve the ground-truth target.
    """
    key = f"{object_id}:{value_a:.6f}->{value_b:.6f}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def _adjacent_ordered_pairs(entries):
    for k in range(len(entries) - 1):
        yield entries[k], entries[k + 1]
        yield entries[k + 1], entries[k]


def make_oracle_backend(manifest: DatasetManifest) -> CallbackBackend:
    """Backend that returns the ground-truth target render for each pair."""
    table: dict[int, str] = {}
    for entries in manifest.by_object("val").values():
        for src, dst in _adjacent_ordered_pairs(entries):
            table[pair_seed(src.object_id, src.attribute_value, dst.attribute_value)] = (
                dst.image_path
            )

    def resolver(ctx: GenerationContext) -> np.ndarray:
        try:
            return load_rgb(table[ctx.seed])
        except KeyError:
            raise BackendError(f"oracle has no ground truth for seed {ctx.seed}") from None

    return CallbackBackend(resolver, backend_id="mock-oracle")


def evaluate_attribute(
    model: AttributeEditorModel,
    manifest: DatasetManifest,
    backend: DiffusionBackend,
    *,
    registry: MetricRegistry | None = None,
    injection: InjectionConfig | None = None,
    steps: int = 8,
    guidance: float = 5.0,
) -> MetricReport:
    """Edit each val object along adjacent step pairs and score vs truth.

    For a pair (a -> b): encode the render at a, predict the direction for
    the normalized strength, offset, generate, and compare with the render
    at b. Backend failures are logged, excluded, and counted.
    """
    registry = registry or default_metric_registry(model.encoder.encoder_id)
    if injection is None:
        blocks = backend.block_list[:1]
        injection = InjectionConfig(blocks)

    lo, hi = attribute_range(model.attribute)
    sums = {"psnr": 0.0, "lpips": 0.0, "clip_score": 0.0, "dreamsim": 0.0}
    n_ok = 0
    n_failed = 0
    val_objects = manifest.by_object("val")
    for object_id, entries in sorted(val_objects.items()):
        for src, dst in _adjacent_ordered_pairs(entries):
            try:
                image_a = load_rgb(src.image_path)
                truth = load_rgb(dst.image_path)
                ctx = prepare_context(
                    image_a,
                    np.ones(image_a.shape[:2], dtype=bool),
                    "luma-v1",
                    seed=pair_seed(object_id, src.attribute_value, dst.attribute_value),
                    steps=steps,
                    guidance=guidance,
                )
                z = encode_image(image_a, model.encoder)
                delta = (dst.attribute_value - src.attribute_value) / (hi - lo)
                direction = predict_direction(model, z, delta)
                edited = generate(ctx, apply_direction(z, direction), injection, backend)
            except MarbleError as exc:
                log.warning("pair %s %.3f->%.3f failed: %s",
                            object_id, src.attribute_value, dst.attribute_value, exc)
                n_failed += 1
                continue
            sums["psnr"] += psnr(edited, truth)
            sums["lpips"] += registry.get("lpips")(edited, truth)
            sums["clip_score"] += registry.get("clip_score")(edited, truth)
            sums["dreamsim"] += registry.get("dreamsim")(edited, truth)
            n_ok += 1

    if n_ok == 0:
        raise BackendError("every evaluation pair failed")
    cfg_digest = hashlib.sha256(
        json.dumps(
            {
                "backend": backend.backend_id,
                "metrics": registry.versions(),
                "blocks": sorted(injection.blocks),
                "scale": injection.scale,
                "protocol": "adjacent-ordered-pairs",
            },
            sort_keys=True,
        ).encode()
    ).hexdigest()[:16]
    return MetricReport(
        attribute=model.attribute,
        psnr_db=sums["psnr"] / n_ok,
        lpips=sums["lpips"] / n_ok,
        clip_score=sums["clip_score"] / n_ok,
        dreamsim=sums["dreamsim"] / n_ok,
        n_pairs=n_ok,
        n_failed=n_failed,
        config_digest=cfg_digest,
    )


# --- data-efficiency sweep ---------------------------------------------------

DEFAULT_SWEEP_SIZES = (8, 16, 32, 64, 128, 250)


def data_efficiency_sweep(
    sizes,
    attribute: Attribute,
    train_fn: Callable[[int], AttributeEditorModel],
    eval_fn: Callable[[AttributeEditorModel], dict],
    *,
    out_csv: str | Path | None = None,
    out_json: str | Path | None = None,
) -> list[dict]:
    """Train one editor per object budget and evaluate each.

    ``sizes`` must be nondecreasing. Emits plot-ready rows (and optional
    CSV/JSON) of {size, **metrics}.
    """
    sizes = list(sizes)
    if any(b < a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sizes must be nondecreasing, got {sizes}")
    rows = []
    for size in sizes:
        model = train_fn(size)
        metrics = eval_fn(model)
        rows.append({"size": size, **metrics})
    if out_csv is not None:
        out_csv = Path(out_csv)
        out_csv.parent.mkdir(parents=True, exist_ok=True)
        keys = ["size"] + [k for k in rows[0] if k != "size"]
        with out_csv.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=keys)
            writer.writeheader()
            writer.writerows(rows)
    if out_json is not None:
        out_json = Path(out_json)
        out_json.parent.mkdir(parents=True, exist_ok=True)
        out_json.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return rows


def held_out_planted_cosine(model: AttributeEditorModel, proxy: ProxyDataset,
                            val_pairs) -> float:
    """Mean cosine between predictions and the signed planted direction."""
    cosines = []
    for p in val_pairs:
        pred = predict_direction(model, p.z_a, p.delta).values
        target = p.delta * proxy.planted_direction
        denom = np.linalg.norm(pred) * np.linalg.norm(target)
        if denom == 0.0:
            cosines.append(0.0)
        else:
            cosines.append(float(np.dot(pred, target) / denom))
    return float(np.mean(cosines))


def proxy_efficiency_sweep(
    sizes=DEFAULT_SWEEP_SIZES,
    *,
    dim: int = 32,
    steps: int = 5,
    noise_scale: float = 0.05,
    seed: int = 0,
    attribute: Attribute = Attribute.TRANSPARENCY,
    hp: Hyperparams | None = None,
    out_csv: str | Path | None = None,
    out_json: str | Path | None = None,
) -> list[dict]:
    """Fig-style sweep on the proxy dataset: cosine quality vs object count.

    One fixed held-out pool is shared across budgets; each budget trains on
    a seeded subset of a common training pool.
    """
    sizes = list(sizes)
    max_size = max(sizes)
    n_val = max(8, max_size // 5)
    proxy = synth_proxy_dataset(
        dim, max_size + n_val, steps=steps, noise_scale=noise_scale,
        seed=seed, attribute=attribute,
    )
    objects = list(proxy.object_steps)
    val_objects = set(objects[max_size:])
    val_pairs = [p for p in proxy.pairs if p.object_id in val_objects]
    train_objects = objects[:max_size]

    def train_fn(size: int) -> AttributeEditorModel:
        chosen = set(train_objects[:size])
        pairs = [p for p in proxy.pairs if p.object_id in chosen]
        basis = fit_basis(extract_directions(pairs), attribute=attribute)
        params = hp or Hyperparams(seed=seed)
        return train_editor(pairs, basis, params)

    def eval_fn(model: AttributeEditorModel) -> dict:
        return {"cosine": held_out_planted_cosine(model, proxy, val_pairs)}

    return data_efficiency_sweep(
        sizes, attribute, train_fn, eval_fn, out_csv=out_csv, out_json=out_json
    )
