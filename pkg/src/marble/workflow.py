"""End-to-end edit pipeline shared by the CLI and the HTTP service.

An edit spec names everything needed to reproduce a render: the encoder,
the base embedding (single exemplar or a blend), the per-attribute
strengths applied in one pass, the injection config, and the seed. The
embedding computation is pure, so replaying a persisted spec reproduces
the injected vector bitwise and, with a deterministic backend, the output
digest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .editor import AttributeEditorModel, predict_direction
from .embedding import (
    Attribute,
    MaterialEmbedding,
    apply_direction,
    blend,
    compose_directions,
)
from .errors import MarbleError
from .injection import DiffusionBackend, GenerationContext, InjectionConfig, generate
from .rasters import image_digest


@dataclass
class EditSpec:
    """Replayable description of one render request."""

    base_exemplar: str  # exemplar name
    blend_exemplar: str | None = None
    alpha: float = 1.0
    edits: list[dict] = field(default_factory=list)  # [{attribute, delta}]
    blocks: list[str] = field(default_factory=list)
    scale: float = 1.0
    seed: int = 0
    allow_extrapolation: bool = False

    def to_dict(self) -> dict:
        return {
            "base_exemplar": self.base_exemplar,
            "blend_exemplar": self.blend_exemplar,
            "alpha": self.alpha,
            "edits": self.edits,
            "blocks": self.blocks,
            "scale": self.scale,
            "seed": self.seed,
            "allow_extrapolation": self.allow_extrapolation,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EditSpec":
        return cls(
            base_exemplar=raw["base_exemplar"],
            blend_exemplar=raw.get("blend_exemplar"),
            alpha=float(raw.get("alpha", 1.0)),
            edits=list(raw.get("edits", [])),
            blocks=list(raw.get("blocks", [])),
            scale=float(raw.get("scale", 1.0)),
            seed=int(raw.get("seed", 0)),
            allow_extrapolation=bool(raw.get("allow_extrapolation", False)),
        )


def compute_edit_vector(
    spec: EditSpec,
    exemplars: dict[str, MaterialEmbedding],
    models: dict[Attribute, AttributeEditorModel],
) -> MaterialEmbedding:
    """Resolve the spec to the embedding handed to the backend.

    Base is the exemplar embedding or a blend of two; every edit predicts
    a direction from that same base, the directions are composed, and one
    offset is applied - multi-attribute edits stay a single pass.
    """
    try:
        z = exemplars[spec.base_exemplar]
    except KeyError:
        raise MarbleError(f"unknown exemplar {spec.base_exemplar!r}") from None
    if spec.blend_exemplar is not None:
        try:
            z2 = exemplars[spec.blend_exemplar]
        except KeyError:
            raise MarbleError(f"unknown exemplar {spec.blend_exemplar!r}") from None
        z = blend(z, z2, spec.alpha, allow_extrapolation=spec.allow_extrapolation)

    if not spec.edits:
        return z
    directions = []
    for edit in spec.edits:
        attribute = Attribute(edit["attribute"])
        model = models.get(attribute)
        if model is None:
            raise MarbleError(f"no editor model for attribute {attribute.value!r}")
        directions.append(predict_direction(model, z, float(edit["delta"])))
    return apply_direction(z, compose_directions(directions, dim=z.dim))


def run_edit(
    ctx: GenerationContext,
    spec: EditSpec,
    exemplars: dict[str, MaterialEmbedding],
    models: dict[Attribute, AttributeEditorModel],
    backend: DiffusionBackend,
):
    """Compute the edit vector and run exactly one generation."""
    z = compute_edit_vector(spec, exemplars, models)
    blocks = spec.blocks or list(backend.block_list[:1])
    cfg = InjectionConfig(blocks, spec.scale)
    image = generate(ctx, z, cfg, backend)
    return image, z, cfg


@dataclass
class Sidecar:
    """Reproduction record written next to every CLI edit output."""

    spec: EditSpec
    encoder_id: str
    backend_id: str
    context_files: dict  # {image, mask, depth?} -> {path, sha256}
    exemplar_files: dict  # name -> {path, sha256}
    model_digests: dict  # attribute -> weights digest
    output_digest: str
    steps: int
    guidance: float

    def to_dict(self) -> dict:
        return {
            "sidecar_version": 1,
            "spec": self.spec.to_dict(),
            "encoder_id": self.encoder_id,
            "backend_id": self.backend_id,
            "context_files": self.context_files,
            "exemplar_files": self.exemplar_files,
            "model_digests": self.model_digests,
            "output_digest": self.output_digest,
            "steps": self.steps,
            "guidance": self.guidance,
        }

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Sidecar":
        raw = json.loads(Path(path).read_text())
        if raw.get("sidecar_version") != 1:
            raise MarbleError(f"unsupported sidecar version in {path}")
        return cls(
            spec=EditSpec.from_dict(raw["spec"]),
            encoder_id=raw["encoder_id"],
            backend_id=raw["backend_id"],
            context_files=raw["context_files"],
            exemplar_files=raw["exemplar_files"],
            model_digests=raw["model_digests"],
            output_digest=raw["output_digest"],
            steps=int(raw["steps"]),
            guidance=float(raw["guidance"]),
        )


def output_digest(image) -> str:
    return image_digest(image)
