"""Controlled-attribute dataset tooling.

The training data protocol: take a pool of synthetic objects, give each a
randomized base material and a random environment map, then sweep one
attribute over uniform steps at a random viewpoint. This module emits
declarative render jobs for an external renderer, ingests the rendered
images into split manifests, and fabricates a fully synthetic proxy
dataset (embeddings with a planted direction) so the learning stack is
testable without a renderer or a GPU.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .directions import AttributePair, make_pairs
from .embedding import Attribute, EncoderConfig, MaterialEmbedding
from .errors import EmptyDataset, InvalidSchedule, JobEmitError, RegistryUnderflow

ATTRIBUTE_RANGES: dict[Attribute, tuple[float, float]] = {
    Attribute.ROUGHNESS: (0.0, 1.0),
    Attribute.METALLIC: (0.0, 1.0),
    Attribute.TRANSPARENCY: (0.0, 1.0),
    Attribute.GLOW: (0.0, 5.0),
}

# Shader parameter swept per attribute (transparency drives transmission).
SHADER_KEYS: dict[Attribute, str] = {
    Attribute.ROUGHNESS: "roughness",
    Attribute.METALLIC: "metallic",
    Attribute.TRANSPARENCY: "transmission",
    Attribute.GLOW: "emission_strength",
}

JOB_SCHEMA = {
    "type": "object",
    "required": [
        "schema_version", "object_id", "env_id", "camera_seed", "camera",
        "resolution", "swept_attribute", "attribute_value", "shader", "output_path",
    ],
    "properties": {
        "schema_version": {"const": 1},
        "object_id": {"type": "string", "minLength": 1},
        "env_id": {"type": "string", "minLength": 1},
        "camera_seed": {"type": "integer", "minimum": 0},
        "camera": {
            "type": "object",
            "required": ["azimuth_deg", "elevation_deg"],
            "properties": {
                "azimuth_deg": {"type": "number", "minimum": 0, "exclusiveMaximum": 360},
                "elevation_deg": {"type": "number"},
            },
        },
        "resolution": {
            "type": "array", "items": {"type": "integer", "minimum": 1},
            "minItems": 2, "maxItems": 2,
        },
        "swept_attribute": {"enum": [a.value for a in ATTRIBUTE_RANGES]},
        "attribute_value": {"type": "number"},
        "shader": {
            "type": "object",
            "required": ["base_color", "roughness", "metallic", "transmission",
                         "emission_strength"],
            "properties": {
                "base_color": {"type": "array", "items": {"type": "number"},
                               "minItems": 3, "maxItems": 3},
                "roughness": {"type": "number", "minimum": 0, "maximum": 1},
                "metallic": {"type": "number", "minimum": 0, "maximum": 1},
                "transmission": {"type": "number", "minimum": 0, "maximum": 1},
                "emission_strength": {"type": "number", "minimum": 0},
            },
        },
        "output_path": {"type": "string", "minLength": 1},
    },
    "additionalProperties": False,
}

_JOB_VALIDATOR = Draft202012Validator(JOB_SCHEMA)


def attribute_range(attribute: Attribute) -> tuple[float, float]:
    try:
        return ATTRIBUTE_RANGES[attribute]
    except KeyError:
        raise InvalidSchedule(f"attribute {attribute} has no declared range") from None


def normalize_delta(attribute: Attribute, raw_difference: float) -> float:
    """Map a raw shader-value difference to slider units in [-1, 1]."""
    lo, hi = attribute_range(attribute)
    return float(raw_difference) / (hi - lo)


def build_schedule(attribute: Attribute, steps: int) -> list[float]:
    """Uniform grid of ``steps`` values over the attribute's full range."""
    if steps < 2:
        raise InvalidSchedule(f"need at least 2 steps, got {steps}")
    lo, hi = attribute_range(attribute)
    return [float(v) for v in np.linspace(lo, hi, steps)]


def coupled_roughness(roughness_base: float, transmission: float) -> float:
    """Roughness annealed to zero as transmission rises (glass-like look)."""
    return float(roughness_base * (1.0 - transmission))


@dataclass(frozen=True)
class Registry:
    """Flat id registry for assets or environment maps."""

    ids: tuple[str, ...]

    @classmethod
    def from_index(cls, path: str | Path) -> "Registry":
        data = json.loads(Path(path).read_text())
        return cls(ids=tuple(data["ids"]))

    @classmethod
    def synthetic(cls, prefix: str, count: int) -> "Registry":
        return cls(ids=tuple(f"{prefix}-{i:04d}" for i in range(count)))

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class RenderSpec:
    """One object's sweep: fixed base material, varying swept attribute."""

    object_id: str
    env_id: str
    camera_seed: int
    azimuth_deg: float
    elevation_deg: float
    base_material: dict
    swept_attribute: Attribute
    schedule: tuple[float, ...]


def plan_dataset(
    attribute: Attribute,
    assets: Registry,
    envs: Registry,
    *,
    n_objects: int = 300,
    n_envs: int = 50,
    steps: int = 5,
    seed: int = 0,
) -> list[RenderSpec]:
    """One RenderSpec per object, seeded end to end.

    Non-swept shader attributes are drawn once per object and held fixed
    across that object's whole schedule; each object gets a random
    environment from the first ``n_envs`` maps and one random viewpoint
    (azimuth uniform, elevation in a fixed band).
    """
    if len(assets) < n_objects:
        raise RegistryUnderflow(f"asset registry holds {len(assets)} < {n_objects} objects")
    if len(envs) < n_envs:
        raise RegistryUnderflow(f"env registry holds {len(envs)} < {n_envs} maps")

    rng = np.random.default_rng(seed)
    schedule = tuple(build_schedule(attribute, steps))
    chosen = [assets.ids[i] for i in rng.choice(len(assets), size=n_objects, replace=False)]
    env_pool = envs.ids[:n_envs]

    specs = []
    for object_id in chosen:
        base_material = {
            "base_color": [round(float(v), 6) for v in rng.uniform(0, 1, size=3)],
            "roughness": round(float(rng.uniform(0, 1)), 6),
            "metallic": round(float(rng.uniform(0, 1)), 6),
            "transmission": round(float(rng.uniform(0, 1)), 6),
            "emission_strength": round(float(rng.uniform(0, 5)), 6),
        }
        specs.append(
            RenderSpec(
                object_id=object_id,
                env_id=str(env_pool[rng.integers(0, len(env_pool))]),
                camera_seed=int(rng.integers(0, 2**63)),
                azimuth_deg=round(float(rng.uniform(0, 360)), 4),
                elevation_deg=round(float(rng.uniform(10, 60)), 4),
                base_material=base_material,
                swept_attribute=attribute,
                schedule=schedule,
            )
        )
    return specs


def render_job(spec: RenderSpec, step_index: int, resolution: tuple[int, int] = (512, 512)) -> dict:
    """Declarative job for one (object, schedule step) render."""
    value = spec.schedule[step_index]
    shader = dict(spec.base_material)
    shader[SHADER_KEYS[spec.swept_attribute]] = value
    if spec.swept_attribute is Attribute.TRANSPARENCY:
        shader["roughness"] = coupled_roughness(spec.base_material["roughness"], value)
    job = {
        "schema_version": 1,
        "object_id": spec.object_id,
        "env_id": spec.env_id,
        "camera_seed": spec.camera_seed,
        "camera": {"azimuth_deg": spec.azimuth_deg, "elevation_deg": spec.elevation_deg},
        "resolution": list(resolution),
        "swept_attribute": spec.swept_attribute.value,
        "attribute_value": value,
        "shader": shader,
        "output_path": f"renders/{spec.object_id}/{spec.swept_attribute.value}/step_{step_index:02d}.png",
    }
    _JOB_VALIDATOR.validate(job)
    return job


def job_filename(spec: RenderSpec, step_index: int) -> str:
    return f"{spec.object_id}__{spec.swept_attribute.value}__step{step_index:02d}.json"


def emit_render_jobs(specs: list[RenderSpec], out_dir: str | Path) -> list[Path]:
    """Write one canonical-JSON job file per (spec, step); re-emission is
    byte-identical."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for spec in specs:
            for k in range(len(spec.schedule)):
                job = render_job(spec, k)
                path = out_dir / job_filename(spec, k)
                path.write_text(
                    json.dumps(job, sort_keys=True, separators=(",", ":")) + "\n"
                )
                paths.append(path)
        return paths
    except OSError as exc:
        raise JobEmitError(f"could not write job files under {out_dir}: {exc}") from exc


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    object_id: str
    env_id: str
    attribute_value: float
    split: str  # train | val


@dataclass
class DatasetManifest:
    attribute: Attribute
    entries: list[ManifestEntry] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # incomplete object ids
    embedding_cache_dir: str | None = None

    def objects(self, split: str) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            if e.split == split:
                seen.setdefault(e.object_id, None)
        return list(seen)

    def by_object(self, split: str) -> dict[str, list[ManifestEntry]]:
        grouped: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            if e.split == split:
                grouped.setdefault(e.object_id, []).append(e)
        for entries in grouped.values():
            entries.sort(key=lambda e: e.attribute_value)
        return grouped

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            header = {
                "attribute": self.attribute.value,
                "skipped": self.skipped,
                "embedding_cache_dir": self.embedding_cache_dir,
            }
            fh.write(json.dumps({"manifest_header": header}, sort_keys=True) + "\n")
            for e in self.entries:
                fh.write(
                    json.dumps(
                        {
                            "image_path": e.image_path,
                            "object_id": e.object_id,
                            "env_id": e.env_id,
                            "attribute_value": e.attribute_value,
                            "split": e.split,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        return path

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise EmptyDataset(f"manifest {path} is empty")
        header = json.loads(lines[0])["manifest_header"]
        manifest = cls(
            attribute=Attribute(header["attribute"]),
            skipped=list(header.get("skipped", [])),
            embedding_cache_dir=header.get("embedding_cache_dir"),
        )
        for line in lines[1:]:
            raw = json.loads(line)
            manifest.entries.append(ManifestEntry(**raw))
        return manifest


def ingest_renders(
    job_dir: str | Path,
    image_dir: str | Path,
    split_seed: int,
    *,
    n_train: int = 250,
    n_val: int = 50,
) -> DatasetManifest:
    """Assemble a manifest from emitted jobs and rendered images.

    Objects missing any render are skipped, not fatal. The split is
    by object id (no object appears in both sides); when fewer complete
    objects exist than requested, the requested train:val ratio is kept.
    """
    job_dir, image_dir = Path(job_dir), Path(image_dir)
    jobs = [json.loads(p.read_text()) for p in sorted(job_dir.glob("*.json"))]
    if not jobs:
        raise EmptyDataset(f"no job files under {job_dir}")
    attribute = Attribute(jobs[0]["swept_attribute"])

    by_object: dict[str, list[dict]] = {}
    for job in jobs:
        _JOB_VALIDATOR.validate(job)
        by_object.setdefault(job["object_id"], []).append(job)

    complete, skipped = [], []
    for object_id in sorted(by_object):
        if all((image_dir / j["output_path"]).exists() for j in by_object[object_id]):
            complete.append(object_id)
        else:
            skipped.append(object_id)
    if not complete:
        raise EmptyDataset("no object has a complete set of renders")

    rng = np.random.default_rng(split_seed)
    order = [complete[i] for i in rng.permutation(len(complete))]
    if len(order) >= n_train + n_val:
        train_ids = set(order[:n_train])
        val_ids = set(order[n_train : n_train + n_val])
    else:
        n_val_eff = max(1, round(len(order) * n_val / (n_train + n_val)))
        val_ids = set(order[:n_val_eff])
        train_ids = set(order[n_val_eff:])

    manifest = DatasetManifest(attribute=attribute, skipped=skipped)
    for object_id in sorted(train_ids | val_ids):
        split = "train" if object_id in train_ids else "val"
        for job in sorted(by_object[object_id], key=lambda j: j["attribute_value"]):
            manifest.entries.append(
                ManifestEntry(
                    image_path=str(image_dir / job["output_path"]),
                    object_id=object_id,
                    env_id=job["env_id"],
                    attribute_value=float(job["attribute_value"]),
                    split=split,
                )
            )
    return manifest


# --- synthetic proxy dataset -------------------------------------------------


@dataclass
class ProxyDataset:
    """Desk-scale stand-in for renderer + encoder with a planted direction."""

    pairs: list[AttributePair]
    planted_direction: np.ndarray
    attribute: Attribute
    encoder: EncoderConfig
    step_values: tuple[float, ...]
    object_steps: dict[str, list[tuple[float, MaterialEmbedding]]]

    def split(self, val_fraction: float = 0.2) -> tuple[list[AttributePair], list[AttributePair]]:
        """By-object train/val split in object order (objects are already random)."""
        objects = list(self.object_steps)
        n_val = max(1, int(round(val_fraction * len(objects))))
        val_objects = set(objects[-n_val:])
        train = [p for p in self.pairs if p.object_id not in val_objects]
        val = [p for p in self.pairs if p.object_id in val_objects]
        return train, val


def synth_proxy_dataset(
    dim: int,
    n_objects: int,
    *,
    steps: int = 5,
    noise_scale: float = 0.05,
    seed: int = 0,
    attribute: Attribute = Attribute.ROUGHNESS,
    pairing: str = "ordered",
    encoder: EncoderConfig | None = None,
) -> ProxyDataset:
    """Plant one unit direction and emit noisy step embeddings around it.

    Each pseudo-object gets a random base embedding; the embedding at step
    value v is ``base + v * planted + noise``. Pairs follow the training
    pairing scheme, and the planted direction is returned for oracle checks.
    Passing ``encoder`` plants the dataset in that encoder's space (dim must
    match), so proxy-trained checkpoints can drive image edits.
    """
    if dim < 2:
        raise ValueError(f"proxy dim must be >= 2, got {dim}")
    if n_objects < 1:
        raise ValueError(f"need at least one object, got {n_objects}")
    if encoder is not None and encoder.dim != dim:
        raise ValueError(f"encoder dim {encoder.dim} != proxy dim {dim}")
    rng = np.random.default_rng(seed)
    planted = rng.standard_normal(dim)
    planted /= np.linalg.norm(planted)
    encoder = encoder or EncoderConfig(f"proxy-{dim}", dim, "synthetic")
    values = tuple(float(v) for v in np.linspace(0.0, 1.0, steps))

    pairs: list[AttributePair] = []
    object_steps: dict[str, list[tuple[float, MaterialEmbedding]]] = {}
    for i in range(n_objects):
        object_id = f"proxy-{i:04d}"
        base = rng.standard_normal(dim)
        step_embeddings = []
        for v in values:
            noise = noise_scale * rng.standard_normal(dim) if noise_scale > 0 else 0.0
            z = MaterialEmbedding(base + v * planted + noise, encoder=encoder)
            step_embeddings.append((v, z))
        object_steps[object_id] = step_embeddings
        pairs.extend(
            make_pairs(step_embeddings, attribute, (0.0, 1.0),
                       scheme=pairing, object_id=object_id)
        )
    return ProxyDataset(
        pairs=pairs,
        planted_direction=planted,
        attribute=attribute,
        encoder=encoder,
        step_values=values,
        object_steps=object_steps,
    )
