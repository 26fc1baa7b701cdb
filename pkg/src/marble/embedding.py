"""Embedding-space value types and the arithmetic every edit is built from.

All edits in this engine are vector operations on fixed-length material
embeddings: convex blends between exemplars, additive offsets along learned
attribute directions, and sums of per-attribute directions for multi-edit
passes. Values are immutable after construction and computed in float64;
the on-disk interchange container stores float32.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import IncompatibleEmbeddings, InvalidWeight

EMB_MAGIC = b"MRBL"
EMB_VERSION = 1


class Attribute(str, Enum):
    """Editable material attributes plus tags for derived directions."""

    ROUGHNESS = "roughness"
    METALLIC = "metallic"
    TRANSPARENCY = "transparency"
    GLOW = "glow"
    BLEND = "blend"
    COMPOSITE = "composite"


# Order is the wire encoding for checkpoints; append only.
ATTRIBUTE_CODES: tuple[Attribute, ...] = (
    Attribute.ROUGHNESS,
    Attribute.METALLIC,
    Attribute.TRANSPARENCY,
    Attribute.GLOW,
    Attribute.BLEND,
    Attribute.COMPOSITE,
)


def _frozen_vector(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EncoderConfig:
    """Pinned identity of the image encoder producing an embedding.

    Two embeddings are comparable only if both ``encoder_id`` and
    ``preprocessing_id`` match; equal dimension alone is not enough.
    """

    encoder_id: str
    dim: int
    preprocessing_id: str

    def __post_init__(self) -> None:
        if not self.encoder_id:
            raise ValueError("encoder_id must be nonempty")
        if int(self.dim) <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")

    def comparable_with(self, other: "EncoderConfig") -> bool:
        return (self.encoder_id, self.preprocessing_id) == (
            other.encoder_id,
            other.preprocessing_id,
        )


@dataclass(frozen=True, eq=False)
class MaterialEmbedding:
    """Fixed-length material feature vector plus its provenance."""

    values: np.ndarray
    encoder: EncoderConfig
    source_digest: str = "synthetic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen_vector(self.values))
        if self.values.shape[0] != self.encoder.dim:
            raise IncompatibleEmbeddings(
                f"embedding length {self.values.shape[0]} != encoder dim {self.encoder.dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise IncompatibleEmbeddings("embedding contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.encoder.dim)


@dataclass(frozen=True, eq=False)
class EditDirection:
    """Offset vector in embedding space, optionally tagged with its edit."""

    values: np.ndarray
    attribute: Attribute | None = None
    strength: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen_vector(self.values))
        if not np.all(np.isfinite(self.values)):
            raise IncompatibleEmbeddings("direction contains non-finite entries")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def negated(self) -> "EditDirection":
        strength = None if self.strength is None else -self.strength
        return EditDirection(-self.values, attribute=self.attribute, strength=strength)


def _require_comparable(z1: MaterialEmbedding, z2: MaterialEmbedding) -> None:
    if not z1.encoder.comparable_with(z2.encoder):
        raise IncompatibleEmbeddings(
            f"embeddings from {z1.encoder.encoder_id}/{z1.encoder.preprocessing_id} and "
            f"{z2.encoder.encoder_id}/{z2.encoder.preprocessing_id} cannot be mixed"
        )
    if z1.dim != z2.dim:
        raise IncompatibleEmbeddings(f"dim mismatch: {z1.dim} vs {z2.dim}")


def blend(
    z1: MaterialEmbedding,
    z2: MaterialEmbedding,
    alpha: float,
    *,
    allow_extrapolation: bool = False,
) -> MaterialEmbedding:
    """Convex interpolation ``alpha * z1 + (1 - alpha) * z2``.

    ``alpha`` must lie in [0, 1]; pass ``allow_extrapolation=True`` to permit
    weights outside the exemplar hull for research use. Endpoints are exact:
    ``alpha`` of 0 or 1 returns the corresponding input values bit-for-bit.
    """
    _require_comparable(z1, z2)
    alpha = float(alpha)
    if not np.isfinite(alpha):
        raise InvalidWeight(f"alpha must be finite, got {alpha}")
    if not allow_extrapolation and not 0.0 <= alpha <= 1.0:
        raise InvalidWeight(f"alpha {alpha} outside [0, 1]")

    if alpha == 1.0:
        values = z1.values
    elif alpha == 0.0:
        values = z2.values
    else:
        values = alpha * z1.values + (1.0 - alpha) * z2.values
    return MaterialEmbedding(values, encoder=z1.encoder, source_digest="blend")


def apply_direction(z: MaterialEmbedding, d: EditDirection) -> MaterialEmbedding:
    """Offset an embedding by a direction; records the edit in the digest."""
    if d.dim != z.dim:
        raise IncompatibleEmbeddings(f"direction dim {d.dim} != embedding dim {z.dim}")
    tag = d.attribute.value if d.attribute is not None else "direction"
    digest = f"{z.source_digest}+{tag}:{d.strength}"
    return MaterialEmbedding(z.values + d.values, encoder=z.encoder, source_digest=digest)


def compose_directions(
    dirs: list[EditDirection] | tuple[EditDirection, ...],
    dim: int | None = None,
) -> EditDirection:
    """Sum directions into one composite edit applied in a single pass.

    An empty list yields the zero direction (``dim`` must then be given).
    Summation order is canonicalized on the operand bytes, so the result is
    permutation-invariant bit-for-bit.
    """
    dirs = list(dirs)
    if not dirs:
        if dim is None:
            raise ValueError("dim is required to compose an empty direction list")
        return EditDirection(np.zeros(int(dim)), attribute=Attribute.COMPOSITE)
    if len(dirs) == 1:
        return dirs[0]

    width = dirs[0].dim
    for d in dirs[1:]:
        if d.dim != width:
            raise IncompatibleEmbeddings(f"direction dims differ: {width} vs {d.dim}")
    if dim is not None and int(dim) != width:
        raise IncompatibleEmbeddings(f"declared dim {dim} != direction dim {width}")

    ordered = sorted(dirs, key=lambda d: d.values.tobytes())
    total = ordered[0].values.copy()
    for d in ordered[1:]:
        total = total + d.values
    return EditDirection(total, attribute=Attribute.COMPOSITE)


# ---------------------------------------------------------------------------
# Interchange container (.emb): magic, u16 version, encoder_id, u32 dim, f32 data.
# ---------------------------------------------------------------------------


def embedding_to_bytes(z: MaterialEmbedding) -> bytes:
    ident = z.encoder.encoder_id.encode("utf-8")
    header = EMB_MAGIC + struct.pack("<HH", EMB_VERSION, len(ident)) + ident
    header += struct.pack("<I", z.dim)
    return header + z.values.astype("<f4").tobytes()


def save_embedding(z: MaterialEmbedding, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(embedding_to_bytes(z))
    return path


def embedding_from_bytes(data: bytes, *, resolve_encoder=None) -> MaterialEmbedding:
    """Parse a container; ``resolve_encoder`` maps encoder_id -> EncoderConfig.

    Without a resolver the encoder registry default is used, so embeddings
    written by an unknown encoder fail loudly instead of silently mixing.
    """
    if len(data) < 8 or data[:4] != EMB_MAGIC:
        raise ValueError("not an embedding container (bad magic)")
    version, ident_len = struct.unpack_from("<HH", data, 4)
    if version != EMB_VERSION:
        raise ValueError(f"unsupported embedding container version {version}")
    offset = 8
    encoder_id = data[offset : offset + ident_len].decode("utf-8")
    offset += ident_len
    (dim,) = struct.unpack_from("<I", data, offset)
    offset += 4
    payload = data[offset : offset + 4 * dim]
    if len(payload) != 4 * dim:
        raise ValueError("embedding container truncated")
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)

    if resolve_encoder is None:
        from .encoders import encoder_config  # late import to avoid a cycle

        resolve_encoder = encoder_config
    encoder = resolve_encoder(encoder_id)
    if encoder.dim != dim:
        raise IncompatibleEmbeddings(
            f"container dim {dim} disagrees with registered encoder dim {encoder.dim}"
        )
    digest = hashlib.sha256(payload).hexdigest()[:16]
    return MaterialEmbedding(values, encoder=encoder, source_digest=f"emb:{digest}")


def load_embedding(path: str | Path, *, resolve_encoder=None) -> MaterialEmbedding:
    return embedding_from_bytes(Path(path).read_bytes(), resolve_encoder=resolve_encoder)
