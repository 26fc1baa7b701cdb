"""Attribute edit directions: extraction, low-rank SVD basis, projection.

Stacked pair differences of embeddings are noisy; a truncated SVD keeps
only the dominant subspace of variation for one attribute. The retained
rank comes from a deterministic elbow rule on the singular-value curve,
and training targets are filtered by projecting onto the basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import Attribute, EditDirection, MaterialEmbedding
from .errors import DegenerateDirections, HeterogeneousPairs, IncompatibleEmbeddings

ORTHONORMALITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class AttributePair:
    """One training observation: embeddings at attribute values a and a + delta.

    ``delta`` is in normalized attribute units (full range mapped to [-1, 1]);
    its sign encodes the direction of change.
    """

    z_a: MaterialEmbedding
    z_b: MaterialEmbedding
    delta: float
    attribute: Attribute
    object_id: str = ""
    env_id: str = ""

    def __post_init__(self) -> None:
        if not self.z_a.encoder.comparable_with(self.z_b.encoder):
            raise IncompatibleEmbeddings("pair mixes embeddings from different encoders")
        if abs(self.delta) > 1.0 + 1e-12:
            raise ValueError(f"delta must lie in [-1, 1], got {self.delta}")


@dataclass(eq=False)
class DirectionBasis:
    """Orthonormal low-rank basis for one attribute's edit directions."""

    attribute: Attribute
    basis: np.ndarray  # (D, r), orthonormal columns
    singular_values: np.ndarray  # length min(n, D), nonincreasing
    rank: int
    variance_explained: float
    n_directions: int

    def __post_init__(self) -> None:
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.singular_values = np.asarray(self.singular_values, dtype=np.float64)
        if self.basis.ndim != 2 or self.basis.shape[1] != self.rank:
            raise ValueError(f"basis shape {self.basis.shape} inconsistent with rank {self.rank}")
        gram = self.basis.T @ self.basis
        if not np.allclose(gram, np.eye(self.rank), atol=ORTHONORMALITY_TOL):
            raise ValueError("basis columns are not orthonormal")
        if np.any(np.diff(self.singular_values) > 1e-9 * max(self.singular_values[0], 1.0)):
            raise ValueError("singular values must be nonincreasing")
        if not 0.0 <= self.variance_explained <= 1.0 + 1e-12:
            raise ValueError(f"variance_explained {self.variance_explained} outside [0, 1]")

    @property
    def dim(self) -> int:
        return int(self.basis.shape[0])

    def quantized(self) -> "DirectionBasis":
        """Round arrays through float32, the checkpoint storage precision.

        Models embed their basis at this precision so that save/load
        round-trips reproduce it bit-for-bit.
        """
        sv = self.singular_values.astype(np.float32).astype(np.float64)
        energy = float(np.sum(sv**2))
        var = float(np.sum(sv[: self.rank] ** 2) / energy) if energy > 0 else 0.0
        return DirectionBasis(
            attribute=self.attribute,
            basis=self.basis.astype(np.float32).astype(np.float64),
            singular_values=sv,
            rank=self.rank,
            variance_explained=var,
            n_directions=self.n_directions,
        )


def extract_directions(pairs: list[AttributePair]) -> np.ndarray:
    """Stack pair differences ``z_b - z_a`` into an (n, D) matrix, row order kept."""
    if not pairs:
        raise HeterogeneousPairs("no pairs given")
    attribute = pairs[0].attribute
    encoder = pairs[0].z_a.encoder
    for p in pairs:
        if p.attribute != attribute:
            raise HeterogeneousPairs(
                f"mixed attributes: {attribute.value} and {p.attribute.value}"
            )
        if not p.z_a.encoder.comparable_with(encoder):
            raise HeterogeneousPairs("pairs mix embeddings from different encoders")
    return np.stack([p.z_b.values - p.z_a.values for p in pairs], axis=0)


def select_rank_elbow(
    singular_values: np.ndarray,
    *,
    min_variance: float = 0.5,
    search_window: int | None = None,
) -> int:
    """Pick the retained rank at the knee of the singular-value curve.

    Rule: the smallest interior index maximizing the second difference of
    the log singular values, floored at 1, then grown until the explained
    variance reaches ``min_variance``. The search is confined to the
    leading half of the spectrum (the knee of interest sits at the top; the
    tail of a noise bulk can curve sharply on its own).
    """
    s = np.asarray(singular_values, dtype=np.float64)
    m = s.shape[0]
    energy = np.cumsum(s**2)
    total = energy[-1]
    if total <= 0.0:
        raise DegenerateDirections("all singular values are zero")

    if m < 3:
        rank = 1
    else:
        floor = s[0] * 1e-12 + np.finfo(np.float64).tiny
        y = np.log(np.maximum(s, floor))
        if search_window is None:
            search_window = max(2, m // 2)
        hi = min(m - 2, search_window)  # interior indices 1..hi
        curvature = y[2 : hi + 2] - 2.0 * y[1 : hi + 1] + y[:hi]
        rank = int(np.argmax(curvature)) + 1

    rank = max(rank, 1)
    while rank < m and energy[rank - 1] / total < min_variance:
        rank += 1
    return rank


def fit_basis(
    directions: np.ndarray,
    rank_override: int | None = None,
    *,
    attribute: Attribute = Attribute.COMPOSITE,
    min_variance: float = 0.5,
) -> DirectionBasis:
    """SVD the stacked direction matrix and keep the dominant subspace.

    The basis columns are the top right-singular vectors of the (n, D)
    stack, i.e. the principal directions of variation in embedding space.
    Rank comes from the elbow rule unless ``rank_override`` is given.
    """
    mat = np.asarray(directions, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError(f"expected an (n, D) matrix, got shape {mat.shape}")
    n, dim = mat.shape
    if n < 2:
        raise ValueError(f"need at least 2 directions to fit a basis, got {n}")
    if not np.any(mat):
        raise DegenerateDirections("direction matrix is identically zero")

    _, s, vt = np.linalg.svd(mat, full_matrices=False)
    if rank_override is not None:
        rank = int(rank_override)
        if not 1 <= rank <= s.shape[0]:
            raise ValueError(f"rank_override {rank} outside [1, {s.shape[0]}]")
    else:
        rank = select_rank_elbow(s, min_variance=min_variance)

    energy = float(np.sum(s**2))
    variance = float(np.sum(s[:rank] ** 2) / energy)
    return DirectionBasis(
        attribute=attribute,
        basis=vt[:rank].T.copy(),
        singular_values=s,
        rank=rank,
        variance_explained=variance,
        n_directions=n,
    )


def project_rows(rows: np.ndarray, basis: DirectionBasis) -> np.ndarray:
    """Project row vectors onto the basis span: ``rows @ B @ B.T``."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != basis.dim:
        raise IncompatibleEmbeddings(
            f"vector dim {rows.shape[-1]} != basis dim {basis.dim}"
        )
    return (rows @ basis.basis) @ basis.basis.T


def project_low_rank(d: EditDirection, basis: DirectionBasis) -> EditDirection:
    """Filter a direction through the low-rank subspace (idempotent)."""
    projected = project_rows(d.values, basis)
    return EditDirection(projected, attribute=d.attribute, strength=d.strength)


def make_pairs(
    steps: list[tuple[float, MaterialEmbedding]],
    attribute: Attribute,
    value_range: tuple[float, float],
    *,
    scheme: str = "ordered",
    object_id: str = "",
    env_id: str = "",
) -> list[AttributePair]:
    """Form training pairs from one object's per-step embeddings.

    ``ordered`` pairs every ordered step combination (both edit signs);
    ``adjacent`` keeps consecutive forward steps only. Deltas are the raw
    value differences normalized by the attribute's full range.
    """
    lo, hi = value_range
    span = hi - lo
    if span <= 0:
        raise ValueError(f"empty value range {value_range}")
    pairs: list[AttributePair] = []
    indices = range(len(steps))
    if scheme == "ordered":
        combos = [(i, j) for i in indices for j in indices if i != j]
    elif scheme == "adjacent":
        combos = [(i, i + 1) for i in list(indices)[:-1]]
    else:
        raise ValueError(f"unknown pairing scheme {scheme!r}")
    for i, j in combos:
        va, za = steps[i]
        vb, zb = steps[j]
        pairs.append(
            AttributePair(
                z_a=za,
                z_b=zb,
                delta=(vb - va) / span,
                attribute=attribute,
                object_id=object_id,
                env_id=env_id,
            )
        )
    return pairs
