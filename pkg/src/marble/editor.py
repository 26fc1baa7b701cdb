"""Attribute editor network: a 2-layer MLP predicting edit directions.

The network maps (embedding, strength) -> direction. Input width is D + 1
(the strength scalar is concatenated to the embedding), hidden width
defaults to D, and the objective is (1 - cosine similarity) plus MSE
against low-rank-projected pair differences. Training is plain seeded
numpy with Adam, so identical seeds reproduce identical weights.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .directions import AttributePair, DirectionBasis, extract_directions, project_rows
from .embedding import (
    ATTRIBUTE_CODES,
    Attribute,
    EditDirection,
    EncoderConfig,
    MaterialEmbedding,
)
from .errors import (
    ChecksumFailure,
    HeterogeneousPairs,
    IncompatibleEmbeddings,
    TrainingDiverged,
    UnsupportedCheckpoint,
)

CKPT_MAGIC = b"MRBM"
CKPT_VERSION = 1

_NORM_EPS = 1e-12


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_grad(x):
    return 1.0 / (1.0 + np.exp(-x))


# tanh-form GELU; the gradient below is the exact derivative of this form.
_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x**3)))


def _gelu_grad(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * _GELU_C * (1.0 + 3 * 0.044715 * x**2)


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0.0).astype(np.float64)


ACTIVATIONS = {
    "gelu": (_gelu, _gelu_grad),
    "softplus": (_softplus, _softplus_grad),
    "relu": (_relu, _relu_grad),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


@dataclass
class Hyperparams:
    """Training knobs; all recorded in the model's training_record.

    ``delta_input_scale`` conditions the strength column during training
    and is folded into the first-layer weights afterwards, so the final
    model always takes plain ``[z, delta]`` inputs. ``input_jitter`` and
    ``weight_decay`` regularize the embedding pathway so the zero-strength
    prediction stays near zero on unseen inputs.
    """

    seed: int = 0
    learning_rate: float = 1e-2
    epochs: int = 200
    hidden_width: int | None = None  # None -> D
    batch_size: int = 128
    activation_id: str = "softplus"
    cosine_weight: float = 1.0
    mse_weight: float = 1.0
    zero_delta_fraction: float = 0.10
    delta_input_scale: float = 4.0
    input_jitter: float = 0.2
    weight_decay: float = 1e-3
    # last 20% of epochs run at learning_rate * final_lr_fraction
    final_lr_fraction: float = 0.1


def editor_loss(pred: np.ndarray, target: np.ndarray,
                cosine_weight: float = 1.0, mse_weight: float = 1.0) -> float:
    """Mean over samples of ``cw * (1 - cossim) + mw * MSE``.

    The cosine term is defined as 0 whenever either vector has negligible
    norm (direction undefined), which keeps the optimum at exactly 0 even
    for zero-strength samples with zero targets.
    """
    loss, _ = editor_loss_grad(pred, target, cosine_weight, mse_weight)
    return loss


def editor_loss_grad(
    pred: np.ndarray,
    target: np.ndarray,
    cosine_weight: float = 1.0,
    mse_weight: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Loss plus its analytic gradient with respect to the predictions."""
    p = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if p.shape != t.shape:
        raise ValueError(f"pred shape {p.shape} != target shape {t.shape}")
    n, dim = p.shape

    diff = p - t
    mse_terms = np.mean(diff**2, axis=1)
    grad = mse_weight * (2.0 / dim) * diff

    pn = np.linalg.norm(p, axis=1)
    tn = np.linalg.norm(t, axis=1)
    active = (pn > _NORM_EPS) & (tn > _NORM_EPS)
    cos_terms = np.zeros(n)
    if np.any(active):
        pa, ta = p[active], t[active]
        pna, tna = pn[active], tn[active]
        dots = np.sum(pa * ta, axis=1)
        cos = dots / (pna * tna)
        cos_terms[active] = 1.0 - cos
        # d(1 - cos)/dp = -(t / (|p||t|) - dot * p / (|p|^3 |t|))
        gcos = -(ta / (pna * tna)[:, None] - (dots / (pna**3 * tna))[:, None] * pa)
        grad[active] += cosine_weight * gcos

    loss = float(np.mean(cosine_weight * cos_terms + mse_weight * mse_terms))
    return loss, grad / n


@dataclass(eq=False)
class AttributeEditorModel:
    """Trained 2-layer editor plus provenance for one attribute.

    Weights are float32 (the checkpoint precision); forward passes upcast
    to float64. ``w1`` is (D+1, H): the extra input column is the strength.
    """

    attribute: Attribute
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation_id: str
    basis: DirectionBasis
    encoder: EncoderConfig
    training_record: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                raise TrainingDiverged(f"weight block {name} contains non-finite values")
            setattr(self, name, arr)
        if self.w1.shape != (self.dim + 1, self.hidden_width):
            raise ValueError(f"w1 shape {self.w1.shape} inconsistent with dim {self.dim}")
        if self.w2.shape != (self.hidden_width, self.dim):
            raise ValueError(f"w2 shape {self.w2.shape} inconsistent with dim {self.dim}")
        if self.activation_id not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation_id!r}")

    @property
    def dim(self) -> int:
        return int(self.encoder.dim)

    @property
    def hidden_width(self) -> int:
        return int(self.b1.shape[0])

    def forward(self, x: np.ndarray) -> np.ndarray:
        act, _ = ACTIVATIONS[self.activation_id]
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        hidden = act(x @ self.w1.astype(np.float64) + self.b1.astype(np.float64))
        return hidden @ self.w2.astype(np.float64) + self.b2.astype(np.float64)

    def weights_digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.w1, self.b1, self.w2, self.b2):
            h.update(arr.astype("<f4").tobytes())
        return h.hexdigest()


def _pairs_digest(pairs: list[AttributePair]) -> str:
    h = hashlib.sha256()
    for p in pairs:
        h.update(p.z_a.values.astype("<f8").tobytes())
        h.update(p.z_b.values.astype("<f8").tobytes())
        h.update(struct.pack("<d", p.delta))
    return h.hexdigest()[:16]


def _build_training_arrays(
    pairs: list[AttributePair],
    basis: DirectionBasis,
    hp: Hyperparams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    embeddings = np.stack([p.z_a.values for p in pairs])
    deltas = np.array([p.delta for p in pairs], dtype=np.float64)
    diffs = extract_directions(pairs)
    targets = project_rows(diffs, basis)
    inputs = np.concatenate(
        [embeddings, hp.delta_input_scale * deltas[:, None]], axis=1
    )

    n_aug = 0
    if hp.zero_delta_fraction > 0:
        n_aug = max(1, int(round(hp.zero_delta_fraction * len(pairs))))
        picks = rng.choice(len(pairs), size=n_aug, replace=len(pairs) < n_aug)
        aug_in = np.concatenate(
            [embeddings[picks], np.zeros((n_aug, 1))], axis=1
        )
        inputs = np.concatenate([inputs, aug_in], axis=0)
        targets = np.concatenate([targets, np.zeros((n_aug, targets.shape[1]))], axis=0)
    return inputs, targets, n_aug


def train_editor(
    pairs: list[AttributePair],
    basis: DirectionBasis,
    hp: Hyperparams | None = None,
) -> AttributeEditorModel:
    """Fit the editor MLP on low-rank-projected pair differences.

    Deterministic for a fixed seed: init, shuffling, and augmentation all
    draw from one generator, and reductions run in a fixed order.
    """
    hp = hp or Hyperparams()
    if not pairs:
        raise HeterogeneousPairs("no pairs to train on")
    attribute = pairs[0].attribute
    if basis.attribute != attribute:
        raise HeterogeneousPairs(
            f"basis fitted for {basis.attribute.value}, pairs are {attribute.value}"
        )
    encoder = pairs[0].z_a.encoder
    dim = encoder.dim
    hidden = hp.hidden_width or dim
    act, act_grad = ACTIVATIONS[hp.activation_id]

    rng = np.random.default_rng(hp.seed)
    x, t, n_aug = _build_training_arrays(pairs, basis, hp, rng)
    n = x.shape[0]

    w1 = rng.standard_normal((dim + 1, hidden)) * np.sqrt(2.0 / (dim + 1))
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((hidden, dim)) * np.sqrt(2.0 / hidden)
    b2 = np.zeros(dim)
    params = [w1, b1, w2, b2]

    def full_loss() -> float:
        hidden_a = act(x @ params[0] + params[1])
        pred = hidden_a @ params[2] + params[3]
        return editor_loss(pred, t, hp.cosine_weight, hp.mse_weight)

    initial_loss = full_loss()

    # Adam state
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    moments = [np.zeros_like(p) for p in params]
    velocities = [np.zeros_like(p) for p in params]
    step = 0

    batch = min(hp.batch_size, n)
    dim_cols = slice(0, dim)
    cooldown_epoch = int(0.8 * hp.epochs)
    for epoch in range(hp.epochs):
        lr = hp.learning_rate * (hp.final_lr_fraction if epoch >= cooldown_epoch else 1.0)
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb, tb = x[idx], t[idx]
            if hp.input_jitter > 0:
                xb = xb.copy()
                xb[:, dim_cols] += hp.input_jitter * rng.standard_normal((xb.shape[0], dim))
            a1 = xb @ params[0] + params[1]
            z1 = act(a1)
            pred = z1 @ params[2] + params[3]
            loss, dpred = editor_loss_grad(pred, tb, hp.cosine_weight, hp.mse_weight)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, step {step} "
                    f"(lr={hp.learning_rate}, batch={batch})"
                )
            dz1 = dpred @ params[2].T
            da1 = dz1 * act_grad(a1)
            grads = [
                xb.T @ da1 + hp.weight_decay * params[0],
                da1.sum(axis=0),
                z1.T @ dpred + hp.weight_decay * params[2],
                dpred.sum(axis=0),
            ]

            step += 1
            for p, g, m, v in zip(params, grads, moments, velocities):
                m *= beta1
                m += (1 - beta1) * g
                v *= beta2
                v += (1 - beta2) * g * g
                mhat = m / (1 - beta1**step)
                vhat = v / (1 - beta2**step)
                p -= lr * mhat / (np.sqrt(vhat) + eps)

    final_loss = full_loss()
    if not np.isfinite(final_loss):
        raise TrainingDiverged("final loss non-finite after training")

    # Fold the training-time strength scaling into the strength input row so
    # the published model takes plain [z, delta].
    params[0][dim, :] *= hp.delta_input_scale

    record = {
        "seed": hp.seed,
        "learning_rate": hp.learning_rate,
        "epochs": hp.epochs,
        "hidden_width": hidden,
        "batch_size": batch,
        "activation_id": hp.activation_id,
        "cosine_weight": hp.cosine_weight,
        "mse_weight": hp.mse_weight,
        "zero_delta_fraction": hp.zero_delta_fraction,
        "delta_input_scale": hp.delta_input_scale,
        "input_jitter": hp.input_jitter,
        "weight_decay": hp.weight_decay,
        "lr_schedule": f"step{hp.final_lr_fraction}@0.8",
        "n_pairs": len(pairs),
        "n_augmented": n_aug,
        "dataset_digest": _pairs_digest(pairs),
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "compute_backend": "numpy-float64",
        "deterministic": True,
        "encoder": {
            "encoder_id": encoder.encoder_id,
            "dim": encoder.dim,
            "preprocessing_id": encoder.preprocessing_id,
        },
        "basis_rank": basis.rank,
        "basis_variance_explained": basis.variance_explained,
    }
    model = AttributeEditorModel(
        attribute=attribute,
        w1=params[0],
        b1=params[1],
        w2=params[2],
        b2=params[3],
        activation_id=hp.activation_id,
        basis=basis.quantized(),
        encoder=encoder,
        training_record=record,
    )
    model.training_record["weights_digest"] = model.weights_digest()
    return model


def predict_direction(
    model: AttributeEditorModel, z: MaterialEmbedding, delta: float
) -> EditDirection:
    """Predict the edit direction for one embedding at strength ``delta``.

    Strengths beyond [-1, 1] are clamped with a warning. The raw MLP output
    is returned without re-projection; the basis filters training targets
    only.
    """
    if not z.encoder.comparable_with(model.encoder):
        raise IncompatibleEmbeddings(
            f"embedding encoder {z.encoder.encoder_id} does not match "
            f"model encoder {model.encoder.encoder_id}"
        )
    delta = float(delta)
    if abs(delta) > 1.0:
        warnings.warn(f"strength {delta} outside [-1, 1]; clamping", stacklevel=2)
        delta = float(np.clip(delta, -1.0, 1.0))
    x = np.concatenate([z.values, [delta]])
    out = model.forward(x)[0]
    return EditDirection(out, attribute=model.attribute, strength=delta)


# ---------------------------------------------------------------------------
# Checkpoint format (.mrbl): MRBM | u16 version | u8 attribute | encoder_id |
# u32 D | u32 H | activation_id | f32 weight blocks | basis (u32 r, u32 n_sv,
# f32 basis, f32 singular values, u32 n_directions) | JSON training_record |
# u32 CRC32 of all preceding bytes.
# ---------------------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    data = s.encode("utf-8")
    return struct.pack("<H", len(data)) + data


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise UnsupportedCheckpoint("checkpoint truncated")
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def f32_array(self, count: int, shape) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def model_to_bytes(model: AttributeEditorModel) -> bytes:
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<H", CKPT_VERSION)
    out += struct.pack("<B", ATTRIBUTE_CODES.index(model.attribute))
    out += _pack_str(model.encoder.encoder_id)
    out += struct.pack("<II", model.dim, model.hidden_width)
    out += _pack_str(model.activation_id)
    for arr in (model.w1, model.b1, model.w2, model.b2):
        out += arr.astype("<f4").tobytes()
    basis = model.basis
    out += struct.pack("<II", basis.rank, basis.singular_values.shape[0])
    out += basis.basis.astype("<f4").tobytes()
    out += basis.singular_values.astype("<f4").tobytes()
    out += struct.pack("<I", basis.n_directions)
    record = dict(model.training_record)
    record.setdefault("encoder", {
        "encoder_id": model.encoder.encoder_id,
        "dim": model.encoder.dim,
        "preprocessing_id": model.encoder.preprocessing_id,
    })
    payload = json.dumps(record, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(payload)) + payload
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def save_model(model: AttributeEditorModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(model_to_bytes(model))
    return path


def model_from_bytes(data: bytes) -> AttributeEditorModel:
    if len(data) < 12 or data[:4] != CKPT_MAGIC:
        raise UnsupportedCheckpoint("bad checkpoint magic")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumFailure(
            f"checkpoint CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    r = _Reader(data[:-4])
    r.take(4)  # magic
    version = r.u16()
    if version != CKPT_VERSION:
        raise UnsupportedCheckpoint(f"unsupported checkpoint version {version}")
    attr_code = r.u8()
    if attr_code >= len(ATTRIBUTE_CODES):
        raise UnsupportedCheckpoint(f"unknown attribute code {attr_code}")
    attribute = ATTRIBUTE_CODES[attr_code]
    encoder_id = r.string()
    dim = r.u32()
    hidden = r.u32()
    activation_id = r.string()
    w1 = r.f32_array((dim + 1) * hidden, (dim + 1, hidden))
    b1 = r.f32_array(hidden, (hidden,))
    w2 = r.f32_array(hidden * dim, (hidden, dim))
    b2 = r.f32_array(dim, (dim,))
    rank = r.u32()
    n_sv = r.u32()
    basis_mat = r.f32_array(dim * rank, (dim, rank)).astype(np.float64)
    sv = r.f32_array(n_sv, (n_sv,)).astype(np.float64)
    n_directions = r.u32()
    record = json.loads(r.take(r.u32()).decode("utf-8"))

    enc_meta = record.get("encoder", {})
    encoder = EncoderConfig(
        encoder_id=encoder_id,
        dim=dim,
        preprocessing_id=enc_meta.get("preprocessing_id", "unknown"),
    )
    energy = float(np.sum(sv**2))
    variance = float(np.sum(sv[:rank] ** 2) / energy) if energy > 0 else 0.0
    basis = DirectionBasis(
        attribute=attribute,
        basis=basis_mat,
        singular_values=sv,
        rank=rank,
        variance_explained=variance,
        n_directions=n_directions,
    )
    return AttributeEditorModel(
        attribute=attribute,
        w1=w1,
        b1=b1,
        w2=w2,
        b2=b2,
        activation_id=activation_id,
        basis=basis,
        encoder=encoder,
        training_record=record,
    )


def load_model(path: str | Path) -> AttributeEditorModel:
    return model_from_bytes(Path(path).read_bytes())
