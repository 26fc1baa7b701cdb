import numpy as np
import pytest

from marble.dataset import synth_proxy_dataset
from marble.directions import extract_directions, fit_basis, project_rows
from marble.editor import (
    ACTIVATIONS,
    AttributeEditorModel,
    Hyperparams,
    editor_loss,
    editor_loss_grad,
    load_model,
    model_to_bytes,
    predict_direction,
    save_model,
    train_editor,
)
from marble.embedding import Attribute, EncoderConfig
from marble.errors import (
    ChecksumFailure,
    HeterogeneousPairs,
    IncompatibleEmbeddings,
    UnsupportedCheckpoint,
)
from marble.evaluation import held_out_planted_cosine

from .conftest import random_embedding

FAST_HP = Hyperparams(seed=0, epochs=150)


@pytest.fixture(scope="module")
def trained():
    proxy = synth_proxy_dataset(16, 24, steps=5, noise_scale=0.05, seed=3)
    train_pairs, val_pairs = proxy.split(0.2)
    basis = fit_basis(extract_directions(train_pairs), attribute=proxy.attribute)
    model = train_editor(train_pairs, basis, FAST_HP)
    return proxy, train_pairs, val_pairs, basis, model


class TestLoss:
    def test_zero_at_target(self, rng):
        target = rng.standard_normal((10, 8))
        assert editor_loss(target, target) < 1e-9

    def test_zero_at_zero_target(self):
        # cosine term is defined as 0 for zero-norm targets
        zeros = np.zeros((4, 6))
        assert editor_loss(zeros, zeros) < 1e-12

    def test_positive_away_from_target(self, rng):
        target = rng.standard_normal((5, 8))
        pred = target + 0.5
        assert editor_loss(pred, target) > 0

    def test_gradient_matches_finite_differences(self, rng):
        # central differences on D <= 8 instances, 1e-4 relative
        for _ in range(10):
            dim = int(rng.integers(2, 9))
            pred = rng.standard_normal((3, dim))
            target = rng.standard_normal((3, dim))
            _, grad = editor_loss_grad(pred, target)
            eps = 1e-6
            numeric = np.zeros_like(pred)
            for i in range(pred.shape[0]):
                for j in range(dim):
                    up, down = pred.copy(), pred.copy()
                    up[i, j] += eps
                    down[i, j] -= eps
                    numeric[i, j] = (editor_loss(up, target) - editor_loss(down, target)) / (2 * eps)
            scale = np.maximum(np.abs(numeric), 1e-3)
            assert np.max(np.abs(grad - numeric) / scale) < 1e-4

    def test_gradient_with_zero_targets(self, rng):
        pred = rng.standard_normal((4, 6))
        target = np.zeros((4, 6))
        _, grad = editor_loss_grad(pred, target)
        eps = 1e-6
        for i in (0, 2):
            for j in (1, 4):
                up, down = pred.copy(), pred.copy()
                up[i, j] += eps
                down[i, j] -= eps
                numeric = (editor_loss(up, target) - editor_loss(down, target)) / (2 * eps)
                assert abs(grad[i, j] - numeric) < 1e-6

    def test_term_weighting(self, rng):
        pred = rng.standard_normal((3, 4))
        target = rng.standard_normal((3, 4))
        cos_only = editor_loss(pred, target, cosine_weight=1.0, mse_weight=0.0)
        mse_only = editor_loss(pred, target, cosine_weight=0.0, mse_weight=1.0)
        both = editor_loss(pred, target)
        assert abs(both - (cos_only + mse_only)) < 1e-12


class TestActivations:
    @pytest.mark.parametrize("name", sorted(ACTIVATIONS))
    def test_gradients_match_finite_differences(self, name, rng):
        if name == "relu":
            x = rng.standard_normal(50) + 0.5  # avoid the kink
        else:
            x = rng.standard_normal(50)
        f, df = ACTIVATIONS[name]
        eps = 1e-6
        numeric = (f(x + eps) - f(x - eps)) / (2 * eps)
        assert np.max(np.abs(df(x) - numeric)) < 1e-6


class TestTraining:
    def test_loss_decreases(self, trained):
        *_, model = trained
        record = model.training_record
        assert record["final_loss"] <= record["initial_loss"]

    def test_held_out_cosine(self, trained):
        proxy, _, val_pairs, _, model = trained
        assert held_out_planted_cosine(model, proxy, val_pairs) >= 0.90

    def test_zero_delta_prediction_small(self, trained):
        _, train_pairs, _, basis, model = trained
        targets = project_rows(extract_directions(train_pairs), basis)
        median_norm = np.median(np.linalg.norm(targets, axis=1))
        norms = [
            np.linalg.norm(predict_direction(model, p.z_a, 0.0).values)
            for p in train_pairs
        ]
        assert np.mean(norms) <= 0.05 * median_norm

    def test_seeded_rerun_bitwise_identical(self, trained):
        _, train_pairs, _, basis, model = trained
        rerun = train_editor(train_pairs, basis, FAST_HP)
        for name in ("w1", "b1", "w2", "b2"):
            assert np.array_equal(getattr(model, name), getattr(rerun, name))

    def test_training_record_complete(self, trained):
        *_, model = trained
        record = model.training_record
        for key in ("seed", "learning_rate", "epochs", "hidden_width", "batch_size",
                    "activation_id", "dataset_digest", "weights_digest",
                    "initial_loss", "final_loss", "encoder"):
            assert key in record

    def test_empty_pairs_rejected(self, trained):
        *_, basis, _ = trained
        with pytest.raises(HeterogeneousPairs):
            train_editor([], basis, FAST_HP)

    def test_wrong_basis_attribute_rejected(self, trained):
        _, train_pairs, _, basis, _ = trained
        from marble.directions import DirectionBasis

        wrong = DirectionBasis(
            attribute=Attribute.GLOW,
            basis=basis.basis,
            singular_values=basis.singular_values,
            rank=basis.rank,
            variance_explained=basis.variance_explained,
            n_directions=basis.n_directions,
        )
        with pytest.raises(HeterogeneousPairs):
            train_editor(train_pairs, wrong, FAST_HP)


class TestPredict:
    def test_zero_output_layer_gives_zero_direction(self, trained, rng):
        *_, model = trained
        zeroed = AttributeEditorModel(
            attribute=model.attribute,
            w1=model.w1,
            b1=model.b1,
            w2=np.zeros_like(model.w2),
            b2=np.zeros_like(model.b2),
            activation_id=model.activation_id,
            basis=model.basis,
            encoder=model.encoder,
        )
        z = random_embedding(rng, model.dim, model.encoder)
        out = predict_direction(zeroed, z, 0.5)
        assert np.array_equal(out.values, np.zeros(model.dim))

    def test_opposite_deltas_oppose(self, trained):
        proxy, _, val_pairs, _, model = trained
        z = val_pairs[0].z_a
        pos = predict_direction(model, z, 0.5).values
        neg = predict_direction(model, z, -0.5).values
        cos = pos @ neg / (np.linalg.norm(pos) * np.linalg.norm(neg))
        assert cos < 0

    def test_proxy_direction_alignment(self, trained):
        proxy, _, val_pairs, _, model = trained
        z = val_pairs[0].z_a
        pred = predict_direction(model, z, 0.5).values
        cos = pred @ proxy.planted_direction / np.linalg.norm(pred)
        assert cos >= 0.9

    def test_delta_clamped_with_warning(self, trained):
        proxy, _, val_pairs, _, model = trained
        z = val_pairs[0].z_a
        with pytest.warns(UserWarning, match="clamping"):
            clamped = predict_direction(model, z, 1.7)
        assert clamped.strength == 1.0
        assert np.array_equal(clamped.values, predict_direction(model, z, 1.0).values)

    def test_encoder_mismatch(self, trained, rng):
        *_, model = trained
        alien = random_embedding(rng, model.dim, EncoderConfig("other", model.dim, "p"))
        with pytest.raises(IncompatibleEmbeddings):
            predict_direction(model, alien, 0.5)

    def test_tags(self, trained):
        proxy, _, val_pairs, _, model = trained
        out = predict_direction(model, val_pairs[0].z_a, -0.25)
        assert out.attribute is model.attribute
        assert out.strength == -0.25


class TestCheckpoint:
    def test_round_trip_bitwise(self, trained, tmp_path):
        *_, model = trained
        path = save_model(model, tmp_path / "m.mrbl")
        loaded = load_model(path)
        for name in ("w1", "b1", "w2", "b2"):
            assert np.array_equal(getattr(model, name), getattr(loaded, name))
        assert np.array_equal(model.basis.basis, loaded.basis.basis)
        assert np.array_equal(model.basis.singular_values, loaded.basis.singular_values)
        assert loaded.basis.rank == model.basis.rank
        assert loaded.basis.n_directions == model.basis.n_directions
        assert loaded.attribute == model.attribute
        assert loaded.activation_id == model.activation_id
        assert loaded.encoder == model.encoder
        assert loaded.training_record == model.training_record

    def test_save_load_save_identical_bytes(self, trained, tmp_path):
        *_, model = trained
        first = model_to_bytes(model)
        loaded = load_model(save_model(model, tmp_path / "m.mrbl"))
        assert model_to_bytes(loaded) == first

    def test_wrong_magic(self, trained, tmp_path):
        *_, model = trained
        data = bytearray(model_to_bytes(model))
        data[:4] = b"NOPE"
        path = tmp_path / "bad.mrbl"
        path.write_bytes(bytes(data))
        with pytest.raises(UnsupportedCheckpoint):
            load_model(path)

    def test_corruption_detected(self, trained, tmp_path):
        *_, model = trained
        data = bytearray(model_to_bytes(model))
        data[len(data) // 2] ^= 0xFF
        path = tmp_path / "corrupt.mrbl"
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumFailure):
            load_model(path)

    def test_weights_digest_matches_recomputed(self, trained, tmp_path):
        *_, model = trained
        loaded = load_model(save_model(model, tmp_path / "m.mrbl"))
        assert loaded.training_record["weights_digest"] == loaded.weights_digest()

    def test_prediction_identical_after_round_trip(self, trained, tmp_path, rng):
        proxy, _, val_pairs, _, model = trained
        loaded = load_model(save_model(model, tmp_path / "m.mrbl"))
        z = val_pairs[0].z_a
        assert np.array_equal(
            predict_direction(model, z, 0.3).values,
            predict_direction(loaded, z, 0.3).values,
        )


class TestDivergence:
    def test_nan_loss_aborts_with_diagnostics(self):
        import warnings

        from marble.dataset import synth_proxy_dataset
        from marble.errors import TrainingDiverged

        proxy = synth_proxy_dataset(8, 4, steps=3, noise_scale=0.05, seed=0)
        basis = fit_basis(extract_directions(proxy.pairs), attribute=proxy.attribute)
        hp = Hyperparams(seed=0, epochs=3, learning_rate=1e160)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(TrainingDiverged, match="epoch"):
                train_editor(proxy.pairs, basis, hp)


class TestVersionGate:
    def test_future_version_rejected(self, trained):
        import struct
        import zlib

        *_, model = trained
        data = bytearray(model_to_bytes(model))[:-4]  # strip CRC
        data[4:6] = struct.pack("<H", 99)  # future version
        data += struct.pack("<I", zlib.crc32(bytes(data)) & 0xFFFFFFFF)
        from marble.editor import model_from_bytes

        with pytest.raises(UnsupportedCheckpoint, match="version"):
            model_from_bytes(bytes(data))
