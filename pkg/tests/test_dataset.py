import json

import numpy as np
import pytest

from marble.dataset import (
    DatasetManifest,
    Registry,
    build_schedule,
    coupled_roughness,
    emit_render_jobs,
    ingest_renders,
    normalize_delta,
    plan_dataset,
    render_job,
    synth_proxy_dataset,
)
from marble.directions import extract_directions, fit_basis
from marble.embedding import Attribute
from marble.errors import EmptyDataset, InvalidSchedule, RegistryUnderflow
from marble.rasters import save_png


class TestSchedules:
    def test_roughness_five_steps(self):
        assert build_schedule(Attribute.ROUGHNESS, 5) == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_metallic_two_steps(self):
        assert build_schedule(Attribute.METALLIC, 2) == [0.0, 1.0]

    def test_glow_range(self):
        schedule = build_schedule(Attribute.GLOW, 6)
        assert schedule[0] == 0.0
        assert schedule[-1] == 5.0

    def test_too_few_steps(self):
        with pytest.raises(InvalidSchedule):
            build_schedule(Attribute.ROUGHNESS, 1)

    def test_coupling_rule(self):
        assert coupled_roughness(0.4, 1.0) == 0.0
        assert coupled_roughness(0.4, 0.0) == 0.4
        assert coupled_roughness(0.5, 0.6) == pytest.approx(0.2)

    def test_normalize_delta(self):
        assert normalize_delta(Attribute.ROUGHNESS, 0.25) == 0.25
        assert normalize_delta(Attribute.GLOW, 2.5) == 0.5


class TestPlan:
    def test_spec_count_and_shape(self):
        assets = Registry.synthetic("obj", 300)
        envs = Registry.synthetic("hdr", 50)
        specs = plan_dataset(Attribute.ROUGHNESS, assets, envs, seed=1)
        assert len(specs) == 300
        assert all(s.env_id.startswith("hdr-") for s in specs)
        assert all(len(s.schedule) == 5 for s in specs)

    def test_seeded_determinism(self):
        assets = Registry.synthetic("obj", 40)
        envs = Registry.synthetic("hdr", 10)
        a = plan_dataset(Attribute.GLOW, assets, envs, n_objects=40, n_envs=10, seed=9)
        b = plan_dataset(Attribute.GLOW, assets, envs, n_objects=40, n_envs=10, seed=9)
        assert a == b

    def test_underflow(self):
        with pytest.raises(RegistryUnderflow):
            plan_dataset(
                Attribute.ROUGHNESS,
                Registry.synthetic("obj", 5),
                Registry.synthetic("hdr", 50),
                n_objects=10,
            )

    def test_non_swept_attributes_fixed_across_schedule(self, tmp_path):
        assets = Registry.synthetic("obj", 3)
        envs = Registry.synthetic("hdr", 2)
        specs = plan_dataset(Attribute.METALLIC, assets, envs,
                             n_objects=3, n_envs=2, seed=0)
        for spec in specs:
            jobs = [render_job(spec, k) for k in range(len(spec.schedule))]
            for key in ("roughness", "transmission", "emission_strength"):
                assert len({j["shader"][key] for j in jobs}) == 1
            assert [j["shader"]["metallic"] for j in jobs] == list(spec.schedule)


class TestEmit:
    @pytest.fixture
    def specs(self):
        return plan_dataset(
            Attribute.TRANSPARENCY,
            Registry.synthetic("obj", 4),
            Registry.synthetic("hdr", 3),
            n_objects=4,
            n_envs=3,
            steps=5,
            seed=2,
        )

    def test_job_count(self, specs, tmp_path):
        paths = emit_render_jobs(specs, tmp_path)
        assert len(paths) == 4 * 5

    def test_reemission_byte_identical(self, specs, tmp_path):
        first = {p.name: p.read_bytes() for p in emit_render_jobs(specs, tmp_path / "a")}
        second = {p.name: p.read_bytes() for p in emit_render_jobs(specs, tmp_path / "b")}
        assert first == second

    def test_transparency_coupling_in_jobs(self, specs, tmp_path):
        for spec in specs:
            job = render_job(spec, 3)  # t = 0.75
            t = job["attribute_value"]
            assert job["shader"]["transmission"] == t
            assert job["shader"]["roughness"] == pytest.approx(
                spec.base_material["roughness"] * (1 - t)
            )

    def test_schema_round_trip(self, specs, tmp_path):
        from jsonschema import validate

        from marble.dataset import JOB_SCHEMA

        for path in emit_render_jobs(specs, tmp_path):
            validate(json.loads(path.read_text()), JOB_SCHEMA)


class TestIngest:
    def _render_all(self, specs, job_dir, image_dir, skip_objects=()):
        emit_render_jobs(specs, job_dir)
        img = np.full((8, 8, 3), 120, dtype=np.uint8)
        for spec in specs:
            for k in range(len(spec.schedule)):
                if spec.object_id in skip_objects and k == 0:
                    continue
                job = render_job(spec, k)
                save_png(img, image_dir / job["output_path"])

    def test_split_sizes_and_no_leakage(self, tmp_path):
        specs = plan_dataset(
            Attribute.ROUGHNESS,
            Registry.synthetic("obj", 30),
            Registry.synthetic("hdr", 5),
            n_objects=30, n_envs=5, steps=3, seed=0,
        )
        self._render_all(specs, tmp_path / "jobs", tmp_path / "imgs")
        manifest = ingest_renders(tmp_path / "jobs", tmp_path / "imgs", 7,
                                  n_train=25, n_val=5)
        train = set(manifest.objects("train"))
        val = set(manifest.objects("val"))
        assert len(train) == 25 and len(val) == 5
        assert not train & val

    def test_incomplete_object_skipped(self, tmp_path):
        specs = plan_dataset(
            Attribute.ROUGHNESS,
            Registry.synthetic("obj", 6),
            Registry.synthetic("hdr", 2),
            n_objects=6, n_envs=2, steps=3, seed=0,
        )
        broken = specs[2].object_id
        self._render_all(specs, tmp_path / "jobs", tmp_path / "imgs",
                         skip_objects={broken})
        manifest = ingest_renders(tmp_path / "jobs", tmp_path / "imgs", 7,
                                  n_train=4, n_val=1)
        assert broken in manifest.skipped
        assert broken not in manifest.objects("train") + manifest.objects("val")

    def test_split_deterministic(self, tmp_path):
        specs = plan_dataset(
            Attribute.ROUGHNESS,
            Registry.synthetic("obj", 12),
            Registry.synthetic("hdr", 2),
            n_objects=12, n_envs=2, steps=2, seed=0,
        )
        self._render_all(specs, tmp_path / "jobs", tmp_path / "imgs")
        a = ingest_renders(tmp_path / "jobs", tmp_path / "imgs", 3, n_train=9, n_val=3)
        b = ingest_renders(tmp_path / "jobs", tmp_path / "imgs", 3, n_train=9, n_val=3)
        assert [e.object_id for e in a.entries] == [e.object_id for e in b.entries]
        assert [e.split for e in a.entries] == [e.split for e in b.entries]

    def test_zero_complete_objects(self, tmp_path):
        specs = plan_dataset(
            Attribute.ROUGHNESS,
            Registry.synthetic("obj", 3),
            Registry.synthetic("hdr", 2),
            n_objects=3, n_envs=2, steps=2, seed=0,
        )
        emit_render_jobs(specs, tmp_path / "jobs")
        (tmp_path / "imgs").mkdir()
        with pytest.raises(EmptyDataset):
            ingest_renders(tmp_path / "jobs", tmp_path / "imgs", 0)

    def test_manifest_round_trip(self, tmp_path):
        specs = plan_dataset(
            Attribute.GLOW,
            Registry.synthetic("obj", 6),
            Registry.synthetic("hdr", 2),
            n_objects=6, n_envs=2, steps=2, seed=0,
        )
        self._render_all(specs, tmp_path / "jobs", tmp_path / "imgs")
        manifest = ingest_renders(tmp_path / "jobs", tmp_path / "imgs", 1,
                                  n_train=5, n_val=1)
        loaded = DatasetManifest.load(manifest.save(tmp_path / "m.jsonl"))
        assert loaded.attribute == manifest.attribute
        assert loaded.entries == manifest.entries
        assert loaded.skipped == manifest.skipped


class TestProxy:
    def test_noiseless_rows_are_planted_multiples(self):
        proxy = synth_proxy_dataset(8, 4, steps=3, noise_scale=0.0, seed=5)
        mat = extract_directions(proxy.pairs)
        for row in mat:
            norm = np.linalg.norm(row)
            cos = abs(row @ proxy.planted_direction) / norm
            assert cos > 1.0 - 1e-9

    def test_noiseless_basis_rank_one(self):
        proxy = synth_proxy_dataset(8, 6, steps=3, noise_scale=0.0, seed=5)
        basis = fit_basis(extract_directions(proxy.pairs), attribute=proxy.attribute)
        assert basis.rank == 1
        assert abs(basis.variance_explained - 1.0) < 1e-9

    def test_noisy_basis_aligns_with_planted(self):
        proxy = synth_proxy_dataset(32, 64, steps=5, noise_scale=0.05, seed=0)
        basis = fit_basis(extract_directions(proxy.pairs), attribute=proxy.attribute)
        cos = abs(basis.basis[:, 0] @ proxy.planted_direction)
        assert cos >= 0.99

    def test_pair_count_ordered_scheme(self):
        proxy = synth_proxy_dataset(8, 10, steps=5, seed=1)
        assert len(proxy.pairs) == 10 * 5 * 4

    def test_adjacent_scheme_count(self):
        proxy = synth_proxy_dataset(8, 10, steps=5, seed=1, pairing="adjacent")
        assert len(proxy.pairs) == 10 * 4

    def test_deterministic(self):
        a = synth_proxy_dataset(8, 4, steps=3, seed=9)
        b = synth_proxy_dataset(8, 4, steps=3, seed=9)
        assert np.array_equal(a.planted_direction, b.planted_direction)
        for pa, pb in zip(a.pairs, b.pairs):
            assert np.array_equal(pa.z_a.values, pb.z_a.values)
            assert pa.delta == pb.delta

    def test_mean_direction_alignment(self):
        proxy = synth_proxy_dataset(16, 32, steps=5, noise_scale=0.05, seed=2)
        mat = extract_directions(proxy.pairs)
        deltas = np.array([p.delta for p in proxy.pairs])
        mean_dir = (mat * np.sign(deltas)[:, None]).mean(axis=0)
        cos = mean_dir @ proxy.planted_direction / np.linalg.norm(mean_dir)
        assert cos >= 1.0 - 2 * 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_proxy_dataset(1, 4)
        with pytest.raises(ValueError):
            synth_proxy_dataset(8, 0)


def test_emit_io_failure_wrapped(tmp_path):
    from marble.errors import JobEmitError

    specs = plan_dataset(
        Attribute.ROUGHNESS,
        Registry.synthetic("obj", 2),
        Registry.synthetic("hdr", 2),
        n_objects=2, n_envs=2, steps=2, seed=0,
    )
    blocker = tmp_path / "not-a-dir"
    blocker.write_text("occupied")
    with pytest.raises(JobEmitError):
        emit_render_jobs(specs, blocker)
