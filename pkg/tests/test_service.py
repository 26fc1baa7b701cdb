import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from marble.directions import extract_directions, fit_basis
from marble.editor import Hyperparams, save_model, train_editor
from marble.embedding import Attribute
from marble.rasters import png_bytes
from marble.service import ServiceConfig, create_app


def scene_bytes():
    rgb = np.full((32, 32, 3), 190, dtype=np.uint8)
    rgb[8:24, 8:24] = (200, 80, 60)
    mask = np.zeros((32, 32, 3), dtype=np.uint8)
    mask[8:24, 8:24] = 255
    return png_bytes(rgb), png_bytes(mask)


def exemplar_bytes(seed=0):
    rng = np.random.default_rng(seed)
    return png_bytes(rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8))


def _train_service_models(root, encoder_id="mock-16"):
    """Editors for roughness and metallic in the service encoder's space."""
    from marble.directions import make_pairs
    from marble.embedding import MaterialEmbedding
    from marble.encoders import encoder_config

    enc = encoder_config(encoder_id)
    rng = np.random.default_rng(0)
    for i, attribute in enumerate((Attribute.ROUGHNESS, Attribute.METALLIC)):
        planted = rng.standard_normal(16)
        planted /= np.linalg.norm(planted)
        pairs = []
        for o in range(10):
            base = rng.standard_normal(16)
            steps = [(v, MaterialEmbedding(base + v * planted
                                           + 0.05 * rng.standard_normal(16), encoder=enc))
                     for v in (0.0, 0.5, 1.0)]
            pairs.extend(make_pairs(steps, attribute, (0.0, 1.0), object_id=f"o{o}"))
        basis = fit_basis(extract_directions(pairs), attribute=attribute)
        model = train_editor(pairs, basis, Hyperparams(seed=i, epochs=10))
        save_model(model, root / f"{attribute.value}.mrbl")


@pytest.fixture()
def client(tmp_path):
    models = tmp_path / "models"
    models.mkdir()
    _train_service_models(models)
    config = ServiceConfig(
        data_dir=tmp_path / "data",
        model_dir=models,
        backend_id="mock",
        encoder_id="mock-16",
        queue_limit=4,
    )
    with TestClient(create_app(config)) as c:
        yield c


def make_session(client, **form):
    image, mask = scene_bytes()
    return client.post(
        "/sessions",
        files={"image": ("i.png", image, "image/png"), "mask": ("m.png", mask, "image/png")},
        data=form,
    )


def wait_job(client, job_id, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/jobs/{job_id}").json()
        if job["state"] in ("done", "failed"):
            return job
        time.sleep(0.01)
    raise TimeoutError(f"job {job_id} did not finish")


class TestSessions:
    def test_create_session(self, client):
        resp = make_session(client)
        assert resp.status_code == 201
        assert "session_id" in resp.json()

    def test_empty_mask_rejected(self, client):
        image, _ = scene_bytes()
        empty = png_bytes(np.zeros((32, 32, 3), dtype=np.uint8))
        resp = client.post(
            "/sessions",
            files={"image": ("i.png", image, "image/png"),
                   "mask": ("m.png", empty, "image/png")},
        )
        assert resp.status_code == 400
        assert resp.json()["detail"]["code"] == "EmptyMask"

    def test_depth_unavailable(self, tmp_path):
        config = ServiceConfig(data_dir=tmp_path / "d", backend_id="mock",
                               encoder_id="mock-16", depth_estimator=None)
        with TestClient(create_app(config)) as client:
            resp = make_session(client)
            assert resp.status_code == 400
            assert resp.json()["detail"]["code"] == "DepthUnavailable"

    def test_invalid_image(self, client):
        resp = client.post(
            "/sessions",
            files={"image": ("i.png", b"garbage", "image/png"),
                   "mask": ("m.png", b"junk", "image/png")},
        )
        assert resp.status_code == 400
        assert resp.json()["detail"]["code"] == "InvalidImage"


class TestExemplars:
    def test_upload_and_cache(self, client):
        session_id = make_session(client).json()["session_id"]
        data = exemplar_bytes(1)
        first = client.post(f"/sessions/{session_id}/exemplars",
                            files={"image": ("e.png", data, "image/png")}).json()
        assert first["cache_hit"] is False
        again = client.post(f"/sessions/{session_id}/exemplars",
                            files={"image": ("e.png", data, "image/png")}).json()
        assert again["cache_hit"] is True
        assert again["digest"] == first["digest"]
        stats = client.get("/stats").json()
        assert stats["encoder_calls"] == 1
        assert stats["cache_hits"] == 1

    def test_different_bytes_different_digest(self, client):
        session_id = make_session(client).json()["session_id"]
        d1 = client.post(f"/sessions/{session_id}/exemplars",
                         files={"image": ("a.png", exemplar_bytes(1), "image/png")}).json()
        d2 = client.post(f"/sessions/{session_id}/exemplars",
                         files={"image": ("b.png", exemplar_bytes(2), "image/png")}).json()
        assert d1["digest"] != d2["digest"]

    def test_unknown_session(self, client):
        resp = client.post("/sessions/nope/exemplars",
                           files={"image": ("e.png", exemplar_bytes(), "image/png")})
        assert resp.status_code == 404


class TestRender:
    def _session_with_exemplars(self, client, n=2):
        session_id = make_session(client, seed=5).json()["session_id"]
        names = []
        for i in range(n):
            resp = client.post(
                f"/sessions/{session_id}/exemplars",
                files={"image": (f"e{i}.png", exemplar_bytes(i), "image/png")},
                data={"name": f"ex{i}"},
            )
            names.append(resp.json()["name"])
        return session_id, names

    def test_plain_transfer_job(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        resp = client.post(f"/sessions/{session_id}/render",
                           json={"base": {"exemplar": names[0]}, "edits": []})
        assert resp.status_code == 202
        job = wait_job(client, resp.json()["job_id"])
        assert job["state"] == "done"
        result = client.get(job["result_url"])
        assert result.status_code == 200
        assert result.headers["content-type"] == "image/png"

    def test_deterministic_renders(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        body = {"base": {"exemplar": names[0]},
                "edits": [{"attribute": "roughness", "delta": 0.5}], "seed": 11}
        jobs = [client.post(f"/sessions/{session_id}/render", json=body).json()["job_id"]
                for _ in range(2)]
        results = [wait_job(client, j) for j in jobs]
        blobs = [client.get(f"/jobs/{j}/result").content for j in jobs]
        assert all(r["state"] == "done" for r in results)
        assert blobs[0] == blobs[1]

    def test_multi_edit_single_backend_pass(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        before = client.get("/stats").json()["jobs_processed"]
        body = {
            "base": {"exemplar": names[0]},
            "edits": [{"attribute": "roughness", "delta": 0.5},
                      {"attribute": "metallic", "delta": 0.5}],
        }
        job_id = client.post(f"/sessions/{session_id}/render", json=body).json()["job_id"]
        assert wait_job(client, job_id)["state"] == "done"
        assert client.get("/stats").json()["jobs_processed"] == before + 1

    def test_blend_base(self, client):
        session_id, names = self._session_with_exemplars(client, 2)
        body = {"base": {"blend": {"a": names[0], "b": names[1], "alpha": 0.25}}}
        job_id = client.post(f"/sessions/{session_id}/render", json=body).json()["job_id"]
        assert wait_job(client, job_id)["state"] == "done"

    def test_unknown_attribute_422(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        resp = client.post(
            f"/sessions/{session_id}/render",
            json={"base": {"exemplar": names[0]},
                  "edits": [{"attribute": "sparkle", "delta": 0.5}]},
        )
        assert resp.status_code == 422

    def test_unloaded_attribute_422(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        resp = client.post(
            f"/sessions/{session_id}/render",
            json={"base": {"exemplar": names[0]},
                  "edits": [{"attribute": "glow", "delta": 0.5}]},
        )
        assert resp.status_code == 422

    def test_delta_range_enforced(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        resp = client.post(
            f"/sessions/{session_id}/render",
            json={"base": {"exemplar": names[0]},
                  "edits": [{"attribute": "roughness", "delta": 1.5}]},
        )
        assert resp.status_code == 422

    def test_alpha_range_enforced(self, client):
        session_id, names = self._session_with_exemplars(client, 2)
        resp = client.post(
            f"/sessions/{session_id}/render",
            json={"base": {"blend": {"a": names[0], "b": names[1], "alpha": 1.5}}},
        )
        assert resp.status_code == 422

    def test_fifo_order(self, client):
        session_id, names = self._session_with_exemplars(client, 1)
        job_ids = []
        for delta in (0.1, 0.2, 0.3):
            body = {"base": {"exemplar": names[0]},
                    "edits": [{"attribute": "roughness", "delta": delta}]}
            job_ids.append(
                client.post(f"/sessions/{session_id}/render", json=body).json()["job_id"]
            )
        jobs = [wait_job(client, j) for j in job_ids]
        starts = [j["started_at"] for j in jobs]
        assert starts == sorted(starts)


class TestReads:
    def test_unknown_job_404(self, client):
        assert client.get("/jobs/nope").status_code == 404

    def test_attributes_endpoint(self, client):
        attrs = client.get("/attributes").json()
        assert [a["attribute"] for a in attrs] == ["metallic", "roughness"]
        assert all(a["encoder_id"] == "mock-16" for a in attrs)

    def test_backends_endpoint(self, client):
        info = client.get("/backends").json()
        assert info["backend_id"] == "mock"
        assert len(info["blocks"]) == 9
        assert info["default_blocks"] == ["B0"]

    def test_openapi_at_spec(self, client):
        spec = client.get("/spec").json()
        assert "/sessions" in spec["paths"]


class TestQueueLimit:
    def test_queue_full_returns_409(self, tmp_path):
        models = tmp_path / "models"
        models.mkdir()
        _train_service_models(models)
        config = ServiceConfig(
            data_dir=tmp_path / "data", model_dir=models,
            backend_id="mock", encoder_id="mock-16", queue_limit=0,
        )
        with TestClient(create_app(config)) as client:
            session_id = make_session(client).json()["session_id"]
            name = client.post(
                f"/sessions/{session_id}/exemplars",
                files={"image": ("e.png", exemplar_bytes(0), "image/png")},
            ).json()["name"]
            resp = client.post(f"/sessions/{session_id}/render",
                               json={"base": {"exemplar": name}})
            assert resp.status_code == 409
            assert resp.json()["detail"]["code"] == "QueueFull"
