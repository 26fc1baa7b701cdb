"""Command-line entry point wrapping every subsystem.

All commands accept --seed and emit deterministic outputs; edits write a
sidecar JSON capturing the full spec so any render can be replayed to an
identical digest. Validation failures exit with code 2 and a structured
JSON error on stderr.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import click
import numpy as np

from . import __version__
from .backends import make_backend
from .dataset import (
    DatasetManifest,
    Registry,
    attribute_range,
    emit_render_jobs,
    ingest_renders,
    plan_dataset,
    synth_proxy_dataset,
)
from .directions import extract_directions, fit_basis, make_pairs
from .editor import Hyperparams, load_model, save_model, train_editor
from .embedding import Attribute
from .encoders import DEFAULT_ENCODER_ID, encode_image
from .errors import MarbleError
from .evaluation import (
    DEFAULT_SWEEP_SIZES,
    evaluate_attribute,
    make_oracle_backend,
    proxy_efficiency_sweep,
)
from .injection import block_sweep, prepare_context, write_block_defaults
from .rasters import bytes_digest, image_digest, load_rgb, save_png
from .workflow import EditSpec, Sidecar, run_edit


def _fail(exc: MarbleError) -> None:
    sys.stderr.write(json.dumps({"error": exc.code, "detail": str(exc)}) + "\n")
    sys.exit(2)


def marble_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MarbleError as exc:
            _fail(exc)

    return wrapper


def seed_option(fn):
    """Per-command --seed override of the group default."""

    @click.option("--seed", "seed_override", type=int, default=None, hidden=False,
                  help="Override the global seed for this command.")
    @click.pass_obj
    @functools.wraps(fn)
    def wrapper(obj, *args, seed_override=None, **kwargs):
        if seed_override is not None:
            obj = {**obj, "seed": seed_override}
        return fn(obj, *args, **kwargs)

    return wrapper


def _load_config(path: str | None) -> dict:
    candidates = [Path(path)] if path else [Path("marble.toml")]
    for candidate in candidates:
        if candidate.is_file():
            return tomllib.loads(candidate.read_text())
    return {}


@click.group()
@click.version_option(__version__)
@click.option("--config", type=click.Path(), default=None, help="Path to marble.toml.")
@click.option("--model-dir", type=click.Path(), default=None)
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--backend", "backend_id", default=None)
@click.option("--encoder", "encoder_id", default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def main(ctx, config, model_dir, data_dir, backend_id, encoder_id, seed):
    """Material editing engine: blend exemplars, slide attributes, render."""
    file_cfg = _load_config(config)
    ctx.obj = {
        "model_dir": Path(model_dir or file_cfg.get("model_dir", "./models")),
        "data_dir": Path(data_dir or file_cfg.get("data_dir", "./marble-data")),
        "backend_id": backend_id or file_cfg.get("backend", "mock"),
        "encoder_id": encoder_id or file_cfg.get("encoder", DEFAULT_ENCODER_ID),
        "seed": seed if seed is not None else int(file_cfg.get("seed", 0)),
    }


def _load_models(model_dir: Path) -> dict:
    models = {}
    if model_dir.is_dir():
        for path in sorted(model_dir.glob("*.mrbl")):
            model = load_model(path)
            models[model.attribute] = model
    return models


def _parse_edits(sets: tuple[str, ...]) -> list[dict]:
    edits = []
    for item in sets:
        if "=" not in item:
            raise MarbleError(f"--set expects attr=delta, got {item!r}")
        attr, _, raw = item.partition("=")
        edits.append({"attribute": Attribute(attr.strip()).value, "delta": float(raw)})
    return edits


@main.command()
@click.option("--context", "context_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", required=True, type=click.Path(exists=True))
@click.option("--depth", "depth_path", type=click.Path(exists=True), default=None)
@click.option("--exemplar", "exemplar_path", required=True, type=click.Path(exists=True))
@click.option("--blend", "blend_path", type=click.Path(exists=True), default=None)
@click.option("--alpha", type=float, default=1.0)
@click.option("--allow-extrapolation", is_flag=True, default=False)
@click.option("--set", "sets", multiple=True, help="Attribute edit, e.g. roughness=0.5.")
@click.option("--blocks", default=None, help="Comma-separated injection blocks.")
@click.option("--scale", type=float, default=1.0)
@click.option("--steps", type=int, default=30)
@click.option("--guidance", type=float, default=5.0)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--sidecar", "sidecar_path", type=click.Path(), default=None)
@seed_option
@marble_errors
def edit(obj, context_path, mask_path, depth_path, exemplar_path, blend_path, alpha,
         allow_extrapolation, sets, blocks, scale, steps, guidance, out_path, sidecar_path):
    """One-shot material edit: exemplar transfer, blend, and sliders."""
    backend = make_backend(obj["backend_id"])
    models = _load_models(obj["model_dir"])
    exemplars = {"A": encode_image(exemplar_path, obj["encoder_id"])}
    blend_name = None
    if blend_path is not None:
        exemplars["B"] = encode_image(blend_path, obj["encoder_id"])
        blend_name = "B"
    depth_source = depth_path if depth_path is not None else "luma-v1"
    if depth_path is not None:
        depth_source = np.asarray(load_rgb(depth_path).mean(axis=2), dtype=np.float64)
    ctx = prepare_context(context_path, mask_path, depth_source,
                          seed=obj["seed"], steps=steps, guidance=guidance)
    spec = EditSpec(
        base_exemplar="A",
        blend_exemplar=blend_name,
        alpha=alpha,
        edits=_parse_edits(sets),
        blocks=blocks.split(",") if blocks else [],
        scale=scale,
        seed=obj["seed"],
        allow_extrapolation=allow_extrapolation,
    )
    image, _, cfg = run_edit(ctx, spec, exemplars, models, backend)
    save_png(image, out_path)
    digest = image_digest(image)

    spec.blocks = sorted(cfg.blocks)  # record the blocks actually used
    files = {"image": context_path, "mask": mask_path}
    if depth_path is not None:
        files["depth"] = depth_path
    sidecar = Sidecar(
        spec=spec,
        encoder_id=obj["encoder_id"],
        backend_id=obj["backend_id"],
        context_files={k: {"path": str(v), "sha256": bytes_digest(Path(v).read_bytes())}
                       for k, v in files.items()},
        exemplar_files={
            "A": {"path": str(exemplar_path),
                  "sha256": bytes_digest(Path(exemplar_path).read_bytes())},
            **({"B": {"path": str(blend_path),
                      "sha256": bytes_digest(Path(blend_path).read_bytes())}}
               if blend_path else {}),
        },
        model_digests={a.value: m.training_record.get("weights_digest", "")
                       for a, m in models.items()},
        output_digest=digest,
        steps=steps,
        guidance=guidance,
    )
    sidecar.save(sidecar_path or (Path(out_path).with_suffix(".spec.json")))
    click.echo(json.dumps({"output": str(out_path), "digest": digest}))


@main.command()
@click.argument("sidecar_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--verify/--no-verify", default=True,
              help="Fail unless the digest matches the recorded one.")
@seed_option
@marble_errors
def replay(obj, sidecar_path, out_path, verify):
    """Re-run an edit from its sidecar spec; verifies the output digest."""
    sidecar = Sidecar.load(sidecar_path)
    backend = make_backend(sidecar.backend_id)
    models = _load_models(obj["model_dir"])
    exemplars = {
        name: encode_image(meta["path"], sidecar.encoder_id)
        for name, meta in sidecar.exemplar_files.items()
    }
    files = sidecar.context_files
    depth_source = "luma-v1"
    if "depth" in files:
        depth_source = np.asarray(
            load_rgb(files["depth"]["path"]).mean(axis=2), dtype=np.float64
        )
    ctx = prepare_context(files["image"]["path"], files["mask"]["path"], depth_source,
                          seed=sidecar.spec.seed, steps=sidecar.steps,
                          guidance=sidecar.guidance)
    image, _, _ = run_edit(ctx, sidecar.spec, exemplars, models, backend)
    save_png(image, out_path)
    digest = image_digest(image)
    match = digest == sidecar.output_digest
    click.echo(json.dumps({"output": str(out_path), "digest": digest, "match": match}))
    if verify and not match:
        raise MarbleError(
            f"replay digest {digest} != recorded {sidecar.output_digest}"
        )


@main.command()
@click.option("--attribute", required=True, type=click.Choice([a.value for a in Attribute
                                                               if a not in (Attribute.BLEND, Attribute.COMPOSITE)]))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--proxy", is_flag=True, default=False,
              help="Train on the synthetic proxy dataset (in the configured encoder's space).")
@click.option("--proxy-objects", type=int, default=64)
@click.option("--proxy-noise", type=float, default=0.05)
@click.option("--rank", default="auto", help="'auto' (elbow) or an integer.")
@click.option("--epochs", type=int, default=200)
@click.option("--lr", type=float, default=1e-2)
@click.option("--hidden", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@seed_option
@marble_errors
def train(obj, attribute, manifest_path, proxy, proxy_objects, proxy_noise,
          rank, epochs, lr, hidden, out_path):
    """Fit a direction basis and train the attribute editor."""
    attribute = Attribute(attribute)
    if proxy:
        # Plant the proxy in the configured encoder's space so the resulting
        # checkpoint can drive image edits; the encoder's dim wins.
        from .encoders import encoder_config

        enc = encoder_config(obj["encoder_id"])
        dataset = synth_proxy_dataset(
            enc.dim, proxy_objects, noise_scale=proxy_noise,
            seed=obj["seed"], attribute=attribute, encoder=enc,
        )
        pairs = dataset.pairs
    elif manifest_path:
        manifest = DatasetManifest.load(manifest_path)
        if manifest.attribute != attribute:
            raise MarbleError(
                f"manifest is for {manifest.attribute.value}, not {attribute.value}"
            )
        pairs = []
        for object_id, entries in manifest.by_object("train").items():
            steps = [
                (e.attribute_value, encode_image(e.image_path, obj["encoder_id"]))
                for e in entries
            ]
            pairs.extend(
                make_pairs(steps, attribute, attribute_range(attribute),
                           object_id=object_id, env_id=entries[0].env_id)
            )
    else:
        raise MarbleError("either --manifest or --proxy is required")

    rank_override = None if rank == "auto" else int(rank)
    basis = fit_basis(extract_directions(pairs), rank_override, attribute=attribute)
    hp = Hyperparams(seed=obj["seed"], epochs=epochs, learning_rate=lr, hidden_width=hidden)
    model = train_editor(pairs, basis, hp)
    save_model(model, out_path)
    click.echo(json.dumps({
        "out": str(out_path),
        "rank": basis.rank,
        "variance_explained": round(basis.variance_explained, 6),
        "final_loss": model.training_record["final_loss"],
    }))


@main.group()
def dataset():
    """Render-dataset planning, job emission, ingestion, and the proxy."""


@dataset.command("plan")
@click.option("--attribute", required=True, type=click.Choice([a.value for a in Attribute
                                                               if a not in (Attribute.BLEND, Attribute.COMPOSITE)]))
@click.option("--objects", "n_objects", type=int, default=300)
@click.option("--envs", "n_envs", type=int, default=50)
@click.option("--steps", type=int, default=5)
@click.option("--asset-index", type=click.Path(exists=True), default=None)
@click.option("--env-index", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@seed_option
@marble_errors
def dataset_plan(obj, attribute, n_objects, n_envs, steps, asset_index, env_index, out_path):
    """Plan render specs (synthetic registries unless indexes are given)."""
    assets = Registry.from_index(asset_index) if asset_index else Registry.synthetic("obj", n_objects)
    envs = Registry.from_index(env_index) if env_index else Registry.synthetic("hdr", n_envs)
    specs = plan_dataset(Attribute(attribute), assets, envs, n_objects=n_objects,
                         n_envs=n_envs, steps=steps, seed=obj["seed"])
    payload = [
        {
            "object_id": s.object_id, "env_id": s.env_id, "camera_seed": s.camera_seed,
            "azimuth_deg": s.azimuth_deg, "elevation_deg": s.elevation_deg,
            "base_material": s.base_material, "swept_attribute": s.swept_attribute.value,
            "schedule": list(s.schedule),
        }
        for s in specs
    ]
    Path(out_path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    click.echo(json.dumps({"specs": len(specs), "out": str(out_path)}))


def _specs_from_plan(path: str) -> list:
    from .dataset import RenderSpec

    raw = json.loads(Path(path).read_text())
    return [
        RenderSpec(
            object_id=r["object_id"], env_id=r["env_id"], camera_seed=r["camera_seed"],
            azimuth_deg=r["azimuth_deg"], elevation_deg=r["elevation_deg"],
            base_material=r["base_material"],
            swept_attribute=Attribute(r["swept_attribute"]),
            schedule=tuple(r["schedule"]),
        )
        for r in raw
    ]


@dataset.command("emit")
@click.option("--plan", "plan_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@seed_option
@marble_errors
def dataset_emit(obj, plan_path, out_dir):
    """Emit renderer-agnostic job JSON files from a plan."""
    paths = emit_render_jobs(_specs_from_plan(plan_path), out_dir)
    click.echo(json.dumps({"jobs": len(paths), "out_dir": str(out_dir)}))


@dataset.command("ingest")
@click.option("--job-dir", required=True, type=click.Path(exists=True))
@click.option("--image-dir", required=True, type=click.Path(exists=True))
@click.option("--train-objects", type=int, default=250)
@click.option("--val-objects", type=int, default=50)
@click.option("--out", "out_path", required=True, type=click.Path())
@seed_option
@marble_errors
def dataset_ingest(obj, job_dir, image_dir, train_objects, val_objects, out_path):
    """Ingest rendered outputs into a split manifest."""
    manifest = ingest_renders(job_dir, image_dir, obj["seed"],
                              n_train=train_objects, n_val=val_objects)
    manifest.save(out_path)
    click.echo(json.dumps({
        "train_objects": len(manifest.objects("train")),
        "val_objects": len(manifest.objects("val")),
        "skipped": len(manifest.skipped),
        "out": str(out_path),
    }))


@dataset.command("proxy")
@click.option("--attribute", default="roughness")
@click.option("--dim", type=int, default=32)
@click.option("--objects", "n_objects", type=int, default=64)
@click.option("--steps", type=int, default=5)
@click.option("--noise", type=float, default=0.05)
@click.option("--out", "out_path", required=True, type=click.Path())
@seed_option
@marble_errors
def dataset_proxy(obj, attribute, dim, n_objects, steps, noise, out_path):
    """Summarize a proxy dataset draw (pairs count, planted direction)."""
    proxy = synth_proxy_dataset(dim, n_objects, steps=steps, noise_scale=noise,
                                seed=obj["seed"], attribute=Attribute(attribute))
    Path(out_path).write_text(json.dumps({
        "dim": dim, "objects": n_objects, "steps": steps, "noise": noise,
        "pairs": len(proxy.pairs),
        "planted_direction": [round(float(v), 8) for v in proxy.planted_direction],
    }, indent=2) + "\n")
    click.echo(json.dumps({"pairs": len(proxy.pairs), "out": str(out_path)}))


@main.command("sweep-blocks")
@click.option("--context", "context_path", type=click.Path(exists=True), default=None)
@click.option("--mask", "mask_path", type=click.Path(exists=True), default=None)
@click.option("--exemplar", "exemplar_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--write-defaults", is_flag=True, default=False)
@seed_option
@marble_errors
def sweep_blocks(obj, context_path, mask_path, exemplar_path, out_path, write_defaults):
    """Locate the material block: one isolated injection per block, ranked."""
    backend = make_backend(obj["backend_id"])
    if context_path is None:
        # Builtin fixture: a shaded square on a flat background.
        rgb = np.full((64, 64, 3), 210, dtype=np.uint8)
        rgb[16:48, 16:48] = (90, 140, 200)
        mask = np.zeros((64, 64), dtype=bool)
        mask[16:48, 16:48] = True
        ctx = prepare_context(rgb, mask, "luma-v1", seed=obj["seed"])
        z = encode_image(rgb, obj["encoder_id"])
    else:
        if mask_path is None or exemplar_path is None:
            raise MarbleError("--context requires --mask and --exemplar")
        ctx = prepare_context(context_path, mask_path, "luma-v1", seed=obj["seed"])
        z = encode_image(exemplar_path, obj["encoder_id"])
    report = block_sweep(ctx, z, backend, out_dir=Path(out_path).parent / "sweep")
    report.save(out_path)
    if write_defaults:
        write_block_defaults(report, obj["data_dir"] / "backends")
    click.echo(json.dumps({"ranking": report.ranking, "out": str(out_path)}))


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--backend", "backend_id", default="mock",
              type=click.Choice(["mock", "mock-oracle", "mock-unedited", "real"]))
@click.option("--out", "out_path", required=True, type=click.Path())
@seed_option
@marble_errors
def eval_cmd(obj, model_path, manifest_path, backend_id, out_path):
    """Run the metric suite over a validation manifest."""
    model = load_model(model_path)
    manifest = DatasetManifest.load(manifest_path)
    if backend_id == "mock-oracle":
        backend = make_oracle_backend(manifest)
    else:
        backend = make_backend(backend_id)
    report = evaluate_attribute(model, manifest, backend)
    report.save(out_path)
    click.echo(json.dumps(report.to_dict()))


@main.command()
@click.option("--sizes", default=",".join(str(s) for s in DEFAULT_SWEEP_SIZES))
@click.option("--dim", type=int, default=32)
@click.option("--noise", type=float, default=0.05)
@click.option("--out", "out_path", required=True, type=click.Path())
@seed_option
@marble_errors
def sweep_data(obj, sizes, dim, noise, out_path):
    """Data-efficiency sweep on the proxy dataset (CSV + JSON)."""
    size_list = [int(s) for s in sizes.split(",")]
    out = Path(out_path)
    rows = proxy_efficiency_sweep(size_list, dim=dim, noise_scale=noise, seed=obj["seed"],
                                  out_csv=out, out_json=out.with_suffix(".json"))
    click.echo(json.dumps(rows))


@main.command()
@click.option("--port", type=int, default=8787)
@click.option("--host", default="127.0.0.1")
@click.pass_obj
def serve(obj, port, host):
    """Launch the HTTP service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(
        data_dir=obj["data_dir"],
        model_dir=obj["model_dir"],
        backend_id=obj["backend_id"],
        encoder_id=obj["encoder_id"],
    )
    uvicorn.run(create_app(config), host=host, port=port)


if __name__ == "__main__":
    main()
