"""marble: material blending and fine-grained attribute editing in embedding space."""

__version__ = "0.1.0"

from .embedding import (
    Attribute,
    EditDirection,
    EncoderConfig,
    MaterialEmbedding,
    apply_direction,
    blend,
    compose_directions,
    load_embedding,
    save_embedding,
)
from .encoders import DEFAULT_ENCODER_ID, encode_image, get_encoder, register_encoder
from .directions import (
    AttributePair,
    DirectionBasis,
    extract_directions,
    fit_basis,
    make_pairs,
    project_low_rank,
)
from .editor import (
    AttributeEditorModel,
    Hyperparams,
    editor_loss,
    editor_loss_grad,
    load_model,
    predict_direction,
    save_model,
    train_editor,
)
from .injection import (
    DiffusionBackend,
    GenerationContext,
    InjectionConfig,
    SweepReport,
    block_sweep,
    generate,
    prepare_context,
)
from .backends import MockBackend, make_backend
from .dataset import (
    DatasetManifest,
    Registry,
    RenderSpec,
    build_schedule,
    coupled_roughness,
    emit_render_jobs,
    ingest_renders,
    plan_dataset,
    synth_proxy_dataset,
)
from .evaluation import (
    MetricReport,
    data_efficiency_sweep,
    default_metric_registry,
    evaluate_attribute,
    perceptual_metrics,
    proxy_efficiency_sweep,
    psnr,
)

__all__ = [
    "Attribute",
    "AttributeEditorModel",
    "AttributePair",
    "DEFAULT_ENCODER_ID",
    "DatasetManifest",
    "DiffusionBackend",
    "DirectionBasis",
    "EditDirection",
    "EncoderConfig",
    "GenerationContext",
    "Hyperparams",
    "InjectionConfig",
    "MaterialEmbedding",
    "MetricReport",
    "MockBackend",
    "Registry",
    "RenderSpec",
    "SweepReport",
    "apply_direction",
    "blend",
    "block_sweep",
    "build_schedule",
    "compose_directions",
    "coupled_roughness",
    "data_efficiency_sweep",
    "default_metric_registry",
    "editor_loss",
    "editor_loss_grad",
    "emit_render_jobs",
    "encode_image",
    "evaluate_attribute",
    "extract_directions",
    "fit_basis",
    "generate",
    "get_encoder",
    "ingest_renders",
    "load_embedding",
    "load_model",
    "make_backend",
    "make_pairs",
    "perceptual_metrics",
    "plan_dataset",
    "predict_direction",
    "prepare_context",
    "project_low_rank",
    "proxy_efficiency_sweep",
    "psnr",
    "register_encoder",
    "save_embedding",
    "save_model",
    "synth_proxy_dataset",
    "train_editor",
]
