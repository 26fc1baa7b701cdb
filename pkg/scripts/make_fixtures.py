"""Generate committed test fixtures: images, golden embedding, metric goldens.

Run once from the repo root; outputs land in tests/fixtures/. Goldens pin
the behavior of the default encoder and the registered metric models, so
regenerating them is only legitimate after an intentional version bump of
those recipes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from marble.encoders import encode_image
from marble.embedding import save_embedding
from marble.evaluation import default_metric_registry
from marble.rasters import save_png

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def checker(size, palette, block=8, seed=0):
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size, 3), dtype=np.uint8)
    for i in range(0, size, block):
        for j in range(0, size, block):
            color = palette[rng.integers(0, len(palette))]
            img[i : i + block, j : j + block] = color
    return img


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)

    context = checker(64, [(200, 60, 40), (40, 160, 220), (230, 210, 90), (30, 30, 30)], seed=7)
    save_png(context, FIXTURES / "context.png")

    mask = np.zeros((64, 64, 3), dtype=np.uint8)
    mask[12:52, 12:52] = 255
    save_png(mask, FIXTURES / "mask.png")

    exemplar_a = checker(64, [(220, 160, 40), (180, 120, 20), (240, 200, 120)], seed=11)
    save_png(exemplar_a, FIXTURES / "exemplar_a.png")
    exemplar_b = checker(64, [(40, 60, 200), (20, 30, 120), (90, 120, 240)], seed=13)
    save_png(exemplar_b, FIXTURES / "exemplar_b.png")

    z = encode_image(FIXTURES / "context.png", "patchstat-256")
    save_embedding(z, FIXTURES / "context.patchstat256.emb")

    registry = default_metric_registry()
    a = context
    b = exemplar_a
    goldens = {
        "versions": registry.versions(),
        "pairs": {
            "context_vs_exemplar_a": {
                metric: registry.get(metric)(a, b)
                for metric in ("lpips", "dreamsim", "clip_score")
            }
        },
    }
    (FIXTURES / "metric_goldens.json").write_text(json.dumps(goldens, indent=2, sort_keys=True) + "\n")
    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
