from pathlib import Path

import numpy as np
import pytest

from marble.embedding import Attribute, EncoderConfig, MaterialEmbedding

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240801)


@pytest.fixture
def encoder16() -> EncoderConfig:
    return EncoderConfig("test-16", 16, "none")


def embedding(values, encoder=None) -> MaterialEmbedding:
    values = np.asarray(values, dtype=np.float64)
    encoder = encoder or EncoderConfig(f"test-{values.size}", values.size, "none")
    return MaterialEmbedding(values, encoder=encoder)


def random_embedding(rng, dim, encoder=None) -> MaterialEmbedding:
    return embedding(rng.standard_normal(dim), encoder)


@pytest.fixture
def attr_roughness() -> Attribute:
    return Attribute.ROUGHNESS
