import numpy as np
import pytest

from newsnet.corpus import ArticleRecord
from newsnet.text import random_embeddings

TOKENS = [f"w{i:02d}" for i in range(16)]


def make_record(i, rng, n_tokens=10, d_img=4, with_geo=True, with_image=True,
                n_sources=3):
    geo = ()
    if with_geo:
        geo = ((float(rng.uniform(-1.2, 1.2)), float(rng.uniform(-3.0, 3.0))),)
    feat = rng.normal(size=d_img) if with_image else None
    return ArticleRecord(
        id=f"rec{i:03d}",
        source=i % n_sources,
        tokens=tuple(TOKENS[int(rng.integers(0, len(TOKENS)))] for _ in range(n_tokens)),
        geo=geo,
        popularity=int(rng.integers(0, 50)),
        image_feature=feat,
        captions=(("a", "b", "c"),),
    )


@pytest.fixture
def tiny_records():
    rng = np.random.default_rng(42)
    return [make_record(i, rng) for i in range(24)]


@pytest.fixture
def tiny_table():
    return random_embeddings(TOKENS, 6, seed=7)
