import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsnet.cca import LinearCca
from newsnet.corpus import (
    ArticleRecord, CorpusWarning, SynthSpec, assemble_image_feature,
    load_corpus, save_corpus, split_corpus, synth_corpus, synth_vocab,
)
from newsnet.errors import DataError

from conftest import make_record


def test_load_empty_file(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert load_corpus(p) == []


def test_round_trip(tmp_path, tiny_records):
    p = tmp_path / "c.jsonl"
    save_corpus(tiny_records, p)
    back = load_corpus(p)
    assert len(back) == len(tiny_records)
    for a, b in zip(tiny_records, back):
        assert a.id == b.id
        assert a.source == b.source
        assert a.tokens == b.tokens
        assert a.geo == b.geo
        assert a.popularity == b.popularity
        assert np.array_equal(a.image_feature, b.image_feature)
        assert a.captions == b.captions


def test_load_reports_line_number_for_bad_lat(tmp_path):
    p = tmp_path / "bad.jsonl"
    good = '{"id": "a", "source": 0, "tokens": ["x"]}'
    bad = '{"id": "b", "source": 0, "tokens": ["x"], "geo": [[2.0, 0.0]]}'
    p.write_text(good + "\n" + bad + "\n")
    with pytest.raises(DataError, match="line 2"):
        load_corpus(p)


def test_load_missing_file():
    with pytest.raises(DataError):
        load_corpus("/no/such/file.jsonl")


def test_load_bad_json_names_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "a", "source": 0, "tokens": ["x"]}\n{oops\n')
    with pytest.raises(DataError, match="line 2"):
        load_corpus(p)


def test_unknown_keys_warn_but_load(tmp_path):
    p = tmp_path / "extra.jsonl"
    p.write_text('{"id": "a", "source": 0, "tokens": ["x"], "editor": "bob"}\n')
    with pytest.warns(CorpusWarning):
        recs = load_corpus(p)
    assert len(recs) == 1


def test_image_feature_length_checked(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "a", "source": 0, "tokens": ["x"], "image_feature": [1.0, 2.0]}\n')
    assert len(load_corpus(p, d_img=2)) == 1
    with pytest.raises(DataError):
        load_corpus(p, d_img=3)


def test_record_invariants():
    with pytest.raises(DataError):
        ArticleRecord(id="a", source=-1, tokens=("x",)).validate()
    with pytest.raises(DataError):
        ArticleRecord(id="a", source=0, tokens=("x",), popularity=-2).validate()
    with pytest.raises(DataError):
        ArticleRecord(id="a", source=0, tokens=("x",), geo=((0.0, 4.0),)).validate()


# --- splitting -------------------------------------------------------------


def _dummy(n):
    rng = np.random.default_rng(0)
    return [make_record(i, rng, with_image=False) for i in range(n)]


def test_split_exact_division():
    s = split_corpus(_dummy(10), (0.6, 0.2, 0.2), seed=1)
    assert (len(s.train), len(s.val), len(s.test)) == (6, 2, 2)


def test_split_remainder_goes_to_train():
    s = split_corpus(_dummy(11), (0.6, 0.2, 0.2), seed=1)
    assert (len(s.train), len(s.val), len(s.test)) == (7, 2, 2)


def test_split_deterministic():
    recs = _dummy(20)
    a = split_corpus(recs, seed=9)
    b = split_corpus(recs, seed=9)
    assert a.train == b.train and a.val == b.val and a.test == b.test
    c = split_corpus(recs, seed=10)
    assert c.train != a.train  # 20! orderings; same split would be a seeding bug


def test_split_bad_ratios():
    with pytest.raises(DataError):
        split_corpus(_dummy(4), (0.5, 0.2, 0.2), seed=0)
    with pytest.raises(DataError):
        split_corpus([], (0.6, 0.2, 0.2), seed=0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(min_value=1, max_value=60), seed=st.integers(0, 2**31 - 1))
def test_split_is_partition(n, seed):
    recs = _dummy(n)
    s = split_corpus(recs, seed=seed)
    parts = [set(s.train), set(s.val), set(s.test)]
    assert parts[0] | parts[1] | parts[2] == {r.id for r in recs}
    assert len(s.train) + len(s.val) + len(s.test) == n
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])


def test_split_select(tiny_records):
    s = split_corpus(tiny_records, seed=3)
    chosen = s.select(tiny_records, "val")
    assert [r.id for r in chosen] == [r.id for r in tiny_records if r.id in set(s.val)]
    with pytest.raises(DataError):
        s.part("validation")


# --- image-feature assembly -------------------------------------------------


def test_assemble_unit_halves():
    out = assemble_image_feature([3.0, 4.0], [0.0, 1.0])
    assert np.allclose(out, [0.6, 0.8, 0.0, 1.0])
    assert abs(np.linalg.norm(out) - math.sqrt(2)) < 1e-12


def test_assemble_full_width():
    rng = np.random.default_rng(5)
    out = assemble_image_feature(rng.normal(size=4096), rng.normal(size=4096))
    assert out.shape == (8192,)
    assert abs(np.linalg.norm(out) - math.sqrt(2)) < 1e-12


def test_assemble_rejects_zero_vector():
    with pytest.raises(DataError):
        assemble_image_feature([1.0, 0.0], [0.0, 0.0])


# --- synthetic generator -----------------------------------------------------


def test_synth_balanced_labels():
    recs = synth_corpus(SynthSpec(num_sources=3, articles_per_source=50, seed=1))
    assert len(recs) == 150
    counts = np.bincount([r.source for r in recs])
    assert list(counts) == [50, 50, 50]
    for r in recs:
        r.validate()


def test_synth_deterministic(tmp_path):
    spec = SynthSpec(num_sources=2, articles_per_source=10, seed=3)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(synth_corpus(spec), a)
    save_corpus(synth_corpus(SynthSpec(num_sources=2, articles_per_source=10, seed=3)), b)
    assert a.read_bytes() == b.read_bytes()


def test_synth_noiseless_images_linear_in_histogram():
    # with zero image noise the image view is an exact linear map of the
    # token histogram, so classical CCA finds near-perfect top correlations
    spec = SynthSpec(num_sources=2, articles_per_source=60, vocab_size=12,
                     d_img=3, image_noise=0.0, seed=8)
    recs = synth_corpus(spec)
    vocab = {t: i for i, t in enumerate(synth_vocab(spec))}
    hist = np.zeros((len(recs), len(vocab)))
    for i, r in enumerate(recs):
        for t in r.tokens:
            hist[i, vocab[t]] += 1.0
    images = np.stack([r.image_feature for r in recs])
    cca = LinearCca(n_components=3).fit(hist, images)
    assert np.all(cca.correlations_ > 0.98)


def test_synth_spec_validation():
    with pytest.raises(DataError):
        SynthSpec(num_sources=0).validate()
    with pytest.raises(DataError):
        SynthSpec(vocab_size=4, num_sources=3).validate()
    with pytest.raises(DataError):
        SynthSpec(image_noise=-0.1).validate()
    with pytest.raises(DataError):
        SynthSpec(geo_centers=((0.0, 0.0),), num_sources=2).validate()
