"""Corpus data model, JSON-lines I/O, splitting and synthetic generation.

A corpus file is UTF-8 JSON-lines, one article object per line with keys
``id``, ``source``, ``tokens``, ``geo`` (list of ``[lat_rad, lon_rad]``),
``popularity`` and optionally ``image_feature`` and ``captions``.  Unknown
keys are ignored with a warning.

The synthetic generator builds corpora with known, recoverable structure:
token distributions are source-conditioned (so sources are separable),
geolocations cluster per source, and image features are a noisy linear map
of the token histogram (so text and image are linearly correlated and a
CCA-style learner has something to find).
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusWarning, DataError
from .validation import check_latlon, derive_rng

KNOWN_KEYS = {"id", "source", "tokens", "geo", "popularity", "image_feature", "captions"}


@dataclass(eq=False)
class ArticleRecord:
    """One news item: text tokens, labels and optional image feature."""

    id: str
    source: int
    tokens: tuple
    geo: tuple = ()
    popularity: int = 0
    image_feature: np.ndarray | None = None
    captions: tuple = ()

    def validate(self, d_img=None, context=""):
        where = f" ({context})" if context else ""
        if self.source < 0:
            raise DataError(f"negative source index{where}")
        if self.popularity < 0:
            raise DataError(f"negative popularity{where}")
        for lat, lon in self.geo:
            check_latlon(lat, lon, context=context)
        if self.image_feature is not None:
            feat = np.asarray(self.image_feature, dtype=np.float64)
            if feat.ndim != 1:
                raise DataError(f"image_feature is not a flat vector{where}")
            if not np.all(np.isfinite(feat)):
                raise DataError(f"image_feature has non-finite entries{where}")
            if d_img is not None and feat.shape[0] != d_img:
                raise DataError(
                    f"image_feature has length {feat.shape[0]}, expected {d_img}{where}"
                )
        return self


def _record_from_obj(obj, line_no):
    context = f"line {line_no}"
    unknown = set(obj) - KNOWN_KEYS
    if unknown:
        warnings.warn(
            f"{context}: ignoring unknown keys {sorted(unknown)}", CorpusWarning
        )
    try:
        rec = ArticleRecord(
            id=str(obj["id"]),
            source=int(obj["source"]),
            tokens=tuple(str(t) for t in obj["tokens"]),
            geo=tuple((float(g[0]), float(g[1])) for g in obj.get("geo", [])),
            popularity=int(obj.get("popularity", 0)),
            image_feature=(
                np.asarray(obj["image_feature"], dtype=np.float64)
                if obj.get("image_feature") is not None
                else None
            ),
            captions=tuple(
                tuple(str(t) for t in cap) for cap in obj.get("captions", [])
            ),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataError(f"{context}: malformed record ({exc})") from exc
    return rec.validate(context=context)


def load_corpus(path, d_img=None):
    """Read a JSON-lines corpus file into a list of validated records."""
    records = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open corpus file {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            rec = _record_from_obj(obj, line_no)
            if d_img is not None:
                rec.validate(d_img=d_img, context=f"line {line_no}")
            records.append(rec)
    return records


def save_corpus(records, path):
    """Write records as JSON-lines; the inverse of :func:`load_corpus`."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "source": rec.source,
                "tokens": list(rec.tokens),
                "geo": [[lat, lon] for lat, lon in rec.geo],
                "popularity": rec.popularity,
            }
            if rec.image_feature is not None:
                obj["image_feature"] = [float(v) for v in rec.image_feature]
            if rec.captions:
                obj["captions"] = [list(cap) for cap in rec.captions]
            fh.write(json.dumps(obj) + "\n")


@dataclass
class CorpusSplit:
    """Disjoint train/val/test id lists forming a partition of the corpus."""

    train: list
    val: list
    test: list
    seed: int

    def part(self, name):
        if name not in ("train", "val", "test"):
            raise DataError(f"unknown split part {name!r}")
        return getattr(self, name)

    def select(self, records, name):
        wanted = set(self.part(name))
        return [r for r in records if r.id in wanted]


def split_corpus(records, ratios=(0.6, 0.2, 0.2), seed=0):
    """Shuffle ids with ``seed`` and split; rounding remainder goes to train."""
    if not records:
        raise DataError("cannot split an empty corpus")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios {ratios} do not sum to 1")
    ids = [r.id for r in records]
    rng = derive_rng(seed, "corpus-split")
    order = rng.permutation(len(ids))
    n = len(ids)
    n_val = int(math.floor(ratios[1] * n))
    n_test = int(math.floor(ratios[2] * n))
    n_train = n - n_val - n_test
    shuffled = [ids[i] for i in order]
    return CorpusSplit(
        train=shuffled[:n_train],
        val=shuffled[n_train : n_train + n_val],
        test=shuffled[n_train + n_val :],
        seed=seed,
    )


def assemble_image_feature(v_obj, v_scene):
    """L2-normalize each activation vector independently and concatenate.

    Both halves end up unit norm, so the output has norm sqrt(2).
    """
    out = []
    for name, vec in (("object", v_obj), ("scene", v_scene)):
        vec = np.asarray(vec, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{name} activation vector has non-finite entries")
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise DataError(f"{name} activation vector is all zeros")
        out.append(vec / norm)
    return np.concatenate(out)


@dataclass
class SynthSpec:
    """Recipe for a synthetic corpus with recoverable structure.

    ``geo_centers`` gives one (lat, lon) cluster center per source;
    ``image_noise`` scales Gaussian noise added to the linear text-to-image
    map (0 means the image feature is an exact linear function of the token
    histogram).
    """

    num_sources: int = 3
    articles_per_source: int = 50
    vocab_size: int = 120
    tokens_per_article: tuple = (20, 40)
    geo_centers: tuple | None = None
    geo_spread: float = 0.02
    popularity_sigma: float = 1.0
    image_noise: float = 0.05
    d_img: int = 24
    source_token_bias: float = 0.85
    captions_per_article: int = 1
    caption_len: tuple = (3, 6)
    seed: int = 0

    def validate(self):
        if self.num_sources < 1 or self.articles_per_source < 1:
            raise DataError("num_sources and articles_per_source must be positive")
        if self.vocab_size < 2 * self.num_sources:
            raise DataError("vocab_size too small for source-specific pools")
        lo, hi = self.tokens_per_article
        if lo < 1 or hi < lo:
            raise DataError("invalid tokens_per_article range")
        if self.image_noise < 0:
            raise DataError("image_noise must be >= 0")
        if self.d_img < 1:
            raise DataError("d_img must be positive")
        if not 0.0 <= self.source_token_bias <= 1.0:
            raise DataError("source_token_bias must be in [0, 1]")
        if self.geo_centers is not None and len(self.geo_centers) != self.num_sources:
            raise DataError("geo_centers must give one center per source")
        return self


DEFAULT_GEO_CENTERS = (
    (0.6, -2.0),
    (-0.4, 0.5),
    (0.5, 2.5),
    (-0.7, -0.6),
    (0.1, 1.4),
)


def synth_vocab(spec):
    """Token strings used by the generator, in index order."""
    width = len(str(spec.vocab_size - 1))
    return [f"tok{i:0{width}d}" for i in range(spec.vocab_size)]


def _geo_centers(spec):
    if spec.geo_centers is not None:
        return list(spec.geo_centers)
    centers = list(DEFAULT_GEO_CENTERS)
    while len(centers) < spec.num_sources:
        k = len(centers)
        centers.append((0.8 * math.sin(k), math.pi * (2 * ((k * 5) % 7) / 7.0 - 1)))
    return centers[: spec.num_sources]


def _wrap_lon(lon):
    return math.atan2(math.sin(lon), math.cos(lon))


def synth_corpus(spec):
    """Generate a deterministic corpus; same spec + seed gives identical output."""
    spec.validate()
    rng = derive_rng(spec.seed, "synth-corpus")
    vocab = synth_vocab(spec)
    centers = _geo_centers(spec)

    # Vocabulary layout: a shared pool followed by equal per-source pools.
    shared_size = max(1, spec.vocab_size // (spec.num_sources + 1))
    pool_size = (spec.vocab_size - shared_size) // spec.num_sources
    pools = []
    for s in range(spec.num_sources):
        start = shared_size + s * pool_size
        pools.append(np.arange(start, start + pool_size))
    shared = np.arange(0, shared_size)

    # Fixed linear map from token histogram to image features.
    map_rng = derive_rng(spec.seed, "synth-image-map")
    image_map = map_rng.normal(size=(spec.d_img, spec.vocab_size)) / math.sqrt(
        spec.vocab_size
    )

    records = []
    lo, hi = spec.tokens_per_article
    cap_lo, cap_hi = spec.caption_len
    for s in range(spec.num_sources):
        lat_c, lon_c = centers[s]
        for a in range(spec.articles_per_source):
            n_tok = int(rng.integers(lo, hi + 1))
            use_pool = rng.random(n_tok) < spec.source_token_bias
            idx = np.where(
                use_pool,
                rng.choice(pools[s], size=n_tok),
                rng.choice(shared, size=n_tok),
            )
            tokens = tuple(vocab[i] for i in idx)

            lat = float(np.clip(lat_c + rng.normal() * spec.geo_spread, -np.pi / 2, np.pi / 2))
            lon = _wrap_lon(lon_c + rng.normal() * spec.geo_spread)

            popularity = int(math.floor(math.exp(
                math.log(3.0 * (s + 1)) + rng.normal() * spec.popularity_sigma
            )))

            hist = np.bincount(idx, minlength=spec.vocab_size).astype(np.float64)
            signal = image_map @ hist
            feat = signal.copy()
            if spec.image_noise > 0:
                scale = spec.image_noise * np.linalg.norm(signal) / math.sqrt(spec.d_img)
                feat = signal + scale * rng.normal(size=spec.d_img)

            captions = []
            for _ in range(spec.captions_per_article):
                c_len = int(rng.integers(cap_lo, cap_hi + 1))
                cap_idx = rng.choice(pools[s], size=c_len)
                captions.append(tuple(vocab[i] for i in cap_idx))

            records.append(
                ArticleRecord(
                    id=f"s{s}a{a:04d}",
                    source=s,
                    tokens=tokens,
                    geo=((lat, lon),),
                    popularity=popularity,
                    image_feature=feat,
                    captions=tuple(captions),
                ).validate(context=f"synth s={s} a={a}")
            )
    return records
