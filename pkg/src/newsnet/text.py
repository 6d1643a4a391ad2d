"""Text representations: TF-IDF bag-of-words and embedding aggregations.

The vocabulary keeps tokens whose total training-set occurrence count is
strictly greater than the threshold ``min_count``; indices are assigned in
lexicographic order so the representation is independent of record order.
The TF-IDF weight of token ``j`` in an article is ``t_j * ln(M / (c_j + 1))``
with ``t_j`` the in-article term frequency, ``c_j`` the number of training
articles containing the token and ``M`` the number of training articles.

Dense per-article embedding use: either the full zero-padded embedding
matrix fed to the convolutional trunk, or the mean/max over token vectors.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .validation import derive_rng


@dataclass
class Vocabulary:
    tokens: tuple
    index: dict
    doc_freq: np.ndarray
    num_train_docs: int
    min_count: int

    @property
    def size(self):
        return len(self.tokens)


def build_vocab(train_records, min_count=0):
    """Count tokens over the training set and keep those occurring > min_count."""
    if not train_records:
        raise DataError("cannot build a vocabulary from an empty training set")
    totals = Counter()
    doc_freq = Counter()
    for rec in train_records:
        totals.update(rec.tokens)
        doc_freq.update(set(rec.tokens))
    kept = sorted(t for t, n in totals.items() if n > min_count)
    if not kept:
        raise DataError(
            f"min_count={min_count} leaves an empty vocabulary "
            f"(most frequent token occurs {max(totals.values())} times)"
        )
    return Vocabulary(
        tokens=tuple(kept),
        index={t: i for i, t in enumerate(kept)},
        doc_freq=np.array([doc_freq[t] for t in kept], dtype=np.int64),
        num_train_docs=len(train_records),
        min_count=min_count,
    )


def truncate_vocab(vocab, size, keep="common"):
    """Keep the ``size`` tokens with largest (``keep='common'``) or smallest
    (``keep='rare'``) document frequency; ties break lexicographically."""
    if size < 1:
        raise DataError("truncation size must be >= 1")
    if keep not in ("common", "rare"):
        raise DataError(f"keep must be 'common' or 'rare', got {keep!r}")
    if size >= vocab.size:
        return vocab
    sign = -1 if keep == "common" else 1
    order = sorted(range(vocab.size), key=lambda i: (sign * vocab.doc_freq[i], vocab.tokens[i]))
    chosen = sorted(order[:size], key=lambda i: vocab.tokens[i])
    tokens = tuple(vocab.tokens[i] for i in chosen)
    return Vocabulary(
        tokens=tokens,
        index={t: i for i, t in enumerate(tokens)},
        doc_freq=vocab.doc_freq[chosen].copy(),
        num_train_docs=vocab.num_train_docs,
        min_count=vocab.min_count,
    )


def bow_tfidf(record, vocab):
    """TF-IDF vector of one article; out-of-vocabulary tokens are ignored."""
    vec = np.zeros(vocab.size, dtype=np.float64)
    counts = Counter(record.tokens)
    m = vocab.num_train_docs
    for tok, tf in counts.items():
        j = vocab.index.get(tok)
        if j is not None:
            vec[j] = tf * np.log(m / (vocab.doc_freq[j] + 1.0))
    return vec


def bow_matrix(records, vocab):
    """Stacked TF-IDF vectors, one row per record."""
    return np.stack([bow_tfidf(r, vocab) for r in records])


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict

    def __contains__(self, token):
        return token in self.vectors

    def get(self, token):
        return self.vectors.get(token)


def load_embeddings(path):
    """Parse a text embedding table: header ``V dim``, then ``token v1..vdim``."""
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open embedding file {path}: {exc}") from exc
    with fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError("embedding header must be 'vocab_size dim'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError as exc:
            raise DataError(f"bad embedding header: {exc}") from exc
        vectors = {}
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(
                    f"token {token!r} has {len(values)} values, expected {dim}"
                )
            if token in vectors:
                raise DataError(f"duplicate token {token!r} in embedding file")
            vec = np.array([float(v) for v in values], dtype=np.float64)
            if not np.all(np.isfinite(vec)):
                raise DataError(f"token {token!r} has non-finite embedding values")
            vectors[token] = vec
    if len(vectors) != count:
        raise DataError(
            f"embedding header promises {count} tokens, file has {len(vectors)}"
        )
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(table, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def random_embeddings(tokens, dim, seed=0, scale=1.0):
    """Seeded Gaussian embedding table, for synthetic corpora.

    ``scale`` sets the entry standard deviation.  Small scales keep the
    trunk activations modest, which matters for losses whose gradient
    magnitude does not decay near the optimum (distance-type losses).
    """
    rng = derive_rng(seed, "random-embeddings")
    vectors = {t: scale * rng.normal(size=dim) for t in tokens}
    return EmbeddingTable(dim=dim, vectors=vectors)


@dataclass
class ArticleMatrix:
    """Zero-padded dense article input of fixed shape (dim, n_cols)."""

    values: np.ndarray
    n_tokens: int


def article_matrix(record, table, n_cols):
    """Stack token embeddings into columns and zero-pad (or truncate) to n_cols."""
    if n_cols < 1:
        raise DataError("n_cols must be >= 1")
    mat = np.zeros((table.dim, n_cols), dtype=np.float64)
    col = 0
    for tok in record.tokens:
        vec = table.get(tok)
        if vec is None:
            continue
        if col == n_cols:
            break
        mat[:, col] = vec
        col += 1
    return ArticleMatrix(values=mat, n_tokens=col)


def _embedded_vectors(record, table):
    vecs = [table.get(tok) for tok in record.tokens]
    vecs = [v for v in vecs if v is not None]
    if not vecs:
        raise DataError(f"article {record.id!r} has no tokens in the embedding table")
    return np.stack(vecs)


def embed_mean(record, table):
    """Per-dimension mean over the article's in-table token vectors."""
    return _embedded_vectors(record, table).mean(axis=0)


def embed_max(record, table):
    """Per-dimension max over the article's in-table token vectors."""
    return _embedded_vectors(record, table).max(axis=0)
