"""Evaluation suite: classification, regression, geolocation, retrieval, BLEU.

Median convention everywhere: the lower middle element for even counts, so
reported numbers are stable across platforms.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .losses import EARTH_RADIUS_KM, gcd_km
from .validation import as_float_array


def lower_median(values):
    """Median as the lower middle element of the sorted values."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise DataError("median of an empty sequence")
    return float(arr[(arr.size - 1) // 2])


def accuracy_report(preds, labels):
    """(overall accuracy, balanced accuracy).

    Balanced accuracy is the unweighted mean of per-class recalls over the
    classes present in ``labels``.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise DataError(f"preds {preds.shape} and labels {labels.shape} must be equal-length 1-d")
    if labels.size == 0:
        raise DataError("empty evaluation set")
    overall = float(np.mean(preds == labels))
    recalls = []
    for cls in np.unique(labels):
        mask = labels == cls
        recalls.append(float(np.mean(preds[mask] == cls)))
    return overall, float(np.mean(recalls))


def l1_report(preds, labels):
    """(mean, median) absolute error."""
    preds = as_float_array(preds, "preds", ndim=1)
    labels = as_float_array(labels, "labels", ndim=1)
    if preds.shape != labels.shape:
        raise DataError(f"preds {preds.shape} and labels {labels.shape} differ in length")
    if preds.size == 0:
        raise DataError("empty evaluation set")
    errors = np.abs(preds - labels)
    return float(np.mean(errors)), lower_median(errors)


def geo_report(preds, records, radius=EARTH_RADIUS_KM):
    """(mean, median) great-circle error in km, nearest ground truth per record."""
    preds = as_float_array(preds, "preds", ndim=2)
    if preds.shape[0] != len(records):
        raise DataError(f"{preds.shape[0]} predictions for {len(records)} records")
    if len(records) == 0:
        raise DataError("empty evaluation set")
    dists = []
    for pred, rec in zip(preds, records):
        if not rec.geo:
            raise DataError(f"record {rec.id!r} has no geolocation to evaluate against")
        dists.append(min(gcd_km(pred, g, radius=radius) for g in rec.geo))
    return float(np.mean(dists)), lower_median(dists)


@dataclass(frozen=True)
class RetrievalResult:
    r_at_1: float  # percent
    r_at_10: float  # percent
    median_rank: float  # 1-based
    pool: int


def retrieval_eval(text_proj, image_proj, correlations=None, weighted=True):
    """Rank the aligned image pool for every text query.

    Inputs are (n, k) projections with matching rows.  Similarity is the
    cosine between projections, each dimension scaled by its canonical
    correlation when ``weighted`` (pass the correlations for that); ties
    break toward lower image index.
    """
    text = as_float_array(text_proj, "text_proj", ndim=2)
    image = as_float_array(image_proj, "image_proj", ndim=2)
    if text.shape != image.shape:
        raise DataError(f"projections {text.shape} and {image.shape} must align")
    n, k = text.shape
    if n == 0:
        raise DataError("empty retrieval pool")
    if weighted:
        if correlations is None:
            raise DataError("weighted retrieval needs the canonical correlations")
        w = as_float_array(correlations, "correlations", ndim=1)
        if w.shape[0] != k:
            raise DataError(f"{w.shape[0]} correlations for {k} projection dims")
        text = text * w
        image = image * w
    tnorm = text / np.maximum(np.linalg.norm(text, axis=1, keepdims=True), 1e-300)
    inorm = image / np.maximum(np.linalg.norm(image, axis=1, keepdims=True), 1e-300)
    sims = tnorm @ inorm.T  # (n, n): query i against every image j

    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        own = sims[i, i]
        better = int(np.sum(sims[i] > own))
        tied_before = int(np.sum(sims[i, :i] == own))
        ranks[i] = 1 + better + tied_before
    return RetrievalResult(
        r_at_1=float(np.mean(ranks <= 1) * 100.0),
        r_at_10=float(np.mean(ranks <= 10) * 100.0),
        median_rank=lower_median(ranks),
        pool=n,
    )


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, n_max=4):
    """Corpus BLEU-1..n_max on a percent scale, one reference per candidate.

    Modified (clipped) n-gram precision, geometric mean, brevity penalty,
    no smoothing: a zero precision at any order zeroes that score.
    """
    if len(candidates) != len(references):
        raise DataError(f"{len(candidates)} candidates for {len(references)} references")
    if not candidates:
        raise DataError("empty caption corpus")
    matches = np.zeros(n_max)
    totals = np.zeros(n_max)
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand = list(cand)
        ref = list(ref)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, n_max + 1):
            counts = _ngram_counts(cand, n)
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts.get(gram, 0)) for gram, c in counts.items()
            )
    precisions = np.where(totals > 0, matches / np.maximum(totals, 1), 0.0)
    if cand_len == 0:
        return [0.0] * n_max
    brevity = 1.0 if cand_len > ref_len else float(np.exp(1.0 - ref_len / cand_len))
    scores = []
    for n in range(1, n_max + 1):
        p = precisions[:n]
        if np.any(p == 0.0):
            scores.append(0.0)
        else:
            scores.append(float(brevity * np.exp(np.mean(np.log(p))) * 100.0))
    return scores
