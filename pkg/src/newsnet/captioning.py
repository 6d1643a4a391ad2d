"""LSTM caption generation over fixed article and image features.

The decoder consumes a linearly encoded context vector at step 0 and a
begin marker at step 1, then runs teacher-forced steps through the end
marker.  Cell equations are the standard formulation: sigmoid input,
forget and output gates, tanh candidate, with the forget-gate bias
started at 1.0.  Hidden and encoding width default to 256.
"""

from collections import Counter
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .losses import softmax_xent
from .text import embed_mean
from .validation import as_float_array, derive_rng

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"


@dataclass(frozen=True)
class CaptionVocab:
    tokens: tuple
    index: dict

    @property
    def size(self):
        return len(self.tokens)

    @property
    def bos(self):
        return self.index[BOS]

    @property
    def eos(self):
        return self.index[EOS]

    @property
    def unk(self):
        return self.index[UNK]

    def encode(self, tokens):
        unk = self.unk
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, indices):
        return [self.tokens[i] for i in indices]


def build_caption_vocab(captions, min_count=2):
    """Token inventory over training captions; rare tokens fall to UNK."""
    counts = Counter()
    for cap in captions:
        counts.update(cap)
    kept = sorted(
        t for t, c in counts.items() if c >= min_count and t not in (BOS, EOS, UNK)
    )
    if not kept:
        raise DataError(
            f"no caption token reaches min_count={min_count}; cannot build a vocabulary"
        )
    tokens = (BOS, EOS, UNK, *kept)
    return CaptionVocab(tokens=tokens, index={t: i for i, t in enumerate(tokens)})


def context_vector(article_mean=None, image_feats=None, mode="text"):
    """Concatenate the requested context parts in (text, image) order."""
    if mode not in ("text", "image", "both"):
        raise ConfigError(f"mode must be text, image or both, got {mode!r}")
    parts = []
    if mode in ("text", "both"):
        if article_mean is None:
            raise DataError(f"mode {mode!r} needs the article representation")
        parts.append(as_float_array(article_mean, "article_mean", ndim=1))
    if mode in ("image", "both"):
        if image_feats is None:
            raise DataError(f"mode {mode!r} needs image features")
        feats = as_float_array(image_feats, "image_feats")
        parts.append(feats.reshape(-1))
    return np.concatenate(parts)


class LstmCore:
    """Parameters and BPTT of the decoder; gate rows packed as [i, f, o, g]."""

    def __init__(self, ctx_dim, vocab_size, hidden_size, rng):
        h = hidden_size
        self.h = h
        self.vocab_size = vocab_size
        gate_b = np.zeros(4 * h)
        gate_b[h : 2 * h] = 1.0  # open forget gate at the start
        self.params = {
            "enc_w": nn.Param(nn.init_uniform(rng, (h, ctx_dim), ctx_dim, h)),
            "enc_b": nn.Param(np.zeros(h), decay=False),
            "embed": nn.Param(nn.init_uniform(rng, (vocab_size, h), vocab_size, h)),
            "gate_w": nn.Param(nn.init_uniform(rng, (4 * h, 2 * h), 2 * h, 4 * h)),
            "gate_b": nn.Param(gate_b, decay=False),
            # near-zero projection so the first predictions are uniform
            "proj_w": nn.Param(rng.uniform(-0.01, 0.01, size=(vocab_size, h))),
            "proj_b": nn.Param(np.zeros(vocab_size), decay=False),
        }

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, h, c, x):
        """One cell update on input x; returns (h', c', logits, cache)."""
        p = self.params
        zcat = np.concatenate([h, x])
        pre = p["gate_w"].value @ zcat + p["gate_b"].value
        hs = self.h
        i = _sigmoid(pre[:hs])
        f = _sigmoid(pre[hs : 2 * hs])
        o = _sigmoid(pre[2 * hs : 3 * hs])
        g = np.tanh(pre[3 * hs :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        logits = p["proj_w"].value @ h_new + p["proj_b"].value
        cache = (zcat, i, f, o, g, c, tanh_c, h_new)
        return h_new, c_new, logits, cache

    def step_backward(self, cache, grad_logits, grad_h_next, grad_c_next):
        """Backprop one step; accumulates into params, returns upstream grads."""
        p = self.params
        zcat, i, f, o, g, c_prev, tanh_c, h_new = cache
        hs = self.h
        if grad_logits is not None:
            p["proj_w"].grad += np.outer(grad_logits, h_new)
            p["proj_b"].grad += grad_logits
            grad_h = p["proj_w"].value.T @ grad_logits + grad_h_next
        else:
            grad_h = grad_h_next.copy()
        grad_o = grad_h * tanh_c
        grad_c = grad_h * o * (1.0 - tanh_c * tanh_c) + grad_c_next
        grad_f = grad_c * c_prev
        grad_i = grad_c * g
        grad_g = grad_c * i
        grad_c_prev = grad_c * f
        grad_pre = np.concatenate([
            grad_i * i * (1.0 - i),
            grad_f * f * (1.0 - f),
            grad_o * o * (1.0 - o),
            grad_g * (1.0 - g * g),
        ])
        p["gate_w"].grad += np.outer(grad_pre, zcat)
        p["gate_b"].grad += grad_pre
        grad_zcat = p["gate_w"].value.T @ grad_pre
        return grad_zcat[:hs], grad_zcat[hs:], grad_c_prev

    def encode(self, ctx):
        return self.params["enc_w"].value @ ctx + self.params["enc_b"].value

    def caption_loss(self, ctx, targets, accumulate_grads=False, scale=1.0):
        """Teacher-forced mean per-token cross entropy through the end marker.

        ``targets`` holds the caption's token indices (no BOS/EOS); the end
        marker is appended internally.  With ``accumulate_grads`` the full
        backward pass runs, scaling each token's logit gradient by
        ``scale / n_tokens``.
        """
        p = self.params
        bos_row = 0  # BOS index is fixed by construction of CaptionVocab
        full_targets = list(targets) + [1]  # EOS index
        inputs = [self.encode(ctx)]
        inputs += [p["embed"].value[bos_row]]
        inputs += [p["embed"].value[t] for t in targets]
        input_rows = [None, bos_row, *targets]  # embed rows, None = context

        h = np.zeros(self.h)
        c = np.zeros(self.h)
        caches = []
        bundles = []
        total = 0.0
        for t, x in enumerate(inputs):
            h, c, logits, cache = self.step(h, c, x)
            caches.append(cache)
            if t >= 1:
                b = softmax_xent(logits, full_targets[t - 1])
                bundles.append(b)
                total += b.loss
        n_tok = len(full_targets)
        loss = total / n_tok

        if accumulate_grads:
            grad_h = np.zeros(self.h)
            grad_c = np.zeros(self.h)
            for t in range(len(inputs) - 1, -1, -1):
                gl = bundles[t - 1].grad * (scale / n_tok) if t >= 1 else None
                grad_h, grad_x, grad_c = self.step_backward(
                    caches[t], gl, grad_h, grad_c
                )
                row = input_rows[t]
                if row is None:
                    p["enc_w"].grad += np.outer(grad_x, ctx)
                    p["enc_b"].grad += grad_x
                else:
                    p["embed"].grad[row] += grad_x
        return loss, n_tok


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_softmax(logits):
    shifted = logits - logits.max()
    return shifted - np.log(np.sum(np.exp(shifted)))


def greedy_decode(core, ctx, max_len=40):
    """Most-likely-token rollout; returns (tokens, total log_prob, n_steps)."""
    h = np.zeros(core.h)
    c = np.zeros(core.h)
    h, c, _, _ = core.step(h, c, core.encode(ctx))
    h, c, logits, _ = core.step(h, c, core.params["embed"].value[0])
    tokens = []
    log_prob = 0.0
    steps = 0
    while len(tokens) < max_len:
        lsm = _log_softmax(logits)
        nxt = int(np.argmax(lsm))
        log_prob += float(lsm[nxt])
        steps += 1
        if nxt == 1:  # EOS
            break
        tokens.append(nxt)
        h, c, logits, _ = core.step(h, c, core.params["embed"].value[nxt])
    return tokens, log_prob, steps


def beam_decode(core, ctx, width, max_len=40):
    """Beam search keeping ``width`` live prefixes by cumulative log-prob.

    Final selection over finished and still-live hypotheses uses
    length-normalized scores; ties break toward lower token indices.
    """
    if width < 1:
        raise ConfigError("beam width must be >= 1")
    if max_len == 0:
        return [], 0.0, 0
    h = np.zeros(core.h)
    c = np.zeros(core.h)
    h, c, _, _ = core.step(h, c, core.encode(ctx))
    h, c, logits, _ = core.step(h, c, core.params["embed"].value[0])
    live = [((), 0.0, h, c, logits)]
    finished = []  # (tokens, log_prob, n_steps)
    for _ in range(max_len):
        candidates = []
        for tokens, lp, h, c, logits in live:
            lsm = _log_softmax(logits)
            for v in range(core.vocab_size):
                candidates.append((lp + float(lsm[v]), v, tokens, h, c))
        candidates.sort(key=lambda t: (-t[0], t[1]))
        live = []
        # the top `width` candidates hold the beam; a finished hypothesis
        # keeps its slot, so beam(1) terminates exactly where greedy does
        for lp, v, tokens, h, c in candidates[:width]:
            if v == 1:  # EOS closes the hypothesis
                finished.append((list(tokens), lp, len(tokens) + 1))
            else:
                h2, c2, logits2, _ = core.step(h, c, core.params["embed"].value[v])
                live.append(((*tokens, v), lp, h2, c2, logits2))
        if not live:
            break
    pool = finished + [(list(t), lp, len(t)) for t, lp, h, c, lg in live]
    pool.sort(key=lambda t: (-t[1] / max(1, t[2]), t[0]))
    tokens, lp, steps = pool[0]
    return tokens, lp, steps


class LstmCaptioner(BaseEstimator):
    """Caption generator trained by teacher forcing on (context, caption) pairs.

    ``mode`` selects the context: the mean embedding of the article tokens,
    the record's image feature, or their concatenation.  Training follows
    the momentum-SGD engine at base_lr 0.0002 and batch size 4.
    """

    def __init__(self, mode="text", embeddings=None, hidden_size=256,
                 vocab_min_count=2, iterations=500, base_lr=0.0002,
                 drop_factor=1.0, drop_every=1000, momentum=0.9,
                 weight_decay=0.0, batch_size=4, max_len=40, seed=0):
        self.mode = mode
        self.embeddings = embeddings
        self.hidden_size = hidden_size
        self.vocab_min_count = vocab_min_count
        self.iterations = iterations
        self.base_lr = base_lr
        self.drop_factor = drop_factor
        self.drop_every = drop_every
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_len = max_len
        self.seed = seed

    def _sgd_config(self):
        return nn.SgdConfig(
            base_lr=self.base_lr, drop_factor=self.drop_factor,
            drop_every=self.drop_every, momentum=self.momentum,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
        ).validate()

    def _context(self, rec):
        text = None
        image = None
        if self.mode in ("text", "both"):
            if self.embeddings is None:
                raise ConfigError(f"mode {self.mode!r} needs an EmbeddingTable")
            text = embed_mean(rec, self.embeddings)
        if self.mode in ("image", "both"):
            if rec.image_feature is None:
                raise DataError(f"record {rec.id!r} has no image feature")
            image = rec.image_feature
        return context_vector(text, image, self.mode)

    def fit(self, records):
        cfg = self._sgd_config()
        pairs = []
        for rec in records:
            for cap in rec.captions:
                if cap:
                    pairs.append((rec, tuple(cap)))
        if not pairs:
            raise DataError("no non-empty captions in the training records")
        self.vocab_ = build_caption_vocab(
            [cap for _, cap in pairs], min_count=self.vocab_min_count
        )
        contexts = [self._context(rec) for rec, _ in pairs]
        targets = [self.vocab_.encode(cap) for _, cap in pairs]
        self.ctx_dim_ = contexts[0].shape[0]
        for ctx in contexts:
            if ctx.shape[0] != self.ctx_dim_:
                raise DataError("context vectors differ in length across records")

        rng = derive_rng(self.seed, "caption-init")
        self.core_ = LstmCore(self.ctx_dim_, self.vocab_.size, self.hidden_size, rng)
        rng_batch = derive_rng(self.seed, "caption-shuffle")

        n = len(pairs)
        order = rng_batch.permutation(n)
        cursor = 0
        losses = []
        for it in range(self.iterations):
            lr = nn.lr_at(it, cfg)
            take = min(cfg.batch_size, n)
            if cursor + take > n:
                order = rng_batch.permutation(n)
                cursor = 0
            batch = order[cursor : cursor + take]
            cursor += take
            self.core_.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                loss, _ = self.core_.caption_loss(
                    contexts[idx], targets[idx],
                    accumulate_grads=True, scale=1.0 / take,
                )
                batch_loss += loss / take
            losses.append(batch_loss)
            nn.sgd_step(self.core_.params, lr, cfg)
        self.report_ = {
            "iterations": self.iterations,
            "seed": self.seed,
            "n_pairs": n,
            "vocab_size": self.vocab_.size,
            "losses": losses,
            "config": {k: v for k, v in self.get_params().items() if k != "embeddings"},
        }
        return self

    def generate(self, rec, strategy="greedy", beam_width=3, max_len=None):
        """Caption for one record; returns (tokens, log_prob)."""
        if not hasattr(self, "core_"):
            raise ConfigError("captioner is not fitted yet")
        limit = self.max_len if max_len is None else max_len
        ctx = self._context(rec)
        if strategy == "greedy":
            idx, lp, _ = greedy_decode(self.core_, ctx, max_len=limit)
        elif strategy == "beam":
            idx, lp, _ = beam_decode(self.core_, ctx, beam_width, max_len=limit)
        else:
            raise ConfigError(f"strategy must be greedy or beam, got {strategy!r}")
        return self.vocab_.decode(idx), lp

    def predict(self, records):
        """Greedy captions as token lists."""
        return [self.generate(r)[0] for r in records]

    def save(self, path):
        meta = {
            "model_kind": "LstmCaptioner",
            "mode": self.mode,
            "hidden_size": self.hidden_size,
            "ctx_dim": self.ctx_dim_,
            "max_len": self.max_len,
            "seed": self.seed,
            "vocab": list(self.vocab_.tokens),
        }
        save_checkpoint(path, {k: p.value for k, p in self.core_.params.items()}, meta)

    @classmethod
    def load(cls, path, embeddings=None):
        tensors, meta = load_checkpoint(path)
        if meta.get("model_kind") != "LstmCaptioner":
            raise DataError(f"checkpoint holds {meta.get('model_kind')}, not a captioner")
        model = cls(mode=meta["mode"], hidden_size=meta["hidden_size"],
                    max_len=meta["max_len"], seed=meta["seed"], embeddings=embeddings)
        tokens = tuple(meta["vocab"])
        model.vocab_ = CaptionVocab(tokens=tokens, index={t: i for i, t in enumerate(tokens)})
        model.ctx_dim_ = meta["ctx_dim"]
        rng = derive_rng(meta["seed"], "caption-init")
        model.core_ = LstmCore(meta["ctx_dim"], len(tokens), meta["hidden_size"], rng)
        for k, p in model.core_.params.items():
            p.value[...] = tensors[k]
        return model
