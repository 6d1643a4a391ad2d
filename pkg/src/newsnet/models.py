"""Shared convolutional text trunk, task heads and training regimes.

The trunk is fixed by construction: 256 convolution kernels of width 5
spanning the full embedding dimension, global max-pooling over time, a
256->64 linear layer, ReLU and light dropout.  Each task attaches a final
linear head (FCo) mapping the 64 trunk features to its label dimension and
a task-specific loss:

    source        -> multinomial logistic over the source classes
    popularity    -> absolute error on the comment count
    geolocation   -> great-circle distance (or Euclidean, as a control)
    illustration  -> batch trace-norm correlation against image features

Estimators follow scikit-learn conventions (`fit`, `predict`,
`get_params`); inputs are lists of :class:`~newsnet.corpus.ArticleRecord`.
Training is plain minibatch SGD with momentum and a staircase learning
rate, deterministic given the seed.
"""

import time

import numpy as np
from sklearn.base import BaseEstimator

from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError
from .losses import cca_loss, euclidean_loss, gcd_loss, l1_loss, softmax_xent
from .text import article_matrix
from .validation import derive_rng

CONV_CHANNELS = 256
CONV_WIDTH = 5
TRUNK_FEATURES = 64

TASKS = ("source", "popularity", "geolocation", "illustration")


def sliding_windows(matrix):
    """Unfold a (dim, n) article matrix into (n - w + 1, dim * w) rows."""
    view = np.lib.stride_tricks.sliding_window_view(matrix, CONV_WIDTH, axis=1)
    t = matrix.shape[1] - CONV_WIDTH + 1
    return np.ascontiguousarray(view.transpose(1, 0, 2).reshape(t, -1))


class SharedTextCnn:
    """Parameters and batched forward/backward of the shared trunk."""

    def __init__(self, embed_dim, rng, dropout_ratio=0.1):
        self.embed_dim = embed_dim
        self.dropout_ratio = dropout_ratio
        fan_conv = embed_dim * CONV_WIDTH
        self.params = {
            "conv_w": nn.Param(
                nn.init_uniform(rng, (CONV_CHANNELS, embed_dim, CONV_WIDTH), fan_conv, CONV_CHANNELS)
            ),
            "conv_b": nn.Param(np.zeros(CONV_CHANNELS), decay=False),
            "fc_w": nn.Param(
                nn.init_uniform(rng, (TRUNK_FEATURES, CONV_CHANNELS), CONV_CHANNELS, TRUNK_FEATURES)
            ),
            "fc_b": nn.Param(np.zeros(TRUNK_FEATURES), decay=False),
        }

    def forward_batch(self, windows, train=False, rng=None):
        """Run a (m, T, dim*w) stack through conv/pool/fc/relu/dropout.

        Returns the (m, 64) feature block and the cache for backward.
        """
        kflat = self.params["conv_w"].value.reshape(CONV_CHANNELS, -1)
        conv = windows @ kflat.T + self.params["conv_b"].value  # (m, T, 256)
        argmax = conv.argmax(axis=1)  # (m, 256), first index wins ties
        pooled = np.take_along_axis(conv, argmax[:, None, :], axis=1)[:, 0, :]
        pre = pooled @ self.params["fc_w"].value.T + self.params["fc_b"].value
        act = np.maximum(pre, 0.0)
        if train and self.dropout_ratio > 0.0:
            mask = (rng.random(act.shape) >= self.dropout_ratio) / (1.0 - self.dropout_ratio)
            out = act * mask
        else:
            mask = None
            out = act
        cache = (windows, argmax, pooled, pre, mask)
        return out, cache

    def backward_batch(self, cache, grad_out):
        """Accumulate parameter gradients from (m, 64) feature gradients."""
        windows, argmax, pooled, pre, mask = cache
        if mask is not None:
            grad_out = grad_out * mask
        grad_pre = grad_out * (pre > 0.0)
        self.params["fc_w"].grad += grad_pre.T @ pooled
        self.params["fc_b"].grad += grad_pre.sum(axis=0)
        grad_pooled = grad_pre @ self.params["fc_w"].value  # (m, 256)
        m, t, _ = windows.shape
        grad_conv = np.zeros((m, t, CONV_CHANNELS))
        np.put_along_axis(grad_conv, argmax[:, None, :], grad_pooled[:, None, :], axis=1)
        flat_g = grad_conv.reshape(m * t, CONV_CHANNELS)
        flat_w = windows.reshape(m * t, -1)
        self.params["conv_w"].grad += (flat_g.T @ flat_w).reshape(
            self.params["conv_w"].value.shape
        )
        self.params["conv_b"].grad += flat_g.sum(axis=0)

    def clone_params(self):
        return {k: p.value.copy() for k, p in self.params.items()}


class TaskHead:
    """Final linear layer mapping trunk features to the task label space."""

    def __init__(self, kind, out_dim, rng):
        if kind not in TASKS:
            raise ConfigError(f"unknown task {kind!r}")
        self.kind = kind
        self.out_dim = out_dim
        self.params = {
            "fco_w": nn.Param(
                nn.init_uniform(rng, (out_dim, TRUNK_FEATURES), TRUNK_FEATURES, out_dim)
            ),
            "fco_b": nn.Param(np.zeros(out_dim), decay=False),
        }

    def forward(self, feats):
        return feats @ self.params["fco_w"].value.T + self.params["fco_b"].value

    def backward(self, feats, grad_z):
        self.params["fco_w"].grad += grad_z.T @ feats
        self.params["fco_b"].grad += grad_z.sum(axis=0)
        return grad_z @ self.params["fco_w"].value


def param_count(trunk, heads=()):
    """Exact number of learnable scalars in trunk plus heads."""
    total = sum(p.value.size for p in trunk.params.values())
    for head in heads:
        total += sum(p.value.size for p in head.params.values())
    return total


def forward_article(trunk, head, article_mat, train=False, rng=None):
    """Head output z for one zero-padded article matrix."""
    windows = sliding_windows(article_mat.values)[None, :, :]
    feats, _ = trunk.forward_batch(windows, train=train, rng=rng)
    return head.forward(feats)[0]


# ---------------------------------------------------------------------------
# labels


def _has_label(task, rec):
    if task == "geolocation":
        return len(rec.geo) > 0
    if task == "illustration":
        return rec.image_feature is not None
    return True


def _label_of(task, rec):
    if task == "source":
        return rec.source
    if task == "popularity":
        return float(rec.popularity)
    if task == "geolocation":
        return np.asarray(rec.geo[0], dtype=np.float64)  # first location trains
    return np.asarray(rec.image_feature, dtype=np.float64)


def _batch_loss(task, z, labels, geo_loss="gcd", reg_eps=1e-4):
    """Mean loss over the rows of z plus the gradient w.r.t. z."""
    m = z.shape[0]
    grad = np.zeros_like(z)
    if task == "illustration":
        bundle = cca_loss(z.T, np.stack(labels).T, reg_eps=reg_eps)
        return bundle.loss, bundle.grad.T
    total = 0.0
    for i in range(m):
        if task == "source":
            b = softmax_xent(z[i], labels[i])
        elif task == "popularity":
            b = l1_loss(z[i, 0], labels[i])
        elif geo_loss == "gcd":
            b = gcd_loss(z[i], labels[i])
        else:
            b = euclidean_loss(z[i], labels[i])
        total += b.loss
        grad[i] = b.grad
    return total / m, grad / m


class _Dataset:
    """Precomputed sliding windows and per-task labels for a record list."""

    def __init__(self, records, embeddings, n_cols, tasks):
        self.records = records
        self.windows = [
            sliding_windows(article_matrix(r, embeddings, n_cols).values)
            for r in records
        ]
        self.labels = {}
        self.labeled_rows = {}
        for task in tasks:
            rows = [i for i, r in enumerate(records) if _has_label(task, r)]
            self.labeled_rows[task] = np.array(rows, dtype=np.intp)
            self.labels[task] = [
                _label_of(task, records[i]) if _has_label(task, records[i]) else None
                for i in range(len(records))
            ]

    def batch_windows(self, idx):
        return np.stack([self.windows[i] for i in idx])


def _check_coverage(task, n_labeled, n_total, min_fraction):
    if n_total == 0 or n_labeled / n_total < min_fraction:
        raise DataError(
            f"task {task!r} has labels on {n_labeled}/{n_total} records, below the "
            f"required fraction {min_fraction}"
        )


def _train_network(trunk, heads, dataset, cfg, iterations, seed, head_lr_factor,
                   geo_loss, reg_eps):
    """Joint minibatch loop shared by single-task and multitask training."""
    rng_batch = derive_rng(seed, "batch-shuffle")
    rng_drop = derive_rng(seed, "dropout")
    n = len(dataset.records)
    order = rng_batch.permutation(n)
    cursor = 0
    losses = {task: [] for task in heads}
    lrs = []
    start = time.perf_counter()
    for it in range(iterations):
        lr = nn.lr_at(it, cfg)
        lrs.append(lr)
        take = min(cfg.batch_size, n)
        if cursor + take > n:
            order = rng_batch.permutation(n)
            cursor = 0
        batch = order[cursor : cursor + take]
        cursor += take

        windows = dataset.batch_windows(batch)
        for p in trunk.params.values():
            p.zero_grad()
        feats, cache = trunk.forward_batch(windows, train=True, rng=rng_drop)
        grad_feats = np.zeros_like(feats)
        for task, head in heads.items():
            for p in head.params.values():
                p.zero_grad()
            rows = [j for j, i in enumerate(batch) if _has_label(task, dataset.records[i])]
            min_rows = 2 if task == "illustration" else 1
            if len(rows) < min_rows:
                losses[task].append(float("nan"))
                continue
            labels = [dataset.labels[task][batch[j]] for j in rows]
            z = head.forward(feats[rows])
            loss, grad_z = _batch_loss(task, z, labels, geo_loss=geo_loss, reg_eps=reg_eps)
            if not np.isfinite(loss):
                raise DataError(f"non-finite {task} loss at iteration {it}")
            losses[task].append(loss)
            grad_feats[rows] += head.backward(feats[rows], grad_z)
        trunk.backward_batch(cache, grad_feats)
        nn.sgd_step(trunk.params, lr, cfg)
        for head in heads.values():
            nn.sgd_step(head.params, lr * head_lr_factor, cfg)
    elapsed = time.perf_counter() - start
    return {"losses": losses, "lr": lrs, "seconds": elapsed}


class _TextCnnBase(BaseEstimator):
    """Construction and inference shared by the CNN estimators."""

    def _sgd_config(self):
        return nn.SgdConfig(
            base_lr=self.base_lr,
            drop_factor=self.drop_factor,
            drop_every=self.drop_every,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
        ).validate()

    def _head_dim(self, task, records):
        if task == "source":
            if self.num_classes is not None:
                return int(self.num_classes)
            return max(r.source for r in records) + 1
        if task == "popularity":
            return 1
        if task == "geolocation":
            return 2
        if self.label_dim is not None:
            return int(self.label_dim)
        for r in records:
            if r.image_feature is not None:
                return int(r.image_feature.shape[0])
        raise DataError("cannot infer image-feature dimension: no record carries one")

    def _resolve_n_cols(self, records):
        if self.n_cols is not None:
            return max(int(self.n_cols), CONV_WIDTH)
        return max(CONV_WIDTH, max(len(r.tokens) for r in records))

    def _active_tasks(self):
        raise NotImplementedError

    def _forward_records(self, records, task):
        if not hasattr(self, "trunk_"):
            raise ConfigError("estimator is not fitted yet")
        out = np.zeros((len(records), self.heads_[task].out_dim))
        for i, rec in enumerate(records):
            mat = article_matrix(rec, self.embeddings, self.n_cols_)
            out[i] = forward_article(self.trunk_, self.heads_[task], mat)
        return out

    def _predict_task(self, records, task):
        z = self._forward_records(records, task)
        if task == "source":
            return z.argmax(axis=1)
        if task == "popularity":
            return z[:, 0]
        return z

    def _fit_impl(self, records, tasks):
        if self.embeddings is None:
            raise ConfigError("an EmbeddingTable must be supplied via `embeddings`")
        if not records:
            raise DataError("cannot train on an empty record list")
        cfg = self._sgd_config()
        self.n_cols_ = self._resolve_n_cols(records)

        for task in tasks:
            n_labeled = sum(1 for r in records if _has_label(task, r))
            _check_coverage(task, n_labeled, len(records), self.min_labeled_fraction)
        pool = [r for r in records if any(_has_label(t, r) for t in tasks)]

        if not hasattr(self, "trunk_"):
            rng = derive_rng(self.seed, "trunk-init")
            self.trunk_ = SharedTextCnn(
                self.embeddings.dim, rng, dropout_ratio=self.dropout_ratio
            )
        if not hasattr(self, "heads_"):
            self.heads_ = {}
        for task in tasks:
            if task not in self.heads_:
                rng = derive_rng(self.seed, f"head-init-{task}")
                self.heads_[task] = TaskHead(task, self._head_dim(task, pool), rng)

        dataset = _Dataset(pool, self.embeddings, self.n_cols_, tasks)
        stats = _train_network(
            self.trunk_, {t: self.heads_[t] for t in tasks}, dataset, cfg,
            self.iterations, self.seed, self.head_lr_factor, self.geo_loss,
            self.reg_eps,
        )
        self.report_ = {
            "tasks": list(tasks),
            "iterations": self.iterations,
            "seed": self.seed,
            "n_train_records": len(pool),
            "n_cols": self.n_cols_,
            "losses": stats["losses"],
            "lr": stats["lr"],
            "timing": {"train_seconds": stats["seconds"]},
            "config": {
                k: v for k, v in self.get_params().items() if k != "embeddings"
            },
        }
        return self

    # -- persistence -------------------------------------------------------

    def _tensor_dict(self):
        tensors = {f"trunk.{k}": p.value for k, p in self.trunk_.params.items()}
        for task, head in self.heads_.items():
            for k, p in head.params.items():
                tensors[f"head.{task}.{k}"] = p.value
        return tensors

    def save(self, path, extra_meta=None):
        meta = {
            "model_kind": type(self).__name__,
            "tasks": sorted(self.heads_),
            "head_dims": {t: h.out_dim for t, h in sorted(self.heads_.items())},
            "embed_dim": self.trunk_.embed_dim,
            "n_cols": self.n_cols_,
            "dropout_ratio": self.dropout_ratio,
            "geo_loss": self.geo_loss,
            "reg_eps": self.reg_eps,
            "seed": self.seed,
        }
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, self._tensor_dict(), meta)

    def _restore(self, tensors, meta):
        rng = derive_rng(meta["seed"], "trunk-init")
        self.trunk_ = SharedTextCnn(
            meta["embed_dim"], rng, dropout_ratio=meta["dropout_ratio"]
        )
        for k, p in self.trunk_.params.items():
            p.value[...] = tensors[f"trunk.{k}"]
        self.heads_ = {}
        for task in meta["tasks"]:
            head = TaskHead(task, meta["head_dims"][task], derive_rng(meta["seed"], f"head-init-{task}"))
            for k, p in head.params.items():
                p.value[...] = tensors[f"head.{task}.{k}"]
            self.heads_[task] = head
        self.n_cols_ = meta["n_cols"]


class TextCnn(_TextCnnBase):
    """Single-task convolutional text model.

    Parameters mirror the training defaults: base_lr 0.05 dropped by 0.1
    every 1000 iterations, momentum 0.9, weight decay 5e-4, batch size 64,
    dropout 0.1.  ``n_cols`` (the padded article width) defaults to the
    longest training article.
    """

    def __init__(self, task="source", embeddings=None, n_cols=None, iterations=200,
                 seed=0, base_lr=0.05, drop_factor=0.1, drop_every=1000,
                 momentum=0.9, weight_decay=0.0005, batch_size=64,
                 dropout_ratio=0.1, reg_eps=1e-4, geo_loss="gcd",
                 head_lr_factor=1.0, num_classes=None, label_dim=None,
                 min_labeled_fraction=0.5):
        self.task = task
        self.embeddings = embeddings
        self.n_cols = n_cols
        self.iterations = iterations
        self.seed = seed
        self.base_lr = base_lr
        self.drop_factor = drop_factor
        self.drop_every = drop_every
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.dropout_ratio = dropout_ratio
        self.reg_eps = reg_eps
        self.geo_loss = geo_loss
        self.head_lr_factor = head_lr_factor
        self.num_classes = num_classes
        self.label_dim = label_dim
        self.min_labeled_fraction = min_labeled_fraction

    def _active_tasks(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.geo_loss not in ("gcd", "euclidean"):
            raise ConfigError(f"geo_loss must be 'gcd' or 'euclidean', got {self.geo_loss!r}")
        return (self.task,)

    def fit(self, records):
        return self._fit_impl(records, self._active_tasks())

    def decision_values(self, records):
        """Raw head outputs z, shape (n_records, d_task), in eval mode."""
        return self._forward_records(records, self.task)

    def predict(self, records):
        """Class indices, scalar counts or (lat, lon) pairs, per task."""
        return self._predict_task(records, self.task)

    def transfer(self, task, seed, num_classes=None, label_dim=None, force=False):
        """New estimator with this trunk (bit-exact) and a fresh head.

        The returned model finetunes with a 0.1 head learning-rate factor;
        transferring onto the already-trained task requires ``force``.
        """
        if not hasattr(self, "trunk_"):
            raise ConfigError("transfer requires a fitted source model")
        if task in self.heads_ and not force:
            raise ConfigError(
                f"model already has a {task!r} head; pass force=True to rebuild it"
            )
        params = {k: v for k, v in self.get_params().items()}
        params.update(task=task, seed=seed, num_classes=num_classes,
                      label_dim=label_dim, head_lr_factor=0.1)
        new = TextCnn(**params)
        rng = derive_rng(seed, "trunk-init")
        new.trunk_ = SharedTextCnn(self.trunk_.embed_dim, rng,
                                   dropout_ratio=self.dropout_ratio)
        for k, p in new.trunk_.params.items():
            p.value[...] = self.trunk_.params[k].value
        head_rng = derive_rng(seed, f"head-init-{task}")
        dim = {"source": num_classes, "popularity": 1, "geolocation": 2,
               "illustration": label_dim}[task]
        if dim is None and task == "source":
            raise ConfigError("transfer to 'source' needs num_classes")
        if dim is None and task == "illustration":
            raise ConfigError("transfer to 'illustration' needs label_dim")
        new.heads_ = {task: TaskHead(task, int(dim), head_rng)}
        new.n_cols_ = self.n_cols_
        return new

    @classmethod
    def load(cls, path, embeddings=None):
        tensors, meta = load_checkpoint(path)
        if meta.get("model_kind") not in ("TextCnn", "MultitaskTextCnn"):
            raise DataError(f"checkpoint holds {meta.get('model_kind')}, not a text CNN")
        model = cls(task=meta["tasks"][0], seed=meta["seed"], dropout_ratio=meta["dropout_ratio"],
                    geo_loss=meta["geo_loss"], reg_eps=meta["reg_eps"],
                    embeddings=embeddings)
        model._restore(tensors, meta)
        return model


class MultitaskTextCnn(_TextCnnBase):
    """Jointly trained trunk with one head per task.

    The trunk receives the sum of all task gradients per batch; each head
    updates with ``lr * head_lr_factor`` (0.1 by default).  Records missing
    a task's label are skipped by that head only.
    """

    def __init__(self, tasks=("source", "geolocation"), embeddings=None,
                 n_cols=None, iterations=200, seed=0, base_lr=0.05,
                 drop_factor=0.1, drop_every=1000, momentum=0.9,
                 weight_decay=0.0005, batch_size=64, dropout_ratio=0.1,
                 reg_eps=1e-4, geo_loss="gcd", head_lr_factor=0.1,
                 num_classes=None, label_dim=None, min_labeled_fraction=0.5):
        self.tasks = tasks
        self.embeddings = embeddings
        self.n_cols = n_cols
        self.iterations = iterations
        self.seed = seed
        self.base_lr = base_lr
        self.drop_factor = drop_factor
        self.drop_every = drop_every
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.dropout_ratio = dropout_ratio
        self.reg_eps = reg_eps
        self.geo_loss = geo_loss
        self.head_lr_factor = head_lr_factor
        self.num_classes = num_classes
        self.label_dim = label_dim
        self.min_labeled_fraction = min_labeled_fraction

    def _active_tasks(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise ConfigError("tasks must name at least one task")
        for t in tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}; expected one of {TASKS}")
        if len(set(tasks)) != len(tasks):
            raise ConfigError("tasks contains duplicates")
        return tasks

    def fit(self, records):
        return self._fit_impl(records, self._active_tasks())

    def decision_values(self, records, task):
        return self._forward_records(records, task)

    def predict(self, records, task):
        return self._predict_task(records, task)

    @classmethod
    def load(cls, path, embeddings=None):
        tensors, meta = load_checkpoint(path)
        model = cls(tasks=tuple(meta["tasks"]), seed=meta["seed"],
                    dropout_ratio=meta["dropout_ratio"], geo_loss=meta["geo_loss"],
                    reg_eps=meta["reg_eps"], embeddings=embeddings)
        model._restore(tensors, meta)
        return model
