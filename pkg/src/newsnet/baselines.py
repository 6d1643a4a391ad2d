"""Linear SVM / SVR baselines trained in the primal.

These exist for comparative tables and sanity checks, not to match any
particular solver's optima.  Training is deterministic subgradient descent
on the regularized objective with a backtracking step size, so the
monitored objective never increases.  Inputs are (n_samples, n_features)
arrays, scikit-learn style.
"""

import numpy as np
from sklearn.base import BaseEstimator

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError
from .validation import as_float_array, derive_rng, derive_seed


def _descend(w, b, grad_fn, obj_fn, steps, lr0):
    """Subgradient descent that only accepts non-increasing steps.

    Returns the final (w, b) and the per-step objective path (including
    the initial value).  Stops early once even tiny steps fail to keep the
    objective from rising.
    """
    j = obj_fn(w, b)
    path = [j]
    lr = lr0
    for _ in range(steps):
        gw, gb = grad_fn(w, b)
        trial = lr
        accepted = False
        for _ in range(40):
            w2 = w - trial * gw
            b2 = b - trial * gb
            j2 = obj_fn(w2, b2)
            if j2 <= j:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break
        w, b, j = w2, b2, j2
        lr = trial * 2.0
        path.append(j)
    return w, b, path


def _epoch_means(path, steps_per_epoch):
    if len(path) <= 1:
        return [path[0]] if path else []
    steps = path[1:]
    return [
        float(np.mean(steps[i : i + steps_per_epoch]))
        for i in range(0, len(steps), steps_per_epoch)
    ]


class LinearSvm(BaseEstimator):
    """One-vs-rest linear SVM on the objective lam/2 ||w||^2 + mean hinge."""

    def __init__(self, lam=1e-4, epochs=20, steps_per_epoch=10, lr=1.0, seed=0):
        self.lam = lam
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        X = as_float_array(X, "X", ndim=2)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{X.shape[0]} rows of X but {y.shape[0]} labels")
        self.classes_ = np.unique(y)
        if self.classes_.size < 2:
            raise DataError("linear SVM needs at least two classes in y")
        n, d = X.shape
        self.weights_ = np.zeros((self.classes_.size, d))
        self.bias_ = np.zeros(self.classes_.size)
        self.objective_path_ = []
        total = self.epochs * self.steps_per_epoch
        for c, cls in enumerate(self.classes_):
            s = np.where(y == cls, 1.0, -1.0)
            rng = derive_rng(self.seed, f"svm-init-{c}")
            w0 = rng.uniform(-0.01, 0.01, size=d)

            def obj(w, b, s=s):
                margins = s * (X @ w + b)
                return 0.5 * self.lam * float(w @ w) + float(
                    np.mean(np.maximum(0.0, 1.0 - margins))
                )

            def grad(w, b, s=s):
                margins = s * (X @ w + b)
                viol = margins < 1.0
                gw = self.lam * w - (s[viol] @ X[viol]) / n
                gb = -float(np.sum(s[viol])) / n
                return gw, gb

            w, b, path = _descend(w0, 0.0, grad, obj, total, self.lr)
            self.weights_[c] = w
            self.bias_[c] = b
            self.objective_path_.append(_epoch_means(path, self.steps_per_epoch))
        return self

    def decision_function(self, X):
        X = as_float_array(X, "X", ndim=2)
        return X @ self.weights_.T + self.bias_

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def save(self, path, extra_meta=None):
        meta = {"model_kind": "LinearSvm", "lam": self.lam, "epochs": self.epochs,
                "seed": self.seed}
        if extra_meta:
            meta.update(extra_meta)
        tensors = {
            "weights": self.weights_,
            "bias": self.bias_,
            "classes": np.asarray(self.classes_, dtype=np.float64),
        }
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("model_kind") != "LinearSvm":
            raise DataError(f"checkpoint holds {meta.get('model_kind')}, not LinearSvm")
        model = cls(lam=meta["lam"], epochs=meta["epochs"], seed=meta["seed"])
        model.weights_ = tensors["weights"]
        model.bias_ = tensors["bias"]
        model.classes_ = tensors["classes"].astype(np.int64)
        return model


class LinearSvr(BaseEstimator):
    """Linear regression under the epsilon-insensitive (tube) loss."""

    def __init__(self, eps=0.1, lam=1e-4, epochs=20, steps_per_epoch=10, lr=1.0,
                 seed=0):
        self.eps = eps
        self.lam = lam
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.lr = lr
        self.seed = seed

    def fit(self, X, y):
        X = as_float_array(X, "X", ndim=2)
        y = as_float_array(y, "y", ndim=1)
        if y.shape[0] != X.shape[0]:
            raise DataError(f"{X.shape[0]} rows of X but {y.shape[0]} targets")
        if X.shape[0] < 2:
            raise DataError("SVR needs at least two samples")
        n, d = X.shape
        rng = derive_rng(self.seed, "svr-init")
        w0 = rng.uniform(-0.01, 0.01, size=d)

        def obj(w, b):
            resid = X @ w + b - y
            return 0.5 * self.lam * float(w @ w) + float(
                np.mean(np.maximum(0.0, np.abs(resid) - self.eps))
            )

        def grad(w, b):
            resid = X @ w + b - y
            sgn = np.sign(resid) * (np.abs(resid) > self.eps)
            gw = self.lam * w + (sgn @ X) / n
            gb = float(np.sum(sgn)) / n
            return gw, gb

        total = self.epochs * self.steps_per_epoch
        w, b, path = _descend(w0, 0.0, grad, obj, total, self.lr)
        self.weight_ = w
        self.bias_ = float(b)
        self.objective_path_ = _epoch_means(path, self.steps_per_epoch)
        return self

    def predict(self, X):
        X = as_float_array(X, "X", ndim=2)
        return X @ self.weight_ + self.bias_

    def save(self, path, extra_meta=None):
        meta = {"model_kind": "LinearSvr", "eps": self.eps, "lam": self.lam,
                "epochs": self.epochs, "seed": self.seed}
        if extra_meta:
            meta.update(extra_meta)
        tensors = {"weight": self.weight_, "bias": np.array([self.bias_])}
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("model_kind") != "LinearSvr":
            raise DataError(f"checkpoint holds {meta.get('model_kind')}, not LinearSvr")
        model = cls(eps=meta["eps"], lam=meta["lam"], epochs=meta["epochs"],
                    seed=meta["seed"])
        model.weight_ = tensors["weight"]
        model.bias_ = float(tensors["bias"][0])
        return model


class GeoSvr(BaseEstimator):
    """Latitude and longitude fit by two independent tube regressions."""

    def __init__(self, eps=0.01, lam=1e-4, epochs=20, steps_per_epoch=10, lr=1.0,
                 seed=0):
        self.eps = eps
        self.lam = lam
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.lr = lr
        self.seed = seed

    def fit(self, X, Y):
        Y = as_float_array(Y, "Y", ndim=2)
        if Y.shape[1] != 2:
            raise DataError(f"geolocation targets must be (n, 2), got {Y.shape}")
        self.models_ = []
        for j in range(2):
            # lat and lon regressors must not share an init stream
            svr = LinearSvr(eps=self.eps, lam=self.lam, epochs=self.epochs,
                            steps_per_epoch=self.steps_per_epoch, lr=self.lr,
                            seed=derive_seed(self.seed, f"geo-svr-{j}"))
            self.models_.append(svr.fit(X, Y[:, j]))
        return self

    def predict(self, X):
        return np.stack([m.predict(X) for m in self.models_], axis=1)

    def save(self, path, extra_meta=None):
        meta = {"model_kind": "GeoSvr", "eps": self.eps, "lam": self.lam,
                "epochs": self.epochs, "seed": self.seed}
        if extra_meta:
            meta.update(extra_meta)
        tensors = {}
        for j, m in enumerate(self.models_):
            tensors[f"weight{j}"] = m.weight_
            tensors[f"bias{j}"] = np.array([m.bias_])
        save_checkpoint(path, tensors, meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_checkpoint(path)
        if meta.get("model_kind") != "GeoSvr":
            raise DataError(f"checkpoint holds {meta.get('model_kind')}, not GeoSvr")
        model = cls(eps=meta["eps"], lam=meta["lam"], epochs=meta["epochs"],
                    seed=meta["seed"])
        model.models_ = []
        for j in range(2):
            svr = LinearSvr(eps=meta["eps"], lam=meta["lam"], epochs=meta["epochs"])
            svr.weight_ = tensors[f"weight{j}"]
            svr.bias_ = float(tensors[f"bias{j}"][0])
            model.models_.append(svr)
        return model
