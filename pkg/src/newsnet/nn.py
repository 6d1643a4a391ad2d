"""Minimal layer kit with hand-written backward passes.

Every operation is a pure function over float64 arrays: ``op(...)`` computes
the forward value and ``op_backward(...)`` maps the upstream gradient to
gradients of the inputs.  Correctness of each backward pass is established
against central finite differences via :func:`grad_check`; the analytic
path and the numeric path share no code.

The optimizer is SGD with momentum and decoupled-from-biases weight decay:

    v <- momentum * v - lr * (g + weight_decay * theta)
    theta <- theta + v

with the step size following a staircase schedule
``base_lr * drop_factor ** floor(iteration / drop_every)``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass
class SgdConfig:
    base_lr: float = 0.05
    drop_factor: float = 0.1
    drop_every: int = 1000
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 64

    def validate(self):
        if self.base_lr <= 0 or self.drop_every <= 0 or self.batch_size <= 0:
            raise ConfigError("base_lr, drop_every and batch_size must be positive")
        if not 0.0 < self.drop_factor <= 1.0:
            raise ConfigError("drop_factor must be in (0, 1]")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be >= 0")
        return self


@dataclass
class Param:
    """A named tensor with its gradient and momentum buffer."""

    value: np.ndarray
    grad: np.ndarray = None
    velocity: np.ndarray = None
    decay: bool = True  # biases opt out of weight decay

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.velocity is None:
            self.velocity = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


def init_uniform(rng, shape, fan_in, fan_out):
    """Glorot-style uniform initialization in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def lr_at(iteration, cfg):
    """Staircase learning rate at a (0-based) iteration index."""
    if iteration < 0:
        raise ConfigError("iteration must be >= 0")
    return cfg.base_lr * cfg.drop_factor ** (iteration // cfg.drop_every)


def sgd_step(params, lr, cfg):
    """One momentum-SGD update over a name->Param mapping, in place."""
    for name, p in params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
        g = p.grad
        if p.decay and cfg.weight_decay:
            g = g + cfg.weight_decay * p.value
        p.velocity *= cfg.momentum
        p.velocity -= lr * g
        p.value += p.velocity


# ---------------------------------------------------------------------------
# layers


def conv_text(x, kernels, bias):
    """Valid 1-d convolution of a (dim, n) input with (k, dim, w) kernels.

    out[k, t] = bias[k] + sum_{r,s} kernels[k, r, s] * x[r, t + s]
    """
    dim, n = x.shape
    k, kdim, w = kernels.shape
    if kdim != dim:
        raise ConfigError(f"kernel height {kdim} does not match input height {dim}")
    if n < w:
        raise ConfigError(f"input has {n} columns, narrower than kernel width {w}")
    windows = np.lib.stride_tricks.sliding_window_view(x, w, axis=1)  # (dim, T, w)
    out = np.tensordot(kernels, windows, axes=([1, 2], [0, 2]))  # (k, T)
    return out + bias[:, None]


def conv_text_backward(x, kernels, grad_out):
    """Gradients of conv_text w.r.t. input, kernels and bias."""
    dim, n = x.shape
    k, _, w = kernels.shape
    t = n - w + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, w, axis=1)
    grad_kernels = np.tensordot(grad_out, windows, axes=([1], [1]))  # (k, dim, w)
    grad_bias = grad_out.sum(axis=1)
    grad_x = np.zeros_like(x)
    for s in range(w):
        grad_x[:, s : s + t] += kernels[:, :, s].T @ grad_out
    return grad_x, grad_kernels, grad_bias


def maxpool_time(x):
    """Global max over time per channel; first index wins ties.

    Returns (values, argmax) with argmax needed by the backward pass.
    """
    idx = np.argmax(x, axis=1)
    return x[np.arange(x.shape[0]), idx], idx


def maxpool_time_backward(argmax, n_cols, grad_out):
    """Route each channel's gradient to its stored argmax column."""
    grad_x = np.zeros((grad_out.shape[0], n_cols), dtype=np.float64)
    grad_x[np.arange(grad_out.shape[0]), argmax] = grad_out
    return grad_x


def fully_connected(weight, bias, x):
    """Affine map weight @ x + bias."""
    if weight.shape[1] != x.shape[0]:
        raise ConfigError(
            f"weight expects input of length {weight.shape[1]}, got {x.shape[0]}"
        )
    return weight @ x + bias


def fully_connected_backward(weight, x, grad_out):
    grad_w = np.outer(grad_out, x)
    grad_b = grad_out.copy()
    grad_x = weight.T @ grad_out
    return grad_w, grad_b, grad_x


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, grad_out):
    """Mask the gradient where the input was <= 0 (subgradient 0 at 0)."""
    return grad_out * (x > 0.0)


def dropout(x, ratio, train, rng=None):
    """Inverted dropout: train-time scaling so eval mode is the identity.

    Returns (output, mask); the mask is reused by the backward pass.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not train or ratio == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= ratio) / (1.0 - ratio)
    return x * mask, mask


def dropout_backward(mask, grad_out):
    if mask is None:
        return grad_out
    return grad_out * mask


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_difference_grad(loss_fn, tensor, eps=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. tensor, entry by entry.

    ``tensor`` is perturbed in place and restored; ``loss_fn`` must be a
    deterministic closure over the current tensor values.
    """
    grad = np.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = loss_fn()
        flat[i] = orig - eps
        f_minus = loss_fn()
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError("non-finite loss during finite differencing")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def max_relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def grad_check(loss_fn, pairs, eps=1e-5):
    """Max relative error between analytic gradients and central differences.

    ``pairs`` is a sequence of (tensor, analytic_grad); the analytic
    gradients must have been computed at the unperturbed point.
    """
    worst = 0.0
    for tensor, analytic in pairs:
        numeric = finite_difference_grad(loss_fn, tensor, eps=eps)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
