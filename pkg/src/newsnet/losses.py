"""Task losses with analytic gradients w.r.t. the head output.

Four losses drive the trunk: multinomial logistic (source detection),
absolute error (popularity), great-circle distance on the unit sphere
(geolocation) and a trace-norm canonical-correlation loss over a batch
(article illustration).  A plain Euclidean-distance loss is also provided
as the geolocation control: it ignores the wrap-around of longitude at
+-pi, which is exactly the failure mode the spherical loss removes.

Each function returns a :class:`LossBundle` carrying the scalar loss and
the gradient with respect to the prediction; gradients are validated
against central finite differences by the test suite and the ``gradcheck``
CLI command.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError

EARTH_RADIUS_KM = 6371.0  # mean Earth radius; pass any other convention explicitly

GCD_GUARD = 1e-12  # drop the gradient when 1 - phi^2 falls below this


@dataclass
class LossBundle:
    loss: float
    grad: np.ndarray


def softmax_xent(logits, label):
    """Multinomial logistic loss; gradient is softmax(z) - onehot(label)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ConfigError("softmax_xent needs a 1-d logit vector of length >= 2")
    if not 0 <= label < z.shape[0]:
        raise DataError(f"class label {label} outside [0, {z.shape[0] - 1}]")
    shifted = z - z.max()
    log_norm = np.log(np.sum(np.exp(shifted)))
    loss = log_norm - shifted[label]
    grad = np.exp(shifted - log_norm)
    grad[label] -= 1.0
    return LossBundle(loss=float(loss), grad=grad)


def l1_loss(z, y):
    """Absolute error with sign gradient (0 at the kink)."""
    diff = float(z) - float(y)
    return LossBundle(loss=abs(diff), grad=np.array([np.sign(diff)]))


def euclidean_loss(z, y, guard=1e-12):
    """Euclidean distance ||z - y|| with unit gradient away from z = y."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    diff = z - y
    dist = float(np.linalg.norm(diff))
    if dist < guard:
        return LossBundle(loss=dist, grad=np.zeros_like(diff))
    return LossBundle(loss=dist, grad=diff / dist)


def _phi(z, y):
    """Spherical law-of-cosines kernel for points (lat, lon) in radians."""
    z1, z2 = float(z[0]), float(z[1])
    y1, y2 = float(y[0]), float(y[1])
    delta = z2 - y2
    return np.sin(y1) * np.sin(z1) + np.cos(y1) * np.cos(z1) * np.cos(delta)


def gcd_km(z, y, radius=EARTH_RADIUS_KM):
    """Great-circle distance in kilometers between two (lat, lon) pairs."""
    phi = np.clip(_phi(z, y), -1.0, 1.0)
    return float(radius * np.arccos(phi))


def gcd_loss(z, y, guard=GCD_GUARD):
    """Great-circle distance in radians with its analytic gradient.

    The gradient carries a 1/sqrt(1 - phi^2) prefactor that blows up at
    coincident and antipodal points; inside the guard region the gradient
    is defined as zero for numerical stability.
    """
    z1, z2 = float(z[0]), float(z[1])
    y1, y2 = float(y[0]), float(y[1])
    delta = z2 - y2
    phi = np.sin(y1) * np.sin(z1) + np.cos(y1) * np.cos(z1) * np.cos(delta)
    phi_c = np.clip(phi, -1.0, 1.0)
    loss = float(np.arccos(phi_c))
    one_minus = 1.0 - phi_c * phi_c
    if one_minus < guard:
        return LossBundle(loss=loss, grad=np.zeros(2))
    prefactor = -1.0 / np.sqrt(one_minus)
    g1 = prefactor * (np.sin(y1) * np.cos(z1) - np.cos(y1) * np.sin(z1) * np.cos(delta))
    g2 = prefactor * (-np.cos(y1) * np.cos(z1) * np.sin(delta))
    return LossBundle(loss=loss, grad=np.array([g1, g2]))


# ---------------------------------------------------------------------------
# trace-norm CCA loss


def _inv_sqrt_psd(mat, what):
    """Inverse square root of a symmetric PSD matrix via eigendecomposition."""
    eigval, eigvec = np.linalg.eigh(mat)
    if eigval[0] <= 0.0:
        raise NumericalError(
            f"{what} covariance has non-positive eigenvalue {eigval[0]:.3e} "
            "after regularization"
        )
    return (eigvec * (1.0 / np.sqrt(eigval))) @ eigvec.T


def _fix_svd_signs(u, vt):
    """Make the largest-|.| entry of each left singular vector positive."""
    lead = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[lead, np.arange(u.shape[1])])
    signs[signs == 0.0] = 1.0
    return u * signs, vt * signs[:, None]


def cca_loss(z_batch, y_batch, reg_eps=1e-4):
    """Negative total canonical correlation of a paired (d, m) batch.

    The loss is minus the trace norm of the coherence matrix
    Gamma = Szz^{-1/2} Szy Syy^{-1/2} built from row-centered batches with
    1/(m-1) covariances ridged by ``reg_eps * I``; the returned gradient is
    with respect to ``z_batch`` and covers all d correlation components.
    """
    z = np.asarray(z_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if z.ndim != 2 or y.ndim != 2 or z.shape != y.shape:
        raise ConfigError(f"batch shapes {z.shape} and {y.shape} must match (d, m)")
    d, m = z.shape
    if m < 2:
        raise DataError("CCA loss needs a batch of at least 2 samples")
    if reg_eps <= 0:
        raise ConfigError("reg_eps must be positive")

    z_bar = z - z.mean(axis=1, keepdims=True)
    y_bar = y - y.mean(axis=1, keepdims=True)
    denom = m - 1.0
    sigma_zz = (z_bar @ z_bar.T) / denom + reg_eps * np.eye(d)
    sigma_yy = (y_bar @ y_bar.T) / denom + reg_eps * np.eye(d)
    sigma_zy = (z_bar @ y_bar.T) / denom

    zz_isqrt = _inv_sqrt_psd(sigma_zz, "text-side")
    yy_isqrt = _inv_sqrt_psd(sigma_yy, "image-side")
    gamma = zz_isqrt @ sigma_zy @ yy_isqrt
    u, sing, vt = np.linalg.svd(gamma)
    u, vt = _fix_svd_signs(u, vt)
    loss = -float(np.sum(sing))

    nabla_zz = -0.5 * zz_isqrt @ (u * sing) @ u.T @ zz_isqrt
    nabla_zy = zz_isqrt @ u @ vt @ yy_isqrt
    grad = -(2.0 * nabla_zz @ z_bar + nabla_zy @ y_bar) / denom
    return LossBundle(loss=loss, grad=grad)
