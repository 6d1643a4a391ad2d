"""Input validation helpers and the labeled-seed derivation scheme.

All randomness in the package flows from a single user-facing seed.
Subsystems derive their own streams with :func:`derive_rng` so that adding
a new consumer never perturbs the draws of an existing one.
"""

import hashlib

import numpy as np

from .errors import DataError

HALF_PI = np.pi / 2.0


def as_float_array(x, name="array", ndim=None):
    """Coerce to a float64 ndarray, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_shape(arr, shape, name="array"):
    if arr.shape != tuple(shape):
        raise DataError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_latlon(lat, lon, context=""):
    """Validate a (latitude, longitude) pair in radians."""
    where = f" ({context})" if context else ""
    if not (np.isfinite(lat) and np.isfinite(lon)):
        raise DataError(f"non-finite geolocation{where}")
    if not -HALF_PI <= lat <= HALF_PI:
        raise DataError(f"latitude {lat!r} outside [-pi/2, pi/2]{where}")
    if not -np.pi <= lon <= np.pi:
        raise DataError(f"longitude {lon!r} outside [-pi, pi]{where}")


def derive_seed(seed, label):
    """Map (seed, label) to a stable 32-bit stream seed via SHA-256."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_rng(seed, label):
    """Seeded generator for the subsystem named by ``label``."""
    return np.random.default_rng(derive_seed(seed, label))
