"""Input validation helpers used across the package.

Small, estimator-friendly checks in the spirit of sklearn's
``check_array``: every public entry point funnels its array inputs
through these so failures surface as readable ``ValueError`` messages
instead of downstream shape errors.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name="array", ndim=None, shape=None, allow_empty=True):
    """Coerce to a C-contiguous float64 array and check finiteness/shape."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have ndim={ndim}, got {arr.ndim}")
    if shape is not None:
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    return np.ascontiguousarray(arr)


def check_square(m, name="matrix"):
    m = as_float_array(m, name, ndim=2)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got {m.shape}")
    return m


def check_symmetric(m, name="matrix", tol=1e-10):
    m = check_square(m, name)
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > tol * scale:
        raise ValueError(f"{name} is not symmetric within {tol:g} relative")
    return m


def check_positive(value, name="value", strict=True):
    v = float(value)
    if not np.isfinite(v):
        raise ValueError(f"{name} must be finite, got {v}")
    if strict and v <= 0.0:
        raise ValueError(f"{name} must be > 0, got {v}")
    if not strict and v < 0.0:
        raise ValueError(f"{name} must be >= 0, got {v}")
    return v


def symmetrize(p):
    """Return the symmetric part (P + P^T)/2."""
    return 0.5 * (p + p.T)


def min_eig_ratio(p):
    """Smallest eigenvalue of a symmetric matrix relative to its trace.

    Used for covariance health checks: PSD within floating point noise
    means ``min_eig_ratio(P) >= -1e-10``.
    """
    tr = float(np.trace(p))
    if tr <= 0.0:
        return float(np.linalg.eigvalsh(symmetrize(p)).min())
    return float(np.linalg.eigvalsh(symmetrize(p)).min() / tr)
