"""Vector primitives, normalization with its gradient, and a
finite-difference oracle.

Everything works in float64. Functions accept a single vector of shape
``(d,)``; the ``*_rows`` variants operate row-wise on ``(n, d)`` arrays and
are what the model and losses use internally.
"""

import numpy as np

from .errors import DegenerateNorm, DimMismatch, NonFiniteValue

NORM_EPS = 1e-12


def as_vector(v, name="v"):
    """Validate and return ``v`` as a finite 1-d float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DimMismatch(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return arr


def l2_normalize(v):
    """Scale ``v`` to unit L2 length.

    Returns:
        (unit, norm): the unit vector and the original norm.

    Raises:
        DegenerateNorm: if ``||v|| <= 1e-12``.
    """
    v = as_vector(v)
    norm = float(np.sqrt(np.dot(v, v)))
    if norm <= NORM_EPS:
        raise DegenerateNorm(f"cannot normalize vector with norm {norm:g}")
    return v / norm, norm


def l2_normalize_backward(v, upstream_grad):
    """Pull ``upstream_grad`` back through ``v -> v / ||v||``.

    Computes ``(I / ||v|| - v v^T / ||v||^3) @ upstream_grad``.
    """
    v = as_vector(v)
    g = as_vector(upstream_grad, "upstream_grad")
    if g.shape != v.shape:
        raise DimMismatch(f"gradient shape {g.shape} does not match vector {v.shape}")
    norm = float(np.sqrt(np.dot(v, v)))
    if norm <= NORM_EPS:
        raise DegenerateNorm(f"cannot normalize vector with norm {norm:g}")
    return g / norm - v * (np.dot(v, g) / norm**3)


def normalize_rows(X):
    """Row-wise L2 normalization of a 2-d array; returns ``(units, norms)``."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmin(norms))
        raise DegenerateNorm(f"row {bad} has norm {norms[bad]:g}")
    return X / norms[:, None], norms


def normalize_rows_backward(X, norms, upstream):
    """Row-wise counterpart of :func:`l2_normalize_backward`.

    ``norms`` must be the second return value of :func:`normalize_rows` on ``X``.
    """
    proj = np.einsum("ij,ij->i", X, upstream)
    return upstream / norms[:, None] - X * (proj / norms**3)[:, None]


def cosine_similarity(a, b):
    """Dot product of two unit vectors, clamped to ``[-1, 1]``."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def numerical_gradient(f, point, step=1e-4):
    """Central-difference gradient of the scalar function ``f`` at ``point``.

    ``point`` may have any shape; the result has the same shape.
    """
    x = np.array(point, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x)
        flat[k] = orig - step
        fm = f(x)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteValue(f"f is not finite near coordinate {k}")
        gflat[k] = (fp - fm) / (2.0 * step)
    return grad


def finite_difference_check(f, analytic_grad, point, step=1e-4):
    """Largest absolute gap between ``analytic_grad`` and central differences.

    Raises:
        ValueError: if ``step`` is not positive.
        NonFiniteValue: if ``f`` returns NaN/Inf near ``point``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    numeric = numerical_gradient(f, point, step)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(numeric.shape)
    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(numeric - analytic)))


def relative_error(analytic, numeric, floor=1e-6):
    """Norm-wise relative gap ``||a - n|| / max(||a||, ||n||, floor)``.

    The floor keeps flat regions (both gradients ~0) from blowing up the ratio.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)
