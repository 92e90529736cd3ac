"""Dense vector/matrix primitives used by every other module.

Everything here works on float64 numpy arrays and is a pure function of its
inputs. Inputs are validated to be finite; zero-norm vectors are rejected
rather than silently mapped to zero, since a zero embedding indicates an
upstream bug.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateInputError, ShapeError

UNIT_ROW_TOL = 1e-9


def as_finite_array(values, name: str = "input", ndim: int | None = None) -> np.ndarray:
    """Coerce to a float64 array and reject NaN/Inf entries.

    Args:
        values: array-like input.
        name: label used in error messages.
        ndim: if given, required number of dimensions.

    Returns:
        A float64 ndarray view or copy of ``values``.
    """
    arr = np.asarray(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateInputError(f"{name} contains non-finite entries")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale a vector to unit Euclidean length, preserving its direction.

    Raises:
        DegenerateInputError: if the vector has zero norm.
    """
    arr = as_finite_array(v, "vector", ndim=1)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise DegenerateInputError("cannot normalize a zero-norm vector")
    return arr / norm


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    The clamp absorbs rounding drift only; downstream code relies on the
    bound as an invariant.

    Raises:
        ShapeError: if the vectors have different lengths.
        DegenerateInputError: if either vector has zero norm.
    """
    va = as_finite_array(a, "a", ndim=1)
    vb = as_finite_array(b, "b", ndim=1)
    if va.shape != vb.shape:
        raise ShapeError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    value = float(np.dot(va, vb) / (na * nb))
    return min(1.0, max(-1.0, value))


def check_unit_rows(matrix: np.ndarray, name: str, tol: float = UNIT_ROW_TOL) -> None:
    """Raise if any row of ``matrix`` deviates from unit norm by more than ``tol``."""
    norms = np.linalg.norm(matrix, axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > tol)[0]
    if bad.size:
        row = int(bad[0])
        raise DegenerateInputError(
            f"row {row} of {name} is not unit-norm (|row| = {norms[row]!r})"
        )


def cosine_logits(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pairwise cosines between unit rows of ``x`` (N x d) and ``w`` (C x d).

    Because both operands have unit rows, this is a plain matrix product
    followed by a clamp into [-1, 1].

    Raises:
        ShapeError: if the feature dimensions disagree.
        DegenerateInputError: naming the first offending non-unit row.
    """
    xm = as_finite_array(x, "x", ndim=2)
    wm = as_finite_array(w, "w", ndim=2)
    if xm.shape[1] != wm.shape[1]:
        raise ShapeError(
            f"feature dimension mismatch: x has {xm.shape[1]}, w has {wm.shape[1]}"
        )
    check_unit_rows(xm, "x")
    check_unit_rows(wm, "w")
    return np.clip(xm @ wm.T, -1.0, 1.0)


def log1p_sum_exp(terms, log_scale: float = 0.0) -> float:
    """Overflow-safe ``log(1 + exp(log_scale) * sum_j exp(t_j))``.

    Uses a max-shift: with ``M = max(0, log_scale + max_j t_j)`` the result is
    ``M + log(exp(-M) + exp(log_scale) * sum_j exp(t_j - M))``. When the shift
    is zero (all scaled exponents non-positive) the ``exp(-M)`` term is exactly
    1 and the expression is evaluated through ``log1p`` instead, so losses as
    small as 1e-300 keep full relative precision. An empty ``terms`` yields
    ``log(1) = 0``.

    The scale is applied as a multiplicative factor after the shift, so for
    ``log_scale = 0.0`` the result is bit-identical to folding the scale into
    the exponents.
    """
    arr = as_finite_array(terms, "terms", ndim=1)
    if not math.isfinite(log_scale):
        raise DegenerateInputError("log_scale must be finite")
    if arr.size == 0:
        return 0.0
    shift = max(0.0, log_scale + float(arr.max()))
    factor = math.exp(log_scale)
    if not math.isfinite(factor):
        # Extreme scales cannot be kept as a standalone factor; fold them in.
        return log1p_sum_exp(arr + log_scale)
    total = factor * float(np.sum(np.exp(arr - shift)))
    if shift == 0.0:
        # log1p preserves tiny totals; for large ones 1 + total carries no
        # cancellation and plain log keeps integer arguments exact.
        return math.log1p(total) if total < 0.5 else math.log(1.0 + total)
    return shift + math.log(math.exp(-shift) + total)
