"""Dense complex linear algebra used throughout the package.

Everything here works on plain ``numpy`` arrays of dtype ``complex128``.
Target dimensions are small (a few hundred at most), so no sparse
storage is used anywhere.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

#: relative tolerance for Hermiticity checks, shared by every module
HERMITIAN_TOL = 1e-10


class DimensionError(ValueError):
    """Operator and vector shapes do not conform."""


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError(f"expected a non-empty 1-d vector, got shape {v.shape}")
    return v


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or 0 in m.shape:
        raise DimensionError(f"expected a non-empty 2-d matrix, got shape {m.shape}")
    return m


def dagger(m: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(m, -1, -2))


def apply_operator(m, v) -> np.ndarray:
    """Matrix-vector product ``m @ v`` with a shape check."""
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot apply {m.shape[0]}x{m.shape[1]} operator to vector of length {v.shape[0]}")
    return m @ v


def gram(m) -> np.ndarray:
    """Return ``m^dagger m``, symmetrised so it is Hermitian to round-off."""
    m = as_matrix(m)
    g = dagger(m) @ m
    return 0.5 * (g + dagger(g))


def is_hermitian(m, tol: float = HERMITIAN_TOL) -> bool:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(m), initial=0.0)))
    return float(np.max(np.abs(m - dagger(m)), initial=0.0)) <= tol * scale


def expm_apply(a, t: float, v) -> np.ndarray:
    """Return ``exp(a t) v`` (scaling and squaring via :func:`scipy.linalg.expm`)."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"generator must be square, got {a.shape}")
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    return apply_operator(expm(a * t), v)


def min_eigenvalue_hermitian(m) -> float:
    """Smallest eigenvalue of a Hermitian matrix.

    Raises ``ValueError`` if ``m`` is not Hermitian within :data:`HERMITIAN_TOL`.
    """
    m = as_matrix(m)
    if not is_hermitian(m):
        raise ValueError("matrix is not Hermitian within tolerance")
    return float(np.linalg.eigvalsh(0.5 * (m + dagger(m)))[0])


def taylor4(a: np.ndarray, s: float) -> np.ndarray:
    """One classical RK4 step of ``x' = a x`` with step ``s``, as a matrix.

    For a constant generator the four RK4 stages collapse to the
    degree-4 Taylor polynomial of ``exp(s a)``.
    """
    sa = s * a
    eye = np.eye(a.shape[0], dtype=complex)
    return eye + sa @ (eye + sa @ (eye / 2 + sa @ (eye / 6 + sa / 24)))
