"""Dense linear-algebra kernels: matrix product and modified Gram-Schmidt.

Matrices are plain 2-D float64 numpy arrays, row-major. Everything here is
64-bit: 32-bit floats lose too much orthogonality at the largest key size
(n = 192) used by the cipher.
"""

from __future__ import annotations

import math

import numpy as np


class DegenerateError(Exception):
    """Raised when a row of the input is (numerically) linearly dependent
    on the rows before it, so orthonormalization cannot proceed."""


def as_matrix(a, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate/convert to a finite float64 2-D array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} cols, got {m.shape[1]}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense product with an explicit shape check, float64 accumulation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


# Residual-norm floor, relative to sqrt(n). Rows whose residual after
# projection falls under this are treated as linearly dependent; computing
# det() instead is numerically meaningless at n = 192.
DEGENERACY_RTOL = 1e-8


def modified_gram_schmidt(r: np.ndarray) -> np.ndarray:
    """Orthonormalize the rows of a square matrix, in order.

    Row i is projected against the already-accepted rows 0..i-1; if its
    residual norm drops below DEGENERACY_RTOL * sqrt(n) the input is
    declared degenerate and DegenerateError is raised so the caller can
    regenerate a fresh random matrix.
    """
    r = as_matrix(r)
    n, m = r.shape
    if n != m:
        raise ValueError(f"expected a square matrix, got {n}x{m}")
    floor = DEGENERACY_RTOL * math.sqrt(n)
    q = r.copy()
    for i in range(n):
        v = q[i]
        for j in range(i):
            v -= (q[j] @ v) * q[j]
        norm = np.linalg.norm(v)
        if norm < floor:
            raise DegenerateError(
                f"row {i} residual norm {norm:.3e} below {floor:.3e}"
            )
        q[i] = v / norm
    return q


def orthogonality_defect(q: np.ndarray) -> float:
    """max |Q Q^T - I|; zero for an exactly orthogonal matrix."""
    q = as_matrix(q)
    if q.shape[0] != q.shape[1]:
        raise ValueError(f"expected a square matrix, got {q.shape[0]}x{q.shape[1]}")
    n = q.shape[0]
    return float(np.abs(q @ q.T - np.eye(n)).max())
