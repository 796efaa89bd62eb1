"""Symmetric eigendecomposition by cyclic Jacobi rotations."""
from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class SymSpectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, orthonormal


@numba.njit(cache=True)
def _jacobi(a, v, threshold, max_sweeps):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if np.sqrt(off) < threshold:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return -1


def eigh_sym(m, tol=1e-12, max_sweeps=100, sym_tol=1e-9):
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix.

    Each cyclic sweep zeroes every off-diagonal pair once. Iteration stops when
    the off-diagonal Frobenius norm falls below ``tol`` relative to the matrix
    norm (absolute ``tol`` for the zero matrix).
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"eigh_sym needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("eigh_sym: matrix has non-finite entries")
    scale = max(float(np.abs(a).max(initial=0.0)), 1.0)
    if np.abs(a - a.T).max(initial=0.0) > sym_tol * scale:
        raise ValueError("eigh_sym: matrix is not symmetric")
    a = np.ascontiguousarray(0.5 * (a + a.T))
    v = np.eye(a.shape[0])
    norm = float(np.linalg.norm(a))
    threshold = tol * norm if norm > 0 else tol
    if _jacobi(a, v, threshold, max_sweeps) < 0:
        raise RuntimeError(f"eigh_sym did not converge in {max_sweeps} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return SymSpectrum(eigenvalues=w[order], eigenvectors=v[:, order])
