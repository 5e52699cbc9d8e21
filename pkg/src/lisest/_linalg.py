"""Small dense linear-algebra helpers shared across the package."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class SingularInnovationError(np.linalg.LinAlgError):
    """Raised when C P C^T + R cannot be Cholesky-factorized (R not PD)."""


def sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def psd_sqrt(X: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; small negative eigenvalues are clipped."""
    X = sym(np.asarray(X, dtype=float))
    w, V = np.linalg.eigh(X)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def min_eig(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(sym(X))[0])


def max_eig(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(sym(X))[-1])


def spectral_radius(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(X))))


def innovation_factor(S: np.ndarray):
    """Cholesky factor of an innovation matrix, raising SingularInnovationError on failure."""
    try:
        return sla.cho_factor(sym(S), lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularInnovationError(f"innovation matrix is not positive definite: {exc}") from exc


def kalman_gain(P_bar: np.ndarray, C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """P_bar C^T (C P_bar C^T + R)^{-1} through a Cholesky solve."""
    if C.shape[0] == 0:
        return np.zeros((P_bar.shape[0], 0))
    S = C @ P_bar @ C.T + R
    fac = innovation_factor(S)
    # K^T = S^{-1} C P_bar
    return sla.cho_solve(fac, C @ P_bar).T


def riccati_update(P_bar: np.ndarray, C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Measurement update P = P_bar - P_bar C^T S^{-1} C P_bar, symmetrized."""
    if C.shape[0] == 0:
        return sym(P_bar)
    S = C @ P_bar @ C.T + R
    fac = innovation_factor(S)
    CP = C @ P_bar
    return sym(P_bar - CP.T @ sla.cho_solve(fac, CP))


def block_offsets(dims) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(np.asarray(dims, dtype=int))])


def block_slices(dims) -> list[slice]:
    off = block_offsets(dims)
    return [slice(int(off[i]), int(off[i + 1])) for i in range(len(dims))]


def block_diag(blocks) -> np.ndarray:
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    return sla.block_diag(*blocks) if blocks else np.zeros((0, 0))


def split_diag_blocks(X: np.ndarray, dims) -> list[np.ndarray]:
    return [X[sl, sl].copy() for sl in block_slices(dims)]


def readonly(X) -> np.ndarray:
    X = np.array(X, dtype=float, copy=True)
    X.setflags(write=False)
    return X
