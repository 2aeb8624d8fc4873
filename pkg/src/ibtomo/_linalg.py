from __future__ import annotations

import numpy as np
from scipy import linalg


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed even after the maximum diagonal jitter was added."""


def jittered_cholesky(
    K: np.ndarray, scale: float, start: float = 0.0, stop: float = 1e-4
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, adding diagonal jitter on failure.

    The first attempt adds ``start * scale`` (possibly nothing); each retry
    multiplies the relative jitter by ten, beginning at ``1e-7``, until
    ``stop * scale``.  Returns the factor and the absolute jitter used.
    """
    n = K.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    rel = start
    while True:
        jitter = rel * scale
        try:
            L = linalg.cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except linalg.LinAlgError:
            pass
        rel = 1e-7 if rel < 1e-7 else rel * 10.0
        if rel > stop * (1 + 1e-9):
            try:
                cond = np.linalg.cond(K)
            except np.linalg.LinAlgError:
                cond = float("inf")
            raise FactorizationError(
                f"matrix of size {n} not positive definite after jitter {stop:g} x {scale:g} "
                f"(condition number {cond:.3g})"
            )


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)
