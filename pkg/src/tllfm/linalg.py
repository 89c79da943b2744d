"""Symmetric positive-definite helpers shared by the sampler and predictor."""
import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError

JITTER = 1e-10


def chol_spd(Q, what="matrix"):
    """Lower Cholesky factor of an SPD matrix or a stack of them.

    On failure, ``JITTER * trace`` is added to the diagonal and the
    decomposition retried once before raising :class:`NumericalError`.
    """
    Q = np.asarray(Q, dtype=float)
    try:
        return np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        pass
    tr = np.trace(Q, axis1=-2, axis2=-1)
    eye = np.eye(Q.shape[-1])
    Qj = Q + (JITTER * np.abs(tr))[..., None, None] * eye
    try:
        return np.linalg.cholesky(Qj)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(Q).min()
        raise NumericalError(
            f"{what} is not positive definite after jitter "
            f"(smallest eigenvalue {eig:.3e})"
        ) from None


def chol_solve(L, b):
    """Solve ``(L L') x = b`` for a single lower factor ``L``."""
    y = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def sample_from_precision(Q, b, rng, what="precision"):
    """Draw from N(Q^{-1} b, Q^{-1}) for a stack of precisions.

    ``Q`` has shape (..., K, K) and ``b`` shape (..., K).
    """
    L = chol_spd(Q, what)
    z = rng.standard_normal(b.shape)
    if L.ndim == 2:
        y = solve_triangular(L, b, lower=True, check_finite=False)
        return solve_triangular(L.T, y + z, lower=False, check_finite=False)
    # mean + noise = L'^{-1} (L^{-1} b + z)
    y = np.linalg.solve(L, b[..., None])[..., 0]
    return np.linalg.solve(np.swapaxes(L, -1, -2), (y + z)[..., None])[..., 0]
