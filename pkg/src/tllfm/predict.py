"""Regression of the outcome on covariates implied by the joint covariance,
and posterior-predictive probabilities for new rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DataError, NumericalError, SchemaError
from .linalg import JITTER, chol_solve
from .model import Dataset, MarginalCovariance, Population

Y_INDEX = 0


def _omega_array(omega):
    return omega.omega if isinstance(omega, MarginalCovariance) else np.asarray(omega, dtype=float)


def partition_covariance(omega, y_index=Y_INDEX):
    """Split a joint covariance into (XX block, YX vector, YY scalar)."""
    om = _omega_array(omega)
    d = om.shape[0]
    if not 0 <= y_index < d:
        raise IndexError(f"y_index {y_index} out of range for a {d}x{d} covariance")
    rest = np.r_[0:y_index, y_index + 1:d]
    return om[np.ix_(rest, rest)], om[y_index, rest], float(om[y_index, y_index])


def regression_coefficients(omega, y_index=Y_INDEX):
    """Coefficients theta solving Omega_XX theta = Omega_YX, and the
    conditional variance ``s = Omega_YY - Omega_YX' theta``."""
    xx, yx, yy = partition_covariance(omega, y_index)
    if xx.size == 0:
        return np.zeros(0), yy
    try:
        L = np.linalg.cholesky(xx)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(xx + JITTER * abs(np.trace(xx)) * np.eye(len(xx)))
        except np.linalg.LinAlgError:
            eig = np.linalg.eigvalsh(xx)
            raise NumericalError(
                f"covariate covariance is singular (eigenvalue {eig.min():.3e} at "
                f"index {int(np.argmin(eig))})"
            ) from None
    theta = chol_solve(L, yx)
    s = max(yy - float(yx @ theta), 0.0)
    return theta, s


@dataclass(frozen=True)
class PredictiveResult:
    prob: np.ndarray
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    n_draws_used: int


def _joint_omega(beta, sigma2):
    om = beta @ beta.T
    om[np.diag_indices_from(om)] += sigma2
    return om


def _check_schema(samples, x):
    P = len(samples.columns)
    if x.ndim != 2 or x.shape[1] != P:
        raise SchemaError(f"expected rows with {P} covariates, got shape {x.shape}")


def predict(samples, x_new, pop, *, posterior_mean=False) -> PredictiveResult:
    """Posterior-predictive P(y = 1) for standardized covariate rows.

    ``pop`` is one population for all rows or one label per row. Each
    retained state contributes Phi(x' theta / sqrt(s)) from the joint
    covariance of its population's loadings; probabilities are averaged over
    states. With ``posterior_mean`` the covariance is averaged first and a
    single regression is used.
    """
    x = np.atleast_2d(np.asarray(x_new, dtype=float))
    _check_schema(samples, x)
    states = samples.states
    if not states:
        raise DataError("posterior sample chain is empty")
    if not samples.joint_outcome:
        raise SchemaError("model does not include the outcome column")
    n = x.shape[0]
    if np.ndim(pop) == 0:
        pops = np.full(n, int(Population.parse(pop)), dtype=np.int8)
    else:
        pops = np.array([int(Population.parse(p)) for p in pop], dtype=np.int8)
        if len(pops) != n:
            raise DataError("need one population label per row")
    groups = [(p, np.flatnonzero(pops == p)) for p in (Population.SOURCE, Population.TARGET)]
    groups = [(p, r) for p, r in groups if r.size]

    if posterior_mean:
        omegas = {p: np.mean([_joint_omega(s.beta(p), s.sigma2) for s in states], axis=0)
                  for p, _ in groups}
        draws = [omegas]
    else:
        draws = ({p: _joint_omega(s.beta(p), s.sigma2) for p, _ in groups} for s in states)

    prob = np.zeros(n)
    mean = np.zeros(n)
    sd = np.zeros(n)
    used = 0
    for omegas in draws:
        for p, rows in groups:
            theta, s = regression_coefficients(omegas[p], Y_INDEX)
            if s <= 0:
                raise NumericalError("degenerate conditional variance of the outcome")
            eta = x[rows] @ theta
            root = np.sqrt(s)
            prob[rows] += ndtr(eta / root)
            mean[rows] += eta
            sd[rows] += root
        used += 1
    return PredictiveResult(prob / used, mean / used, sd / used, used)


def score_dataset(samples, ds: Dataset, pop=None, **kw) -> PredictiveResult:
    """Standardize a raw dataset with the training statistics and predict.

    Rows use their own population label unless ``pop`` overrides it.
    """
    if ds.schema_hash() != samples.schema_hash():
        raise SchemaError("dataset columns do not match the model's training schema")
    x = samples.standardization.apply(ds.X)
    return predict(samples, x, ds.pop if pop is None else pop, **kw)
