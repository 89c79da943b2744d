"""Comparison methods: the flat latent factor model and L1 logistic regression.

The lasso minimises

    (1/n) sum_i [log(1 + exp(eta_i)) - y_i eta_i] + lam * |w|_1,
    eta = b + X w,

with an unpenalized intercept. Each outer step builds the local quadratic
model of the loss (IRLS weights p(1 - p)), minimises model + penalty by
cyclic coordinate descent over the intercept and weights, and backtracks
along the resulting direction until the true objective decreases
sufficiently, so the objective never increases from one outer step to the
next.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import expit

from .errors import ConvergenceError
from .gibbs import ChainConfig, run_chain
from .metrics import auroc

KKT_TOL = 1e-7
MAX_SWEEPS = 200
INNER_SWEEPS = 2000
WEIGHT_FLOOR = 1e-6
SEPARATION_LOSS = 1e-4


def fit_plain_lfm(dataset, hyper, config: ChainConfig | None = None, **kw):
    """Flat factor model: one loadings matrix shared by every row."""
    return run_chain(dataset, hyper, config, hierarchical=False, **kw)


@dataclass(frozen=True, eq=False)
class LassoModel:
    weights: np.ndarray
    intercept: float
    lam: float
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    cv_lambdas: np.ndarray | None = None
    cv_auroc: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise ValueError("lasso weights must be finite")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")


@njit(cache=True)
def _log1pexp(t):
    if t > 0:
        return t + np.log1p(np.exp(-t))
    return np.log1p(np.exp(t))


@njit(cache=True)
def _objective(y, w, eta, lam):
    n = eta.shape[0]
    s = 0.0
    for i in range(n):
        s += _log1pexp(eta[i]) - y[i] * eta[i]
    return s / n + lam * np.sum(np.abs(w))


@njit(cache=True)
def _model_cd(H, g, w, lam, d, tol, max_sweeps):
    """Minimise g'd + d'Hd/2 + lam |w[1:] + d[1:]|_1 over d by coordinate descent.

    Index 0 is the intercept (unpenalized). ``d`` is updated in place.
    """
    m = H.shape[0]
    r = g + H @ d
    for sweep in range(max_sweeps):
        biggest = 0.0
        for j in range(m):
            hjj = H[j, j]
            if hjj <= 0.0:
                continue
            if j == 0:
                new = d[0] - r[0] / hjj
            else:
                z = w[j] + d[j] - r[j] / hjj
                thr = lam / hjj
                if z > thr:
                    new = z - thr - w[j]
                elif z < -thr:
                    new = z + thr - w[j]
                else:
                    new = -w[j]
            delta = new - d[j]
            if delta != 0.0:
                d[j] = new
                for k in range(m):
                    r[k] += H[k, j] * delta
                step = abs(delta) * np.sqrt(hjj)
                if step > biggest:
                    biggest = step
        if biggest < tol:
            return sweep + 1
    return max_sweeps


def _kkt(g0, g, w, lam):
    zero = w == 0
    v = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g + lam * np.sign(w)))
    return float(max(abs(g0), v.max(initial=0.0)))


def kkt_violation(X, y, w, b, lam) -> float:
    """Largest violation of the lasso optimality conditions."""
    X = np.asarray(X, dtype=float)
    r = expit(b + X @ w) - np.asarray(y, dtype=float)
    return _kkt(r.mean(), X.T @ r / len(r), np.asarray(w), lam)


def objective(X, y, w, b, lam) -> float:
    eta = b + np.asarray(X, dtype=float) @ w
    return float(_objective(np.asarray(y, dtype=float), np.asarray(w, dtype=float), eta, lam))


def lasso_solve(X, y, lam, w0=None, b0=None, *, tol=KKT_TOL, max_sweeps=MAX_SWEEPS,
                check_monotone=False):
    """Solve the lasso at one penalty; returns (weights, intercept, outer steps).

    Stops once every optimality condition holds within ``tol``. Data that
    can be perfectly separated at ``lam = 0`` have no finite solution; this
    surfaces as :class:`ConvergenceError`, raised as soon as the mean loss
    falls below ``SEPARATION_LOSS`` or after ``max_sweeps`` outer steps. With ``check_monotone`` the objective is asserted non-increasing
    after every outer step.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, P = X.shape
    Xa = np.column_stack([np.ones(n), X])
    w = np.zeros(P) if w0 is None else np.array(w0, dtype=float)
    if b0 is None:
        ybar = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        b = float(np.log(ybar / (1 - ybar)))
    else:
        b = float(b0)
    theta = np.r_[b, w]
    eta = Xa @ theta
    obj = _objective(y, theta[1:], eta, lam)
    viol = np.inf
    for sweep in range(1, max_sweeps + 1):
        if lam == 0 and obj < SEPARATION_LOSS:
            raise ConvergenceError("classes are separable: no finite unpenalized solution",
                                   grad_norm=viol)
        p = expit(eta)
        grad = Xa.T @ (p - y) / n
        viol = _kkt(grad[0], grad[1:], theta[1:], lam)
        if viol <= tol:
            return theta[1:], float(theta[0]), sweep - 1
        wt = np.maximum(p * (1 - p), WEIGHT_FLOOR)
        H = (Xa * wt[:, None]).T @ Xa / n
        d = np.zeros(P + 1)
        _model_cd(H, grad, theta, lam, d, 1e-12, INNER_SWEEPS)
        pen = lam * np.sum(np.abs(theta[1:]))
        decrease = grad @ d + lam * np.sum(np.abs(theta[1:] + d[1:])) - pen
        if decrease >= 0:
            break
        Xd = Xa @ d
        t = 1.0
        while True:
            cand = theta + t * d
            eta_c = eta + t * Xd
            obj_c = _objective(y, cand[1:], eta_c, lam)
            if obj_c <= obj + 1e-4 * t * decrease or t < 1e-12:
                break
            t *= 0.5
        if obj_c > obj:
            break
        if check_monotone:
            assert obj_c <= obj, f"objective increased at step {sweep}: {obj!r} -> {obj_c!r}"
        theta, eta, obj = cand, eta_c, obj_c
    raise ConvergenceError(f"lasso did not converge in {max_sweeps} steps at lambda={lam:.3e}",
                           grad_norm=viol)


def lambda_max(X, y) -> float:
    """Smallest penalty whose solution has every weight at zero."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y))


def lambda_grid(X, y, n=50, ratio=1e-3) -> np.ndarray:
    top = lambda_max(X, y)
    return np.geomspace(top, ratio * top, n)


def lasso_path(X, y, lambdas, **kw):
    """Warm-started solutions along a decreasing grid.

    Returns (W, b) where rows past the first non-converged penalty are NaN.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    W = np.full((len(lambdas), X.shape[1]), np.nan)
    B = np.full(len(lambdas), np.nan)
    w, b = None, None
    for k, lam in enumerate(lambdas):
        try:
            w, b, _ = lasso_solve(X, y, lam, w, b, **kw)
        except ConvergenceError:
            break
        W[k], B[k] = w, b
    return W, B


def stratified_folds(labels, k, rng) -> np.ndarray:
    """Fold index per row, balanced within each distinct label value."""
    labels = np.asarray(labels)
    fold = np.empty(len(labels), dtype=int)
    for value in np.unique(labels):
        idx = np.flatnonzero(labels == value)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


def fit_lasso(X, y, lambdas=None, folds=5, rng=None, *, mean=None, scale=None,
              **kw) -> LassoModel:
    """Fit L1 logistic regression with the penalty chosen by k-fold CV AUROC.

    ``X`` must already be standardized; ``mean``/``scale`` are stored on the
    model so :func:`predict_lasso` can standardize raw rows. Penalties whose
    fit fails to converge in any fold are excluded; ties in CV AUROC go to
    the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if rng is None:
        rng = np.random.default_rng(0)
    if lambdas is None:
        lambdas = lambda_grid(X, y)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]

    fold = stratified_folds(y, folds, rng)
    scores = np.full((folds, len(lambdas)), np.nan)
    for f in range(folds):
        tr, te = fold != f, fold == f
        if len(np.unique(y[tr])) < 2 or len(np.unique(y[te])) < 2:
            raise ValueError(f"fold {f} lacks one of the classes")
        W, B = lasso_path(X[tr], y[tr], lambdas, **kw)
        for k in range(len(lambdas)):
            if np.isfinite(B[k]):
                scores[f, k] = auroc(B[k] + X[te] @ W[k], y[te])
    cv = scores.mean(axis=0)
    if np.all(np.isnan(cv)):
        raise ConvergenceError("no penalty converged in every fold")
    best = int(np.nanargmax(cv))  # first maximum = largest penalty

    w, b = None, None
    for lam in lambdas[:best + 1]:
        w, b, _ = lasso_solve(X, y, lam, w, b, **kw)
    return LassoModel(weights=w, intercept=b, lam=float(lambdas[best]),
                      mean=None if mean is None else np.asarray(mean, dtype=float),
                      scale=None if scale is None else np.asarray(scale, dtype=float),
                      cv_lambdas=lambdas, cv_auroc=cv)


def predict_lasso(model: LassoModel, X_new) -> np.ndarray:
    """Logistic probabilities; raw rows are standardized when the model
    carries standardization statistics."""
    X = np.atleast_2d(np.asarray(X_new, dtype=float))
    if model.mean is not None:
        X = (X - model.mean) / model.scale
    return expit(model.intercept + X @ model.weights)
