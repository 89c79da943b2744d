"""Gibbs sampler for the hierarchical (transfer) and flat latent factor models.

Modeled columns are Z = (y, X): the binary outcome is column 0 and is
probit-augmented like any other binary column. Continuous columns are
standardized with training statistics before sampling.

All draws come from a PCG64 generator seeded through ``SeedSequence``;
a chain is bit-reproducible given its seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtri_exp

from .errors import DataError, NumericalError
from .linalg import chol_spd, sample_from_precision
from .model import (
    ColumnKind,
    Dataset,
    Hyperparameters,
    ModelState,
    Population,
    Standardization,
)

log = logging.getLogger(__name__)

POPS = (Population.SOURCE, Population.TARGET)
INIT_LOADING_SD = 0.1


@dataclass(frozen=True)
class ChainConfig:
    iters: int = 3000
    burnin: int = 1000
    thin: int = 2
    seed: int = 0
    n_chains: int = 1
    record_factors: bool = False

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not self.iters > self.burnin >= 0 or self.thin < 1:
            raise ValueError("need iters > burnin >= 0 and thin >= 1")
        if self.n_retained < 1:
            raise ValueError("chain settings retain no samples")

    @classmethod
    def from_hyper(cls, hyper: Hyperparameters, **kw) -> "ChainConfig":
        return cls(iters=hyper.iters, burnin=hyper.burnin, thin=hyper.thin,
                   seed=hyper.seed, **kw)

    @property
    def n_retained(self) -> int:
        return (self.iters - self.burnin) // self.thin


@dataclass(frozen=True, eq=False)
class ModelData:
    """Observed modeled columns in sampler form.

    ``Z`` is n x P' with binary cells as 0/1, ``binary`` flags the binary
    columns, ``pop`` holds population codes. A flat model maps every row to
    the source code.
    """

    Z: np.ndarray
    binary: np.ndarray
    pop: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Z", np.asarray(self.Z, dtype=float))
        object.__setattr__(self, "binary", np.asarray(self.binary, dtype=bool))
        object.__setattr__(self, "pop", np.asarray(self.pop, dtype=np.int8))
        if self.Z.shape != (len(self.pop), len(self.binary)):
            raise DataError("modeled data shape does not match labels")
        zb = self.Z[:, self.binary]
        if not np.all((zb == 0) | (zb == 1)):
            raise DataError("binary columns must hold 0/1")

    @property
    def n(self):
        return self.Z.shape[0]

    @property
    def P(self):
        return self.Z.shape[1]

    @property
    def bin_idx(self):
        return np.flatnonzero(self.binary)

    @property
    def cont_idx(self):
        return np.flatnonzero(~self.binary)

    def rows(self, pop) -> np.ndarray:
        return np.flatnonzero(self.pop == int(pop))


def model_data(ds: Dataset, std: Standardization, *, hierarchical=True,
               with_outcome=True) -> ModelData:
    X = std.apply(ds.X)
    binary = ds.binary_mask
    if with_outcome:
        if ds.y is None:
            raise DataError("fitting requires the outcome column")
        X = np.column_stack([ds.y.astype(float), X])
        binary = np.concatenate([[True], binary])
    pop = ds.pop if hierarchical else np.zeros(ds.n, dtype=np.int8)
    return ModelData(X, binary, pop)


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Retained chain states plus everything needed to score new data."""

    chains: tuple
    hyper: Hyperparameters
    standardization: Standardization
    columns: tuple
    col_kind: tuple
    hierarchical: bool = True
    joint_outcome: bool = True
    final_states: tuple = field(default=())

    @property
    def states(self) -> list[ModelState]:
        return [s for chain in self.chains for s in chain]

    @property
    def n_draws(self) -> int:
        return sum(len(c) for c in self.chains)

    @property
    def final_state(self) -> ModelState:
        return self.final_states[0]

    def schema_hash(self) -> str:
        from .model import schema_hash
        return schema_hash(self.columns, self.col_kind)


class ChainInterrupted(KeyboardInterrupt):
    """Raised on interrupt; ``partial`` holds the samples retained so far."""

    def __init__(self, partial):
        super().__init__("chain interrupted")
        self.partial = partial


# ---------------------------------------------------------------------------
# Conditional draws on raw arrays. Public wrappers follow further down.


def truncated_normal(mean, positive, rng) -> np.ndarray:
    """N(mean, 1) truncated to (0, inf) where ``positive`` else (-inf, 0].

    Inverse-CDF in log space, so it stays exact far into either tail.
    """
    mean = np.asarray(mean, dtype=float)
    positive = np.broadcast_to(np.asarray(positive, dtype=bool), mean.shape)
    logu = np.log1p(-rng.random(mean.shape))  # log of u in (0, 1]
    # e > -mean  <=>  e = -Phi^{-1}(u * Phi(mean))
    # e <= -mean <=>  e =  Phi^{-1}(u * Phi(-mean))
    sgn = np.where(positive, 1.0, -1.0)
    e = -sgn * ndtri_exp(logu + log_ndtr(sgn * mean))
    z = mean + e
    return np.where(positive, np.maximum(z, np.finfo(float).tiny), np.minimum(z, 0.0))


def _fitted(F, betas, data):
    """Row-wise beta^{t_i} f_i, n x P'."""
    out = np.empty((data.n, data.P))
    for p in POPS:
        rows = data.rows(p)
        if rows.size:
            out[rows] = F[rows] @ betas[p].T
    return out


def _draw_zstar(F, betas, data, rng):
    mean = _fitted(F, betas, data)[:, data.binary]
    return truncated_normal(mean, data.Z[:, data.binary] == 1, rng)


def _draw_factors(Zt, betas, sigma2, data, rng):
    K = betas[0].shape[1]
    F = np.empty((data.n, K))
    eps = rng.standard_normal((data.n, K))
    for p in POPS:
        rows = data.rows(p)
        if not rows.size:
            continue
        BtD = betas[p].T / sigma2
        Q = np.eye(K) + BtD @ betas[p]
        L = chol_spd(Q, "factor-score precision")
        rhs = BtD @ Zt[rows].T
        y = solve_triangular(L, rhs, lower=True, check_finite=False)
        F[rows] = solve_triangular(L.T, y + eps[rows].T, lower=False,
                                   check_finite=False).T
    return F


def _draw_loadings(Zt, F, sigma2, m, phi_pop, rows, cols, rng):
    K = F.shape[1]
    Fp = F[rows]
    G = Fp.T @ Fp
    H = Zt[np.ix_(rows, cols)].T @ Fp
    s2 = sigma2[cols]
    Q = phi_pop * np.eye(K) + G[None] / s2[:, None, None]
    b = phi_pop * m[cols] + H / s2[:, None]
    return sample_from_precision(Q, b, rng, "loadings precision")


def _draw_global(beta_S, beta_T, phi, phi_S, phi_T, rng):
    prec = phi + phi_S + phi_T
    mean = (phi_S * beta_S + phi_T * beta_T) / prec
    return mean + rng.standard_normal(mean.shape) / np.sqrt(prec)


def _draw_sigma2(Zt, F, betas, data, v, cols, rng):
    resid = Zt[:, cols] - _fitted(F, betas, data)[:, cols]
    shape = 0.5 * (v + data.n)
    rate = 0.5 * (v + np.sum(resid ** 2, axis=0))
    return rate / rng.gamma(shape, 1.0, size=len(cols))


def _draw_precision(beta, m, a, b, rng):
    d = beta - m
    return rng.gamma(a + 0.5 * d.size, 1.0 / (b + 0.5 * np.sum(d * d)))


def _latent(data, zstar):
    Zt = data.Z.copy()
    if zstar is not None and data.binary.any():
        Zt[:, data.binary] = zstar
    return Zt


def _betas(state):
    return {Population.SOURCE: state.beta_S, Population.TARGET: state.beta_T}


# ---------------------------------------------------------------------------
# Single-conditional samplers on a ModelState.


def sample_factor_scores(state: ModelState, data: ModelData, rng) -> np.ndarray:
    """Draw every row of F given loadings, variances and probit utilities.

    Row i is N(A B' S^-1 z_i, A) with A = (I + B' S^-1 B)^-1 and B the loadings
    of the row's population.
    """
    return _draw_factors(_latent(data, state.zstar), _betas(state), state.sigma2, data, rng)


def sample_population_loadings_row(j, pop, state: ModelState, data: ModelData,
                                   hyper: Hyperparameters, rng,
                                   phi_pop=None) -> np.ndarray:
    """Draw row ``j`` of the loadings of population ``pop``.

    Only rows of that population enter the likelihood; with none the draw
    falls back to the N(m_j, 1/phi_pop I) prior.
    """
    pop = Population(pop)
    if phi_pop is None:
        phi_pop = state.phi_T if pop is Population.TARGET else state.phi_S
    Zt = _latent(data, state.zstar)
    return _draw_loadings(Zt, state.F, state.sigma2, state.m, phi_pop,
                          data.rows(pop), np.array([j]), rng)[0]


def sample_global_loadings_row(j, state: ModelState, hyper: Hyperparameters,
                               rng) -> np.ndarray:
    return _draw_global(state.beta_S[j], state.beta_T[j], hyper.phi,
                        state.phi_S, state.phi_T, rng)


def sample_idiosyncratic_variance(j, state: ModelState, data: ModelData,
                                  hyper: Hyperparameters, rng) -> float:
    if data.binary[j]:
        return 1.0
    Zt = _latent(data, state.zstar)
    return float(_draw_sigma2(Zt, state.F, _betas(state), data, hyper.v,
                              np.array([j]), rng)[0])


def sample_probit_latents(state: ModelState, data: ModelData, rng) -> np.ndarray:
    return _draw_zstar(state.F, _betas(state), data, rng)


def sample_population_precision(pop, state: ModelState, hyper: Hyperparameters,
                                rng) -> float:
    """Gamma(a + P'K/2, b + |beta^pop - m|_F^2 / 2) draw (shape, rate)."""
    beta = state.beta(pop)
    return float(_draw_precision(beta, state.m, hyper.phi_a, hyper.phi_b, rng))


# ---------------------------------------------------------------------------
# Chain orchestration.


def flat_precision(hyper: Hyperparameters) -> float:
    """Prior precision of the single loadings matrix of the flat model.

    Matches the marginal prior of source loadings under the hierarchy,
    1 / (1/phi + 1/phi_S).
    """
    return hyper.phi * hyper.phi_S / (hyper.phi + hyper.phi_S)


def init_state(data: ModelData, K: int, rng, hierarchical=True, phi_S=1.0,
               phi_T=1.0) -> SimpleNamespace:
    P = data.P
    w = SimpleNamespace()
    w.m = rng.normal(0.0, INIT_LOADING_SD, (P, K))
    w.beta_S = rng.normal(0.0, INIT_LOADING_SD, (P, K))
    w.beta_T = rng.normal(0.0, INIT_LOADING_SD, (P, K))
    if not hierarchical:
        w.m = np.zeros((P, K))
        w.beta_T = w.beta_S
    w.F = rng.standard_normal((data.n, K))
    w.sigma2 = np.ones(P)
    w.zstar = truncated_normal(np.zeros((data.n, int(data.binary.sum()))),
                               data.Z[:, data.binary] == 1, rng)
    w.phi_S, w.phi_T = phi_S, phi_T
    return w


def gibbs_sweep(w, data: ModelData, hyper: Hyperparameters, rng, hierarchical=True):
    """One full sweep, in place: zstar, F, beta_S, beta_T, m, sigma2, phi."""
    betas = {Population.SOURCE: w.beta_S, Population.TARGET: w.beta_T}
    if data.binary.any():
        w.zstar = _draw_zstar(w.F, betas, data, rng)
    Zt = _latent(data, w.zstar)
    w.F = _draw_factors(Zt, betas, w.sigma2, data, rng)
    allcols = np.arange(data.P)
    if hierarchical:
        w.beta_S = _draw_loadings(Zt, w.F, w.sigma2, w.m, w.phi_S,
                                  data.rows(Population.SOURCE), allcols, rng)
        w.beta_T = _draw_loadings(Zt, w.F, w.sigma2, w.m, w.phi_T,
                                  data.rows(Population.TARGET), allcols, rng)
        w.m = _draw_global(w.beta_S, w.beta_T, hyper.phi, w.phi_S, w.phi_T, rng)
    else:
        w.beta_S = _draw_loadings(Zt, w.F, w.sigma2, w.m, w.phi_S,
                                  np.arange(data.n), allcols, rng)
        w.beta_T = w.beta_S
    betas = {Population.SOURCE: w.beta_S, Population.TARGET: w.beta_T}
    cont = data.cont_idx
    if cont.size:
        w.sigma2 = w.sigma2.copy()
        w.sigma2[cont] = _draw_sigma2(Zt, w.F, betas, data, hyper.v, cont, rng)
    if hyper.learn_phi:
        if hierarchical:
            w.phi_S = float(_draw_precision(w.beta_S, w.m, hyper.phi_a, hyper.phi_b, rng))
            w.phi_T = float(_draw_precision(w.beta_T, w.m, hyper.phi_a, hyper.phi_b, rng))
        else:
            w.phi_S = w.phi_T = float(_draw_precision(w.beta_S, w.m, hyper.phi_a,
                                                      hyper.phi_b, rng))
    return w


def snapshot(w, with_factors=True) -> ModelState:
    return ModelState(m=w.m, beta_S=w.beta_S, beta_T=w.beta_T, sigma2=w.sigma2,
                      F=w.F if with_factors else None,
                      zstar=w.zstar if with_factors else None,
                      phi_S=w.phi_S, phi_T=w.phi_T)


def chain_rngs(seed, n_chains):
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n_chains)]


def run_chain(dataset: Dataset, hyper: Hyperparameters, config: ChainConfig | None = None,
              *, hierarchical: bool = True, progress=None) -> PosteriorSamples:
    """Fit the factor model to a training dataset by Gibbs sampling.

    With ``hierarchical=False`` every row shares one loadings matrix with a
    zero-centred prior (the flat model); the population labels are ignored.
    ``progress(chain, sweep, iters)`` is called after every sweep when given.
    """
    if config is None:
        config = ChainConfig.from_hyper(hyper)
    if dataset.y is None:
        raise DataError("fitting requires the outcome column")
    if hierarchical and (dataset.n_target == 0 or dataset.n_source == 0):
        raise DataError("the transfer model needs both source and target rows")
    std = Standardization.fit(dataset)
    data = model_data(dataset, std, hierarchical=hierarchical)
    hyper.check_dims(data.P)

    def package(chains, finals):
        return PosteriorSamples(
            chains=tuple(tuple(c) for c in chains), hyper=hyper, standardization=std,
            columns=dataset.columns, col_kind=dataset.col_kind,
            hierarchical=hierarchical, final_states=tuple(finals))

    chains, finals = [], []
    for c, rng in enumerate(chain_rngs(config.seed, config.n_chains)):
        kept = []
        chains.append(kept)
        try:
            w = _run_one(data, hyper, config, rng, hierarchical, kept,
                         lambda it: progress and progress(c, it, config.iters))
        except KeyboardInterrupt:
            if kept:
                raise ChainInterrupted(package([k for k in chains if k], finals)) from None
            raise
        finals.append(snapshot(w))
    return package(chains, finals)


def run_chain_on_data(data: ModelData, hyper: Hyperparameters, config: ChainConfig,
                      hierarchical=True, init=None):
    """Run one chain on sampler-form data; returns (retained states, final work)."""
    rng = chain_rngs(config.seed, 1)[0]
    kept = []
    w = _run_one(data, hyper, config, rng, hierarchical, kept, None, init=init)
    return kept, w


def _run_one(data, hyper, config, rng, hierarchical, kept, tick, init=None):
    if hierarchical:
        phi_S, phi_T = hyper.phi_S, hyper.phi_T
    else:
        phi_S = phi_T = flat_precision(hyper)
    w = init if init is not None else init_state(data, hyper.K, rng, hierarchical, phi_S, phi_T)
    for it in range(1, config.iters + 1):
        try:
            gibbs_sweep(w, data, hyper, rng, hierarchical)
        except NumericalError as exc:
            raise NumericalError(f"sweep {it}: {exc}") from exc
        if it > config.burnin and (it - config.burnin) % config.thin == 0:
            kept.append(snapshot(w, config.record_factors))
        if tick:
            tick(it)
    return w
