"""Synthetic two-population data drawn from the hierarchical factor model.

Each row of Z is N(0, beta beta' + Sigma) with the loadings of its
population. Coordinate 0 is thresholded at zero to give the binary outcome;
the other coordinates are the continuous covariates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ColumnKind, Dataset, Population

RATIOS = ((700, 2800), (500, 2500), (200, 4000))
N_FRESH_SOURCE = 1000


@dataclass(frozen=True)
class SimulationSpec:
    target_train: int = 700
    source_train: int = 2800
    n_total: int = 5000
    n_target: int = 1000
    P: int = 70
    K_true: int = 20
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.target_train <= self.n_target:
            raise ValueError("target_train must be in (0, n_target]")
        if not 0 < self.source_train <= self.n_total - self.n_target:
            raise ValueError("source_train must be in (0, n_total - n_target]")
        if self.P < 2 or self.K_true < 1:
            raise ValueError("need P >= 2 and K_true >= 1")

    @property
    def ratio(self) -> tuple[int, int]:
        return self.target_train, self.source_train

    @property
    def ratio_label(self) -> str:
        return f"{self.target_train}:{self.source_train}"

    @property
    def columns(self) -> tuple[str, ...]:
        width = len(str(self.P - 1))
        return tuple(f"x{j:0{width}d}" for j in range(1, self.P))


def parse_ratio(text: str) -> tuple[int, int]:
    """'700:2800' -> (700, 2800), target first."""
    try:
        t, s = (int(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"ratio must look like TARGET:SOURCE, got {text!r}") from None
    return t, s


@dataclass(frozen=True, eq=False)
class GroundTruth:
    m: np.ndarray
    beta_S: np.ndarray
    beta_T: np.ndarray
    sigma2: np.ndarray

    def beta(self, pop) -> np.ndarray:
        return self.beta_T if Population(pop) is Population.TARGET else self.beta_S

    def omega(self, pop) -> np.ndarray:
        b = self.beta(pop)
        return b @ b.T + np.diag(self.sigma2)


def generate_ground_truth(spec: SimulationSpec, rng, beta_noise_sd: float = 1.0) -> GroundTruth:
    """Draw global and population loadings and idiosyncratic variances.

    Precisions 1/sigma2 are Gamma(shape 1, rate 0.5), mean 2.
    ``beta_noise_sd`` scales the population deviation from ``m`` (test hook).
    """
    P, K = spec.P, spec.K_true
    m = rng.standard_normal((P, K))
    beta_S = m + beta_noise_sd * rng.standard_normal((P, K))
    beta_T = m + beta_noise_sd * rng.standard_normal((P, K))
    precision = rng.gamma(1.0, 1.0 / 0.5, size=P)
    return GroundTruth(m, beta_S, beta_T, 1.0 / precision)


def draw_rows(truth: GroundTruth, pop, n, rng) -> np.ndarray:
    L = np.linalg.cholesky(truth.omega(pop))
    return rng.standard_normal((n, L.shape[0])) @ L.T


@dataclass(frozen=True, eq=False)
class SimulatedSplit:
    train: Dataset
    test_target: Dataset
    test_source: Dataset
    source_regenerated: bool = False


def _to_dataset(spec, Z, pop, row_id):
    return Dataset(
        X=Z[:, 1:], y=(Z[:, 0] > 0).astype(np.int8), pop=pop,
        columns=spec.columns, col_kind=(ColumnKind.CONTINUOUS,) * (spec.P - 1),
        row_id=row_id,
    )


def generate_dataset(spec: SimulationSpec, truth: GroundTruth, rng) -> SimulatedSplit:
    """Draw ``n_total`` rows and split them into train and held-out tests.

    Target rows get ids ``0..n_target-1``, source rows the rest. Test sets
    are the untrained remainder of each population; when no source rows are
    left, ``N_FRESH_SOURCE`` new source rows (ids from ``n_total``) are drawn
    from the same truth and ``source_regenerated`` is set.
    """
    n_source = spec.n_total - spec.n_target
    Zt = draw_rows(truth, Population.TARGET, spec.n_target, rng)
    Zs = draw_rows(truth, Population.SOURCE, n_source, rng)
    Z = np.vstack([Zt, Zs])
    pop = np.r_[np.full(spec.n_target, Population.TARGET),
                np.full(n_source, Population.SOURCE)].astype(np.int8)
    ids = np.arange(spec.n_total)

    t_perm = rng.permutation(spec.n_target)
    s_perm = spec.n_target + rng.permutation(n_source)
    train_idx = np.sort(np.r_[t_perm[:spec.target_train], s_perm[:spec.source_train]])
    tt_idx = np.sort(t_perm[spec.target_train:])
    ts_idx = np.sort(s_perm[spec.source_train:])

    full = _to_dataset(spec, Z, pop, ids)
    regenerated = ts_idx.size == 0
    if regenerated:
        Zf = draw_rows(truth, Population.SOURCE, N_FRESH_SOURCE, rng)
        test_source = _to_dataset(
            spec, Zf, np.full(N_FRESH_SOURCE, Population.SOURCE, dtype=np.int8),
            spec.n_total + np.arange(N_FRESH_SOURCE))
    else:
        test_source = full.subset(ts_idx)
    return SimulatedSplit(full.subset(train_idx), full.subset(tt_idx), test_source, regenerated)


def simulate(spec: SimulationSpec, seed=None):
    """Ground truth and split for one seed (defaults to ``spec.seed``)."""
    rng = np.random.Generator(np.random.PCG64(spec.seed if seed is None else seed))
    truth = generate_ground_truth(spec, rng)
    return truth, generate_dataset(spec, truth, rng)
