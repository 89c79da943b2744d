"""Domain types, dataset validation and covariance assembly."""
from __future__ import annotations

import enum
import hashlib
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

POP_COLUMN = "__pop"
Y_COLUMN = "__y"
RESERVED = (POP_COLUMN, Y_COLUMN)

SYMMETRY_TOL = 1e-10
PSD_REL_TOL = 1e-8


class Population(enum.IntEnum):
    SOURCE = 0
    TARGET = 1

    @property
    def label(self) -> str:
        return "S" if self is Population.SOURCE else "T"

    @classmethod
    def parse(cls, value) -> "Population":
        if isinstance(value, Population):
            return value
        key = str(value).strip().lower()
        if key in ("s", "source", "0"):
            return cls.SOURCE
        if key in ("t", "target", "1"):
            return cls.TARGET
        raise ValueError(f"unknown population label {value!r}")


class ColumnKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates, optional binary outcome and population label per row.

    ``pop`` holds :class:`Population` codes (0 source, 1 target).
    ``row_id`` identifies rows across splits; it defaults to ``0..n-1``.
    """

    X: np.ndarray
    pop: np.ndarray
    columns: tuple[str, ...]
    col_kind: tuple[ColumnKind, ...]
    y: np.ndarray | None = None
    row_id: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "X", _frozen(np.asarray(self.X, dtype=float)))
        object.__setattr__(self, "pop", _frozen(np.asarray(self.pop, dtype=np.int8)))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "col_kind", tuple(ColumnKind(k) for k in self.col_kind))
        if self.y is not None:
            object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=np.int8)))
        rid = np.arange(len(self.pop)) if self.row_id is None else self.row_id
        object.__setattr__(self, "row_id", _frozen(np.asarray(rid, dtype=np.int64)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def n_source(self) -> int:
        return int(np.sum(self.pop == Population.SOURCE))

    @property
    def n_target(self) -> int:
        return int(np.sum(self.pop == Population.TARGET))

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([k is ColumnKind.BINARY for k in self.col_kind])

    @property
    def metadata(self) -> dict[str, ColumnKind]:
        return dict(zip(self.columns, self.col_kind))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            X=self.X[idx],
            pop=self.pop[idx],
            y=None if self.y is None else self.y[idx],
            row_id=self.row_id[idx],
        )

    def to_table(self) -> dict[str, np.ndarray]:
        table = {c: self.X[:, j] for j, c in enumerate(self.columns)}
        table[POP_COLUMN] = np.array([Population(p).label for p in self.pop])
        if self.y is not None:
            table[Y_COLUMN] = self.y
        return table

    def schema_hash(self) -> str:
        return schema_hash(self.columns, self.col_kind)

    def equals(self, other: "Dataset") -> bool:
        """Bitwise equality of every field."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            self.columns == other.columns
            and self.col_kind == other.col_kind
            and same(self.X, other.X)
            and same(self.pop, other.pop)
            and same(self.y, other.y)
            and same(self.row_id, other.row_id)
        )


def schema_hash(columns, col_kind) -> str:
    h = hashlib.sha256()
    for c, k in zip(columns, col_kind):
        h.update(f"{c}\x1f{ColumnKind(k).value}\x1e".encode())
    return h.hexdigest()


def _is_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, str):
        return v.strip() == "" or v.strip().lower() in ("na", "nan")
    try:
        return math.isnan(v)
    except TypeError:
        return False


def _where(i, line_offset):
    return f"line {i + line_offset}" if line_offset is not None else f"row {i}"


def validate_dataset(
    raw,
    metadata: Mapping[str, str] | None = None,
    *,
    require_y: bool = False,
    require_target: bool = False,
    line_offset: int | None = None,
) -> Dataset:
    """Validate a parsed table into a :class:`Dataset`.

    ``raw`` is a mapping from column name to a sequence of values (strings as
    read from CSV, or numbers), including the reserved ``__pop`` and optional
    ``__y`` columns. ``metadata`` maps every covariate name to its kind, in
    column order. A :class:`Dataset` may also be passed back in, in which case
    it is re-validated and returned as an identical copy.

    Every violation is collected and reported in one :class:`DataError`.
    """
    if isinstance(raw, Dataset):
        ds = raw
        table = ds.to_table()
        out = validate_dataset(
            table, ds.metadata, require_y=require_y, require_target=require_target
        )
        return replace(out, row_id=ds.row_id)
    if metadata is None:
        raise DataError("column metadata is required")

    problems: list[str] = []
    names = list(raw.keys())
    if len(set(names)) != len(names):
        problems.append("duplicate column names")
    covariates = [c for c in names if c not in RESERVED]
    meta_cols = list(metadata.keys())
    kinds = {}
    for c, k in metadata.items():
        try:
            kinds[c] = ColumnKind(str(getattr(k, "value", k)).lower())
        except ValueError:
            problems.append(f"column {c!r}: unknown kind {k!r}")
    for c in covariates:
        if c not in metadata:
            problems.append(f"column {c!r}: no kind given in metadata")
    for c in meta_cols:
        if c not in raw:
            problems.append(f"column {c!r}: listed in metadata but missing from data")
    if POP_COLUMN not in raw:
        problems.append(f"missing reserved column {POP_COLUMN!r}")
    if require_y and Y_COLUMN not in raw:
        problems.append(f"missing reserved column {Y_COLUMN!r}")
    if not meta_cols:
        problems.append("no covariate columns (P must be >= 1)")
    if problems:
        raise DataError("invalid dataset", problems)

    lengths = {len(raw[c]) for c in names}
    if len(lengths) != 1:
        raise DataError("columns have different lengths")
    n = lengths.pop()

    X = np.empty((n, len(meta_cols)))
    for j, c in enumerate(meta_cols):
        kind = kinds[c]
        col = raw[c]
        for i in range(n):
            v = col[i]
            if _is_missing(v):
                problems.append(f"{_where(i, line_offset)}, column {c!r}: missing value")
                continue
            try:
                x = float(v)
            except (TypeError, ValueError):
                problems.append(f"{_where(i, line_offset)}, column {c!r}: not a number: {v!r}")
                continue
            if not math.isfinite(x):
                problems.append(f"{_where(i, line_offset)}, column {c!r}: non-finite value")
            elif kind is ColumnKind.BINARY and x not in (0.0, 1.0):
                problems.append(f"{_where(i, line_offset)}, column {c!r}: binary column has value {v!r}")
            X[i, j] = x

    pop = np.zeros(n, dtype=np.int8)
    for i, v in enumerate(raw[POP_COLUMN]):
        try:
            pop[i] = Population.parse(v)
        except ValueError:
            problems.append(f"{_where(i, line_offset)}, column {POP_COLUMN!r}: unknown population label {v!r}")

    y = None
    if Y_COLUMN in raw:
        y = np.zeros(n, dtype=np.int8)
        for i, v in enumerate(raw[Y_COLUMN]):
            if _is_missing(v):
                problems.append(f"{_where(i, line_offset)}, column {Y_COLUMN!r}: missing value")
                continue
            try:
                x = float(v)
            except (TypeError, ValueError):
                x = None
            if x not in (0.0, 1.0):
                problems.append(f"{_where(i, line_offset)}, column {Y_COLUMN!r}: outcome must be 0 or 1, got {v!r}")
            else:
                y[i] = int(x)

    if require_target and not problems and not np.any(pop == Population.TARGET):
        problems.append("target partition is empty")
    if problems:
        raise DataError("invalid dataset", problems)
    return Dataset(X=X, pop=pop, columns=tuple(meta_cols),
                   col_kind=tuple(kinds[c] for c in meta_cols), y=y)


@dataclass(frozen=True)
class Standardization:
    """Per-covariate centering and scaling learned from training data.

    Binary columns pass through unchanged (mean 0, scale 1).
    """

    mean: tuple[float, ...]
    scale: tuple[float, ...]

    @classmethod
    def fit(cls, ds: Dataset) -> "Standardization":
        mean = ds.X.mean(axis=0)
        scale = ds.X.std(axis=0)
        scale[scale == 0] = 1.0
        binary = ds.binary_mask
        mean[binary] = 0.0
        scale[binary] = 1.0
        return cls(tuple(float(v) for v in mean), tuple(float(v) for v in scale))

    @classmethod
    def identity(cls, P: int) -> "Standardization":
        return cls((0.0,) * P, (1.0,) * P)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.mean):
            raise DataError(f"expected {len(self.mean)} covariates, got {X.shape[-1]}")
        return (X - np.asarray(self.mean)) / np.asarray(self.scale)


@dataclass(frozen=True)
class Hyperparameters:
    """Prior and chain settings.

    ``phi`` is the prior precision of the global loadings, ``phi_S``/``phi_T``
    the precision of each population's loadings around them, ``v`` the
    inverse-gamma parameter of the idiosyncratic variances. With
    ``learn_phi`` the population precisions get a Gamma(``phi_a``, ``phi_b``)
    prior (shape, rate) and are sampled.
    """

    K: int = 20
    phi: float = 1.0
    phi_S: float = 1.0
    phi_T: float = 1.0
    v: float = 2.0
    learn_phi: bool = False
    phi_a: float = 2.0
    phi_b: float = 2.0
    iters: int = 3000
    burnin: int = 1000
    thin: int = 2
    seed: int = 0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        for name in ("phi", "phi_S", "phi_T", "v", "phi_a", "phi_b"):
            val = getattr(self, name)
            if not val > 0 or not math.isfinite(val):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if not self.iters > self.burnin >= 0:
            raise ValueError(f"need iters > burnin >= 0, got iters={self.iters}, burnin={self.burnin}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")

    @property
    def n_retained(self) -> int:
        return (self.iters - self.burnin) // self.thin

    def check_dims(self, n_columns: int):
        if self.K > n_columns:
            raise ValueError(f"K={self.K} exceeds the number of modeled columns ({n_columns})")


@dataclass(frozen=True, eq=False)
class ModelState:
    """One Gibbs state.

    Loadings and variances cover the modeled columns Z = (y, X) when the
    outcome is modeled jointly, so they have ``P' = P + 1`` rows. ``zstar``
    holds the probit utilities of the binary columns only, shape
    (n, number of binary columns). ``F`` may be ``None`` in retained
    snapshots that do not record factor scores.
    """

    m: np.ndarray
    beta_S: np.ndarray
    beta_T: np.ndarray
    sigma2: np.ndarray
    F: np.ndarray | None
    zstar: np.ndarray | None
    phi_S: float = 1.0
    phi_T: float = 1.0

    def __post_init__(self):
        for name in ("m", "beta_S", "beta_T", "sigma2", "F", "zstar"):
            a = getattr(self, name)
            if a is not None:
                object.__setattr__(self, name, _frozen(np.asarray(a, dtype=float)))

    def beta(self, pop) -> np.ndarray:
        return self.beta_T if Population(pop) is Population.TARGET else self.beta_S

    def check(self, binary_mask, Z=None):
        """Raise ``AssertionError`` if a state invariant is violated.

        ``Z`` are the observed modeled columns; when given, the sign of each
        probit utility is checked against the observed binary value.
        """
        binary_mask = np.asarray(binary_mask, dtype=bool)
        assert np.all(self.sigma2 > 0), "non-positive idiosyncratic variance"
        assert np.all(self.sigma2[binary_mask] == 1.0), "binary column variance must be exactly 1"
        for a in (self.m, self.beta_S, self.beta_T, self.sigma2):
            assert np.all(np.isfinite(a)), "non-finite parameter"
        if Z is not None and self.zstar is not None:
            obs = np.asarray(Z)[:, binary_mask]
            assert np.all((self.zstar > 0) == (obs == 1)), "probit utility sign disagrees with data"


@dataclass(frozen=True, eq=False)
class MarginalCovariance:
    omega: np.ndarray = field()

    def __post_init__(self):
        om = _frozen(np.asarray(self.omega, dtype=float))
        if om.ndim != 2 or om.shape[0] != om.shape[1]:
            raise ValueError(f"covariance must be square, got shape {om.shape}")
        if np.max(np.abs(om - om.T), initial=0.0) > SYMMETRY_TOL:
            raise ValueError("covariance is not symmetric")
        floor = -PSD_REL_TOL * abs(np.trace(om))
        if om.size and np.linalg.eigvalsh(om).min() < floor:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "omega", om)

    @property
    def dim(self) -> int:
        return self.omega.shape[0]


def assemble_marginal_covariance(beta, sigma2) -> MarginalCovariance:
    """Return ``beta @ beta.T + diag(sigma2)``."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    sigma2 = np.atleast_1d(np.asarray(sigma2, dtype=float))
    if sigma2.ndim != 1 or beta.shape[0] != sigma2.shape[0]:
        raise ValueError(
            f"dimension mismatch: loadings have {beta.shape[0]} rows, "
            f"variances have shape {sigma2.shape}"
        )
    if not np.all(sigma2 > 0):
        raise ValueError("idiosyncratic variances must be positive")
    omega = beta @ beta.T
    omega = 0.5 * (omega + omega.T)
    omega[np.diag_indices_from(omega)] += sigma2
    return MarginalCovariance(omega)
