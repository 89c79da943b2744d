"""Dataset and model files.

Datasets are CSV with a header row plus a JSON sidecar ``<stem>.meta.json``
giving each covariate's kind. Reserved columns: ``__pop`` (S/T) and
``__y`` (0/1, optional when scoring).

Model files are a magic line, a little-endian uint64 header length, a
canonical JSON header, then every array as contiguous little-endian float64.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import LassoModel
from .errors import DataError
from .gibbs import PosteriorSamples
from .model import (
    POP_COLUMN,
    RESERVED,
    Y_COLUMN,
    ColumnKind,
    Dataset,
    Hyperparameters,
    ModelState,
    Population,
    Standardization,
    schema_hash,
    validate_dataset,
)

DATASET_SCHEMA_VERSION = 1
MODEL_SCHEMA_VERSION = 1
MAGIC = b"TLLFM-MODEL\n"


# ---------------------------------------------------------------------------
# datasets


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(ds: Dataset, path, extra_meta=None):
    """Write ``ds`` as CSV plus its metadata sidecar."""
    path = Path(path)
    binary = ds.binary_mask
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = list(ds.columns) + [POP_COLUMN] + ([Y_COLUMN] if ds.y is not None else [])
        w.writerow(head)
        for i in range(ds.n):
            row = [str(int(v)) if b else _fmt(v) for v, b in zip(ds.X[i], binary)]
            row.append(Population(ds.pop[i]).label)
            if ds.y is not None:
                row.append(str(int(ds.y[i])))
            w.writerow(row)
    meta = {"schema_version": DATASET_SCHEMA_VERSION,
            "columns": [{"name": c, "kind": k.value} for c, k in zip(ds.columns, ds.col_kind)]}
    if extra_meta:
        meta.update(extra_meta)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_metadata(path) -> dict[str, ColumnKind]:
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: metadata sidecar not found") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if meta.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported metadata schema version "
                        f"{meta.get('schema_version')!r}")
    out = {}
    problems = []
    for k, entry in enumerate(meta.get("columns", [])):
        try:
            out[entry["name"]] = ColumnKind(entry["kind"])
        except (KeyError, TypeError, ValueError):
            problems.append(f"columns[{k}]: need a name and a kind of continuous/binary")
    if problems:
        raise DataError(f"{path}: invalid metadata", problems)
    return out


def read_dataset(path, *, require_y=False, require_target=False) -> Dataset:
    """Read and validate a dataset CSV and its sidecar.

    Problems are reported with the file line (header is line 1) and column.
    """
    path = Path(path)
    meta = read_metadata(sidecar_path(path))
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DataError(f"{path}: line 1: {exc}") from None
        problems = []
        seen = set()
        for c in header:
            if c in seen:
                problems.append(f"line 1: duplicate column name {c!r}")
            seen.add(c)
        if problems:
            raise DataError(f"{path}: malformed header", problems)
        cols = [[] for _ in header]
        try:
            for row in reader:
                if len(row) != len(header):
                    problems.append(f"line {reader.line_num}: expected {len(header)} fields, "
                                    f"got {len(row)}")
                    continue
                for k, v in enumerate(row):
                    cols[k].append(v)
        except csv.Error as exc:
            problems.append(f"line {reader.line_num}: {exc}")
        if problems:
            raise DataError(f"{path}: malformed CSV", problems)
    table = dict(zip(header, cols))
    ordered_meta = {c: meta[c] for c in meta}
    extra = [c for c in header if c not in RESERVED and c not in meta]
    if extra:
        raise DataError(f"{path}: invalid dataset",
                        [f"column {c!r}: no kind given in metadata" for c in extra])
    try:
        return validate_dataset(table, ordered_meta, require_y=require_y,
                                require_target=require_target, line_offset=2)
    except DataError as exc:
        raise DataError(f"{path}: invalid dataset", exc.problems) from None


# ---------------------------------------------------------------------------
# model files


def _pack(header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    offset = 0
    index = []
    blobs = []
    for name, a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {**header, "arrays": index}
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(text)) + text + b"".join(blobs)


def _unpack(data: bytes, source="model file"):
    if not data.startswith(MAGIC):
        raise DataError(f"{source}: not a model file")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise DataError(f"{source}: truncated header")
    (n,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    try:
        header = json.loads(data[pos:pos + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{source}: corrupt header ({exc})") from None
    version = header.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise DataError(f"{source}: unsupported model schema version {version!r} "
                        f"(this build reads version {MODEL_SCHEMA_VERSION})")
    body = data[pos + n:]
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start, stop = entry["offset"], entry["offset"] + 8 * count
        if stop > len(body):
            raise DataError(f"{source}: truncated array section ({entry['name']})")
        arrays[entry["name"]] = np.frombuffer(body[start:stop], dtype="<f8").reshape(
            entry["shape"]).astype(float)
    return header, arrays


def _schema_header(kind, columns, col_kind):
    return {"schema_version": MODEL_SCHEMA_VERSION, "kind": kind,
            "columns": list(columns), "col_kind": [ColumnKind(k).value for k in col_kind],
            "schema_hash": schema_hash(columns, col_kind)}


def dump_samples(samples: PosteriorSamples, partial=False) -> bytes:
    kind = "tl-lfm" if samples.hierarchical else "lfm"
    header = _schema_header(kind, samples.columns, samples.col_kind)
    header.update(hyper=asdict(samples.hyper), seed=samples.hyper.seed,
                  joint_outcome=samples.joint_outcome, partial=partial,
                  chain_lengths=[len(c) for c in samples.chains],
                  record_factors=bool(samples.states and samples.states[0].F is not None),
                  n_final=len(samples.final_states))
    std = samples.standardization
    arrays = [("standardization/mean", np.array(std.mean)),
              ("standardization/scale", np.array(std.scale))]
    for c, chain in enumerate(samples.chains):
        if not chain:
            continue
        for name in ("m", "beta_S", "beta_T", "sigma2"):
            arrays.append((f"chain{c}/{name}", np.stack([getattr(s, name) for s in chain])))
        arrays.append((f"chain{c}/phi", np.array([[s.phi_S, s.phi_T] for s in chain])))
        if header["record_factors"]:
            arrays.append((f"chain{c}/F", np.stack([s.F for s in chain])))
    for c, s in enumerate(samples.final_states):
        for name in ("m", "beta_S", "beta_T", "sigma2", "F", "zstar"):
            arrays.append((f"final{c}/{name}", getattr(s, name)))
        arrays.append((f"final{c}/phi", np.array([s.phi_S, s.phi_T])))
    return _pack(header, arrays)


def dump_lasso(model: LassoModel, columns, col_kind) -> bytes:
    header = _schema_header("lasso", columns, col_kind)
    header["has_standardization"] = model.mean is not None
    header["has_cv"] = model.cv_lambdas is not None
    arrays = [("weights", model.weights), ("intercept", np.array([model.intercept])),
              ("lambda", np.array([model.lam]))]
    if model.mean is not None:
        arrays += [("standardization/mean", model.mean), ("standardization/scale", model.scale)]
    if model.cv_lambdas is not None:
        arrays += [("cv/lambdas", model.cv_lambdas), ("cv/auroc", model.cv_auroc)]
    return _pack(header, arrays)


def loads_model(data: bytes, source="model file"):
    """Parse model bytes into ``(kind, model, header)``; ``model`` is a
    :class:`PosteriorSamples` or a :class:`LassoModel`."""
    header, a = _unpack(data, source)
    kind = header["kind"]
    if kind == "lasso":
        model = LassoModel(
            weights=a["weights"], intercept=float(a["intercept"][0]), lam=float(a["lambda"][0]),
            mean=a.get("standardization/mean"), scale=a.get("standardization/scale"),
            cv_lambdas=a.get("cv/lambdas"), cv_auroc=a.get("cv/auroc"))
        return kind, model, header
    if kind not in ("tl-lfm", "lfm"):
        raise DataError(f"{source}: unknown model kind {kind!r}")
    chains = []
    for c, length in enumerate(header["chain_lengths"]):
        states = []
        for i in range(length):
            states.append(ModelState(
                m=a[f"chain{c}/m"][i], beta_S=a[f"chain{c}/beta_S"][i],
                beta_T=a[f"chain{c}/beta_T"][i], sigma2=a[f"chain{c}/sigma2"][i],
                F=a[f"chain{c}/F"][i] if header["record_factors"] else None, zstar=None,
                phi_S=float(a[f"chain{c}/phi"][i, 0]), phi_T=float(a[f"chain{c}/phi"][i, 1])))
        chains.append(tuple(states))
    finals = []
    for c in range(header["n_final"]):
        finals.append(ModelState(
            **{n: a[f"final{c}/{n}"] for n in ("m", "beta_S", "beta_T", "sigma2", "F", "zstar")},
            phi_S=float(a[f"final{c}/phi"][0]), phi_T=float(a[f"final{c}/phi"][1])))
    std = Standardization(tuple(float(v) for v in a["standardization/mean"]),
                          tuple(float(v) for v in a["standardization/scale"]))
    samples = PosteriorSamples(
        chains=tuple(chains), hyper=Hyperparameters(**header["hyper"]), standardization=std,
        columns=tuple(header["columns"]),
        col_kind=tuple(ColumnKind(k) for k in header["col_kind"]),
        hierarchical=kind == "tl-lfm", joint_outcome=header["joint_outcome"],
        final_states=tuple(finals))
    return kind, samples, header


def save_model(path, model, columns=None, col_kind=None, partial=False):
    if isinstance(model, LassoModel):
        data = dump_lasso(model, columns, col_kind)
    else:
        data = dump_samples(model, partial=partial)
    Path(path).write_bytes(data)


def load_model(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    return loads_model(data, str(path))


def write_truth(truth, path):
    d = {"m": truth.m.tolist(), "beta_S": truth.beta_S.tolist(),
         "beta_T": truth.beta_T.tolist(), "sigma2": truth.sigma2.tolist(),
         "note": "row 0 of each loadings matrix is the latent outcome"}
    Path(path).write_text(json.dumps(d, sort_keys=True) + "\n")


def read_truth(path):
    from .simgen import GroundTruth
    d = json.loads(Path(path).read_text())
    return GroundTruth(*(np.array(d[k]) for k in ("m", "beta_S", "beta_T", "sigma2")))
