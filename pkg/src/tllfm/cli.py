"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 data, 3 numerical, 130 interrupted.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .baselines import fit_lasso, fit_plain_lfm, predict_lasso
from .errors import DataError, SchemaError, TLLFMError
from .experiment import ExperimentConfig, run_experiment, scatter_svg
from .gibbs import ChainConfig, ChainInterrupted, run_chain
from .metrics import auroc
from .model import Hyperparameters, Population, Standardization
from .predict import score_dataset
from .simgen import SimulationSpec, generate_dataset, generate_ground_truth, parse_ratio

log = logging.getLogger("tllfm")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_INTERRUPTED = 1, 2, 3, 130


class UsageError(TLLFMError):
    exit_code = EXIT_USAGE


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ratio(text):
    try:
        return parse_ratio(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ratios(text):
    return [_ratio(t) for t in text.split(",") if t]


def cmd_simulate(args):
    t, s = args.ratio
    spec = SimulationSpec(target_train=t, source_train=s, seed=args.seed)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    truth = generate_ground_truth(spec, rng)
    split = generate_dataset(spec, truth, rng)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset(split.train, out / "train.csv")
    io.write_dataset(split.test_target, out / "test-target.csv")
    io.write_dataset(split.test_source, out / "test-source.csv",
                     {"regenerated": True} if split.source_regenerated else None)
    io.write_truth(truth, out / "truth.json")
    print(f"train {split.train.n} rows, test-target {split.test_target.n}, "
          f"test-source {split.test_source.n}" +
          (" (regenerated)" if split.source_regenerated else ""))


def cmd_fit(args):
    ds = io.read_dataset(args.data, require_y=True)
    if args.model == "lasso":
        if args.target_only:
            ds = ds.subset(np.flatnonzero(ds.pop == Population.TARGET))
            if ds.n == 0:
                raise DataError("target partition is empty")
        std = Standardization.fit(ds)
        model = fit_lasso(std.apply(ds.X), ds.y, folds=args.folds,
                          rng=np.random.default_rng(args.seed), mean=std.mean, scale=std.scale)
        io.save_model(args.out, model, ds.columns, ds.col_kind)
        print(f"lasso: lambda={model.lam:.4g}, {int(np.sum(model.weights != 0))} nonzero weights")
        return
    if args.model == "tl-lfm" and ds.n_target == 0:
        raise DataError("target partition is empty")
    hyper = Hyperparameters(K=args.k, iters=args.iters, burnin=args.burnin, thin=args.thin,
                            seed=args.seed, phi=args.phi, phi_S=args.phi_s, phi_T=args.phi_t,
                            v=args.v, learn_phi=args.learn_phi)
    config = ChainConfig.from_hyper(hyper, n_chains=args.chains)
    step = max(hyper.iters // 10, 1)

    def progress(chain, it, total):
        if it % step == 0:
            log.info("chain %d: sweep %d/%d", chain, it, total)

    fit = run_chain if args.model == "tl-lfm" else fit_plain_lfm
    try:
        samples = fit(ds, hyper, config, progress=progress)
    except ChainInterrupted as exc:
        io.save_model(args.out, exc.partial, partial=True)
        log.warning("interrupted; wrote partial checkpoint with %d draws to %s",
                    exc.partial.n_draws, args.out)
        raise
    io.save_model(args.out, samples)
    print(f"{args.model}: {samples.n_draws} retained draws written to {args.out}")


def cmd_predict(args):
    kind, model, header = io.load_model(args.model)
    ds = io.read_dataset(args.data)
    if ds.schema_hash() != header["schema_hash"]:
        raise SchemaError(f"{args.data}: columns do not match the model's training schema")
    if kind == "lasso":
        prob = predict_lasso(model, ds.X)
    else:
        prob = score_dataset(model, ds, pop=args.pop).prob
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "prob"])
        for rid, p in zip(ds.row_id, prob):
            w.writerow([int(rid), repr(float(p))])
    print(f"scored {ds.n} rows -> {args.out}")


def _read_scores(path):
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"row_id", "prob"} <= set(reader.fieldnames):
            raise DataError(f"{path}: line 1: need columns row_id and prob")
        out = {}
        for row in reader:
            try:
                out[int(row["row_id"])] = float(row["prob"])
            except (TypeError, ValueError):
                raise DataError(f"{path}: line {reader.line_num}: bad row_id or prob") from None
        return out


def cmd_evaluate(args):
    scores = _read_scores(args.scores)
    ds = io.read_dataset(args.labels, require_y=True)
    missing = [int(r) for r in ds.row_id if int(r) not in scores]
    if missing:
        raise DataError(f"{args.scores}: no score for {len(missing)} labelled rows "
                        f"(first: row {missing[0]})")
    s = np.array([scores[int(r)] for r in ds.row_id])
    try:
        value = auroc(s, ds.y)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report = {"auroc": value, "n": int(ds.n), "positives": int(ds.y.sum())}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"AUROC {value:.4f} (n={ds.n}, positives={int(ds.y.sum())})")


def cmd_experiment(args):
    kw = dict(ratios=tuple(args.ratios), repeats=args.repeats, seed=args.seed, K=args.k,
              n_jobs=args.jobs, record_timings=args.timings)
    cfg = ExperimentConfig.full(**kw) if args.full else ExperimentConfig(**kw)
    if args.iters is not None or args.burnin is not None:
        from dataclasses import replace
        cfg = replace(cfg, iters=args.iters or cfg.iters, burnin=args.burnin
                      if args.burnin is not None else cfg.burnin)

    def progress(ratio, k):
        log.info("ratio %d:%d repeat %d done", ratio[0], ratio[1], k)

    report, scatters = run_experiment(cfg, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "table.txt").write_text(report.to_table())
    for (label, method), sc in sorted(scatters.items()):
        name = f"factors_{label.replace(':', '-')}_{method}.svg"
        title = f"{'TL' if method == 'tl-lfm' else 'NoTL'} - {label} (target:source)"
        (out / name).write_text(scatter_svg(sc, title))
    print(report.to_table(), end="")


def build_parser():
    p = _Parser(prog="tllfm", description="Transfer-learning latent factor model")
    p.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a simulated train/test split")
    s.add_argument("--ratio", type=_ratio, required=True, help="TARGET:SOURCE training rows")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model to a dataset file")
    f.add_argument("--data", required=True)
    f.add_argument("--model", choices=("tl-lfm", "lfm", "lasso"), default="tl-lfm")
    d = Hyperparameters()
    f.add_argument("--k", type=int, default=d.K)
    f.add_argument("--iters", type=int, default=d.iters)
    f.add_argument("--burnin", type=int, default=d.burnin)
    f.add_argument("--thin", type=int, default=d.thin)
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--phi", type=float, default=d.phi)
    f.add_argument("--phi-s", type=float, default=d.phi_S)
    f.add_argument("--phi-t", type=float, default=d.phi_T)
    f.add_argument("--v", type=float, default=d.v)
    f.add_argument("--learn-phi", action="store_true")
    f.add_argument("--folds", type=int, default=5, help="lasso CV folds")
    f.add_argument("--target-only", action="store_true", help="lasso on target rows only")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="score a dataset with a saved model")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--pop", choices=("target", "source"), default=None,
                   help="population whose loadings score every row (default: each row's own)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="AUROC of scores against labels")
    e.add_argument("--scores", required=True)
    e.add_argument("--labels", required=True, help="dataset file with __y")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run the simulation study")
    x.add_argument("--ratios", type=_ratios, default=[(700, 2800), (500, 2500), (200, 4000)])
    x.add_argument("--repeats", type=int, default=10)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--k", type=int, default=20)
    x.add_argument("--full", action="store_true", help="3000 sweeps / 1000 burn-in")
    x.add_argument("--iters", type=int, default=None)
    x.add_argument("--burnin", type=int, default=None)
    x.add_argument("--jobs", type=int, default=1)
    x.add_argument("--timings", action="store_true", help="record wall-clock in the report")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except TLLFMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
