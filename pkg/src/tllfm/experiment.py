"""Cross-validation of the factor count, factor-score projection, and the
simulation-study runner that produces the AUROC comparison table."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .baselines import fit_lasso, fit_plain_lfm, predict_lasso
from .errors import DataError, TLLFMError
from .gibbs import ChainConfig, run_chain
from .metrics import auroc
from .model import Dataset, Hyperparameters, Population, Standardization
from .predict import score_dataset
from .simgen import SimulationSpec, generate_dataset, generate_ground_truth

log = logging.getLogger(__name__)

METHODS = ("tl-lfm", "lfm", "lasso")
LASSO_VARIANTS = ("lasso-pooled", "lasso-target")
TEST_SETS = ("T", "S")
MIN_SUCCESS_FRACTION = 0.8


# ---------------------------------------------------------------------------
# factor count selection


def cross_validate_k(dataset: Dataset, k_grid, folds=5, hyper: Hyperparameters | None = None,
                     seed=0):
    """Pick K by stratified k-fold CV of held-out AUROC.

    Folds are stratified on population x outcome. Returns ``(best_k, table)``
    where ``table`` maps each K to its per-fold AUROCs; ties go to the
    smaller K.
    """
    hyper = hyper or Hyperparameters()
    strata = dataset.pop.astype(int) * 2 + dataset.y.astype(int)
    rng = np.random.default_rng(seed)
    from .baselines import stratified_folds

    for attempt in range(2):
        fold = stratified_folds(strata, folds, rng)
        ok = all(len(np.unique(dataset.y[fold == f])) == 2 and
                 len(np.unique(dataset.y[fold != f])) == 2 for f in range(folds))
        if ok:
            break
    else:
        raise DataError("could not form folds containing both outcome classes")

    table = {}
    for K in sorted(k_grid):
        h = Hyperparameters(**{**asdict(hyper), "K": int(K)})
        vals = []
        for f in range(folds):
            train, test = dataset.subset(np.flatnonzero(fold != f)), dataset.subset(np.flatnonzero(fold == f))
            samples = run_chain(train, h)
            vals.append(auroc(score_dataset(samples, test).prob, test.y))
        table[int(K)] = vals
    means = {k: float(np.mean(v)) for k, v in table.items()}
    best = max(sorted(means), key=lambda k: means[k])
    return best, table


# ---------------------------------------------------------------------------
# factor-score projection


@dataclass(frozen=True, eq=False)
class FactorScatter:
    xy: np.ndarray
    pop: np.ndarray
    components: np.ndarray


def export_factor_scatter(samples, dataset: Dataset, which="final") -> FactorScatter:
    """Project factor scores onto their top two principal components.

    ``which="final"`` uses the last sweep's scores, ``"mean"`` the average
    over retained states (needs a chain run with ``record_factors``).
    """
    if which == "final":
        F = samples.final_state.F
    elif which == "mean":
        Fs = [s.F for s in samples.states if s.F is not None]
        if not Fs:
            raise DataError("chain-mean factors need a chain recorded with record_factors")
        F = np.mean(Fs, axis=0)
    else:
        raise ValueError(f"unknown factor selection {which!r}")
    if F.shape[0] != dataset.n:
        raise DataError("factor scores do not match the dataset rows")
    return project_top2(F, dataset.pop)


def project_top2(F, pop) -> FactorScatter:
    Fc = F - F.mean(axis=0)
    cov = Fc.T @ Fc / max(len(F) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    comps = vecs[:, order]
    # sign convention: largest-magnitude loading of each component positive
    idx = np.argmax(np.abs(comps), axis=0)
    comps = comps * np.sign(comps[idx, np.arange(comps.shape[1])])
    if comps.shape[1] < 2:
        comps = np.column_stack([comps, np.zeros(len(comps))])
    return FactorScatter(Fc @ comps, np.asarray(pop).copy(), comps)


def scatter_svg(scatter: FactorScatter, title="") -> str:
    """800x800 SVG: source as blue crosses, target as red circles."""
    size, pad = 800, 40
    xy = scatter.xy
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    pts = pad + (xy - lo) / span * (size - 2 * pad)
    pts[:, 1] = size - pts[:, 1]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    if title:
        out.append(f'<text x="{size // 2}" y="24" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="16">{title}</text>')
    out.append('<g stroke="blue" stroke-width="1">')
    for (x, y), p in zip(pts, scatter.pop):
        if p == Population.SOURCE:
            out.append(f'<path d="M{x - 3:.1f},{y - 3:.1f}L{x + 3:.1f},{y + 3:.1f}'
                       f'M{x - 3:.1f},{y + 3:.1f}L{x + 3:.1f},{y - 3:.1f}"/>')
    out.append('</g><g stroke="red" fill="none" stroke-width="1">')
    for (x, y), p in zip(pts, scatter.pop):
        if p == Population.TARGET:
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3"/>')
    out.append("</g>")
    out.append(f'<g font-family="sans-serif" font-size="13">'
               f'<text x="{size - 150}" y="{size - 30}" fill="blue">x Source</text>'
               f'<text x="{size - 150}" y="{size - 12}" fill="red">o Target</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# simulation study


@dataclass(frozen=True)
class ExperimentConfig:
    ratios: tuple = ((700, 2800), (500, 2500), (200, 4000))
    repeats: int = 10
    seed: int = 0
    K: int = 20
    iters: int = 1500
    burnin: int = 500
    thin: int = 2
    lasso_folds: int = 5
    n_jobs: int = 1
    record_timings: bool = False
    scatter: bool = True

    @classmethod
    def full(cls, **kw) -> "ExperimentConfig":
        """Sampler settings of the library defaults (3000 sweeps, 1000 burn-in)."""
        h = Hyperparameters()
        return cls(iters=h.iters, burnin=h.burnin, thin=h.thin, **kw)


def repeat_seeds(seed, ratio, repeat) -> dict[str, int]:
    """Independent integer seeds for one (ratio, repeat) cell."""
    ss = np.random.SeedSequence(seed, spawn_key=(int(ratio[0]), int(ratio[1]), int(repeat)))
    data, tl, lfm, lasso = (int(c.generate_state(1, np.uint32)[0]) for c in ss.spawn(4))
    return {"data": data, "tl-lfm": tl, "lfm": lfm, "lasso": lasso}


def _lasso_variants(train, tests, seed, folds):
    out = {}
    for name, rows in (("lasso-pooled", np.arange(train.n)),
                       ("lasso-target", np.flatnonzero(train.pop == Population.TARGET))):
        sub = train.subset(rows)
        std = Standardization.fit(sub)
        model = fit_lasso(std.apply(sub.X), sub.y, folds=folds,
                          rng=np.random.default_rng(seed),
                          mean=std.mean, scale=std.scale)
        out[name] = {t: auroc(predict_lasso(model, ds.X), ds.y) for t, ds in tests.items()}
    return out


def run_repeat(ratio, repeat, cfg: ExperimentConfig, methods=METHODS):
    """Simulate one dataset and score every method on both held-out sets."""
    seeds = repeat_seeds(cfg.seed, ratio, repeat)
    spec = SimulationSpec(target_train=ratio[0], source_train=ratio[1])
    rng = np.random.Generator(np.random.PCG64(seeds["data"]))
    truth = generate_ground_truth(spec, rng)
    split = generate_dataset(spec, truth, rng)
    tests = {"T": split.test_target, "S": split.test_source}
    result = {"seeds": seeds, "auroc": {}, "errors": {}, "seconds": {}, "scatter": {},
              "source_regenerated": split.source_regenerated}

    for method in methods:
        t0 = time.perf_counter()
        try:
            if method in ("tl-lfm", "lfm"):
                hyper = Hyperparameters(K=cfg.K, iters=cfg.iters, burnin=cfg.burnin,
                                        thin=cfg.thin, seed=seeds[method])
                fit = run_chain if method == "tl-lfm" else fit_plain_lfm
                samples = fit(split.train, hyper)
                result["auroc"][method] = {
                    t: auroc(score_dataset(samples, ds).prob, ds.y) for t, ds in tests.items()}
                if cfg.scatter and repeat == 0:
                    result["scatter"][method] = export_factor_scatter(samples, split.train)
            elif method == "lasso":
                result["auroc"].update(_lasso_variants(split.train, tests, seeds["lasso"],
                                                       cfg.lasso_folds))
            else:
                raise ValueError(f"unknown method {method!r}")
        except TLLFMError as exc:
            log.warning("ratio %s repeat %d %s failed: %s", ratio, repeat, method, exc)
            result["errors"][method] = str(exc)
        result["seconds"][method] = time.perf_counter() - t0
    return result


def _run_repeat_limited(args):
    from threadpoolctl import threadpool_limits
    with threadpool_limits(1):
        return run_repeat(*args)


@dataclass
class ExperimentReport:
    """AUROC per (ratio, method, test set) with per-repeat values.

    ``se`` is the sample standard deviation over successful repeats divided
    by the square root of their number. ``lasso`` reports whichever lasso
    variant has the higher mean on that test set; both variants are kept.
    """

    config: dict
    rows: list = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    wall_clock: dict | None = None

    def get(self, ratio, method, test_set) -> dict:
        label = ratio if isinstance(ratio, str) else f"{ratio[0]}:{ratio[1]}"
        for r in self.rows:
            if (r["ratio"], r["method"], r["test_set"]) == (label, method, test_set):
                return r
        raise KeyError((label, method, test_set))

    def to_json(self) -> str:
        d = {"config": self.config, "rows": self.rows, "seeds": self.seeds,
             "failures": self.failures, "notes": self.notes}
        if self.wall_clock is not None:
            d["wall_clock"] = self.wall_clock
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(config=d["config"], rows=d["rows"], seeds=d["seeds"],
                   failures=d["failures"], notes=d.get("notes", []),
                   wall_clock=d.get("wall_clock"))

    def to_table(self) -> str:
        methods = [m for m in ("tl-lfm", "lfm", "lasso") if any(r["method"] == m for r in self.rows)]
        names = {"tl-lfm": "TL-LFM", "lfm": "LFM", "lasso": "Lasso"}
        heads = [f"{names[m]} ({t})" for m in methods for t in TEST_SETS]
        ratios = list(dict.fromkeys(r["ratio"] for r in self.rows))
        lines = ["ratio (T:S) | " + " | ".join(f"{h:>15}" for h in heads)]
        lines.append("-" * len(lines[0]))
        for ratio in ratios:
            cells = []
            for m in methods:
                for t in TEST_SETS:
                    r = self.get(ratio, m, t)
                    cells.append("n/a" if r["mean"] is None else f"{r['mean']:.2f} ({r['se']:.3f})")
            lines.append(f"{ratio:>11} | " + " | ".join(f"{c:>15}" for c in cells))
        return "\n".join(lines) + "\n"


def _summarise(values, n_repeats):
    vals = [v for v in values if v is not None]
    if len(vals) < MIN_SUCCESS_FRACTION * n_repeats or not vals:
        return None, None
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean, se


def run_experiment(cfg: ExperimentConfig, methods=METHODS, progress=None):
    """Run every (ratio, repeat) cell and aggregate.

    Returns ``(report, scatters)`` where ``scatters`` maps
    ``(ratio label, method)`` to the repeat-0 factor projection.
    """
    cells = [(tuple(r), k) for r in cfg.ratios for k in range(cfg.repeats)]
    t0 = time.perf_counter()
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(cfg.n_jobs) as pool:
            results = list(pool.map(_run_repeat_limited,
                                    [(r, k, cfg, methods) for r, k in cells]))
    else:
        results = []
        for r, k in cells:
            results.append(run_repeat(r, k, cfg, methods))
            if progress:
                progress(r, k)

    report = ExperimentReport(config={**asdict(cfg), "methods": list(methods)})
    report.config.pop("n_jobs")
    report.config.pop("record_timings")
    report.config["ratios"] = [f"{a}:{b}" for a, b in cfg.ratios]
    scatters = {}
    timings = {}
    for ratio in cfg.ratios:
        label = f"{ratio[0]}:{ratio[1]}"
        res = [results[i] for i, (r, _) in enumerate(cells) if r == tuple(ratio)]
        report.seeds[label] = [r["seeds"] for r in res]
        fails = {f"{k}:{m}": e for k, r in enumerate(res) for m, e in r["errors"].items()}
        if fails:
            report.failures[label] = fails
        if any(r["source_regenerated"] for r in res):
            report.notes.append(f"{label}: no source rows held out; source test set "
                                f"regenerated from the same ground truth")
        timings[label] = {m: sum(r["seconds"].get(m, 0.0) for r in res) for m in methods}
        expanded = [m for m in methods if m != "lasso"]
        if "lasso" in methods:
            expanded += list(LASSO_VARIANTS)
        summary = {}
        for m in expanded:
            for t in TEST_SETS:
                vals = [r["auroc"].get(m, {}).get(t) for r in res]
                mean, se = _summarise(vals, cfg.repeats)
                summary[(m, t)] = (mean, se, vals)
                report.rows.append({"ratio": label, "method": m, "test_set": t,
                                    "mean": mean, "se": se, "values": vals,
                                    "n_failed": sum(v is None for v in vals)})
        if "lasso" in methods:
            for t in TEST_SETS:
                cands = [(summary[(v, t)][0], v) for v in LASSO_VARIANTS
                         if summary[(v, t)][0] is not None]
                if cands:
                    _, pick = max(cands)
                    mean, se, vals = summary[(pick, t)]
                else:
                    pick, mean, se, vals = None, None, None, [None] * cfg.repeats
                report.rows.append({"ratio": label, "method": "lasso", "test_set": t,
                                    "mean": mean, "se": se, "values": vals,
                                    "n_failed": sum(v is None for v in vals),
                                    "variant": pick})
        for m in ("tl-lfm", "lfm"):
            if res and m in res[0]["scatter"]:
                scatters[(label, m)] = res[0]["scatter"][m]
    if cfg.record_timings:
        report.wall_clock = {"total_seconds": time.perf_counter() - t0, "per_method": timings}
    return report, scatters
