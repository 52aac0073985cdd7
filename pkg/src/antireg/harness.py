"""Seeded experiment grid, unified results CSV, selection summary and paired report."""

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .data import (
    Dataset,
    Standardizer,
    parse_csv,
    parse_idx,
    parse_whitespace_dat,
    stratified_fraction,
    synthetic,
    train_val_split,
)
from .diagnostics import (
    Interval,
    PairedSample,
    ci95,
    holm_bonferroni,
    paired_t_test,
    wilcoxon_signed_rank,
)
from .errors import AllZeroError, MissingBaselineError
from .nets import ShallowNet
from .schedule import ARConfig, alpha_recommendation
from .training import OptimizerSpec, evaluate, primary_loss, train

log = logging.getLogger(__name__)

CSV_VERSION = "v1"
CSV_HEADER = (
    "dataset,task,fraction,seed,optimizer,lambda0,alpha,ablations,rmse,mae,r2,accuracy,"
    "cross_entropy,ece,rho,r_clip,r_proj,epochs,runtime_s,final_lambda,diverged"
).split(",")
ABLATIONS = ("no_trust_region", "no_grad_clip", "l2", "constant_lambda")
LAMBDA0_GRID = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)
REGRESSION_METRICS = ("rmse", "mae", "r2")
CLASSIFICATION_METRICS = ("accuracy", "cross_entropy", "ece")
ENV_OUTPUT_DIR = "ANTIREG_OUTPUT_DIR"


def metrics_for(task):
    return REGRESSION_METRICS if task == "regression" else CLASSIFICATION_METRICS


def parse_ablations(value):
    """Normalize a comma list (or iterable) of ablation names to a sorted tuple."""
    if value is None:
        return ()
    items = value.split(",") if isinstance(value, str) else list(value)
    out = sorted({s.strip() for s in items if s and s.strip()})
    bad = [a for a in out if a not in ABLATIONS]
    if bad:
        raise ValueError(f"unknown ablations {bad}; choose from {ABLATIONS}")
    return tuple(out)


# --- dataset specification ------------------------------------------------


@dataclass
class DatasetSpec:
    """Where a dataset comes from and how it is split and scaled.

    ``source`` is one of ``dat``, ``csv``, ``idx`` or ``synthetic``. A fixed
    test split (``test_fraction``, seeded by ``split_seed``) is held out
    first; fractions are then taken from the remaining training pool and
    features are standardized with statistics of that pool only.
    """

    name: str
    task: str = "regression"
    source: str = "synthetic"
    path: Optional[str] = None
    labels_path: Optional[str] = None
    n_features: Optional[int] = None
    target_column: object = -1
    generator: Optional[str] = None
    params: dict = field(default_factory=dict)
    standardize: Optional[bool] = None
    test_fraction: float = 0.2
    split_seed: int = 0

    def load(self):
        if self.source == "dat":
            if self.n_features is None:
                raise ValueError("dat source needs n_features")
            ds = parse_whitespace_dat(self.path, self.n_features, self.name)
        elif self.source == "csv":
            ds = parse_csv(self.path, self.target_column, task=self.task, name=self.name)
        elif self.source == "idx":
            ds = parse_idx(self.path, self.labels_path, self.name)
        elif self.source == "synthetic":
            params = dict(self.params)
            seed = params.pop("seed", 0)
            ds = synthetic(self.generator, seed=seed, **params)
        else:
            raise ValueError(f"unknown dataset source {self.source!r}")
        ds.name = self.name
        if ds.task != self.task:
            ds = Dataset(ds.X, ds.y, self.task, self.name, ds.meta)
        return ds

    def prepare(self):
        """Load, hold out the test split and standardize. Returns ``(pool, test)``."""
        ds = self.load()
        test_idx = stratified_fraction(ds, self.test_fraction, self.split_seed, self.task,
                                       allow_empty=True)
        mask = np.ones(len(ds), dtype=bool)
        mask[test_idx] = False
        pool, test = ds.subset(np.flatnonzero(mask)), ds.subset(np.sort(test_idx))
        scale = self.standardize if self.standardize is not None else self.task == "regression"
        if scale:
            st = Standardizer.fit(pool.X)
            pool.X, test.X = st.transform(pool.X), st.transform(test.X)
        return pool, test


# --- grid specification ---------------------------------------------------


@dataclass
class GridSpec:
    """Cells to run and the shared training budget."""

    fractions: list = field(default_factory=lambda: [0.01, 0.05, 0.10, 0.25, 0.50])
    seeds: list = field(default_factory=lambda: list(range(32)))
    lambda0: list = field(default_factory=lambda: list(LAMBDA0_GRID))
    add_baseline_zero: bool = True
    alpha: Optional[float] = None
    optimizers: list = field(default_factory=lambda: ["adam", "sgdm"])
    trust_radii: Optional[list] = None
    ablations: tuple = ()
    epochs: int = 100
    patience: Optional[int] = 10
    batch_size: int = 32
    hidden: list = field(default_factory=lambda: [64])
    clip_tau: Optional[float] = 1.0
    logit_clip: Optional[float] = 30.0
    reward: str = "negative_l2"
    val_fraction: float = 0.2
    schedule_mode: str = "dataset"
    n0: Optional[int] = None
    trigger: bool = False
    stop_rule: bool = False
    restore_best: bool = False
    lr: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        self.ablations = parse_ablations(self.ablations)

    def lambdas(self):
        lams = [float(v) for v in self.lambda0 if v != 0]
        if self.add_baseline_zero or any(v == 0 for v in self.lambda0):
            lams = [0.0] + lams
        return lams

    def radii_for(self, task, depth):
        if self.trust_radii is not None:
            return [float(b) for b in self.trust_radii]
        b = 5.0 if task == "regression" else 10.0
        return [b] * depth


def default_grid(task, **overrides):
    """Full-size default grid for ``task`` (fractions, radii) with optional overrides."""
    if task == "classification":
        base = dict(fractions=[0.001, 0.002, 0.003, 0.005, 0.010], trust_radii=[10.0, 10.0])
    else:
        base = dict(fractions=[0.01, 0.05, 0.10, 0.25, 0.50], trust_radii=[5.0, 5.0])
    base.update(overrides)
    return GridSpec(**base)


# --- result rows ----------------------------------------------------------


@dataclass
class ResultRow:
    """One grid cell. Metrics of the other task family stay ``None``."""

    dataset: str
    task: str
    fraction: float
    seed: int
    optimizer: str
    lambda0: float
    alpha: float
    ablations: str = ""
    rmse: Optional[float] = None
    mae: Optional[float] = None
    r2: Optional[float] = None
    accuracy: Optional[float] = None
    cross_entropy: Optional[float] = None
    ece: Optional[float] = None
    rho: Optional[float] = None
    r_clip: Optional[float] = None
    r_proj: Optional[float] = None
    epochs: Optional[int] = None
    runtime_s: Optional[float] = None
    final_lambda: Optional[float] = None
    diverged: bool = False

    @property
    def key(self):
        return (self.dataset, self.fraction, self.optimizer, self.ablations, self.lambda0, self.seed)

    def baseline_key(self):
        return (self.dataset, self.fraction, self.optimizer, self.ablations, 0.0, self.seed)


_INT_FIELDS = {"seed", "epochs"}
_STR_FIELDS = {"dataset", "task", "optimizer", "ablations"}


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse(name, text):
    if name in _STR_FIELDS:
        return text
    if text == "":
        return None
    if name == "diverged":
        return text in ("1", "True", "true")
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
    return buf.getvalue()


def write_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows))
    return path


def read_csv(path_or_text):
    """Parse a results CSV (path or text) back into :class:`ResultRow` objects."""
    text = str(path_or_text)
    if "\n" not in text and Path(text).exists():
        text = Path(text).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}; expected schema {CSV_VERSION}")
    return [ResultRow(**{k: _parse(k, v) for k, v in zip(header, line)}) for line in reader if line]


# --- running cells --------------------------------------------------------


@dataclass
class CellResult:
    row: ResultRow
    val_score: float
    z_val: Optional[np.ndarray]
    z_norms: list
    artifacts: dict
    diagnostics: Optional[object] = None


def _ar_config(grid, task, lam0, n0, depth, ablations):
    radii = None if "no_trust_region" in ablations else grid.radii_for(task, depth)
    reward = "l2" if "l2" in ablations else grid.reward
    mode = "constant" if "constant_lambda" in ablations else grid.schedule_mode
    return ARConfig(
        lam0=lam0,
        n0=n0,
        alpha=grid.alpha if grid.alpha is not None else alpha_recommendation(task),
        task=task,
        reward=reward,
        trust_radii=radii,
        clip_tau=None if "no_grad_clip" in ablations else grid.clip_tau,
        logit_clip=grid.logit_clip if task == "classification" else None,
        schedule_mode=mode,
        trigger_enabled=grid.trigger,
        stop_rule_enabled=grid.stop_rule,
        allow_unbounded="no_trust_region" in ablations,
    )


def split_for_cell(pool, fraction, seed, val_fraction):
    """Training-fraction draw and its validation split, both derived from ``seed``."""
    idx = stratified_fraction(pool, fraction, seed, pool.task, allow_empty=True)
    sub = pool.subset(idx)
    tr, va = train_val_split(sub, val_fraction, seed, pool.task)
    return sub.subset(tr), sub.subset(va)


def reference_n0(grid, pool):
    """Smallest training-set size in the fraction ladder (the schedule anchor)."""
    if grid.n0 is not None:
        return int(grid.n0)
    sizes = []
    for f in grid.fractions:
        total = len(pool) if f == 1 else int(round(f * len(pool)))
        sizes.append(total - int(round(grid.val_fraction * total)))
    return max(1, min(sizes))


def run_cell(spec, pool, test, grid, fraction, seed, optimizer, lam0, ablations=(),
             baseline_z_norms=None, n0=None, run_dir=None):
    """Train one grid cell and return its row plus artifacts. Never raises."""
    task = spec.task
    ablations = parse_ablations(ablations)
    alpha = grid.alpha if grid.alpha is not None else alpha_recommendation(task)
    row = ResultRow(spec.name, task, float(fraction), int(seed), optimizer, float(lam0),
                    float(alpha), "+".join(ablations))
    try:
        train_ds, val_ds = split_for_cell(pool, fraction, seed, grid.val_fraction)
        out_dim = 1 if task == "regression" else pool.n_classes
        sizes = [pool.n_features] + list(grid.hidden) + [out_dim]
        net = ShallowNet.init(sizes, seed=seed)
        n0 = reference_n0(grid, pool) if n0 is None else n0
        config = _ar_config(grid, task, float(lam0), n0, net.depth, ablations)
        opt = OptimizerSpec.default(optimizer, task, grid.batch_size)
        if optimizer in grid.lr:
            opt = OptimizerSpec(opt.kind, float(grid.lr[optimizer]), opt.momentum, opt.betas,
                                opt.eps, opt.batch_size)
        res = train(net, train_ds.X, train_ds.y, config, opt, epochs=grid.epochs, X_val=val_ds.X,
                    y_val=val_ds.y, patience=grid.patience, seed=seed,
                    baseline_z_norms=baseline_z_norms, restore_best=grid.restore_best)
        d = res.diagnostics
        metrics, z_test = evaluate(res.net, test.X, test.y, task, config.logit_clip)
        val_metrics, _ = evaluate(res.net, val_ds.X, val_ds.y, task, config.logit_clip)
        for k, v in metrics.items():
            setattr(row, k, None if d.diverged else v)
        row.r_clip, row.r_proj = d.r_clip, d.r_proj
        row.epochs, row.runtime_s = d.epochs, d.runtime_s
        row.final_lambda, row.diverged = d.final_lambda, d.diverged
        score = float("inf") if d.diverged else primary_loss(val_metrics, task)
        artifacts = {}
        if run_dir is not None:
            artifacts = _write_run_dir(run_dir, row, config, opt, res, val_ds, z_test, test)
        return CellResult(row, score, None if d.diverged else res.z_val,
                          [t.z_norm for t in res.trace], artifacts, d)
    except Exception as exc:  # noqa: BLE001 - a failing cell must not abort the grid
        log.warning("cell %s failed: %s", row.key, exc)
        row.diverged = True
        return CellResult(row, float("inf"), None, [], {"error": repr(exc)})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def cell_dirname(row):
    abl = row.ablations or "none"
    return f"f{row.fraction:g}_{row.optimizer}_lam{row.lambda0:g}_{abl}_s{row.seed}"


def _write_run_dir(run_dir, row, config, opt, res, val_ds, z_test, test):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(
        _jsonable({"row_key": list(row.key), "ar_config": config, "optimizer": opt}), indent=2))
    with open(run_dir / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "lambda", "train_loss", "val_metric", "r_clip", "r_proj", "z_norm",
                    "rho", "multiplier", "grad_norm_max", "layer_norms"])
        for t in res.trace:
            w.writerow([t.epoch, repr(t.lam), repr(t.train_loss), repr(t.val_metric),
                        repr(t.r_clip), repr(t.r_proj), repr(t.z_norm), repr(t.rho),
                        repr(t.multiplier), repr(t.grad_norm_max),
                        " ".join(repr(v) for v in t.layer_norms)])
    (run_dir / "diagnostics.json").write_text(json.dumps(_jsonable(res.diagnostics), indent=2))
    np.savez(run_dir / "predictions.npz",
             z_val=res.z_val if res.z_val is not None else np.zeros((0,)),
             y_val=val_ds.y, z_test=z_test, y_test=test.y,
             clip_flags=np.asarray(res.clip_flags, dtype=bool),
             proj_flags=np.asarray(res.proj_flags, dtype=bool))
    return {"run_dir": str(run_dir)}


@dataclass
class GridOutcome:
    rows: list
    summary: list
    csv_path: Optional[Path] = None
    summary_path: Optional[Path] = None
    skipped: list = field(default_factory=list)
    cells: list = field(default_factory=list)


def _group_job(args):
    spec, pool, test, grid, fraction, seed, optimizer, ablations, n0, out_dir = args
    results = []
    base_norms = None
    for lam0 in grid.lambdas():
        run_dir = None
        if out_dir is not None:
            probe = ResultRow(spec.name, spec.task, float(fraction), int(seed), optimizer,
                              float(lam0), 0.0, "+".join(ablations))
            run_dir = Path(out_dir) / "runs" / spec.name / cell_dirname(probe)
        cell = run_cell(spec, pool, test, grid, fraction, seed, optimizer, lam0, ablations,
                        baseline_z_norms=base_norms, n0=n0, run_dir=run_dir)
        if lam0 == 0.0:
            base_norms = cell.z_norms or None
        results.append(cell)
    return results


def _fill_rho(cells):
    """Final-epoch output scale ratio against the matched baseline cell."""
    base = {c.row.baseline_key(): c for c in cells if c.row.lambda0 == 0.0}
    for c in cells:
        b = base.get(c.row.baseline_key())
        if b is None or c.z_val is None or b.z_val is None:
            c.row.rho = None
            continue
        denom = float(np.linalg.norm(b.z_val))
        c.row.rho = float(np.linalg.norm(c.z_val)) / denom if denom > 0 else None


def select_best(cells):
    """Best ``lambda0`` per (dataset, fraction, optimizer, ablations) by mean validation score.

    The baseline competes too, so a selected value of 0 means AR was not chosen.
    """
    groups = {}
    for c in cells:
        r = c.row
        groups.setdefault((r.dataset, r.fraction, r.optimizer, r.ablations), {}).setdefault(
            r.lambda0, []).append(c.val_score)
    summary = []
    for (ds, frac, opt, abl), by_lam in sorted(groups.items()):
        scored = sorted((float(np.mean(v)) if np.all(np.isfinite(v)) else float("inf"), lam)
                        for lam, v in by_lam.items())
        best_score, best_lam = scored[0]
        summary.append({"dataset": ds, "fraction": frac, "optimizer": opt, "ablations": abl,
                        "best_lambda0": best_lam, "val_score": best_score,
                        "n_seeds": len(by_lam[best_lam])})
    return summary


def write_summary(summary, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["dataset", "fraction", "optimizer", "ablations", "best_lambda0", "val_score", "n_seeds"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in summary:
            w.writerow([_fmt(s[c]) for c in cols])
    return path


def read_summary(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append({"dataset": rec["dataset"], "fraction": float(rec["fraction"]),
                        "optimizer": rec["optimizer"], "ablations": rec["ablations"],
                        "best_lambda0": float(rec["best_lambda0"]),
                        "val_score": float(rec["val_score"]), "n_seeds": int(rec["n_seeds"])})
    return out


def resolve_output_dir(path=None):
    """Explicit path, else the ``ANTIREG_OUTPUT_DIR`` environment variable, else ``experiments``."""
    if path is not None:
        return Path(path)
    return Path(os.environ.get(ENV_OUTPUT_DIR, "experiments"))


def run_grid(grid, datasets, output_dir=None, parallelism=1, only_seed=None, only_fraction=None,
             only_optimizer=None, write_runs=True, csv_name=None):
    """Run every (dataset, fraction, seed, optimizer, lambda0) cell.

    Cells sharing (dataset, fraction, seed, optimizer) form a group run in
    one worker with the baseline first, so AR cells see the baseline's
    per-epoch output norms. Groups are independent and may run in parallel.

    Returns
    -------
    GridOutcome
        Rows in deterministic grid order, plus the selection summary.
    """
    if isinstance(datasets, DatasetSpec):
        datasets = [datasets]
    out_dir = None if output_dir is False else resolve_output_dir(output_dir)
    jobs, skipped = [], []
    for spec in datasets:
        pool, test = spec.prepare()
        n0 = reference_n0(grid, pool)
        for fraction in grid.fractions:
            if only_fraction is not None and not math.isclose(fraction, only_fraction):
                skipped.append((spec.name, fraction, "only_fraction"))
                continue
            for seed in grid.seeds:
                if only_seed is not None and seed != only_seed:
                    continue
                for opt in grid.optimizers:
                    if only_optimizer is not None and opt != only_optimizer:
                        continue
                    jobs.append((spec, pool, test, grid, fraction, seed, opt, grid.ablations, n0,
                                 out_dir if write_runs else None))
    for s in skipped:
        log.info("skipped %s fraction %s (%s)", *s)

    if parallelism and parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            groups = list(ex.map(_group_job, jobs))
    else:
        groups = [_group_job(j) for j in jobs]
    cells = [c for g in groups for c in g]
    _fill_rho(cells)
    cells.sort(key=lambda c: (c.row.dataset, c.row.fraction, c.row.optimizer, c.row.ablations,
                              c.row.lambda0, c.row.seed))
    rows = [c.row for c in cells]
    summary = select_best(cells)
    outcome = GridOutcome(rows, summary, skipped=skipped, cells=cells)
    if out_dir is not None:
        name = csv_name or f"results_{'_'.join(s.name for s in datasets)}_AR.csv"
        outcome.csv_path = write_csv(rows, out_dir / name)
        outcome.summary_path = write_summary(summary, out_dir / name.replace(".csv", "_best.csv"))
    return outcome


# --- paired report --------------------------------------------------------


@dataclass
class ReportLine:
    dataset: str
    fraction: float
    optimizer: str
    ablations: str
    lambda0: float
    metric: str
    n: int
    treat_mean: float
    treat_se: float
    base_mean: float
    base_se: float
    delta: float
    delta_se: float
    ci_lower: float
    ci_upper: float
    p_t: float
    p_t_holm: float
    p_w: float
    degenerate_t: bool = False


def _paired_stats(t, b):
    sample = PairedSample("m", t, b)
    d = sample.differences
    if d.size >= 2:
        iv = ci95(d)
        tt = paired_t_test(sample)
        p_t = tt.p_value
    else:
        nan = float("nan")
        iv = Interval(float(d.mean()), nan, nan, nan)
        p_t, tt = 1.0, None
    try:
        p_w = wilcoxon_signed_rank(sample).p_value
    except AllZeroError:
        p_w = 1.0
    return iv, p_t, p_w, bool(tt is not None and tt.degenerate)


def _se(v):
    v = np.asarray(v, dtype=float)
    return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")


def paired_report(rows, selection=None, metrics=None):
    """Seed-paired AR versus baseline statistics per fraction x optimizer block.

    Parameters
    ----------
    selection : list of dict, optional
        Output of :func:`select_best`. When absent, every nonzero
        ``lambda0`` in a block is compared with the baseline.

    Raises
    ------
    MissingBaselineError
        If a compared treatment seed has no baseline row.
    """
    by_key = {r.key: r for r in rows}
    blocks = {}
    for r in rows:
        if r.lambda0 == 0.0:
            continue
        blocks.setdefault((r.dataset, r.fraction, r.optimizer, r.ablations), {}).setdefault(
            r.lambda0, []).append(r)
    chosen = None
    if selection is not None:
        chosen = {(s["dataset"], s["fraction"], s["optimizer"], s["ablations"]): s["best_lambda0"]
                  for s in selection}
    lines = []
    for bkey in sorted(blocks):
        lam_list = sorted(blocks[bkey])
        if chosen is not None:
            pick = chosen.get(bkey)
            if pick is None or pick == 0.0:
                continue
            lam_list = [pick] if pick in blocks[bkey] else []
        for lam in lam_list:
            treat = sorted(blocks[bkey][lam], key=lambda r: r.seed)
            missing = [r.seed for r in treat if r.baseline_key() not in by_key]
            if missing:
                raise MissingBaselineError(f"no baseline rows for {bkey} seeds {missing}", missing)
            base = [by_key[r.baseline_key()] for r in treat]
            block_lines = []
            for m in metrics or metrics_for(treat[0].task):
                pairs = [(getattr(t, m), getattr(b, m)) for t, b in zip(treat, base)]
                pairs = [(a, c) for a, c in pairs if a is not None and c is not None
                         and math.isfinite(a) and math.isfinite(c)]
                if not pairs:
                    continue
                tv, bv = np.array(pairs, dtype=float).T
                iv, p_t, p_w, degen = _paired_stats(tv, bv)
                block_lines.append(ReportLine(
                    bkey[0], bkey[1], bkey[2], bkey[3], lam, m, tv.size, float(tv.mean()), _se(tv),
                    float(bv.mean()), _se(bv), iv.mean, iv.se, iv.lower, iv.upper, p_t, p_t, p_w,
                    degen))
            if block_lines:
                adj = holm_bonferroni([ln.p_t for ln in block_lines])
                for ln, a in zip(block_lines, adj):
                    ln.p_t_holm = float(a)
            lines.extend(block_lines)
    return lines


REPORT_COLUMNS = [f.name for f in fields(ReportLine)]


def report_to_csv(lines, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for ln in lines:
            w.writerow([_fmt(getattr(ln, c)) for c in REPORT_COLUMNS])
    return path


def report_to_markdown(lines, rho_scale=1.0):
    """Markdown table; ``rho_scale`` only affects display of any rho column."""
    del rho_scale
    head = ("| dataset | fraction | optimizer | ablations | lambda0 | metric | n | AR mean ± SE | "
            "baseline mean ± SE | Δ | 95% CI | p_t | p_t Holm | p_W |")
    sep = "|" + "---|" * 14
    out = [head, sep]
    for ln in lines:
        out.append(
            f"| {ln.dataset} | {ln.fraction:g} | {ln.optimizer} | {ln.ablations or '-'} | "
            f"{ln.lambda0:g} | {ln.metric} | {ln.n} | {ln.treat_mean:.4f} ± {ln.treat_se:.4f} | "
            f"{ln.base_mean:.4f} ± {ln.base_se:.4f} | {ln.delta:+.4f} | "
            f"[{ln.ci_lower:.4f}, {ln.ci_upper:.4f}] | {ln.p_t:.4g} | {ln.p_t_holm:.4g} | "
            f"{ln.p_w:.4g} |"
        )
    return "\n".join(out) + "\n"
