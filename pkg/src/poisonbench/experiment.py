"""Wire a config into data, workers and a training run; write metrics and manifests."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .aggregators import rho_formula
from .config import ExperimentConfig, apply_overrides, from_dict
from .core import GLOBAL, ConfigError, DivergenceError, derive_stream
from .data import (Dataset, load_idx, mnist_paths, partition_dirichlet, partition_iid,
                   partition_one_class, stratified_subset, synth_blobs)
from .models import SoftmaxRegression, make_model
from .trainer import (METRIC_COLUMNS, RunResult, build_workers, init_state, measure_sigma2, run,
                      theorem_schedule)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset | None]:
    d, seed = cfg.dataset, cfg.hyper.seed
    if d.kind == "mnist":
        paths = mnist_paths(d.data_dir)
        train = load_idx(paths["train_images"], paths["train_labels"], name="mnist-train")
        test = load_idx(paths["test_images"], paths["test_labels"], name="mnist-test")
        if d.train_per_class is not None:
            train = stratified_subset(train, d.train_per_class, derive_stream(seed, GLOBAL, "subset"))
        if d.test_limit is not None:
            test = test.subset(np.arange(min(d.test_limit, len(test))))
        return train, test
    per = d.per_class + d.test_per_class
    full = synth_blobs(d.num_classes, d.dim, per, d.spread, derive_stream(seed, GLOBAL, "dataset"))
    # blobs come ordered by class: the first per_class of each class train, the rest test
    pos = np.arange(len(full)) % per
    train = full.subset(np.flatnonzero(pos < d.per_class), "blobs-train")
    test = full.subset(np.flatnonzero(pos >= d.per_class), "blobs-test") if d.test_per_class else None
    return train, test


def make_shards(cfg: ExperimentConfig, train: Dataset):
    p, W, seed = cfg.partition, cfg.hyper.W, cfg.hyper.seed
    if p.kind == "iid":
        return partition_iid(len(train), W, derive_stream(seed, GLOBAL, "partition"))
    if p.kind == "dirichlet":
        return partition_dirichlet(train, W, p.beta, derive_stream(seed, GLOBAL, "partition"))
    return partition_one_class(train, W)


def resolve_schedule(cfg: ExperimentConfig, model, workers) -> tuple[ExperimentConfig, dict]:
    """Replace gamma and alpha by the theorem schedule when one is requested."""
    t = cfg.train
    if t.schedule == "none":
        return cfg, {}
    h = cfg.hyper
    state = init_state(model, workers, h.seed)
    regular = state.regular
    F0 = float(np.mean([model.loss(state.x, w.features, w.clean_labels) for w in regular]))
    if t.L is not None:
        L = t.L
    elif isinstance(model, SoftmaxRegression):
        L = max(model.smoothness_estimate(w.features) for w in workers)
    else:
        raise ConfigError("the schedule needs train.L for this model", "train.L")
    sigma = t.sigma if t.sigma is not None else math.sqrt(max(measure_sigma2(model, state.x, w) for w in regular))
    if t.schedule == "ragg":
        r = rho_formula(cfg.aggregator.kind, h.delta, model.param_dim, h.R)
    else:
        r = h.delta
    gamma, alpha = theorem_schedule(t.schedule, F0, L, sigma, r, h.R, h.T)
    info = {"F0": F0, "L": L, "sigma": sigma, "rho_or_delta": r, "gamma": gamma, "alpha": alpha}
    return replace(cfg, hyper=replace(h, gamma=gamma, alpha=alpha)), info


def execute(cfg: ExperimentConfig) -> tuple[RunResult, dict]:
    train, test = load_data(cfg)
    shards = make_shards(cfg, train)
    model = make_model(cfg.model.kind, train.num_classes, train.feature_dim, cfg.model.hidden)
    workers = build_workers(train, shards, cfg.hyper.R, cfg.attack, cfg.hyper.seed)
    # measuring the schedule inputs at x0 draws nothing from the sampling streams
    cfg2, sched = resolve_schedule(cfg, model, workers)
    result = run(model, workers, cfg2.aggregator, cfg2.hyper, cfg2.attack, test,
                 cfg2.train.log_every, cfg2.train.batch_size, sigma2=cfg2.train.measure_sigma2)
    return result, sched


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in records:
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def manifest(cfg: ExperimentConfig, sched: dict) -> dict:
    return {
        "config": cfg.to_dict(),
        "seed": cfg.hyper.seed,
        "version": __version__,
        "numpy": np.__version__,
        "schedule": sched,
    }


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> Path:
    """Run one experiment and write ``metrics.csv`` and ``manifest.json``."""
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    cfg = replace(cfg, output_dir=str(out))
    result, sched = execute(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(result.records))
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, sched), indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------
# sweeps

def _cell_name(assign: dict) -> str:
    return "__".join(f"{k}={v}" for k, v in assign.items()) or "cell"


def expand_grid(spec: dict) -> list[tuple[dict, dict]]:
    """``spec = {"base": {...}, "grid": {"section.key": [values...]}}`` to (assignment, raw config) pairs."""
    base = spec.get("base", {}) or {}
    grid = spec.get("grid", {}) or {}
    if not isinstance(grid, dict):
        raise ConfigError("grid must map dotted keys to value lists", "grid")
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError("grid values must be non-empty lists", f"grid.{k}")
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        assign = dict(zip(keys, values))
        raw = apply_overrides(base, [f"{k}={json.dumps(v)}" for k, v in assign.items()])
        cells.append((assign, raw))
    return cells


def _run_cell(args):
    raw, out_dir = args
    try:
        cfg = from_dict(raw)
        run_experiment(cfg, out_dir)
        rows = read_metrics(Path(out_dir) / "metrics.csv")
        accs = [r["test_acc"] for r in rows]
        return {"status": "ok", "final_test_acc": accs[-1], "best_test_acc": max(accs)}
    except DivergenceError as exc:
        return {"status": f"diverged: {exc}"}
    except Exception as exc:  # a failed cell must not stop the sweep
        return {"status": f"failed: {type(exc).__name__}: {exc}"}


def run_sweep(spec: dict, output_dir, jobs: int = 1) -> tuple[Path, bool]:
    """Run every grid cell into its own directory and write ``summary.csv``.

    Cells that differ only in ``aggregator.kind`` form one group; the summary
    has one row per group with each aggregator's final test accuracy, the best
    of them and the winning aggregator. Returns the summary path and whether
    all cells succeeded.
    """
    out = Path(output_dir)
    cells = expand_grid(spec)
    for assign, raw in cells:
        from_dict(raw)  # fail fast on a bad grid
    tasks = [(raw, str(out / _cell_name(assign))) for assign, raw in cells]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    group_keys = [k for k in (spec.get("grid") or {}) if k != "aggregator.kind"]
    groups: dict[tuple, dict] = {}
    aggs: list[str] = []
    for (assign, raw), res in zip(cells, results):
        agg = from_dict(raw).aggregator.kind
        if agg not in aggs:
            aggs.append(agg)
        key = tuple(assign[k] for k in group_keys)
        groups.setdefault(key, {})[agg] = res

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(group_keys + [f"acc_{a}" for a in aggs] + ["best_acc", "winner"])
    ok = True
    for key, by_agg in groups.items():
        accs = {}
        row = list(key)
        for a in aggs:
            res = by_agg.get(a)
            if res is None:
                row.append("")
            elif res["status"] == "ok":
                accs[a] = res["final_test_acc"]
                row.append(format_value(res["final_test_acc"]))
            else:
                ok = False
                row.append(res["status"].split(":")[0])
        finite = {a: v for a, v in accs.items() if not math.isnan(v)}
        if finite:
            best = max(finite.values())
            row += [format_value(best), next(a for a in aggs if finite.get(a) == best)]
        else:
            row += ["", ""]
        w.writerow(row)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(buf.getvalue())
    return out / "summary.csv", ok
