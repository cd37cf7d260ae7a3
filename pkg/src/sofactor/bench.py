"""Hyperparameter grid search and the multi-seed benchmark harness."""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .data import TripleSet, load_dataset, split
from .model import Hyperparams, rmse  # noqa: F401  (rmse re-exported as part of the eval surface)
from .train import OptimizerKind, train

# presentation order: first-order baseline, quadratic-only, full model
_MODEL_ORDER = {"SGDM": 0, "SLF": 1, "DRSLF": 2}


@dataclass(frozen=True)
class GridSpec:
    """Axes swept by grid_search.

    The second-order models sweep (lambda_r1, lambda_r2, gamma); SLF
    pins lambda_r1 to 0 and sweeps the other two. SGDM sweeps
    (learning_rate, momentum, lambda_r2). Defaults cover the reference
    sweep: 11 x 5 x 15 = 825 candidate points for the full model.
    ``fixed`` supplies every hyperparameter the sweep does not touch.
    """

    lambda_r1_values: tuple = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05,
                               0.06, 0.07, 0.08, 0.09, 0.1)
    lambda_r2_values: tuple = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
    gamma_values: tuple = tuple(float(g) for g in range(20, 301, 20))
    learning_rate_values: tuple = (0.001, 0.01, 0.1)
    momentum_values: tuple = (0.0, 0.5, 0.9)
    fixed: Hyperparams = Hyperparams()

    def __post_init__(self):
        for name in ("lambda_r1_values", "lambda_r2_values", "gamma_values",
                     "learning_rate_values", "momentum_values"):
            vals = getattr(self, name)
            if len(vals) == 0:
                raise ValueError(f"{name} must not be empty")


@dataclass(frozen=True)
class GridPoint:
    "One fully specified candidate: hyperparameters plus optimizer knobs."

    hyperparams: Hyperparams
    kind: OptimizerKind


@dataclass(frozen=True)
class GridPointResult:
    lambda_r1: float
    lambda_r2: float
    gamma: float
    learning_rate: float
    momentum: float
    val_rmse: float
    best_epoch: int
    status: str  # "ok" or the failure message

    CSV_HEADER = ("lambda_r1,lambda_r2,gamma,learning_rate,momentum,"
                  "val_rmse,best_epoch,status")

    def csv_row(self) -> str:
        return (f"{self.lambda_r1!r},{self.lambda_r2!r},{self.gamma!r},"
                f"{self.learning_rate!r},{self.momentum!r},"
                f"{self.val_rmse!r},{self.best_epoch},{self.status}")


def _grid_points(grid: GridSpec, kind: OptimizerKind,
                 h: Hyperparams) -> Iterable[GridPoint]:
    "Candidates in deterministic ascending lexicographic order."
    l2s = sorted(grid.lambda_r2_values)
    if kind.name == "SGDM":
        for lr, mom, l2 in product(sorted(grid.learning_rate_values),
                                   sorted(grid.momentum_values), l2s):
            yield GridPoint(replace(h, lambda_r1=0.0, lambda_r2=l2),
                            OptimizerKind.sgdm(lr, mom))
        return
    l1s = (0.0,) if kind.name == "SLF" else tuple(sorted(grid.lambda_r1_values))
    for l1, l2, gamma in product(l1s, l2s, sorted(grid.gamma_values)):
        yield GridPoint(replace(h, lambda_r1=l1, lambda_r2=l2, gamma=gamma), kind)


def grid_search(split_data, grid: GridSpec, kind: Optional[OptimizerKind] = None,
                progress=None) -> tuple[GridPoint, list[GridPointResult]]:
    """Train every grid candidate and pick the lowest validation RMSE.

    Candidates are built from grid.fixed with the swept axes overridden
    and visited in ascending lexicographic order; ties keep the earlier
    point, so the selection is deterministic. A candidate that fails to
    train (divergence, inner solver breakdown) is recorded with its
    error message and skipped in the selection; if every candidate
    fails, RuntimeError.
    """
    if kind is None:
        kind = OptimizerKind.drslf()
    results: list[GridPointResult] = []
    best: Optional[GridPoint] = None
    best_val = float("inf")
    for point in _grid_points(grid, kind, grid.fixed):
        ph, pk = point.hyperparams, point.kind
        try:
            state, _report = train(split_data, ph, pk)
            val = rmse(state, split_data.validation)
            best_epoch = _report.best_epoch
            status = "ok"
        except RuntimeError as exc:
            val = float("nan")
            best_epoch = 0
            status = str(exc)
        results.append(GridPointResult(
            lambda_r1=ph.lambda_r1, lambda_r2=ph.lambda_r2, gamma=ph.gamma,
            learning_rate=pk.learning_rate, momentum=pk.momentum,
            val_rmse=val, best_epoch=best_epoch, status=status))
        if status == "ok" and val < best_val:
            best_val = val
            best = point
        if progress is not None:
            progress(results[-1])
    if best is None:
        raise RuntimeError("every grid point failed to train")
    ok_vals = [r.val_rmse for r in results if r.status == "ok"]
    assert all(best_val <= v for v in ok_vals)
    return best, results


def grid_results_csv(results: Sequence[GridPointResult]) -> str:
    out = io.StringIO()
    out.write(GridPointResult.CSV_HEADER + "\n")
    for r in results:
        out.write(r.csv_row() + "\n")
    return out.getvalue()


@dataclass(frozen=True)
class BenchRow:
    dataset: str
    model: str
    mean_rmse: float
    mean_best_epoch: float
    seeds: int
    seed_rmses: tuple
    seed_best_epochs: tuple


@dataclass(frozen=True)
class BenchTable:
    rows: tuple

    CSV_HEADER = "dataset,model,mean_rmse,mean_best_epoch,seeds"

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(self.CSV_HEADER + "\n")
        for r in self.rows:
            out.write(f"{r.dataset},{r.model},{r.mean_rmse!r},"
                      f"{r.mean_best_epoch!r},{r.seeds}\n")
        return out.getvalue()

    def to_text(self) -> str:
        "Aligned human-readable table, including the per-seed values."
        out = io.StringIO()
        out.write(f"{'dataset':<10}{'model':<8}{'mean_rmse':>12}"
                  f"{'mean_best_epoch':>17}  per-seed rmse\n")
        for r in self.rows:
            per_seed = " ".join(f"{v:.5f}" for v in r.seed_rmses)
            out.write(f"{r.dataset:<10}{r.model:<8}{r.mean_rmse:>12.5f}"
                      f"{r.mean_best_epoch:>17.1f}  {per_seed}\n")
        return out.getvalue()


def run_benchmark(data: Union[TripleSet, str, Path],
                  configs: Sequence[tuple[str, float, float]],
                  seeds: Sequence[int],
                  models: Sequence[OptimizerKind],
                  h: Union[Hyperparams, Mapping[str, Hyperparams]] = Hyperparams(),
                  log=None) -> BenchTable:
    """Train every (config, model, seed) combination and aggregate.

    data is an in-memory TripleSet or the path of a dataset file in
    either supported text format. configs are (label, train_frac,
    val_frac) splitting recipes applied to data with each seed; the same
    seed drives both the split and the factor init of its run. h may be
    a single Hyperparams shared by all models or a mapping from model
    name to per-model settings. Row order is configs as given, models in
    fixed presentation order (SGDM, SLF, DRSLF), independent of the
    order requested.
    """
    if isinstance(data, (str, Path)):
        data = load_dataset(data)
    if len(models) == 0:
        raise ValueError("no models requested")
    if len(seeds) == 0:
        raise ValueError("no seeds given")
    if len(configs) == 0:
        raise ValueError("no dataset configs given")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError("duplicate model in request")
    if len(set(label for label, _, _ in configs)) != len(configs):
        raise ValueError("duplicate dataset label in request")

    def h_for(name: str) -> Hyperparams:
        if isinstance(h, Hyperparams):
            return h
        return h[name]

    ordered = sorted(models, key=lambda m: _MODEL_ORDER[m.name])
    rows = []
    for label, train_frac, val_frac in configs:
        for kind in ordered:
            rmses, epochs = [], []
            for seed in seeds:
                sp = split(data, train_frac, val_frac, seed)
                hh = replace(h_for(kind.name), seed=seed)
                _, report = train(sp, hh, kind)
                rmses.append(report.final_test_rmse)
                epochs.append(report.best_epoch)
                if log is not None:
                    print(f"{label} {kind.name} seed={seed} "
                          f"test_rmse={report.final_test_rmse:.5f} "
                          f"best_epoch={report.best_epoch}", file=log)
            rows.append(BenchRow(
                dataset=label, model=kind.name,
                mean_rmse=sum(rmses) / len(rmses),
                mean_best_epoch=sum(epochs) / len(epochs),
                seeds=len(seeds),
                seed_rmses=tuple(rmses),
                seed_best_epochs=tuple(epochs)))
    return BenchTable(rows=tuple(rows))
