"""Matrix-completion evaluation: folds, validation grid search, RMSE/MAE reports.

For every fold the training part is split once more into a fitting part and a
validation holdout. Each grid point is fit with early stopping on the holdout
and the point with the lowest validation RMSE is kept for that fold. The fold
is then trained ``repeats`` times with distinct seeds (fresh holdout and
initialization) using the chosen hyperparameters and scored on the test part.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .data import ObservedMatrix, holdout_validation, split_folds
from .errors import ContractError, EtreeError
from .model import Hyperparams, TreeSpec
from .nmf import nmf_fit, nmf_km
from .solver import etree_fit

logger = logging.getLogger(__name__)

METHODS = ("etree", "nmf", "nmf_km")

_REG_VALUES = (0.0, 1e-5, 1e-3, 1e-2, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 5.0, 10.0, 15.0, 20.0)

# The full search space for the rating data. Layer shapes above the
# items are not given there; one shape per tree depth is used.
FULL_GRID = {
    "rank": (5, 10, 15, 20, 25, 50, 100, 150, 200, 250),
    "lam": _REG_VALUES,
    "mu": _REG_VALUES,
    "layers": ((10,), (40, 10), (100, 40, 10)),
}

# A small slice of FULL_GRID around the region that wins on MovieLens.
BUDGET_GRID = {
    "rank": (5, 10),
    "lam": (5.0, 10.0),
    "mu": (1.0, 10.0),
    "layers": ((40, 10),),
}


class EvalRunError(EtreeError):
    """A fit inside the evaluation loop failed; ``cause`` holds the original error."""

    def __init__(self, cause, fold, repeat, point):
        super().__init__(f"fold {fold}, repeat {repeat}, grid point {point}: {cause}")
        self.cause = cause
        self.fold = fold
        self.repeat = repeat
        self.point = point


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    r = pred - truth
    return float(np.sqrt(r @ r / r.size))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size != truth.size:
        raise ContractError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise ContractError("cannot score an empty set of predictions")
    return pred, truth


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 5
    repeats: int = 20
    val_fraction: float = 0.1
    grid: dict = field(default_factory=lambda: dict(BUDGET_GRID))
    patience: int = 10
    max_epochs: int = 1000
    init_epochs: int = 200
    clip: tuple | None = None
    seed: int = 0
    eta: float = 1000.0
    admm_iters: int = 5
    tree_iters: int = 5
    eps: float = 1e-4
    audit: bool = True

    def __post_init__(self):
        if self.folds < 2:
            raise ContractError(f"need at least 2 folds, got {self.folds}")
        if self.repeats < 1:
            raise ContractError(f"need at least 1 repeat, got {self.repeats}")
        if not 0 < self.val_fraction < 1:
            raise ContractError(f"validation fraction must be in (0, 1), got {self.val_fraction}")
        grid = {k: tuple(v) for k, v in self.grid.items()}
        grid["layers"] = tuple(tuple(int(m) for m in s) for s in grid.get("layers", ((10,),)))
        for key in ("rank", "lam", "mu", "layers"):
            if not grid.get(key):
                raise ContractError(f"grid entry {key!r} must be a non-empty list")
        object.__setattr__(self, "grid", grid)
        if self.clip is not None:
            lo, hi = self.clip
            if not lo < hi:
                raise ContractError(f"clip range must satisfy lo < hi, got {self.clip}")
            object.__setattr__(self, "clip", (float(lo), float(hi)))

    def points(self, method) -> list:
        """Grid points for ``method`` in a fixed order (``mu``/``layers`` only where used)."""
        g = self.grid
        mus = g["mu"] if method == "etree" else (0.0,)
        layers = g["layers"] if method != "nmf" else ((),)
        return [
            {"rank": int(r), "lam": float(lam), "mu": float(mu), "layers": list(lay)}
            for r, lam, mu, lay in itertools.product(g["rank"], g["lam"], mus, layers)
        ]


@dataclass
class RunResult:
    fold: int
    repeat: int
    seed: int
    rmse: float
    mae: float
    val_rmse: float
    epochs: int
    hyper: dict
    trace: list
    seconds: float


@dataclass
class EvalReport:
    method: str
    config: dict
    runs: list
    chosen: list
    grid_scores: list

    @property
    def mean_rmse(self) -> float:
        return float(np.mean([r.rmse for r in self.runs]))

    @property
    def mean_mae(self) -> float:
        return float(np.mean([r.mae for r in self.runs]))

    def as_dict(self, timings=True) -> dict:
        runs = []
        for r in self.runs:
            d = asdict(r)
            d.pop("trace")
            if not timings:
                d.pop("seconds")
            runs.append(d)
        return {
            "method": self.method,
            "config": self.config,
            "mean_rmse": self.mean_rmse,
            "mean_mae": self.mean_mae,
            "chosen": self.chosen,
            "grid_scores": self.grid_scores,
            "runs": runs,
        }

    def to_json(self, timings=True) -> str:
        return json.dumps(self.as_dict(timings), indent=2)

    def write_traces(self, path):
        """All objective traces as CSV, one block per run."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fold", "repeat", "epoch", "objective", "val_rmse"])
            for r in self.runs:
                for epoch, obj, val in r.trace:
                    w.writerow([r.fold, r.repeat, epoch, repr(float(obj)), repr(float(val))])


def write_trace_csv(trace, path):
    """One run's trace as ``epoch,objective,val_rmse``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "objective", "val_rmse"])
        for epoch, obj, val in trace:
            w.writerow([epoch, repr(float(obj)), repr(float(val))])


def predict_entries(model, V: ObservedMatrix, clip=None) -> np.ndarray:
    pred = kernels.entry_predictions(V.rows, V.cols, model.A, model.B[0], model.d)
    if clip is not None:
        pred = np.clip(pred, clip[0], clip[1])
    return pred


def fit_method(method, fit: ObservedMatrix, val: ObservedMatrix | None, point: dict, cfg: EvalConfig, seed: int):
    """Train one model; returns a ``FactorModel`` (NMF is wrapped as a single layer)."""
    kw = dict(admm_iters=cfg.admm_iters, eps=cfg.eps, patience=cfg.patience, validation=val)
    if method == "nmf":
        return nmf_fit(fit, point["rank"], point["lam"], seed, cfg.max_epochs, **kw).as_factor_model()
    if method == "nmf_km":
        base = nmf_fit(fit, point["rank"], point["lam"], seed, cfg.max_epochs, **kw)
        return nmf_km(fit, point["rank"], point["lam"], (fit.n_cols, *point["layers"]), seed=seed, nmf_model=base)
    if method == "etree":
        hp = Hyperparams(
            rank=point["rank"], lam=point["lam"], mu=point["mu"], eta=cfg.eta,
            admm_iters=cfg.admm_iters, tree_iters=cfg.tree_iters, eps=cfg.eps,
            max_epochs=cfg.max_epochs, patience=cfg.patience, init_epochs=cfg.init_epochs, seed=seed,
        )
        return etree_fit(fit, hp, TreeSpec((fit.n_cols, *point["layers"])), validation=val)
    raise ContractError(f"unknown method {method!r}; choose from {METHODS}")


def _audit(X, parts):
    keys = [p.rows * X.n_cols + p.cols for p in parts]
    allk = np.concatenate(keys)
    if allk.size != X.nnz or np.unique(allk).size != X.nnz:
        raise AssertionError("fit, validation and test entries overlap or do not cover the data")


def _run_seed(cfg, fold, repeat):
    return cfg.seed * 1_000_003 + fold * 1009 + repeat


def cross_validate(X: ObservedMatrix, method: str, cfg: EvalConfig | None = None, progress=None) -> EvalReport:
    """k-fold evaluation of ``method`` with per-fold validation grid search.

    Runs are executed in a fixed (fold, repeat, grid point) order, so the
    report is a pure function of the data and the configuration.
    """
    cfg = cfg or EvalConfig()
    if method not in METHODS:
        raise ContractError(f"unknown method {method!r}; choose from {METHODS}")
    points = cfg.points(method)
    folds = split_folds(X, cfg.folds, cfg.seed)
    runs, chosen, grid_scores = [], [], []
    for f in range(cfg.folds):
        train, test = folds.train_test(X, f)
        best = None
        scores = []
        for repeat in range(cfg.repeats):
            seed = _run_seed(cfg, f, repeat)
            fit, val = holdout_validation(train, cfg.val_fraction, seed)
            if cfg.audit:
                _audit(X, (fit, val, test))
            if repeat == 0:
                # grid search; the winner doubles as the first repeat's fit
                for k, point in enumerate(points):
                    t0 = time.perf_counter()
                    model = _guarded(method, fit, val, point, cfg, seed, f, repeat, k)
                    score = float(np.sqrt(_sse(model, val, cfg.clip) / val.nnz))
                    scores.append(score)
                    if best is None or score < best[0]:
                        best = (score, k, model, time.perf_counter() - t0)
                    logger.info("fold %d point %d %s val_rmse=%.5f", f, k, point, score)
                score, k, model, secs = best
                point = points[k]
                chosen.append({"fold": f, "index": k, **point})
                grid_scores.append({"fold": f, "val_rmse": scores})
            else:
                t0 = time.perf_counter()
                model = _guarded(method, fit, val, point, cfg, seed, f, repeat, k)
                secs = time.perf_counter() - t0
            pred = predict_entries(model, test, cfg.clip)
            run = RunResult(
                fold=f, repeat=repeat, seed=seed,
                rmse=rmse(pred, test.vals), mae=mae(pred, test.vals),
                val_rmse=float(np.sqrt(_sse(model, val, cfg.clip) / val.nnz)),
                epochs=len(model.trace), hyper=dict(point),
                trace=[(int(e), float(o), float(v)) for e, o, v in model.trace], seconds=secs,
            )
            runs.append(run)
            if progress is not None:
                progress(run)
    conf = asdict(cfg)
    conf["grid"] = {k: [list(x) if isinstance(x, tuple) else x for x in v] for k, v in cfg.grid.items()}
    return EvalReport(method, conf, runs, chosen, grid_scores)


def _sse(model, V, clip):
    r = predict_entries(model, V, clip) - V.vals
    return float(r @ r)


def _guarded(method, fit, val, point, cfg, seed, fold, repeat, k):
    try:
        return fit_method(method, fit, val, point, cfg, seed)
    except EtreeError as e:
        raise EvalRunError(e, fold, repeat, k) from e
