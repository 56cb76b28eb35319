"""Cross-validated m_try tuning and OOB accuracy as a function of forest size."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from .data import as_xy
from .exceptions import DataError
from .forest import DEFAULT_MIN_NODE_SIZE, DEFAULT_N_TREE, BenchmarkForest, accuracy, resolve_seed


@dataclass
class NTreeCurve:
    checkpoints: np.ndarray
    rmse: np.ndarray
    r_squared: np.ndarray
    r_squared_sse: np.ndarray

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in self.__dict__.items()}


@dataclass
class TuningResult:
    """Repeated k-fold CV accuracy per m_try value.

    ``fold_rmse`` and ``fold_r2`` have shape ``(len(grid), repeats * k_folds)``.
    ``flat`` is True when every grid value's RMSE lies within one standard
    error of the best, i.e. no value is clearly better.
    """

    grid: np.ndarray
    rmse: np.ndarray
    rmse_se: np.ndarray
    r_squared: np.ndarray
    r_squared_se: np.ndarray
    fold_rmse: np.ndarray
    fold_r2: np.ndarray
    selected: int
    flat: bool
    k_folds: int
    repeats: int
    curve: NTreeCurve | None = field(default=None)

    def to_dict(self) -> dict:
        out = {
            "grid": self.grid.tolist(),
            "rmse": self.rmse.tolist(),
            "rmse_se": self.rmse_se.tolist(),
            "r_squared": self.r_squared.tolist(),
            "r_squared_se": self.r_squared_se.tolist(),
            "selected_m_try": int(self.selected),
            "no_clear_winner": bool(self.flat),
            "k_folds": self.k_folds,
            "repeats": self.repeats,
        }
        if self.curve is not None:
            out["ntree_curve"] = self.curve.to_dict()
        return out


def cv_splits(n: int, k_folds: int, repeats: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled repeated k-fold splits, identical for a given seed."""
    if not 2 <= k_folds <= n:
        raise DataError(f"k_folds must lie in [2, {n}], got {k_folds}")
    if n // k_folds < 2:
        raise DataError(f"k_folds={k_folds} leaves folds with fewer than 2 observations (n={n})")
    seeds = np.random.SeedSequence(seed).generate_state(repeats)
    splits = []
    for r in range(repeats):
        kf = KFold(n_splits=k_folds, shuffle=True, random_state=int(seeds[r]))
        splits.extend(kf.split(np.zeros(n)))
    return splits


def _score_fold(X, y, train, test, m_try, n_tree, min_node_size, seed):
    f = BenchmarkForest(m_try=m_try, n_tree=n_tree, min_node_size=min_node_size,
                        random_state=seed).fit(X[train], y[train])
    acc = accuracy(y[test], f.predict(X[test]))
    r2 = acc["r_squared"] if acc["r_squared"] is not None else np.nan
    return acc["rmse"], r2


def tune_m_try(data, grid=None, k_folds=5, repeats=2, n_tree=DEFAULT_N_TREE,
               min_node_size=DEFAULT_MIN_NODE_SIZE, seed=0, n_jobs=1) -> TuningResult:
    """Repeated k-fold CV over a grid of m_try values.

    All grid values share the same fold splits. The selected value has the
    smallest mean RMSE (ties go to the smaller m_try).
    """
    X, y = as_xy(data)
    n, p = X.shape
    grid = np.arange(1, p + 1) if grid is None else np.asarray(sorted(set(int(g) for g in grid)))
    if grid.size == 0 or grid.min() < 1 or grid.max() > p:
        raise DataError(f"m_try grid must be non-empty within [1, {p}]")
    seed = resolve_seed(seed)
    splits = cv_splits(n, k_folds, repeats, seed)
    fold_seeds = np.random.SeedSequence([seed, 1]).generate_state(len(splits))
    jobs = [(g, s) for g in range(grid.size) for s in range(len(splits))]
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_score_fold)(X, y, splits[s][0], splits[s][1], int(grid[g]), n_tree,
                             min_node_size, int(fold_seeds[s]))
        for g, s in jobs)
    fold_rmse = np.empty((grid.size, len(splits)))
    fold_r2 = np.empty((grid.size, len(splits)))
    for (g, s), (rm, r2) in zip(jobs, results):
        fold_rmse[g, s] = rm
        fold_r2[g, s] = r2
    count = len(splits)
    rmse = fold_rmse.mean(axis=1)
    rmse_se = fold_rmse.std(axis=1, ddof=1) / np.sqrt(count)
    r2 = np.nanmean(fold_r2, axis=1)
    r2_se = np.nanstd(fold_r2, axis=1, ddof=1) / np.sqrt(np.sum(~np.isnan(fold_r2), axis=1))
    best = int(np.argmin(rmse))
    flat = bool(np.all(rmse - rmse[best] <= rmse_se[best]))
    return TuningResult(grid=grid, rmse=rmse, rmse_se=rmse_se, r_squared=r2, r_squared_se=r2_se,
                        fold_rmse=fold_rmse, fold_r2=fold_r2, selected=int(grid[best]),
                        flat=flat, k_folds=k_folds, repeats=repeats)


def ntree_curve(data, forest: BenchmarkForest | None = None, checkpoints=None, *,
                m_try=None, n_tree=DEFAULT_N_TREE, min_node_size=DEFAULT_MIN_NODE_SIZE,
                seed=0) -> NTreeCurve:
    """OOB accuracy of the first ``t`` trees of a single forest, per checkpoint."""
    X, y = as_xy(data)
    if forest is None:
        forest = BenchmarkForest(m_try=m_try, n_tree=n_tree, min_node_size=min_node_size,
                                 random_state=seed).fit(X, y)
    total = forest.feature_.shape[0]
    if checkpoints is None:
        checkpoints = sorted({t for t in (1, 5, 10, 25, 50, 100, 150, 200, 250, 300, total) if t <= total})
    checkpoints = np.asarray(checkpoints, dtype=int)
    if checkpoints.min() < 1 or checkpoints.max() > total:
        raise DataError(f"checkpoints must lie in [1, {total}]")
    P = forest.tree_predictions(X)
    rm, r2, r2s = [], [], []
    for t in checkpoints:
        acc = accuracy(y, forest._oob_from_matrix(P, int(t)))
        rm.append(acc["rmse"])
        r2.append(np.nan if acc["r_squared"] is None else acc["r_squared"])
        r2s.append(np.nan if acc["r_squared_sse"] is None else acc["r_squared_sse"])
    return NTreeCurve(checkpoints, np.asarray(rm), np.asarray(r2), np.asarray(r2s))
