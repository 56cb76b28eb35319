"""Permutation and group importance, correlation clustering, partial dependence."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .data import Dataset, as_xy
from .exceptions import DataError
from .forest import BenchmarkForest, resolve_seed

DEFAULT_PERMUTATIONS = 10
CLUSTER_CUTOFF = 0.7


@dataclass
class ImportanceReport:
    """Mean increase in OOB MSE per variable (or group) with its standard error.

    ``se`` is the standard error over organisations of the per-organisation
    increase in squared OOB error (averaged over repeats); ``mc_se`` is the
    Monte-Carlo standard error over permutation repeats only.
    ``groups[k]`` lists the column indices permuted together for entry k.
    ``increase`` has shape ``(n_entries, n_permutations)``.
    """

    names: list
    importance: np.ndarray
    se: np.ndarray
    groups: list
    baseline_mse: float
    increase: np.ndarray
    mc_se: np.ndarray = None

    def ranking(self) -> np.ndarray:
        """Entry indices by decreasing importance (stable for ties)."""
        return np.argsort(-self.importance, kind="stable")

    def to_dict(self) -> dict:
        return {
            "baseline_oob_mse": self.baseline_mse,
            "entries": [
                {"name": self.names[k], "columns": [int(c) for c in self.groups[k]],
                 "importance": float(self.importance[k]), "se": float(self.se[k]),
                 "mc_se": float(self.mc_se[k])}
                for k in range(len(self.names))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceReport":
        e = d["entries"]
        return cls(names=[x["name"] for x in e], importance=np.array([x["importance"] for x in e]),
                   se=np.array([x["se"] for x in e]), groups=[x["columns"] for x in e],
                   baseline_mse=d["baseline_oob_mse"], increase=np.empty((len(e), 0)),
                   mc_se=np.array([x.get("mc_se", np.nan) for x in e]))


def _oob_sq_error(forest: BenchmarkForest, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (y - forest.oob_predict(X)) ** 2


def _row_permutations(n: int, n_permutations: int, seed: int) -> list[np.ndarray]:
    # one row permutation per repeat, shared by every variable and group so
    # results do not depend on column order
    return [np.random.default_rng([seed, r]).permutation(n) for r in range(n_permutations)]


def _check_partition(groups, p: int) -> list[list[int]]:
    groups = [sorted(int(c) for c in g) for g in groups]
    flat = [c for g in groups for c in g]
    if any(not 0 <= c < p for c in flat):
        raise DataError(f"group column index out of range [0, {p})")
    if len(flat) != len(set(flat)):
        raise DataError("groups overlap")
    if any(len(g) == 0 for g in groups):
        raise DataError("empty group")
    if len(flat) != p:
        raise DataError("groups must partition all covariate columns")
    return groups


def _importance(forest, X, y, groups, names, n_permutations, seed) -> ImportanceReport:
    if n_permutations < 1:
        raise ValueError("n_permutations must be at least 1")
    seed = resolve_seed(seed)
    base_sq = _oob_sq_error(forest, X, y)
    ok = ~np.isnan(base_sq)
    if not ok.any():
        raise DataError("no OOB predictions available; increase n_tree")
    m = int(ok.sum())
    base = float(base_sq[ok].mean())
    perms = _row_permutations(X.shape[0], n_permutations, seed)
    inc = np.empty((len(groups), n_permutations))
    per_org = np.zeros((len(groups), m))
    for k, cols in enumerate(groups):
        for r, perm in enumerate(perms):
            Xp = X.copy()
            Xp[:, cols] = X[perm][:, cols]
            d = _oob_sq_error(forest, Xp, y)[ok] - base_sq[ok]
            inc[k, r] = d.mean()
            per_org[k] += d
    per_org /= n_permutations
    se = per_org.std(axis=1, ddof=1) / np.sqrt(m) if m > 1 else np.zeros(len(groups))
    mc_se = (inc.std(axis=1, ddof=1) / np.sqrt(n_permutations) if n_permutations > 1
             else np.zeros(len(groups)))
    return ImportanceReport(names=list(names), importance=inc.mean(axis=1), se=se,
                            groups=[list(g) for g in groups], baseline_mse=base, increase=inc,
                            mc_se=mc_se)


def _names(data, p):
    if isinstance(data, Dataset):
        return data.feature_names
    return [f"x{j + 1}" for j in range(p)]


def permutation_importance(forest: BenchmarkForest, data, n_permutations=DEFAULT_PERMUTATIONS,
                           seed=0, columns=None) -> ImportanceReport:
    """Increase in OOB MSE after permuting each column, averaged over repeats."""
    X, y = as_xy(data)
    names = _names(data, X.shape[1])
    cols = range(X.shape[1]) if columns is None else columns
    groups = [[int(j)] for j in cols]
    return _importance(forest, X, y, groups, [names[g[0]] for g in groups], n_permutations, seed)


def group_importance(forest: BenchmarkForest, data, groups, n_permutations=DEFAULT_PERMUTATIONS,
                     seed=0) -> ImportanceReport:
    """As ``permutation_importance`` but each group's columns share one row permutation."""
    X, y = as_xy(data)
    groups = _check_partition(groups, X.shape[1])
    names = _names(data, X.shape[1])
    labels = ["+".join(names[c] for c in g) for g in groups]
    return _importance(forest, X, y, groups, labels, n_permutations, seed)


def cluster_variables(data, cutoff=CLUSTER_CUTOFF) -> list[list[int]]:
    """Complete-linkage clustering on ``1 - |pearson r|``, cut at ``1 - cutoff``.

    Columns only share a group when every pairwise |r| exceeds ``cutoff``.
    Zero-variance columns are returned as singletons with a warning.
    Groups are ordered by their smallest column index.
    """
    if isinstance(data, Dataset):
        X = data.X
    elif isinstance(data, tuple):
        X = data[0]
    else:
        X = data
    X = np.asarray(X, dtype=np.float64)
    p = X.shape[1]
    if p < 1:
        raise DataError("need at least one column")
    const = np.ptp(X, axis=0) == 0
    if const.any():
        warnings.warn(f"zero-variance columns {np.flatnonzero(const).tolist()} placed in singleton groups",
                      RuntimeWarning, stacklevel=2)
    live = np.flatnonzero(~const)
    groups = [[int(j)] for j in np.flatnonzero(const)]
    if live.size == 1:
        groups.append([int(live[0])])
    elif live.size > 1:
        r = np.corrcoef(X[:, live], rowvar=False)
        d = 1.0 - np.abs(r)
        np.fill_diagonal(d, 0.0)
        d = np.clip((d + d.T) / 2, 0.0, None)
        Z = linkage(squareform(d, checks=False), method="complete")
        labels = fcluster(Z, t=1.0 - cutoff, criterion="distance")
        for lab in np.unique(labels):
            groups.append(sorted(int(c) for c in live[labels == lab]))
    return sorted(groups, key=lambda g: g[0])


@dataclass
class PartialDependence:
    column: int
    name: str
    grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    rug: np.ndarray

    def to_dict(self) -> dict:
        return {"column": self.column, "name": self.name, "grid": self.grid.tolist(),
                "mean": self.mean.tolist(), "se": self.se.tolist(), "rug": self.rug.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PartialDependence":
        return cls(column=d["column"], name=d["name"],
                   **{k: np.asarray(d[k], dtype=np.float64) for k in ("grid", "mean", "se", "rug")})


def partial_dependence(forest: BenchmarkForest, data, column: int, grid_size=25,
                       grid=None) -> PartialDependence:
    """Average prediction with ``column`` fixed at each grid value.

    The default grid is ``grid_size`` equally spaced quantiles of the column
    (duplicates dropped). The band is the standard error of the per-tree
    partial dependence values.
    """
    X, _ = as_xy(data)
    p = X.shape[1]
    if not 0 <= column < p:
        raise DataError(f"column {column} out of range [0, {p})")
    if grid is None:
        if grid_size < 2:
            raise DataError("grid_size must be at least 2")
        grid = np.unique(np.quantile(X[:, column], np.linspace(0.0, 1.0, grid_size)))
    grid = np.asarray(grid, dtype=np.float64)
    n_tree = forest.feature_.shape[0]
    per_tree = np.empty((n_tree, grid.size))
    Xg = X.copy()
    for k, g in enumerate(grid):
        Xg[:, column] = g
        per_tree[:, k] = forest.tree_predictions(Xg).mean(axis=1)
    mean = per_tree.mean(axis=0)
    se = per_tree.std(axis=0, ddof=1) / np.sqrt(n_tree) if n_tree > 1 else np.zeros(grid.size)
    name = _names(data, p)[column]
    return PartialDependence(column=int(column), name=name, grid=grid, mean=mean, se=se,
                             rug=np.sort(X[:, column]))
