"""Random regression forest with per-tree in-bag records and OOB estimates."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _tree
from .data import as_xy
from .exceptions import DataError, NumericError

DEFAULT_N_TREE = 300
DEFAULT_M_TRY = 4
DEFAULT_MIN_NODE_SIZE = 5


def derive_seeds(seed, count: int) -> np.ndarray:
    """``count`` independent 64-bit seeds from a master seed."""
    ss = np.random.SeedSequence(seed)
    return ss.generate_state(count, dtype=np.uint64)


def resolve_seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().entropy % (2**63))
    if isinstance(random_state, (int, np.integer)):
        if random_state < 0:
            raise ValueError("random_state must be non-negative")
        return int(random_state)
    raise TypeError(f"random_state must be an int or None, got {type(random_state).__name__}")


@dataclass(frozen=True)
class Tree:
    """Read-only view of one fitted tree."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    in_bag_counts: np.ndarray
    seed: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left == -1))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _tree.predict_trees(X, self.feature[None], self.threshold[None],
                                   self.left[None], self.right[None], self.value[None])[0]


class BenchmarkForest(RegressorMixin, BaseEstimator):
    """Bootstrap-aggregated CART regression forest.

    Parameters
    ----------
    m_try : int or None
        Columns sampled (without replacement) at each node. ``None`` uses
        ``min(4, n_features)``.
    n_tree : int
        Number of trees.
    min_node_size : int
        Nodes with at most this many observations become leaves.
    random_state : int or None
        Master seed; per-tree seeds are derived from it.

    Attributes
    ----------
    in_bag_counts_ : ndarray of shape (n_tree, n_samples)
        Number of times each training row was drawn for each tree.
    oob_prediction_ : ndarray of shape (n_samples,)
        Out-of-bag prediction, NaN where every tree saw the row.
    """

    def __init__(self, m_try=None, n_tree=DEFAULT_N_TREE, min_node_size=DEFAULT_MIN_NODE_SIZE,
                 random_state=None):
        self.m_try = m_try
        self.n_tree = n_tree
        self.min_node_size = min_node_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        m_try = min(DEFAULT_M_TRY, p) if self.m_try is None else int(self.m_try)
        if not 1 <= m_try <= p:
            raise ValueError(f"m_try must lie in [1, {p}], got {m_try}")
        if int(self.n_tree) < 1:
            raise ValueError("n_tree must be at least 1")
        if int(self.min_node_size) < 1:
            raise ValueError("min_node_size must be at least 1")

        self.seed_ = resolve_seed(self.random_state)
        n_tree = int(self.n_tree)
        seeds = derive_seeds(self.seed_, n_tree)
        max_nodes = 2 * n - 1
        feature = np.empty((n_tree, max_nodes), np.int32)
        threshold = np.empty((n_tree, max_nodes), np.float64)
        left = np.empty((n_tree, max_nodes), np.int32)
        right = np.empty((n_tree, max_nodes), np.int32)
        value = np.empty((n_tree, max_nodes), np.float64)
        n_nodes = np.zeros(n_tree, np.int64)
        in_bag = np.zeros((n_tree, n), np.int32)
        Xc = np.ascontiguousarray(X)
        _tree.build_forest(Xc, np.ascontiguousarray(y), _tree.dense_ranks(Xc), seeds, m_try, int(self.min_node_size),
                           feature, threshold, left, right, value, n_nodes, in_bag)
        width = int(n_nodes.max())
        self._set_state(feature[:, :width], threshold[:, :width], left[:, :width],
                        right[:, :width], value[:, :width], n_nodes, in_bag, seeds)
        # padded nodes are never reached; zero them so the state is canonical
        for t in range(n_tree):
            k = n_nodes[t]
            self.feature_[t, k:] = -1
            self.threshold_[t, k:] = 0.0
            self.left_[t, k:] = -1
            self.right_[t, k:] = -1
            self.value_[t, k:] = 0.0
        self.m_try_ = m_try
        self.n_features_in_ = p
        self.oob_prediction_ = self._oob_from_matrix(self.tree_predictions(Xc))
        return self

    def _set_state(self, feature, threshold, left, right, value, n_nodes, in_bag, seeds):
        self.feature_ = np.ascontiguousarray(feature)
        self.threshold_ = np.ascontiguousarray(threshold)
        self.left_ = np.ascontiguousarray(left)
        self.right_ = np.ascontiguousarray(right)
        self.value_ = np.ascontiguousarray(value)
        self.n_nodes_ = np.asarray(n_nodes, np.int64)
        self.in_bag_counts_ = np.ascontiguousarray(in_bag)
        self.tree_seeds_ = np.asarray(seeds, np.uint64)

    def _oob_from_matrix(self, P: np.ndarray, n_trees: int | None = None) -> np.ndarray:
        t = P.shape[0] if n_trees is None else n_trees
        mask = self.in_bag_counts_[:t] == 0
        counts = mask.sum(axis=0)
        sums = np.where(mask, P[:t], 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "feature_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} covariates, got {X.shape[1]}")
        return np.ascontiguousarray(X)

    def tree_predictions(self, X) -> np.ndarray:
        """Matrix of per-tree predictions, shape ``(n_tree, n_rows)``."""
        X = self._check_X(X)
        return _tree.predict_trees(X, self.feature_, self.threshold_, self.left_,
                                   self.right_, self.value_)

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    def oob_predict(self, X, n_trees: int | None = None) -> np.ndarray:
        """OOB predictions for the training rows ``X`` (possibly permuted).

        Only trees whose resample excluded row ``i`` contribute to entry
        ``i``; entries with no such tree are NaN.
        """
        X = self._check_X(X)
        if X.shape[0] != self.in_bag_counts_.shape[1]:
            raise DataError("OOB prediction requires the training rows")
        return self._oob_from_matrix(self.tree_predictions(X), n_trees)

    @property
    def estimators_(self) -> list[Tree]:
        check_is_fitted(self, "feature_")
        return [self.tree(t) for t in range(self.feature_.shape[0])]

    def tree(self, t: int) -> Tree:
        k = int(self.n_nodes_[t])
        return Tree(self.feature_[t, :k], self.threshold_[t, :k], self.left_[t, :k],
                    self.right_[t, :k], self.value_[t, :k], self.in_bag_counts_[t],
                    int(self.tree_seeds_[t]))

    def fingerprint(self) -> str:
        check_is_fitted(self, "feature_")
        h = hashlib.blake2b(digest_size=8)
        for arr in (self.feature_, self.threshold_, self.left_, self.value_, self.in_bag_counts_):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    @property
    def params_(self) -> dict:
        return {"m_try": int(self.m_try_), "n_tree": int(self.feature_.shape[0]),
                "min_node_size": int(self.min_node_size), "seed": int(self.seed_)}


def fit_forest(data, m_try=None, n_tree=DEFAULT_N_TREE, min_node_size=DEFAULT_MIN_NODE_SIZE,
               seed=0) -> BenchmarkForest:
    X, y = as_xy(data)
    return BenchmarkForest(m_try=m_try, n_tree=n_tree, min_node_size=min_node_size,
                           random_state=seed).fit(X, y)


def predict(forest: BenchmarkForest, x) -> float | np.ndarray:
    """Forest prediction for one row (returns a float) or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != forest.n_features_in_:
            raise DataError(f"expected {forest.n_features_in_} covariates, got {x.shape[0]}")
        return float(forest.predict(x[None, :])[0])
    return forest.predict(x)


def oob_predict(forest: BenchmarkForest, data) -> np.ndarray:
    X, _ = as_xy(data)
    return forest.oob_predict(X)


def accuracy(y_true, y_pred) -> dict:
    """RMSE plus squared-Pearson and 1 - SSE/SST R^2 over non-missing pairs."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ok = ~np.isnan(y_pred)
    if not ok.any():
        raise NumericError("no non-missing predictions to score")
    yt, yp = y_true[ok], y_pred[ok]
    resid = yt - yp
    rmse = float(np.sqrt(np.mean(resid**2)))
    out = {"rmse": rmse, "r_squared": None, "r_squared_sse": None,
           "r_squared_reason": None, "n_used": int(ok.sum())}
    sst = float(np.sum((yt - yt.mean()) ** 2))
    if sst == 0:
        out["r_squared_reason"] = "response has zero variance"
        return out
    out["r_squared_sse"] = 1.0 - float(np.sum(resid**2)) / sst
    if np.ptp(yp) == 0:
        out["r_squared_reason"] = "predictions have zero variance"
        return out
    r = np.corrcoef(yt, yp)[0, 1]
    out["r_squared"] = float(r * r)
    return out


def oob_error(forest: BenchmarkForest, data) -> dict:
    """OOB RMSE and R^2 (squared Pearson by default; ``r_squared_sse`` also given)."""
    X, y = as_xy(data)
    pred = forest.oob_predict(X)
    if np.all(np.isnan(pred)):
        raise NumericError("every OOB prediction is missing; increase n_tree")
    out = accuracy(y, pred)
    out["n_missing"] = int(np.isnan(pred).sum())
    return out


def prob_always_in_bag(n: int, n_tree: int) -> float:
    """Chance that one observation is drawn by every tree, leaving it no OOB prediction."""
    return (1.0 - (1.0 - 1.0 / n) ** n) ** n_tree
