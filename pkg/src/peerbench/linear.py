"""Least-squares baseline, paired CV comparison against the forest, residual trends."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import as_xy
from .exceptions import DataError
from .forest import BenchmarkForest, accuracy, resolve_seed
from .tuning import cv_splits

RANK_TOL = 1e-10


class LinearBaseline(RegressorMixin, BaseEstimator):
    """Ordinary least squares with an intercept.

    Solved by column-pivoted QR on the centred design; columns whose
    pivoted diagonal falls below ``rank_tol`` times the largest are dropped
    (coefficient 0) with a warning.
    """

    def __init__(self, rank_tol=RANK_TOL):
        self.rank_tol = rank_tol

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        if n <= 1:
            raise DataError(f"need at least 2 observations, got {n}")
        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = float(y.mean())
        Xc = X - self.x_mean_
        yc = y - self.y_mean_
        coef = np.zeros(p)
        kept = np.zeros(p, dtype=bool)
        if p > 0 and np.any(Xc):
            Q, R, piv = qr(Xc, mode="economic", pivoting=True)
            d = np.abs(np.diag(R))
            rank = int(np.sum(d > self.rank_tol * d[0]))
            if rank > 0:
                beta = solve_triangular(R[:rank, :rank], Q[:, :rank].T @ yc)
                coef[piv[:rank]] = beta
                kept[piv[:rank]] = True
        self.dropped_ = np.flatnonzero(~kept)
        if self.dropped_.size:
            warnings.warn(f"rank-deficient design: dropped columns {self.dropped_.tolist()}",
                          RuntimeWarning, stacklevel=2)
        self.coef_ = coef
        self.intercept_ = self.y_mean_ - float(self.x_mean_ @ coef)
        self.rank_ = int(kept.sum())
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} covariates, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_


def fit_ols(data) -> LinearBaseline:
    X, y = as_xy(data)
    return LinearBaseline().fit(X, y)


@dataclass
class ComparisonResult:
    """Paired CV comparison of two models on identical folds.

    ``diff`` holds bootstrap replicates of ``RMSE_a - RMSE_b`` over
    resampled organisations (positive favours model b); ``r2_gap`` holds
    ``R2_b - R2_a`` (absolute difference of squared-Pearson R^2).
    """

    names: tuple
    fold_rmse: np.ndarray
    fold_r2: np.ndarray
    oof_pred: np.ndarray
    sq_error: np.ndarray
    diff: np.ndarray
    r2_gap: np.ndarray

    @property
    def rmse(self):
        return self.fold_rmse.mean(axis=1)

    @property
    def rmse_sd(self):
        return self.fold_rmse.std(axis=1, ddof=1)

    @property
    def r_squared(self):
        return np.nanmean(self.fold_r2, axis=1)

    @property
    def r_squared_sd(self):
        return np.nanstd(self.fold_r2, axis=1, ddof=1)

    @property
    def diff_mean(self) -> float:
        return float(self.diff.mean())

    @property
    def diff_sd(self) -> float:
        return float(self.diff.std(ddof=1))

    @property
    def b_better(self) -> bool:
        """True when the 5th percentile of the RMSE difference is above zero."""
        return bool(np.quantile(self.diff, 0.05) > 0)

    @property
    def within_one_sd(self) -> bool:
        return abs(self.diff_mean) <= self.diff_sd

    def residuals(self, y) -> np.ndarray:
        """Out-of-fold residuals per model (mean prediction over repeats)."""
        return np.asarray(y)[None, :] - self.oof_pred

    def to_dict(self) -> dict:
        a, b = self.names
        return {
            "models": [a, b],
            "cv_rmse": {a: float(self.rmse[0]), b: float(self.rmse[1])},
            "cv_rmse_sd": {a: float(self.rmse_sd[0]), b: float(self.rmse_sd[1])},
            "cv_r_squared": {a: float(self.r_squared[0]), b: float(self.r_squared[1])},
            "cv_r_squared_sd": {a: float(self.r_squared_sd[0]), b: float(self.r_squared_sd[1])},
            "rmse_difference": {"definition": f"rmse[{a}] - rmse[{b}]",
                                "mean": self.diff_mean, "sd": self.diff_sd,
                                "q05": float(np.quantile(self.diff, 0.05)),
                                "q95": float(np.quantile(self.diff, 0.95))},
            "r_squared_gap_absolute": {"definition": f"r2[{b}] - r2[{a}]",
                                       "mean": float(self.r2_gap.mean()),
                                       "sd": float(self.r2_gap.std(ddof=1))},
            f"{b}_better": self.b_better,
            "no_winner_within_1sd": self.within_one_sd,
            "B_boot": int(self.diff.size),
        }

    def summary_table(self) -> str:
        a, b = self.names
        w = max(len(a), len(b), 5) + 2
        rows = [f"{'model':<{w}}{'cv_rmse':>10}{'sd':>10}{'cv_r2':>10}{'sd':>10}"]
        for k, name in enumerate((a, b)):
            rows.append(f"{name:<{w}}{self.rmse[k]:>10.4f}{self.rmse_sd[k]:>10.4f}"
                        f"{self.r_squared[k]:>10.4f}{self.r_squared_sd[k]:>10.4f}")
        rows.append(f"rmse[{a}] - rmse[{b}]: mean {self.diff_mean:.4f}, sd {self.diff_sd:.4f}")
        rows.append(f"r2[{b}] - r2[{a}] (absolute): mean {self.r2_gap.mean():.4f}, "
                    f"sd {self.r2_gap.std(ddof=1):.4f}")
        return "\n".join(rows) + "\n"


def _pearson_r2(y, p):
    if np.ptp(y) == 0 or np.ptp(p) == 0:
        return np.nan
    r = np.corrcoef(y, p)[0, 1]
    return r * r


def _fit_predict(model, X, y, train, test, seed):
    m = clone(model)
    if "random_state" in m.get_params():
        m.set_params(random_state=int(seed))
    return m.fit(X[train], y[train]).predict(X[test])


def cv_compare(data, model_a=None, model_b=None, k_folds=5, repeats=2, B_boot=1000, seed=0,
               names=None) -> ComparisonResult:
    """Repeated k-fold CV of two models on shared folds, with an organisation
    bootstrap of the difference in out-of-sample RMSE.

    Defaults compare ``LinearBaseline`` (a) with ``BenchmarkForest`` (b).
    Estimators with a ``random_state`` parameter get the same per-fold seed
    whichever slot they occupy, so swapping the models negates ``diff``.
    """
    X, y = as_xy(data)
    n = X.shape[0]
    model_a = LinearBaseline() if model_a is None else model_a
    model_b = BenchmarkForest() if model_b is None else model_b
    if names is None:
        names = (type(model_a).__name__, type(model_b).__name__)
        if names[0] == names[1]:
            names = (names[0] + "_a", names[1] + "_b")
    if B_boot < 2:
        raise DataError("B_boot must be at least 2")
    seed = resolve_seed(seed)
    splits = cv_splits(n, k_folds, repeats, seed)
    fold_seeds = np.random.SeedSequence([seed, 1]).generate_state(len(splits))
    fold_rmse = np.empty((2, len(splits)))
    fold_r2 = np.empty((2, len(splits)))
    oof = np.zeros((2, n))
    for k, model in enumerate((model_a, model_b)):
        for s, (train, test) in enumerate(splits):
            pred = _fit_predict(model, X, y, train, test, fold_seeds[s])
            acc = accuracy(y[test], pred)
            fold_rmse[k, s] = acc["rmse"]
            fold_r2[k, s] = np.nan if acc["r_squared"] is None else acc["r_squared"]
            oof[k, test] += pred / repeats
    sq = (y[None, :] - oof) ** 2
    rng = np.random.default_rng([seed, 2])
    diff = np.empty(B_boot)
    gap = np.empty(B_boot)
    for b in range(B_boot):
        idx = rng.integers(0, n, n)
        diff[b] = np.sqrt(sq[0, idx].mean()) - np.sqrt(sq[1, idx].mean())
        gap[b] = _pearson_r2(y[idx], oof[1, idx]) - _pearson_r2(y[idx], oof[0, idx])
    return ComparisonResult(names=tuple(names), fold_rmse=fold_rmse, fold_r2=fold_r2,
                            oof_pred=oof, sq_error=sq, diff=diff, r2_gap=gap)


@dataclass
class ResidualTrend:
    grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    bandwidth: float

    def outside_band(self, k=2.0) -> np.ndarray:
        """Grid points where the trend leaves the ``+-k*SE`` band around zero."""
        return np.abs(self.mean) > k * self.se

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "mean": self.mean.tolist(), "se": self.se.tolist(),
                "bandwidth": self.bandwidth}


def _local_linear_weights(x, g, h):
    u = (x - g) / h
    w = np.where(np.abs(u) < 1.0, (1.0 - np.abs(u) ** 3) ** 3, 0.0)
    sw = w.sum()
    s1 = (w * (x - g)).sum()
    s2 = (w * (x - g) ** 2).sum()
    den = sw * s2 - s1 * s1
    if sw == 0:
        return np.zeros_like(x)
    if den <= 1e-14 * max(sw * s2, 1e-300):
        return w / sw
    return w * (s2 - s1 * (x - g)) / den


def residual_trend(residuals, x, bandwidth=None, grid_size=50) -> ResidualTrend:
    """Local-linear (tricube) smooth of residuals against one covariate.

    ``bandwidth`` defaults to half the covariate range. The pointwise SE is
    ``sigma * ||l(g)||`` with ``sigma^2 = RSS / (n - tr L)``.
    """
    r = np.asarray(residuals, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if r.shape != x.shape or r.ndim != 1:
        raise DataError("residuals and covariate values must be equal-length vectors")
    if r.size < 10:
        raise DataError(f"residual trend needs at least 10 points, got {r.size}")
    span = float(np.ptp(x))
    if span == 0:
        raise DataError("covariate is constant")
    h = 0.5 * span if bandwidth is None else float(bandwidth)
    if h <= 0:
        raise DataError("bandwidth must be positive")
    grid = np.linspace(x.min(), x.max(), grid_size)
    L = np.array([_local_linear_weights(x, xi, h) for xi in x])
    fitted = L @ r
    dof = r.size - np.trace(L)
    sigma2 = float(np.sum((r - fitted) ** 2) / dof) if dof > 0 else 0.0
    mean = np.empty(grid_size)
    se = np.empty(grid_size)
    for k, g in enumerate(grid):
        lw = _local_linear_weights(x, g, h)
        mean[k] = lw @ r
        se[k] = np.sqrt(sigma2) * np.linalg.norm(lw)
    return ResidualTrend(grid=grid, mean=mean, se=se, bandwidth=h)
