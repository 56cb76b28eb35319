"""Out-of-resample bootstrap of residuals, pooled predictive distributions and
percentile placement.

For each resample ``b`` the forest is refit on ``n`` rows drawn with
replacement; residuals are kept only for organisations that the resample
never drew, so every stored replicate is an honest out-of-sample error.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_X_y

from .data import Dataset, _midpoint_ecdf_sorted, as_xy
from .exceptions import DataError, InsufficientReplicatesError, NumericError
from .forest import DEFAULT_MIN_NODE_SIZE, BenchmarkForest, derive_seeds, resolve_seed

DEFAULT_B = 1000
BOOTSTRAP_N_TREE = 100
MIN_B = 100
MIN_PIT_REPLICATES = 30
QUANTILE_LEVELS = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)
FILE_MAGIC = "# peerbench-replicates v1 "


def params_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ReplicateMatrix:
    """``B x n`` residual replicates; ``present[b, i]`` marks out-of-resample cells.

    ``residuals`` is NaN wherever ``present`` is False unless the matrix was
    built by ``in_resample_replicates``, which fills every cell.
    """

    residuals: np.ndarray
    present: np.ndarray
    seed: int
    params: dict
    org_ids: list
    peer_group: np.ndarray | None = None
    resample_indices: np.ndarray | None = field(default=None, repr=False)
    fingerprints: list | None = field(default=None, repr=False)

    @property
    def B(self) -> int:
        return self.residuals.shape[0]

    @property
    def n(self) -> int:
        return self.residuals.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return self.present.sum(axis=0)

    @property
    def presence_fraction(self) -> float:
        return float(self.present.mean())

    @property
    def expected_presence_fraction(self) -> float:
        return (1.0 - 1.0 / self.n) ** self.n

    @property
    def params_hash(self) -> str:
        return params_hash({**self.params, "seed": int(self.seed), "B": self.B, "n": self.n})

    def values(self, i: int) -> np.ndarray:
        """Present replicates of organisation ``i`` in resample order."""
        return self.residuals[self.present[:, i], i]

    def present_only(self) -> "ReplicateMatrix":
        """Copy with non-present cells set to NaN."""
        r = np.where(self.present, self.residuals, np.nan)
        return ReplicateMatrix(r, self.present.copy(), self.seed, dict(self.params), list(self.org_ids),
                               self.peer_group, self.resample_indices, self.fingerprints)

    def members(self, scope="cohort") -> np.ndarray:
        if scope == "cohort":
            return np.arange(self.n)
        if self.peer_group is None:
            raise DataError("replicates carry no peer-group labels")
        idx = np.flatnonzero(self.peer_group == scope)
        if idx.size == 0:
            raise DataError(f"unknown or empty scope {scope!r}")
        return idx

    def check_coverage(self):
        empty = np.flatnonzero(self.counts == 0)
        if empty.size:
            names = ", ".join(self.org_ids[i] for i in empty[:5])
            raise InsufficientReplicatesError(
                f"{empty.size} organisation(s) have no out-of-resample replicate ({names}); increase B")


def _resample_residuals(X, y, seed, m_try, n_tree, min_node_size, mode):
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, n, n)
    forest = BenchmarkForest(m_try=m_try, n_tree=n_tree, min_node_size=min_node_size,
                             random_state=seed).fit(X[rows], y[rows])
    drawn = np.bincount(rows, minlength=n)
    P = forest.tree_predictions(X)
    if mode == "in_bag":
        # trees whose own bag holds a copy of i; other cells use the full forest
        in_tree = np.zeros((P.shape[0], n), dtype=bool)
        for t in range(P.shape[0]):
            in_tree[t, rows[forest.in_bag_counts_[t] > 0]] = True
        k = in_tree.sum(axis=0)
        local = np.where(in_tree, P, 0.0).sum(axis=0) / np.maximum(k, 1)
        pred = np.where((drawn > 0) & (k > 0), local, P.mean(axis=0))
    else:
        pred = P.mean(axis=0)
    return rows, y - pred, forest.fingerprint()


def _run(X, y, data, m_try, n_tree, min_node_size, B, seed, n_jobs, mode, keep_all):
    if B < MIN_B:
        raise DataError(f"B must be at least {MIN_B}, got {B}")
    seed = resolve_seed(seed)
    n = X.shape[0]
    seeds = derive_seeds(seed, B)
    out = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_resample_residuals)(X, y, int(s), m_try, n_tree, min_node_size, mode)
        for s in seeds)
    idx = np.empty((B, n), dtype=np.int64)
    res = np.empty((B, n))
    fps = []
    for b, (rows, r, fp) in enumerate(out):
        idx[b] = rows
        res[b] = r
        fps.append(fp)
    present = np.ones((B, n), dtype=bool)
    for b in range(B):
        present[b, idx[b]] = False
    if not keep_all:
        res = np.where(present, res, np.nan)
    params = {"m_try": m_try, "n_tree": int(n_tree), "min_node_size": int(min_node_size),
              "mode": mode}
    ids = data.org_ids if isinstance(data, Dataset) else [f"org{i + 1}" for i in range(n)]
    groups = data.peer_group if isinstance(data, Dataset) else None
    rm = ReplicateMatrix(res, present, seed, params, list(ids), groups, idx, fps)
    rm.check_coverage()
    return rm


class OutOfResampleBootstrap(BaseEstimator):
    """Estimator wrapper: ``fit(X, y)`` stores the replicates in ``replicates_``."""

    def __init__(self, B=DEFAULT_B, m_try=None, n_tree=BOOTSTRAP_N_TREE,
                 min_node_size=DEFAULT_MIN_NODE_SIZE, random_state=None, n_jobs=1):
        self.B = B
        self.m_try = m_try
        self.n_tree = n_tree
        self.min_node_size = min_node_size
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.replicates_ = _run(X, y, None, self.m_try, self.n_tree, self.min_node_size, self.B,
                                self.random_state, self.n_jobs, "oor", False)
        return self

    def summary(self) -> "ResidualSummary":
        check_is_fitted(self, "replicates_")
        return residual_summary(self.replicates_)


def oor_bootstrap(data, m_try=None, n_tree=BOOTSTRAP_N_TREE, min_node_size=DEFAULT_MIN_NODE_SIZE,
                  B=DEFAULT_B, seed=0, n_jobs=1) -> ReplicateMatrix:
    """Out-of-resample residual replicates for every organisation."""
    X, y = as_xy(data)
    return _run(X, y, data, m_try, n_tree, min_node_size, B, seed, n_jobs, "oor", False)


def in_resample_replicates(data, m_try=None, n_tree=BOOTSTRAP_N_TREE, min_node_size=1, B=DEFAULT_B,
                           seed=0, n_jobs=1, mode="in_bag") -> ReplicateMatrix:
    """Residuals for every cell, drawn or not; ``present`` still flags the OOR cells.

    ``mode="in_bag"`` predicts a drawn organisation from the trees that saw
    it, exposing memorisation; ``mode="full"`` uses the whole refit forest.
    """
    if mode not in ("in_bag", "full"):
        raise DataError("mode must be 'in_bag' or 'full'")
    X, y = as_xy(data)
    return _run(X, y, data, m_try, n_tree, min_node_size, B, seed, n_jobs, mode, True)


@dataclass
class ResidualDistribution:
    """Pooled, centred replicate values for one scope."""

    values: np.ndarray
    scope: str
    center: float
    quantiles: dict

    @property
    def count(self) -> int:
        return int(self.values.size)

    def percentile(self, v) -> np.ndarray | float:
        """Midpoint-ECDF percentile of centred value(s) ``v``."""
        return _midpoint_ecdf_sorted(np.asarray(v, dtype=np.float64), self.values)

    def quantile(self, q) -> np.ndarray | float:
        return np.quantile(self.values, q)

    def to_dict(self) -> dict:
        return {"scope": self.scope, "count": self.count, "center": self.center,
                "mean": float(self.values.mean()), "sd": float(self.values.std(ddof=1)),
                "quantiles": {f"{100 * q:g}%": v for q, v in self.quantiles.items()}}


def pooled_predictive(replicates: ReplicateMatrix, scope="cohort", members=None) -> ResidualDistribution:
    """Centred pool of present replicates from the organisations in scope."""
    idx = replicates.members(scope) if members is None else np.asarray(members, dtype=int)
    if idx.size == 0:
        raise DataError("empty scope")
    sub = replicates.residuals[:, idx]
    vals = sub[replicates.present[:, idx]]
    if vals.size == 0:
        raise DataError(f"scope {scope!r} has no present replicates")
    center = float(vals.mean())
    centred = np.sort(vals - center)
    qs = {q: float(v) for q, v in zip(QUANTILE_LEVELS, np.quantile(centred, QUANTILE_LEVELS))}
    return ResidualDistribution(values=centred, scope=str(scope), center=center, quantiles=qs)


@dataclass
class Placement:
    point: float
    lo: float
    hi: float
    n_replicates: int
    beyond_range: bool
    level: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def pit_placement(org_replicates, dist: ResidualDistribution, level=0.90,
                  min_replicates=MIN_PIT_REPLICATES) -> Placement:
    """Place an organisation's replicates on the percentile scale of ``dist``.

    Replicates are shifted by the distribution's centring constant first.
    The point is the percentile of the replicate mean; the interval maps the
    replicates' equal-tailed ``level`` quantiles.
    """
    r = np.asarray(org_replicates, dtype=np.float64)
    r = r[~np.isnan(r)]
    if r.size < min_replicates:
        need = int(np.ceil(min_replicates / 0.368))
        raise InsufficientReplicatesError(
            f"{r.size} replicates available, need {min_replicates}; use B of at least ~{need}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    r = r - dist.center
    lo_v, hi_v = np.quantile(r, [(1 - level) / 2, (1 + level) / 2])
    point, lo, hi = (float(dist.percentile(v)) for v in (r.mean(), lo_v, hi_v))
    beyond = bool(r.mean() < dist.values[0] or r.mean() > dist.values[-1]
                  or lo_v < dist.values[0] or hi_v > dist.values[-1])
    return Placement(point=point, lo=lo, hi=hi, n_replicates=int(r.size), beyond_range=beyond,
                     level=level)


def replicate_means(replicates: ReplicateMatrix) -> np.ndarray:
    """Mean of each organisation's present replicates (NaN when none)."""
    R = np.where(replicates.present, replicates.residuals, 0.0)
    counts = replicates.counts
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, R.sum(axis=0) / np.maximum(counts, 1), np.nan)


@dataclass
class ResidualSummary:
    org_ids: list
    mean: np.ndarray
    median: np.ndarray
    sd: np.ndarray
    iqr: np.ndarray
    count: np.ndarray

    def to_rows(self) -> list[dict]:
        return [{"org_id": self.org_ids[i], "mean": float(self.mean[i]),
                 "median": float(self.median[i]), "sd": float(self.sd[i]),
                 "iqr": float(self.iqr[i]), "count": int(self.count[i])}
                for i in range(len(self.org_ids))]


def residual_summary(replicates: ReplicateMatrix) -> ResidualSummary:
    """Per-organisation mean, median, sd (ddof 1), IQR and count of present replicates."""
    n = replicates.n
    out = {k: np.full(n, np.nan) for k in ("mean", "median", "sd", "iqr")}
    count = replicates.counts.astype(int)
    out["mean"] = replicate_means(replicates)
    for i in range(n):
        v = replicates.values(i)
        if v.size == 0:
            continue
        out["median"][i] = np.median(v)
        out["sd"][i] = v.std(ddof=1) if v.size > 1 else 0.0
        q1, q3 = np.percentile(v, [25, 75])
        out["iqr"][i] = q3 - q1
    return ResidualSummary(org_ids=list(replicates.org_ids), count=count, **out)


def write_replicates(path, rm: ReplicateMatrix):
    """Header line with B, n, seed and params hash, then ``b,i,residual`` rows."""
    header = {"B": rm.B, "n": rm.n, "seed": int(rm.seed), "params_hash": rm.params_hash,
              "params": rm.params, "org_ids": list(rm.org_ids),
              "peer_group": None if rm.peer_group is None else [str(g) for g in rm.peer_group]}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(FILE_MAGIC + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["b", "i", "residual"])
        bs, iis = np.nonzero(rm.present)
        for b, i in zip(bs, iis):
            w.writerow([int(b), int(i), repr(float(rm.residuals[b, i]))])


def read_replicates(path) -> ReplicateMatrix:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith(FILE_MAGIC):
            raise DataError(f"{path}: not a replicate file")
        header = json.loads(first[len(FILE_MAGIC):])
        reader = csv.reader(fh)
        if next(reader) != ["b", "i", "residual"]:
            raise DataError(f"{path}: bad column header")
        B, n = header["B"], header["n"]
        res = np.full((B, n), np.nan)
        present = np.zeros((B, n), dtype=bool)
        for row in reader:
            b, i = int(row[0]), int(row[1])
            res[b, i] = float(row[2])
            present[b, i] = True
    groups = header.get("peer_group")
    rm = ReplicateMatrix(res, present, header["seed"], header["params"], header["org_ids"],
                         None if groups is None else np.asarray(groups, dtype=object))
    if rm.params_hash != header["params_hash"]:
        raise NumericError(f"{path}: params hash mismatch")
    return rm
