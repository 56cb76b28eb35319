"""Multivariate-normal approximation of the joint replicate distribution and
rank distributions sampled from it."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bootstrap import ReplicateMatrix, replicate_means
from .exceptions import DataError, InsufficientReplicatesError, NumericError
from .forest import resolve_seed

DEFAULT_S = 10_000
MIN_S = 1000
EIG_FLOOR_FACTOR = 1e-8
# clip slightly above the floor so reconstruction error cannot dip below it
_FLOOR_MARGIN = 1.0 + 1e-6


def pairwise_covariance(replicates: ReplicateMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise-complete covariance and per-organisation means.

    Entry ``(i, j)`` uses only resamples where both are present, centred on
    the means over that joint set. Means use each organisation's own
    present set.
    """
    M = replicates.present.astype(np.float64)
    N = M.T @ M
    if np.any(N < 2):
        i, j = np.argwhere(N < 2)[0]
        ids = replicates.org_ids
        raise InsufficientReplicatesError(
            f"pair ({ids[i]}, {ids[j]}) has {int(N[i, j])} joint replicates, need 2; "
            f"increase B (joint presence rate is about 0.134, so B >= 30 at the very least)")
    mean = replicate_means(replicates)
    # shift by marginal means for accuracy; covariance is shift invariant
    R0 = np.where(replicates.present, replicates.residuals - mean, 0.0)
    A = R0.T @ M
    P = R0.T @ R0
    cov = (P - A * A.T / N) / (N - 1.0)
    cov = (cov + cov.T) / 2.0
    return cov, mean


@dataclass
class RepairReport:
    min_eig_before: float
    min_eig_after: float
    frobenius: float
    n_clipped: int
    floor: float

    @property
    def repaired(self) -> bool:
        return self.n_clipped > 0

    def to_dict(self) -> dict:
        return {**self.__dict__, "repaired": self.repaired}


def nearest_pd(A, floor_factor=EIG_FLOOR_FACTOR) -> tuple[np.ndarray, RepairReport]:
    """Closest positive-definite matrix by eigenvalue clipping.

    Eigenvalues of the symmetrised input below ``floor_factor * max
    eigenvalue`` are raised to that floor. Inputs already above the floor
    are returned as their symmetric part, which makes the map idempotent.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError(f"expected a square matrix, got shape {A.shape}")
    S = (A + A.T) / 2.0
    w, V = np.linalg.eigh(S)
    if w[-1] <= 0:
        raise NumericError("matrix has no positive eigenvalue; cannot repair")
    floor = floor_factor * w[-1]
    low = w < floor
    if not low.any():
        return S, RepairReport(float(w[0]), float(w[0]), 0.0, 0, float(floor))
    w2 = np.where(low, floor * _FLOOR_MARGIN, w)
    out = (V * w2) @ V.T
    out = (out + out.T) / 2.0
    after = float(np.linalg.eigvalsh(out)[0])
    report = RepairReport(float(w[0]), after, float(np.linalg.norm(out - S)), int(low.sum()),
                          float(floor))
    return out, report


@dataclass
class NormalApprox:
    mean: np.ndarray
    cov: np.ndarray
    repair: RepairReport
    org_ids: list
    peer_group: np.ndarray | None = None

    @classmethod
    def from_replicates(cls, replicates: ReplicateMatrix, floor_factor=EIG_FLOOR_FACTOR):
        raw, mean = pairwise_covariance(replicates)
        cov, rep = nearest_pd(raw, floor_factor)
        return cls(mean=mean, cov=cov, repair=rep, org_ids=list(replicates.org_ids),
                   peer_group=replicates.peer_group)

    @property
    def n(self) -> int:
        return self.mean.size

    def members(self, scope="cohort") -> np.ndarray:
        if scope == "cohort":
            return np.arange(self.n)
        if self.peer_group is None:
            raise DataError("approximation carries no peer-group labels")
        idx = np.flatnonzero(self.peer_group == scope)
        if idx.size == 0:
            raise DataError(f"unknown or empty scope {scope!r}")
        return idx


def mvn_sample(approx: NormalApprox, S=DEFAULT_S, seed=0) -> np.ndarray:
    """``S x n`` draws as ``mean + Z L^T`` with ``L`` the Cholesky factor."""
    if S < MIN_S:
        raise DataError(f"S must be at least {MIN_S}, got {S}")
    try:
        L = np.linalg.cholesky(approx.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky factorisation failed after repair: {exc}") from exc
    Z = np.random.default_rng(resolve_seed(seed)).standard_normal((S, approx.n))
    return approx.mean + Z @ L.T


def sample_ranks(samples, members=None) -> np.ndarray:
    """Rank 1 = highest value in each row; ties go to the lower column index."""
    V = np.asarray(samples, dtype=np.float64)
    if members is not None:
        V = V[:, np.asarray(members, dtype=int)]
    order = np.argsort(-V, axis=1, kind="stable")
    ranks = np.empty(V.shape, dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(1, V.shape[1] + 1)[None, :], axis=1)
    return ranks


@dataclass
class RankSummary:
    """Rank distribution statistics for the organisations in one scope."""

    org_ids: list
    members: np.ndarray
    modal: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    freq: np.ndarray
    level: float
    S: int
    scope: str

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo + 1

    def to_dict(self) -> dict:
        return {
            "scope": self.scope, "level": self.level, "S": self.S,
            "organisations": [
                {"org_id": self.org_ids[k], "modal_rank": int(self.modal[k]),
                 "mean_rank": float(self.mean[k]), "ci_lo": int(self.lo[k]),
                 "ci_hi": int(self.hi[k])}
                for k in range(len(self.org_ids))
            ],
        }


def rank_distribution(samples, members=None, level=0.90, org_ids=None, scope="cohort") -> RankSummary:
    """Modal rank (ties to the smaller rank), mean rank and equal-tailed CI."""
    samples = np.asarray(samples, dtype=np.float64)
    members = np.arange(samples.shape[1]) if members is None else np.asarray(members, dtype=int)
    if members.size == 0:
        raise DataError("empty scope")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    R = sample_ranks(samples, members)
    S, k = R.shape
    freq = np.zeros((k, k), dtype=np.int64)
    for c in range(k):
        freq[c] = np.bincount(R[:, c] - 1, minlength=k)
    lo, hi = np.quantile(R, [(1 - level) / 2, (1 + level) / 2], axis=0, method="inverted_cdf")
    ids = [f"org{i + 1}" for i in members] if org_ids is None else [org_ids[i] for i in members]
    return RankSummary(org_ids=ids, members=members, modal=np.argmax(freq, axis=1) + 1,
                       mean=R.mean(axis=0), lo=lo.astype(int), hi=hi.astype(int), freq=freq,
                       level=level, S=S, scope=str(scope))


class RankApproximation(BaseEstimator):
    """Fit the normal approximation to a ``ReplicateMatrix`` and sample ranks."""

    def __init__(self, S=DEFAULT_S, level=0.90, floor_factor=EIG_FLOOR_FACTOR, random_state=None):
        self.S = S
        self.level = level
        self.floor_factor = floor_factor
        self.random_state = random_state

    def fit(self, replicates: ReplicateMatrix, y=None):
        self.approx_ = NormalApprox.from_replicates(replicates, self.floor_factor)
        self.samples_ = mvn_sample(self.approx_, self.S, self.random_state)
        return self

    def rank(self, scope="cohort") -> RankSummary:
        check_is_fitted(self, "samples_")
        return rank_distribution(self.samples_, self.approx_.members(scope), self.level,
                                 self.approx_.org_ids, scope)


PANELS = ("mean", "median", "sd", "iqr", "pair_mean_diff", "pair_sd_diff", "pair_corr", "pair_p_neg")


@dataclass
class DiagnosticsReport:
    """Normal-approximation versus bootstrap statistics.

    ``normal[panel]`` and ``bootstrap[panel]`` are aligned arrays: per
    organisation for the first four panels, per pair in ``pairs`` for
    the rest. ``joint_counts`` gives the joint replicates behind each pair.
    """

    org_ids: list
    pairs: np.ndarray
    joint_counts: np.ndarray
    normal: dict
    bootstrap: dict

    def bias(self, panel) -> float:
        d = self.normal[panel] - self.bootstrap[panel]
        return float(np.nanmean(d))

    def to_dict(self) -> dict:
        return {
            "panels": {p: {"normal": self.normal[p].tolist(), "bootstrap": self.bootstrap[p].tolist(),
                           "bias": self.bias(p)} for p in PANELS},
            "org_ids": list(self.org_ids),
            "pairs": self.pairs.tolist(),
            "joint_counts": self.joint_counts.tolist(),
        }

    def scatter_rows(self) -> list[list]:
        rows = []
        for p in PANELS[:4]:
            for i, org in enumerate(self.org_ids):
                rows.append([p, org, "", self.normal[p][i], self.bootstrap[p][i]])
        for p in PANELS[4:]:
            for k, (i, j) in enumerate(self.pairs):
                rows.append([p, self.org_ids[i], self.org_ids[j], self.normal[p][k], self.bootstrap[p][k]])
        return rows


def _corr(a, b):
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return np.nan
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def approx_diagnostics(approx: NormalApprox, samples, replicates: ReplicateMatrix, pairs=None,
                       max_pairs=5000, seed=0) -> DiagnosticsReport:
    """Per-organisation and per-pair comparisons of the approximation with
    the bootstrap replicates.

    The normal mean is the approximation's mean vector (identical to the
    replicate means by construction); other statistics come from
    ``samples``. Without explicit ``pairs``, all pairs are used when there
    are at most ``max_pairs``, otherwise a seeded random subset.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = approx.n
    if samples.shape[1] != n or replicates.n != n:
        raise DataError("samples, approximation and replicates disagree on n")
    if pairs is None:
        iu, ju = np.triu_indices(n, k=1)
        pairs = np.column_stack([iu, ju])
        if pairs.shape[0] > max_pairs:
            rng = np.random.default_rng(resolve_seed(seed))
            pick = np.sort(rng.choice(pairs.shape[0], max_pairs, replace=False))
            pairs = pairs[pick]
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)

    q1, med, q3 = np.percentile(samples, [25, 50, 75], axis=0)
    normal = {"mean": approx.mean.copy(), "median": med, "sd": samples.std(axis=0, ddof=1),
              "iqr": q3 - q1}
    boot = {k: np.empty(n) for k in ("median", "sd", "iqr")}
    boot["mean"] = replicate_means(replicates)
    for i in range(n):
        v = replicates.values(i)
        boot["median"][i] = np.median(v)
        boot["sd"][i] = v.std(ddof=1) if v.size > 1 else 0.0
        b1, b3 = np.percentile(v, [25, 75])
        boot["iqr"][i] = b3 - b1

    m = pairs.shape[0]
    for d in (normal, boot):
        for p in PANELS[4:]:
            d[p] = np.empty(m)
    joint = np.empty(m, dtype=int)
    pres = replicates.present
    for k, (i, j) in enumerate(pairs):
        dn = samples[:, i] - samples[:, j]
        normal["pair_mean_diff"][k] = dn.mean()
        normal["pair_sd_diff"][k] = dn.std(ddof=1)
        normal["pair_corr"][k] = _corr(samples[:, i], samples[:, j])
        normal["pair_p_neg"][k] = np.mean(dn < 0)
        both = pres[:, i] & pres[:, j]
        joint[k] = int(both.sum())
        a, b = replicates.residuals[both, i], replicates.residuals[both, j]
        db = a - b
        boot["pair_mean_diff"][k] = db.mean() if db.size else np.nan
        boot["pair_sd_diff"][k] = db.std(ddof=1) if db.size > 1 else np.nan
        boot["pair_corr"][k] = _corr(a, b) if db.size > 1 else np.nan
        boot["pair_p_neg"][k] = np.mean(db < 0) if db.size else np.nan
    return DiagnosticsReport(org_ids=list(approx.org_ids), pairs=pairs, joint_counts=joint,
                             normal=normal, bootstrap=boot)


def _spearman(a, b) -> float | None:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    return float(spearmanr(a, b)[0])


def rank_uncertainty_explainers(ranks: RankSummary, summary, X, k=10) -> dict:
    """Rank CI width against |mean residual|, residual SE and local data density.

    ``summary`` is a ``ResidualSummary``; ``X`` the covariate matrix (or a
    Dataset, whose non-dummy covariates are used). Neighbour distance is
    the mean Euclidean distance to the ``k`` nearest organisations on
    standardised columns.
    """
    from .data import Dataset
    from .report.neighbours import neighbour_distances

    if isinstance(X, Dataset):
        X = X.X[:, X.covariate_columns]
    idx = ranks.members
    width = ranks.width.astype(float)
    abs_mean = np.abs(summary.mean[idx])
    se = summary.sd[idx]
    out = {"org_ids": list(ranks.org_ids), "ci_width": width.tolist(),
           "abs_mean_residual": abs_mean.tolist(), "residual_se": se.tolist(),
           "spearman_width_abs_mean": _spearman(abs_mean, width),
           "spearman_width_se": _spearman(se, width)}
    Xs = np.asarray(X, dtype=np.float64)[idx]
    if idx.size < k + 1:
        warnings.warn(f"scope has {idx.size} organisations; neighbour distances need at least {k + 1}",
                      RuntimeWarning, stacklevel=2)
        out["neighbour_distance"] = None
        out["r2_se_neighbour_distance"] = None
        return out
    dist = neighbour_distances(Xs, k).mean(axis=1)
    out["neighbour_distance"] = dist.tolist()
    if np.ptp(dist) == 0 or np.ptp(se) == 0:
        out["r2_se_neighbour_distance"] = None
    else:
        out["r2_se_neighbour_distance"] = float(np.corrcoef(se, dist)[0, 1] ** 2)
    return out
