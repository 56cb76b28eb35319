"""Cohort ingestion, covariate transforms and empirical percentiles."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DataError

TRANSFORMS = ("identity", "logit", "log")
DEFAULT_LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class TransformSpec:
    """Per-column transform rules plus the response rule.

    ``count_columns`` names integer count columns that receive a +1 offset
    before a log transform so that zero counts are admissible.
    """

    rules: Mapping[str, str] = field(default_factory=dict)
    response: str = "identity"
    eps: float = DEFAULT_LOGIT_EPS
    count_columns: frozenset = frozenset()

    def __post_init__(self):
        for name, rule in {**self.rules, "<response>": self.response}.items():
            if rule not in TRANSFORMS:
                raise DataError(f"unknown transform {rule!r} for column {name!r}")
        if not 0 < self.eps < 0.5:
            raise DataError(f"logit eps must lie in (0, 0.5), got {self.eps}")
        object.__setattr__(self, "count_columns", frozenset(self.count_columns))

    def rule(self, column: str) -> str:
        return self.rules.get(column, "identity")

    def offset(self, column: str) -> float:
        return 1.0 if column in self.count_columns else 0.0


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    transform: str = "identity"
    source: str = ""
    offset: float = 0.0
    is_dummy: bool = False


def transform_value(x: float, rule: str, eps: float = DEFAULT_LOGIT_EPS,
                    offset: float = 0.0) -> float:
    """Apply one transform rule to a scalar.

    logit clamps ``x`` to ``[eps, 1 - eps]`` first; log adds ``offset``
    and rejects non-positive results.
    """
    if rule == "identity":
        return float(x)
    if rule == "logit":
        if not 0.0 <= x <= 1.0:
            raise DataError(f"logit requires a value in [0, 1], got {x}")
        c = min(max(x, eps), 1.0 - eps)
        return math.log(c / (1.0 - c))
    if rule == "log":
        v = x + offset
        if not v > 0:
            raise DataError(f"log of non-positive value {v}")
        return math.log(v)
    raise DataError(f"unknown transform {rule!r}")


def inverse_transform_value(v: float, rule: str, offset: float = 0.0) -> float:
    if rule == "identity":
        return float(v)
    if rule == "logit":
        return 1.0 / (1.0 + math.exp(-v))
    if rule == "log":
        return math.exp(v) - offset
    raise DataError(f"unknown transform {rule!r}")


def transform_column(values, rule: str, eps: float = DEFAULT_LOGIT_EPS,
                     offset: float = 0.0, name: str = "") -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    label = f" in column {name!r}" if name else ""
    if rule == "identity":
        return values.copy()
    if rule == "logit":
        bad = np.flatnonzero((values < 0) | (values > 1))
        if bad.size:
            raise DataError(f"logit requires values in [0, 1]{label}; row {bad[0]} has {values[bad[0]]}")
        c = np.clip(values, eps, 1.0 - eps)
        return np.log(c / (1.0 - c))
    if rule == "log":
        shifted = values + offset
        bad = np.flatnonzero(~(shifted > 0))
        if bad.size:
            raise DataError(f"log of non-positive value{label}; row {bad[0]} has {values[bad[0]]}")
        return np.log(shifted)
    raise DataError(f"unknown transform {rule!r}")


def inverse_transform_column(values, rule: str, offset: float = 0.0) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if rule == "identity":
        return values.copy()
    if rule == "logit":
        return 1.0 / (1.0 + np.exp(-values))
    if rule == "log":
        return np.exp(values) - offset
    raise DataError(f"unknown transform {rule!r}")


class CovariateTransformer(TransformerMixin, BaseEstimator):
    """Column-wise identity/logit/log transforms with an exact inverse.

    ``rules`` is a sequence with one rule per column; ``offsets`` optional.
    """

    def __init__(self, rules=None, offsets=None, eps=DEFAULT_LOGIT_EPS):
        self.rules = rules
        self.offsets = offsets
        self.eps = eps

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        p = X.shape[1]
        rules = list(self.rules) if self.rules is not None else ["identity"] * p
        offsets = list(self.offsets) if self.offsets is not None else [0.0] * p
        if len(rules) != p or len(offsets) != p:
            raise DataError(f"expected {p} rules/offsets, got {len(rules)}/{len(offsets)}")
        for r in rules:
            if r not in TRANSFORMS:
                raise DataError(f"unknown transform {r!r}")
        self.rules_ = rules
        self.offsets_ = np.asarray(offsets, dtype=np.float64)
        self.n_features_in_ = p
        return self

    def transform(self, X):
        check_is_fitted(self, "rules_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = np.empty_like(X)
        for j, rule in enumerate(self.rules_):
            out[:, j] = transform_column(X[:, j], rule, self.eps, self.offsets_[j])
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "rules_")
        X = check_array(X, dtype=np.float64)
        out = np.empty_like(X)
        for j, rule in enumerate(self.rules_):
            out[:, j] = inverse_transform_column(X[:, j], rule, self.offsets_[j])
        return out


def empirical_percentile(v, sample) -> float | np.ndarray:
    """Midpoint ECDF: ``(#(sample < v) + 0.5 * #(sample == v)) / m``.

    ``v`` may be a scalar or an array; ``sample`` must be non-empty.
    """
    s = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    if s.size == 0:
        raise DataError("empirical_percentile needs a non-empty sample")
    return _midpoint_ecdf_sorted(v, s)


def _midpoint_ecdf_sorted(v, s: np.ndarray):
    v_arr = np.asarray(v, dtype=np.float64)
    lo = np.searchsorted(s, v_arr, side="left")
    hi = np.searchsorted(s, v_arr, side="right")
    out = (lo + 0.5 * (hi - lo)) / s.size
    return float(out) if out.ndim == 0 else out


@dataclass
class Dataset:
    """Organisations by encoded covariates, with the transformed measure.

    ``X`` already contains the peer-group dummy columns (reference level
    dropped) as its trailing columns.
    """

    org_ids: list
    y: np.ndarray
    X: np.ndarray
    peer_group: np.ndarray | None = None
    column_meta: list = field(default_factory=list)
    response_transform: str = "identity"
    response_offset: float = 0.0
    measure_name: str = "measure"
    ingestion_report: str = ""

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.org_ids = [str(o) for o in self.org_ids]
        n = self.y.shape[0]
        if n < 2:
            raise DataError(f"need at least 2 organisations, got {n}")
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise DataError(f"X must be {n} x p, got shape {self.X.shape}")
        if len(self.org_ids) != n:
            raise DataError("org_ids length does not match y")
        if len(set(self.org_ids)) != n:
            seen = set()
            for row, o in enumerate(self.org_ids):
                if o in seen:
                    raise DataError(f"duplicate org id {o!r} at row {row}")
                seen.add(o)
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.y)):
            raise DataError("dataset contains missing or non-finite cells")
        if not self.column_meta:
            self.column_meta = [ColumnMeta(f"x{j + 1}", source=f"x{j + 1}")
                                for j in range(self.X.shape[1])]
        if len(self.column_meta) != self.X.shape[1]:
            raise DataError("column_meta does not match the number of columns")
        if self.peer_group is not None:
            self.peer_group = np.asarray([str(g) for g in self.peer_group], dtype=object)
            if self.peer_group.shape[0] != n:
                raise DataError("peer_group length does not match y")
            labels, counts = np.unique(self.peer_group.astype(str), return_counts=True)
            small = labels[counts < 2]
            if small.size:
                raise DataError(f"peer group {str(small[0])!r} has fewer than 2 members")

    @classmethod
    def from_arrays(cls, X, y, org_ids=None, peer_group=None, feature_names=None,
                    encode_peer_groups=True, **kwargs) -> "Dataset":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 1 and np.asarray(y).size != 1:
            X = X.T
        n, p = X.shape
        names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(p)]
        meta = [ColumnMeta(nm, source=nm) for nm in names]
        if org_ids is None:
            width = len(str(n))
            org_ids = [f"org{str(i + 1).zfill(width)}" for i in range(n)]
        if peer_group is not None and encode_peer_groups:
            dummies, dmeta = encode_peer_group_dummies(peer_group)
            X = np.hstack([X, dummies])
            meta += dmeta
        return cls(org_ids=list(org_ids), y=y, X=X, peer_group=peer_group,
                   column_meta=meta, **kwargs)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return [m.name for m in self.column_meta]

    @property
    def zero_variance(self) -> np.ndarray:
        return np.ptp(self.X, axis=0) == 0

    @property
    def covariate_columns(self) -> list[int]:
        """Indices of non-dummy columns."""
        return [j for j, m in enumerate(self.column_meta) if not m.is_dummy]

    @property
    def peer_labels(self) -> list[str]:
        if self.peer_group is None:
            return []
        return sorted(set(self.peer_group.tolist()))

    def members(self, scope: str = "cohort") -> np.ndarray:
        if scope == "cohort":
            return np.arange(self.n)
        if self.peer_group is None:
            raise DataError("dataset has no peer groups")
        idx = np.flatnonzero(self.peer_group == scope)
        if idx.size == 0:
            raise DataError(f"unknown peer group {scope!r}")
        return idx

    def index_of(self, org_id: str) -> int:
        try:
            return self.org_ids.index(str(org_id))
        except ValueError:
            raise DataError(f"unknown organisation id {org_id!r}") from None

    def to_raw_measure(self, values) -> np.ndarray:
        return inverse_transform_column(values, self.response_transform, self.response_offset)


def encode_peer_group_dummies(labels) -> tuple[np.ndarray, list[ColumnMeta]]:
    """Dummy-encode peer groups; the lexicographically first label is the reference."""
    labels = np.asarray([str(g) for g in labels], dtype=object)
    levels = sorted(set(labels.tolist()))
    cols = [(labels == lv).astype(np.float64) for lv in levels[1:]]
    X = np.column_stack(cols) if cols else np.empty((labels.shape[0], 0))
    meta = [ColumnMeta(f"peer_{lv}", transform="dummy", source="peer_group", is_dummy=True)
            for lv in levels[1:]]
    return X, meta


def load_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path} is not valid JSON: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: Mapping) -> None:
    if not isinstance(cfg, Mapping):
        raise DataError("config must be a key/value document")
    for key in ("id_column", "measure_column"):
        if not isinstance(cfg.get(key), str):
            raise DataError(f"config is missing string key {key!r}")
    covs = cfg.get("covariates")
    if covs is not None and not isinstance(covs, (Mapping, list)):
        raise DataError("config 'covariates' must be a mapping or a list")
    spec_from_config(cfg)


def spec_from_config(cfg: Mapping) -> TransformSpec:
    covs = cfg.get("covariates") or {}
    rules = dict(covs) if isinstance(covs, Mapping) else {c: "identity" for c in covs}
    return TransformSpec(rules=rules,
                         response=cfg.get("response_transform", "identity"),
                         eps=float(cfg.get("logit_eps", DEFAULT_LOGIT_EPS)),
                         count_columns=frozenset(cfg.get("count_columns", ())))


def load_dataset(csv_path, config: Mapping) -> Dataset:
    """Read a cohort CSV and apply the configured transforms.

    Raises DataError naming the offending row or cell for missing or
    duplicate ids, non-numeric cells, out-of-domain transforms and peer
    groups with fewer than two members.
    """
    validate_config(config)
    spec = spec_from_config(config)
    csv_path = Path(csv_path)
    try:
        with open(csv_path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"input file not found: {csv_path}") from None
    if not rows:
        raise DataError(f"{csv_path} is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(c.strip() for c in r)]

    id_col = config["id_column"]
    y_col = config["measure_column"]
    pg_col = config.get("peer_group_column")
    for col in [id_col, y_col] + ([pg_col] if pg_col else []):
        if col not in header:
            raise DataError(f"column {col!r} not found in {csv_path}")
    covs = config.get("covariates")
    if covs:
        cov_names = [c for c in header if c in covs]
        missing = [c for c in covs if c not in header]
        if missing:
            raise DataError(f"covariate column {missing[0]!r} not found in {csv_path}")
    else:
        cov_names = [c for c in header if c not in (id_col, y_col, pg_col)]
    if not cov_names:
        raise DataError("need at least one covariate column")

    pos = {h: k for k, h in enumerate(header)}
    ids, groups = [], []
    raw = np.empty((len(body), len(cov_names)))
    y_raw = np.empty(len(body))
    seen: dict[str, int] = {}
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        oid = row[pos[id_col]].strip()
        if not oid:
            raise DataError(f"row {r}: missing id")
        if oid in seen:
            raise DataError(f"row {r}: duplicate id {oid!r} (first seen on row {seen[oid]})")
        seen[oid] = r
        ids.append(oid)
        y_raw[r - 2] = _parse_cell(row[pos[y_col]], r, y_col)
        for j, c in enumerate(cov_names):
            raw[r - 2, j] = _parse_cell(row[pos[c]], r, c)
        if pg_col:
            g = row[pos[pg_col]].strip()
            if not g:
                raise DataError(f"row {r}, column {pg_col!r}: missing peer group")
            groups.append(g)

    lines = [f"source: {csv_path.name}", f"organisations: {len(ids)}"]
    X_cols, meta = [], []
    for j, c in enumerate(cov_names):
        rule, off = spec.rule(c), spec.offset(c)
        if rule == "log" and off:
            _require_counts(raw[:, j], c)
        X_cols.append(transform_column(raw[:, j], rule, spec.eps, off, name=c))
        meta.append(ColumnMeta(c, transform=rule, source=c, offset=off))
        lines.append(f"covariate {c}: {rule}" + (f" (offset +{off:g})" if off else ""))

    r_off = spec.offset(y_col)
    if spec.response == "log" and r_off:
        _require_counts(y_raw, y_col)
    y = transform_column(y_raw, spec.response, spec.eps, r_off, name=y_col)
    lines.insert(2, f"response {y_col}: {spec.response}" + (f" (offset +{r_off:g})" if r_off else ""))

    X = np.column_stack(X_cols)
    peer = None
    if pg_col:
        peer = np.asarray(groups, dtype=object)
        labels, counts = np.unique(peer.astype(str), return_counts=True)
        for lab, cnt in zip(labels, counts):
            if cnt < 2:
                raise DataError(f"peer group {str(lab)!r} has {cnt} member(s); at least 2 required")
        dummies, dmeta = encode_peer_group_dummies(peer)
        X = np.hstack([X, dummies])
        meta += dmeta
        lines.append(f"peer groups: {', '.join(labels)} (reference {labels[0]})")
        for m in dmeta:
            lines.append(f"covariate {m.name}: dummy")
    zv = [m.name for m, flag in zip(meta, np.ptp(X, axis=0) == 0) if flag]
    if zv:
        lines.append("zero-variance columns: " + ", ".join(zv))
    lines.append(f"encoded columns: {X.shape[1]}")

    return Dataset(org_ids=ids, y=y, X=X, peer_group=peer, column_meta=meta,
                   response_transform=spec.response, response_offset=r_off,
                   measure_name=config.get("measure_name", y_col),
                   ingestion_report="\n".join(lines) + "\n")


def _parse_cell(text: str, row: int, column: str) -> float:
    t = text.strip()
    if not t:
        raise DataError(f"row {row}, column {column!r}: missing value")
    try:
        v = float(t)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: {t!r} is not numeric") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {column!r}: non-finite value {t!r}")
    return v


def _require_counts(values: np.ndarray, column: str) -> None:
    bad = np.flatnonzero((values < 0) | (values != np.round(values)))
    if bad.size:
        raise DataError(f"count column {column!r} has non-integer or negative value "
                        f"{values[bad[0]]} at data row {bad[0] + 1}")


def write_cohort_csv(path, data: Dataset, raw_measure=None, id_column="org_id",
                     measure_column="measure", peer_group_column="peer_group",
                     raw_covariates=None) -> None:
    """Write a dataset back out in the ingestible CSV layout.

    Covariates are written as given (``raw_covariates``) or as the
    dataset's non-dummy columns; floats use ``repr`` so values round-trip.
    """
    cov_idx = data.covariate_columns
    covs = np.asarray(raw_covariates) if raw_covariates is not None else data.X[:, cov_idx]
    measure = data.to_raw_measure(data.y) if raw_measure is None else np.asarray(raw_measure)
    names = [data.column_meta[j].name for j in cov_idx]
    header = [id_column, measure_column] + names
    if data.peer_group is not None:
        header.append(peer_group_column)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [data.org_ids[i], repr(float(measure[i]))]
            row += [repr(float(v)) for v in covs[i]]
            if data.peer_group is not None:
                row.append(data.peer_group[i])
            w.writerow(row)


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-sd columns; zero-variance columns become all zeros."""
    X = np.asarray(X, dtype=np.float64)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - X.mean(axis=0)) / sd


def as_xy(data) -> tuple[np.ndarray, np.ndarray]:
    """Accept a Dataset or an ``(X, y)`` pair."""
    if isinstance(data, Dataset):
        return data.X, data.y
    X, y = data
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def column_percentiles(X: np.ndarray, columns: Sequence[int] | None = None) -> np.ndarray:
    """Each cell mapped to its midpoint-ECDF percentile within its column."""
    X = np.asarray(X, dtype=np.float64)
    cols = range(X.shape[1]) if columns is None else columns
    return np.column_stack([empirical_percentile(X[:, j], X[:, j]) for j in cols])
