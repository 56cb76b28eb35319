"""Nearest organisations on standardised covariates."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..data import Dataset, standardize_columns
from ..exceptions import DataError


def _covariates(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.X[:, data.covariate_columns]
    return np.asarray(data, dtype=np.float64)


def _ordered(D: np.ndarray, i: int, ids) -> np.ndarray:
    others = np.array([j for j in range(D.shape[0]) if j != i])
    keys = [ids[j] for j in others]
    # sort by distance, then id
    order = sorted(range(others.size), key=lambda k: (D[i, others[k]], keys[k]))
    return others[order]


def neighbour_indices(X, k: int, ids=None) -> np.ndarray:
    """``(n, k)`` indices of each row's nearest other rows."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise DataError(f"k must lie in [1, {n - 1}], got {k}")
    ids = [f"{j:012d}" for j in range(n)] if ids is None else list(ids)
    Z = standardize_columns(X)
    D = cdist(Z, Z)
    return np.array([_ordered(D, i, ids)[:k] for i in range(n)])


def neighbour_distances(X, k: int) -> np.ndarray:
    """``(n, k)`` sorted distances to each row's nearest other rows."""
    X = np.asarray(X, dtype=np.float64)
    Z = standardize_columns(X)
    D = cdist(Z, Z)
    idx = neighbour_indices(X, k)
    return np.take_along_axis(D, idx, axis=1)


def nearest_neighbours(data, org, k: int = 10, ids=None) -> list:
    """Ids (or indices) of the ``k`` organisations closest to ``org``.

    ``org`` is an id when ``data`` is a Dataset, otherwise a row index.
    Ties are broken by id order.
    """
    X = _covariates(data)
    n = X.shape[0]
    if k >= n:
        raise DataError(f"k={k} must be smaller than n={n}")
    if k < 1:
        raise DataError("k must be at least 1")
    if isinstance(data, Dataset):
        ids = data.org_ids
        i = data.index_of(org)
    else:
        i = int(org)
        ids = [f"{j:012d}" for j in range(n)] if ids is None else list(ids)
    Z = standardize_columns(X)
    D = cdist(Z[i:i + 1], Z)
    others = [j for j in range(n) if j != i]
    others.sort(key=lambda j: (D[0, j], ids[j]))
    chosen = others[:k]
    return [ids[j] for j in chosen] if isinstance(data, Dataset) else chosen
