"""Synthetic cohorts with known signal and error, plus brute-force oracles.

Scenarios (covariates are U(0, 1) unless noted):

``null``         f = 0
``linear``       f = x1 + 0.5 x2
``step``         f = 1[x1 > 0.5]
``plateau``      f = 1 - exp(-8 x1)
``nonmonotone``  f = sin(2 pi x1)
``mixed14``      f = 1.5 1[x1 > 0.2] + 0.8 (1 - exp(-6 x2)) + 0.5 sin(2 pi x3)
                     + 0.3 x4 + 0.4 x5; x5, x6, x7 share a Gaussian latent
                     factor (uniform marginals, pairwise r ~ 0.91); x8..x14
                     are noise.

Peer groups (``tercile`` rule) are terciles of the sum of the last two
covariates, which carry no signal in any scenario.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .data import Dataset, write_cohort_csv
from .exceptions import DataError

SCENARIOS = ("null", "linear", "step", "plateau", "nonmonotone", "mixed14")
_DEFAULT_J = {"mixed14": 14}
_DEFAULT_NOISE = {"null": 1.0, "linear": 0.5, "step": 0.3, "plateau": 0.2,
                  "nonmonotone": 0.3, "mixed14": 0.5}
_SIGNAL_RANGE = {"null": 0.0, "linear": 1.5, "step": 1.0, "plateau": 1.0 - math.exp(-8.0),
                 "nonmonotone": 2.0}
LATENT_NOISE = 0.3
TRIPLE = (4, 5, 6)


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int = 200
    J: int | None = None
    noise_sd: float | None = None
    noise: str = "gaussian"
    peer_rule: str = "tercile"
    n_groups: int = 3
    seed: int = 0
    response: str = "identity"

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise DataError(f"unknown scenario {self.name!r}; choose from {', '.join(SCENARIOS)}")
        if self.J is None:
            object.__setattr__(self, "J", _DEFAULT_J.get(self.name, 4))
        if self.noise_sd is None:
            object.__setattr__(self, "noise_sd", _DEFAULT_NOISE[self.name])
        min_j = 14 if self.name == "mixed14" else 3
        if self.J < min_j:
            raise DataError(f"scenario {self.name!r} needs J >= {min_j}")
        if self.n < 2:
            raise DataError("n must be at least 2")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be non-negative")
        if self.noise not in ("gaussian", "lognormal"):
            raise DataError(f"unknown noise type {self.noise!r}")
        if self.peer_rule not in ("tercile", "none"):
            raise DataError(f"unknown peer rule {self.peer_rule!r}")
        if self.peer_rule == "tercile" and self.n < 2 * self.n_groups:
            raise DataError("too few organisations for the peer-group rule")
        if self.response not in ("identity", "log"):
            raise DataError("response must be 'identity' or 'log'")

    @property
    def signal_range(self) -> float:
        if self.name == "mixed14":
            return float("nan")
        return _SIGNAL_RANGE[self.name]

    @property
    def target_triple_correlation(self) -> float:
        """Pearson r between uniform-marginal members of the latent triple."""
        rho = 1.0 / (1.0 + LATENT_NOISE**2)
        return 6.0 / math.pi * math.asin(rho / 2.0)

    def signal(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        x1 = X[:, 0]
        if self.name == "null":
            return np.zeros(X.shape[0])
        if self.name == "linear":
            return x1 + 0.5 * X[:, 1]
        if self.name == "step":
            return (x1 > 0.5).astype(np.float64)
        if self.name == "plateau":
            return 1.0 - np.exp(-8.0 * x1)
        if self.name == "nonmonotone":
            return np.sin(2.0 * np.pi * x1)
        return (1.5 * (x1 > 0.2) + 0.8 * (1.0 - np.exp(-6.0 * X[:, 1]))
                + 0.5 * np.sin(2.0 * np.pi * X[:, 2]) + 0.3 * X[:, 3] + 0.4 * X[:, 4])

    @property
    def breakpoints(self) -> list[float]:
        return {"step": [0.5], "mixed14": [0.2]}.get(self.name, [])


@dataclass
class Truth:
    f: np.ndarray
    residual: np.ndarray
    rank: np.ndarray
    peer_rank: np.ndarray | None = None


@dataclass
class SyntheticCohort:
    scenario: Scenario
    data: Dataset
    truth: Truth
    raw_covariates: np.ndarray = field(repr=False, default=None)


def descending_ranks(values) -> np.ndarray:
    """Rank 1 = largest; ties broken by position."""
    return rankdata(-np.asarray(values, dtype=np.float64), method="ordinal").astype(int)


def _noise(sc: Scenario, rng: np.random.Generator) -> np.ndarray:
    if sc.noise_sd == 0:
        return np.zeros(sc.n)
    z = rng.standard_normal(sc.n)
    if sc.noise == "gaussian":
        return sc.noise_sd * z
    shape = 0.6
    raw = np.exp(shape * z) - math.exp(shape**2 / 2.0)
    sd = math.sqrt((math.exp(shape**2) - 1.0) * math.exp(shape**2))
    return sc.noise_sd * raw / sd


def generate(scenario: Scenario) -> SyntheticCohort:
    sc = scenario
    rng = np.random.default_rng([sc.seed, SCENARIOS.index(sc.name)])
    X = rng.uniform(size=(sc.n, sc.J))
    if sc.name == "mixed14":
        latent = rng.standard_normal(sc.n)
        scale = math.sqrt(1.0 + LATENT_NOISE**2)
        for j in TRIPLE:
            X[:, j] = ndtr((latent + LATENT_NOISE * rng.standard_normal(sc.n)) / scale)
    f = sc.signal(X)
    y = f + _noise(sc, rng)
    residual = y - f

    width = len(str(sc.n))
    ids = [f"org{str(i + 1).zfill(width)}" for i in range(sc.n)]
    groups = None
    if sc.peer_rule == "tercile":
        s = X[:, -1] + X[:, -2]
        order = np.argsort(s, kind="stable")
        groups = np.empty(sc.n, dtype=object)
        for k, chunk in enumerate(np.array_split(order, sc.n_groups)):
            groups[chunk] = f"PG{k + 1}"
    data = Dataset.from_arrays(X, y, org_ids=ids, peer_group=groups,
                               response_transform=sc.response, measure_name="measure")
    peer_rank = None
    if groups is not None:
        peer_rank = np.empty(sc.n, dtype=int)
        for g in sorted(set(groups)):
            idx = np.flatnonzero(groups == g)
            peer_rank[idx] = descending_ranks(residual[idx])
    truth = Truth(f=f, residual=residual, rank=descending_ranks(residual), peer_rank=peer_rank)
    return SyntheticCohort(scenario=sc, data=data, truth=truth, raw_covariates=X)


def scenario_config(cohort: SyntheticCohort) -> dict:
    d = cohort.data
    return {
        "id_column": "org_id",
        "measure_column": "measure",
        "measure_name": "measure",
        "peer_group_column": "peer_group" if d.peer_group is not None else None,
        "response_transform": cohort.scenario.response,
        "covariates": {d.column_meta[j].name: "identity" for j in d.covariate_columns},
    }


def write_scenario(cohort: SyntheticCohort, out_dir) -> dict:
    """Write ``data.csv``, ``truth.csv`` and ``config.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = cohort.data
    measure = np.exp(d.y) if cohort.scenario.response == "log" else d.y
    paths = {"data": out / "data.csv", "truth": out / "truth.csv", "config": out / "config.json"}
    write_cohort_csv(paths["data"], d, raw_measure=measure)
    cfg = scenario_config(cohort)
    if cfg["peer_group_column"] is None:
        del cfg["peer_group_column"]
    with open(paths["config"], "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["truth"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["org_id", "f", "residual", "true_rank", "true_peer_rank"])
        t = cohort.truth
        for i in range(d.n):
            pr = "" if t.peer_rank is None else int(t.peer_rank[i])
            w.writerow([d.org_ids[i], repr(float(t.f[i])), repr(float(t.residual[i])),
                        int(t.rank[i]), pr])
    with open(out / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(cohort.scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def oracle_piecewise_mean(x, y, breakpoints) -> np.ndarray:
    """Segment means of ``y`` between sorted breakpoints of the 1-D ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    seg = np.searchsorted(np.sort(np.asarray(breakpoints, dtype=np.float64)), x, side="right")
    out = np.empty_like(y)
    for s in np.unique(seg):
        out[seg == s] = y[seg == s].mean()
    return out


def oracle_rank_ci(true_values, noise_sd, B_mc=10_000, seed=0, level=0.90) -> dict:
    """Rank intervals by direct simulation: perturb the true adjusted values
    with independent N(0, noise_sd^2) error and rank each draw.

    ``noise_sd`` may be a scalar or one value per organisation.
    """
    v = np.asarray(true_values, dtype=np.float64)
    sd = np.broadcast_to(np.asarray(noise_sd, dtype=np.float64), v.shape)
    rng = np.random.default_rng(seed)
    n = v.size
    counts = np.zeros((n, n), dtype=np.int64)
    total = np.zeros(n)
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    for _ in range(B_mc):
        draw = v + sd * rng.standard_normal(n)
        r = rankdata(-draw, method="ordinal").astype(int)
        counts[np.arange(n), r - 1] += 1
        total += r
    cdf = np.cumsum(counts, axis=1) / B_mc
    lo = np.argmax(cdf >= lo_q - 1e-12, axis=1) + 1
    hi = np.argmax(cdf >= hi_q - 1e-12, axis=1) + 1
    return {"lo": lo, "hi": hi, "modal": np.argmax(counts, axis=1) + 1,
            "mean": total / B_mc, "p_rank1": counts[:, 0] / B_mc}
