"""Per-organisation report bundle with a provenance manifest."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..bootstrap import ReplicateMatrix, params_hash, pit_placement, pooled_predictive, residual_summary
from ..data import Dataset
from ..exceptions import DataError
from .neighbours import neighbour_indices
from .plots import (percentile_plot_spec, render_model_figure, render_percentile_plot,
                    render_spirit_level, spirit_level_spec)

DEFAULT_TOP_K = 4
DEFAULT_NEIGHBOURS = 10


def representative_orgs(mean_residual, org_ids) -> list:
    """Organisations at the minimum, quartiles and maximum of mean residual."""
    m = np.asarray(mean_residual, dtype=float)
    order = np.argsort(m, kind="stable")
    picks = [order[int(round(q * (m.size - 1)))] for q in (0.0, 0.25, 0.5, 0.75, 1.0)]
    out = []
    for i in picks:
        if org_ids[i] not in out:
            out.append(org_ids[i])
    return out


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(name))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ReportContext:
    """Fitted artefacts a report is drawn from.

    ``provenance`` should hold at least the seed, B and S used upstream.
    """

    data: Dataset
    predicted: np.ndarray
    replicates: ReplicateMatrix
    importance: object
    pdps: list
    group_importance: object = None
    rank_summaries: dict = field(default_factory=dict)
    diagnostics: object = None
    provenance: dict = field(default_factory=dict)
    k_neighbours: int = DEFAULT_NEIGHBOURS
    top_k: int = DEFAULT_TOP_K
    level: float = 0.90


def _top_covariates(ctx: ReportContext) -> list[int]:
    allowed = set(ctx.data.covariate_columns)
    cols = []
    for k in ctx.importance.ranking():
        for c in ctx.importance.groups[k]:
            if c in allowed and c not in cols:
                cols.append(int(c))
    return cols[:ctx.top_k]


def build_report_bundle(ctx: ReportContext, org_ids=None, out_dir="report") -> dict:
    """Render spirit-level (cohort and peer) and percentile plots per selected
    organisation, plus shared figures and data, and write ``manifest.json``.

    ``org_ids=None`` selects the representative organisations.
    """
    data, rm = ctx.data, ctx.replicates
    summary = residual_summary(rm)
    if org_ids is None:
        org_ids = representative_orgs(summary.mean, data.org_ids)
    org_ids = list(org_ids)
    for o in org_ids:
        if o not in data.org_ids:
            raise DataError(f"unknown organisation id {o!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    def add(path: Path, kind: str, org=None):
        files.append({"path": path.name, "kind": kind, "org_id": org, "sha256": _sha256(path)})

    cov_cols = data.covariate_columns
    k = min(ctx.k_neighbours, data.n - 1)
    neigh = neighbour_indices(data.X[:, cov_cols], k, data.org_ids)
    dists = {"cohort": pooled_predictive(rm, "cohort")}
    if data.peer_group is not None:
        for g in data.peer_labels:
            dists[g] = pooled_predictive(rm, g)
    top = _top_covariates(ctx)

    for o in org_ids:
        i = data.index_of(o)
        scopes = ["cohort"] + ([data.peer_group[i]] if data.peer_group is not None else [])
        for scope in scopes:
            d = dists[scope]
            pts = [pit_placement(rm.values(j), d, level=ctx.level, min_replicates=1).point
                   for j in np.atleast_1d(neigh[i])]
            spec = spirit_level_spec(o, rm.values(i), d, float(ctx.predicted[i]), data.response_transform,
                                     data.response_offset, data.measure_name, pts, level=ctx.level)
            tag = "cohort" if scope == "cohort" else "peer"
            path = out / f"{_safe(o)}_spirit_{tag}.svg"
            render_spirit_level(spec, path)
            add(path, f"spirit_{tag}", o)
        if top:
            members = data.members(data.peer_group[i]) if data.peer_group is not None else np.arange(data.n)
            pspec = percentile_plot_spec(data, i, top, neigh[i], members)
            path = out / f"{_safe(o)}_percentile.svg"
            render_percentile_plot(pspec, path)
            add(path, "percentile", o)

    path = out / "model_figure.svg"
    render_model_figure(ctx.importance, ctx.group_importance, ctx.pdps, path)
    add(path, "model_figure")
    for scope, rs in sorted(ctx.rank_summaries.items()):
        path = out / f"ranks_{_safe(scope)}.json"
        _write_json(path, rs.to_dict() if hasattr(rs, "to_dict") else rs)
        add(path, "ranks")
    if ctx.diagnostics is not None:
        path = out / "diagnostics.json"
        diag = ctx.diagnostics
        _write_json(path, diag.to_dict() if hasattr(diag, "to_dict") else diag)
        add(path, "diagnostics")
    path = out / "distributions.json"
    _write_json(path, {s: d.to_dict() for s, d in dists.items()})
    add(path, "distributions")

    prov = {k: v for k, v in ctx.provenance.items()}
    prov.setdefault("B", rm.B)
    prov.setdefault("seed", int(rm.seed))
    manifest = {
        "organisations": org_ids,
        "provenance": prov,
        "params_hash": params_hash({**prov, "replicates": rm.params_hash}),
        "files": sorted(files, key=lambda f: f["path"]),
    }
    _write_json(out / "manifest.json", manifest)
    return manifest
