"""Spirit-level, percentile and model-summary figures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import _midpoint_ecdf_sorted, inverse_transform_value
from ..exceptions import DataError
from .svg import THEME, Svg, fmt3, wrap

GUIDE_PERCENTILES = (0.10, 0.25, 0.50, 0.75, 0.90)
DENSITY_BINS = 50
AXIS_LEFT = 40.0
AXIS_WIDTH = 560.0

CAPTION_TEMPLATE = (
    "The red point places your {measure}, after allowing for the contextual factors in "
    "the model, among {scope_text}. The horizontal bar around it is a {level}% confidence "
    "interval. Each vertical guide line is labelled with the {measure} an organisation with "
    "your profile would need to sit at that percentile. Grey points show the {k} organisations "
    "most similar to you."
)


def axis_x(p: float) -> float:
    """Pixel position of percentile ``p`` (0 to 1); affine by construction."""
    return AXIS_LEFT + AXIS_WIDTH * p


def caption_text(measure: str, scope: str, level: float = 0.90, k: int = 10) -> str:
    scope_text = "the whole cohort" if scope == "cohort" else f"peer group {scope}"
    return CAPTION_TEMPLATE.format(measure=measure, scope_text=scope_text,
                                   level=f"{100 * level:g}", k=k)


@dataclass
class SpiritLevelSpec:
    """Everything needed to draw one organisation's spirit-level plot.

    Percentiles are fractions in [0, 1]. ``guide_values`` are on the raw
    measure scale. ``density`` is ``(edges, counts)`` over centred values.
    """

    org_id: str
    measure_name: str
    scope: str
    point: float
    lo: float
    hi: float
    guide_percentiles: tuple
    guide_values: list
    neighbours: list
    caption: str
    level: float = 0.90
    beyond_range: bool = False
    density: tuple | None = field(default=None, repr=False)

    def validate(self):
        p = np.asarray([self.point, self.lo, self.hi] + list(self.neighbours), dtype=float)
        if not np.all(np.isfinite(p)):
            raise DataError("spirit-level spec has non-finite percentiles")
        if not self.lo <= self.point <= self.hi:
            raise DataError(f"CI [{self.lo}, {self.hi}] does not contain the point {self.point}")
        g = np.asarray(self.guide_values, dtype=float)
        if g.size != len(self.guide_percentiles) or not np.all(np.diff(g) > 0):
            raise DataError("guidance labels must be strictly increasing")


def spirit_level_spec(org_id, replicates_i, dist, predicted, response_transform, response_offset,
                      measure_name, neighbour_points, level=0.90, with_density=True) -> SpiritLevelSpec:
    """Assemble a spec from an organisation's replicates and a pooled distribution.

    ``predicted`` is the model's prediction for the organisation on the
    transformed scale; guide labels are ``inverse(predicted + q_p)`` with
    ``q_p`` the centred distribution's quantiles, so they read in raw units.
    """
    from ..bootstrap import pit_placement

    pl = pit_placement(replicates_i, dist, level=level)
    qs = dist.quantile(list(GUIDE_PERCENTILES))
    guides = [inverse_transform_value(predicted + q, response_transform, response_offset) for q in qs]
    density = None
    if with_density:
        lo_v, hi_v = dist.quantile([0.005, 0.995])
        counts, edges = np.histogram(dist.values, bins=DENSITY_BINS, range=(lo_v, hi_v))
        density = (edges, counts)
    spec = SpiritLevelSpec(org_id=str(org_id), measure_name=measure_name, scope=dist.scope,
                           point=pl.point, lo=pl.lo, hi=pl.hi, guide_percentiles=GUIDE_PERCENTILES,
                           guide_values=[float(g) for g in guides],
                           neighbours=[float(v) for v in neighbour_points],
                           caption=caption_text(measure_name, dist.scope, level, len(neighbour_points)),
                           level=level, beyond_range=pl.beyond_range, density=density)
    spec.validate()
    return spec


def render_spirit_level(spec: SpiritLevelSpec, out_path=None) -> str:
    spec.validate()
    cap = wrap(spec.caption, 95)
    strip = 70 if spec.density is not None else 0
    height = 170 + strip + 15 * len(cap)
    svg = Svg(640, height, title=f"{spec.measure_name}: {spec.org_id} ({spec.scope})")
    y0 = 90.0
    svg.text(320, 20, f"{spec.org_id}: adjusted {spec.measure_name} ({spec.scope})", size=13,
             anchor="middle")
    svg.line(axis_x(0), y0, axis_x(1), y0, width=1.5)
    for t in range(0, 101, 10):
        svg.line(axis_x(t / 100), y0, axis_x(t / 100), y0 + 5)
        svg.text(axis_x(t / 100), y0 + 18, f"{t}%", size=9, anchor="middle")
    for p, v in zip(spec.guide_percentiles, spec.guide_values):
        x = axis_x(p)
        svg.line(x, 40, x, y0, stroke=THEME["guide"], width=1.0, stroke_dasharray="4 3",
                 class_="guide", data_percentile=f"{p:g}", data_value=repr(float(v)))
        svg.text(x, 36, fmt3(v), size=10, anchor="middle", fill=THEME["guide"], class_="guide-label")
    for v in spec.neighbours:
        svg.circle(axis_x(v), y0 - 14, 3.5, THEME["neighbour"], class_="neighbour")
    if spec.hi > spec.lo:
        svg.line(axis_x(spec.lo), y0 - 30, axis_x(spec.hi), y0 - 30, stroke=THEME["org"], width=2.5,
                 class_="ci")
    svg.circle(axis_x(spec.point), y0 - 30, 5.5, THEME["org"], class_="org-point",
               data_percentile=repr(float(spec.point)))
    if spec.beyond_range:
        svg.text(axis_x(spec.point), y0 - 42, "beyond benchmark range", size=9, anchor="middle",
                 fill=THEME["org"], class_="annotation")
    y = y0 + 40
    if spec.density is not None:
        edges, counts = spec.density
        top = counts.max() if counts.max() > 0 else 1
        span = edges[-1] - edges[0] if edges[-1] > edges[0] else 1.0
        pts = []
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            xa = AXIS_LEFT + AXIS_WIDTH * (a - edges[0]) / span
            xb = AXIS_LEFT + AXIS_WIDTH * (b - edges[0]) / span
            h = y + 50 - 50 * c / top
            pts += [(xa, h), (xb, h)]
        svg.polyline(pts, THEME["band"], class_="density")
        svg.text(AXIS_LEFT, y + 64, f"residual distribution, {fmt3(edges[0])} to {fmt3(edges[-1])}",
                 size=9)
        y += strip
    for k, line in enumerate(cap):
        svg.text(AXIS_LEFT - 20, y + 15 * k + 10, line, size=10, class_="caption")
    text = svg.to_string()
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


@dataclass
class PercentileRow:
    name: str
    org: float
    neighbours: list
    peer_range: tuple
    decile_values: list


@dataclass
class PercentilePlotSpec:
    org_id: str
    rows: list

    def validate(self):
        if not self.rows:
            raise DataError("percentile plot needs at least one covariate")
        for r in self.rows:
            vals = [r.org, *r.neighbours, *r.peer_range]
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise DataError(f"percentile outside [0, 1] for {r.name}")
            if r.peer_range[0] > r.peer_range[1]:
                raise DataError(f"peer range reversed for {r.name}")


def percentile_plot_spec(data, org_index, columns, neighbour_idx, peer_members) -> PercentilePlotSpec:
    """Cohort percentiles of the organisation, its neighbours and its peer group.

    ``columns`` should already be ordered by decreasing importance.
    """
    rows = []
    for j in columns:
        col = np.sort(data.X[:, j])
        pct = _midpoint_ecdf_sorted(data.X[:, j], col)
        peer = pct[np.asarray(peer_members, dtype=int)]
        rows.append(PercentileRow(name=data.feature_names[j], org=float(pct[org_index]),
                                  neighbours=[float(pct[k]) for k in neighbour_idx],
                                  peer_range=(float(peer.min()), float(peer.max())),
                                  decile_values=[float(v) for v in np.quantile(col, np.linspace(0, 1, 11))]))
    spec = PercentilePlotSpec(org_id=str(data.org_ids[org_index]), rows=rows)
    spec.validate()
    return spec


def render_percentile_plot(spec: PercentilePlotSpec, out_path=None) -> str:
    spec.validate()
    row_h = 60.0
    height = 60 + row_h * len(spec.rows)
    svg = Svg(640, height, title=f"covariate percentiles: {spec.org_id}")
    svg.text(320, 20, f"{spec.org_id}: contextual factors against the cohort", size=13, anchor="middle")
    for r_i, row in enumerate(spec.rows):
        yc = 55 + row_h * r_i
        svg.text(AXIS_LEFT, yc - 16, row.name, size=10)
        for d in range(10):
            svg.rect(axis_x(d / 10), yc - 8, AXIS_WIDTH / 10, 16,
                     THEME["box_a"] if d % 2 == 0 else THEME["box_b"], stroke="#ffffff", class_="decile")
        lo, hi = row.peer_range
        svg.line(axis_x(lo), yc + 12, axis_x(hi), yc + 12, stroke=THEME["peer"], width=2, class_="peer-range")
        for v in row.neighbours:
            svg.circle(axis_x(v), yc, 3.0, THEME["neighbour"], class_="neighbour")
        x = axis_x(row.org)
        svg.polygon([(x, yc - 7), (x - 6, yc + 5), (x + 6, yc + 5)], THEME["org"], class_="org-marker",
                    data_percentile=repr(float(row.org)))
    yb = 55 + row_h * len(spec.rows) - 20
    for t in range(0, 101, 20):
        svg.text(axis_x(t / 100), yb, f"{t}%", size=9, anchor="middle")
    text = svg.to_string()
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def _bars(svg, x0, y0, w, names, values, errors, title):
    order = np.argsort(-np.asarray(values, dtype=float), kind="stable")
    top = max(float(np.max(np.asarray(values) + np.asarray(errors))), 1e-12)
    svg.text(x0, y0 - 8, title, size=11)
    bar_h = 14.0
    for r, k in enumerate(order):
        y = y0 + r * (bar_h + 4)
        v = max(float(values[k]), 0.0)
        svg.text(x0 + 150, y + 11, names[k], size=9, anchor="end")
        svg.rect(x0 + 155, y, (w - 160) * v / top, bar_h, THEME["bar"], class_="bar",
                 data_name=str(names[k]), data_value=repr(float(values[k])))
    return y0 + len(order) * (bar_h + 4)


def render_model_figure(importance, group_importance, pdps, out_path=None) -> str:
    """Partial dependence panels with rugs, plus variable and group importance bars."""
    if importance is None or not len(importance.names) or not pdps:
        raise DataError("model figure needs importance values and at least one PD curve")
    cols = min(4, len(pdps))
    panel_w, panel_h = 150.0, 120.0
    n_rows = int(np.ceil(len(pdps) / cols))
    imp_h = 30 + 18 * len(importance.names)
    grp_h = 0 if group_importance is None else 30 + 18 * len(group_importance.names)
    width = max(640.0, 20 + cols * (panel_w + 10))
    height = 40 + n_rows * (panel_h + 30) + imp_h + grp_h + 20
    svg = Svg(width, height, title="model summary")
    svg.text(width / 2, 20, "partial dependence and variable importance", size=13, anchor="middle")
    for k, pd in enumerate(pdps):
        x0 = 20 + (k % cols) * (panel_w + 10)
        y0 = 40 + (k // cols) * (panel_h + 30)
        g0, g1 = float(pd.grid[0]), float(pd.grid[-1])
        lo = float(np.min(pd.mean - pd.se))
        hi = float(np.max(pd.mean + pd.se))
        gs = g1 - g0 if g1 > g0 else 1.0
        vs = hi - lo if hi > lo else 1.0

        def px(g):
            return x0 + panel_w * (g - g0) / gs

        def py(v):
            return y0 + panel_h - 15 - (panel_h - 25) * (v - lo) / vs

        svg.rect(x0, y0, panel_w, panel_h, "none", stroke="#cccccc", class_="pdp-panel")
        band = [(px(g), py(m + s)) for g, m, s in zip(pd.grid, pd.mean, pd.se)]
        band += [(px(g), py(m - s)) for g, m, s in zip(pd.grid[::-1], pd.mean[::-1], pd.se[::-1])]
        svg.polygon(band, THEME["band"])
        svg.polyline([(px(g), py(m)) for g, m in zip(pd.grid, pd.mean)], THEME["guide"])
        for v in pd.rug:
            xr = px(min(max(float(v), g0), g1))
            svg.line(xr, y0 + panel_h - 8, xr, y0 + panel_h - 2, stroke=THEME["axis"], width=0.5,
                     class_="rug")
        svg.text(x0 + panel_w / 2, y0 + panel_h + 14, pd.name, size=10, anchor="middle")
    y = 40 + n_rows * (panel_h + 30) + 20
    y = _bars(svg, 20, y, width - 40, importance.names, importance.importance, importance.se,
              "increase in OOB MSE after permutation")
    if group_importance is not None:
        _bars(svg, 20, y + 30, width - 40, group_importance.names, group_importance.importance,
              group_importance.se, "group importance")
    text = svg.to_string()
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text
