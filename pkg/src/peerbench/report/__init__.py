"""SVG reports: spirit-level and percentile plots, model figure, bundles."""

from .bundle import ReportContext, build_report_bundle, representative_orgs
from .neighbours import nearest_neighbours, neighbour_distances, neighbour_indices
from .plots import (CAPTION_TEMPLATE, GUIDE_PERCENTILES, PercentilePlotSpec, SpiritLevelSpec, axis_x,
                    caption_text, percentile_plot_spec, render_model_figure, render_percentile_plot,
                    render_spirit_level, spirit_level_spec)

__all__ = [
    "CAPTION_TEMPLATE", "GUIDE_PERCENTILES", "PercentilePlotSpec", "ReportContext", "SpiritLevelSpec",
    "axis_x", "build_report_bundle", "caption_text", "nearest_neighbours", "neighbour_distances",
    "neighbour_indices", "percentile_plot_spec", "render_model_figure", "render_percentile_plot",
    "render_spirit_level", "representative_orgs", "spirit_level_spec",
]
