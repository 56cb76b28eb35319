"""Minimal deterministic SVG writer."""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

THEME = {
    "org": "#d62728",
    "neighbour": "#7f7f7f",
    "guide": "#1f77b4",
    "box_a": "#e8eef7",
    "box_b": "#cfdcee",
    "bar": "#4c72b0",
    "band": "#aec7e8",
    "axis": "#333333",
    "text": "#222222",
    "peer": "#2ca02c",
}


def fmt3(v: float) -> str:
    """Three significant figures."""
    return f"{v:.3g}"


def _num(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class Svg:
    """Collects elements and serialises them in insertion order."""

    def __init__(self, width: float, height: float, title: str | None = None):
        self.width = width
        self.height = height
        self.items: list[str] = []
        if title:
            self.items.append(f"<title>{escape(title)}</title>")

    def _el(self, tag, attrs, text=None, **kw):
        attrs = {**attrs, **{k.rstrip("_").replace("_", "-"): v for k, v in kw.items()}}
        parts = []
        for k, v in attrs.items():
            if v is None:
                continue
            v = _num(v) if isinstance(v, float) else str(v)
            parts.append(f"{k}={quoteattr(v)}")
        head = f"<{tag} " + " ".join(parts)
        if text is None:
            self.items.append(head + "/>")
        else:
            self.items.append(head + f">{escape(text)}</{tag}>")

    def line(self, x1, y1, x2, y2, stroke=THEME["axis"], width=1.0, **kw):
        self._el("line", {"x1": float(x1), "y1": float(y1), "x2": float(x2), "y2": float(y2),
                          "stroke": stroke, "stroke-width": float(width)}, **kw)

    def rect(self, x, y, w, h, fill, stroke="none", **kw):
        self._el("rect", {"x": float(x), "y": float(y), "width": float(w), "height": float(h),
                          "fill": fill, "stroke": stroke}, **kw)

    def circle(self, cx, cy, r, fill, **kw):
        self._el("circle", {"cx": float(cx), "cy": float(cy), "r": float(r), "fill": fill}, **kw)

    def polygon(self, points, fill, stroke="none", **kw):
        pts = " ".join(f"{_num(float(x))},{_num(float(y))}" for x, y in points)
        self._el("polygon", {"points": pts, "fill": fill, "stroke": stroke}, **kw)

    def polyline(self, points, stroke, width=1.5, **kw):
        pts = " ".join(f"{_num(float(x))},{_num(float(y))}" for x, y in points)
        self._el("polyline", {"points": pts, "fill": "none", "stroke": stroke,
                              "stroke-width": float(width)}, **kw)

    def text(self, x, y, s, size=11, anchor="start", fill=THEME["text"], **kw):
        self._el("text", {"x": float(x), "y": float(y), "font-size": size, "text-anchor": anchor,
                          "fill": fill, "font-family": "sans-serif"}, text=str(s), **kw)

    def to_string(self) -> str:
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
                f'width="{_num(float(self.width))}" height="{_num(float(self.height))}" '
                f'viewBox="0 0 {_num(float(self.width))} {_num(float(self.height))}">\n')
        return head + "\n".join(self.items) + "\n</svg>\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_string())


def wrap(text: str, width: int) -> list[str]:
    lines, cur = [], ""
    for word in text.split():
        if cur and len(cur) + 1 + len(word) > width:
            lines.append(cur)
            cur = word
        else:
            cur = f"{cur} {word}" if cur else word
    if cur:
        lines.append(cur)
    return lines
