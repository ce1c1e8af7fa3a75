"""Plain-text and SVG reporting.

The SVG writer is deliberately small: static line/scatter plots with the
plotted numbers embedded as an XML comment, so a figure remains a
self-contained record of the run that produced it.
"""

import csv

import numpy as np

_PALETTE = [
    "#1f6fb4",
    "#d1495b",
    "#2e8b57",
    "#e0a500",
    "#7b5ea7",
    "#3aa6a6",
    "#888888",
]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def _nice_step(span, n):
    if span <= 0:
        return 1.0
    raw = span / max(n, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            return mult * mag
    return 10.0 * mag


def _ticks(lo, hi, n=6):
    step = _nice_step(hi - lo, n)
    start = np.ceil(lo / step) * step
    vals = np.arange(start, hi + 0.5 * step, step)
    return [float(v) for v in vals]


def _fmt(v):
    return f"{v:.6g}"


class SvgPlot:
    """Accumulates curves and markers, renders one static SVG."""

    def __init__(self, title="", xlabel="", ylabel="", size=(800, 520), equal_aspect=False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.size = size
        self.equal_aspect = equal_aspect
        self.curves = []  # (x, y, label, style)
        self.markers = []  # (x, y, label)
        self.circles = []  # (cx, cy, r) outline ellipses in data coords

    def add_curve(self, x, y, label="", style="solid"):
        self.curves.append((np.asarray(x, float), np.asarray(y, float), label, style))

    def add_markers(self, x, y, label=""):
        self.markers.append((np.atleast_1d(x).astype(float), np.atleast_1d(y).astype(float), label))

    def add_outline(self, cx, cy, rx, ry=None):
        self.circles.append((cx, cy, rx, rx if ry is None else ry))

    def _bounds(self):
        xs, ys = [], []
        for x, y, _, _ in self.curves:
            xs.append(x)
            ys.append(y)
        for x, y, _ in self.markers:
            xs.append(x)
            ys.append(y)
        for cx, cy, rx, ry in self.circles:
            xs.append(np.array([cx - rx, cx + rx]))
            ys.append(np.array([cy - ry, cy + ry]))
        if not xs:
            return 0.0, 1.0, 0.0, 1.0
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        x = x[np.isfinite(x)]
        y = y[np.isfinite(y)]
        if not len(x) or not len(y):
            return 0.0, 1.0, 0.0, 1.0
        x0, x1 = float(np.min(x)), float(np.max(x))
        y0, y1 = float(np.min(y)), float(np.max(y))
        padx = 0.05 * (x1 - x0 or 1.0)
        pady = 0.05 * (y1 - y0 or 1.0)
        return x0 - padx, x1 + padx, y0 - pady, y1 + pady

    def render(self, path):
        W, H = self.size
        ml, mr, mt, mb = 64, 20, 34, 46
        x0, x1, y0, y1 = self._bounds()
        if self.equal_aspect:
            spanx, spany = x1 - x0, y1 - y0
            availx, availy = W - ml - mr, H - mt - mb
            scale = min(availx / spanx, availy / spany)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            spanx, spany = availx / scale, availy / scale
            x0, x1 = cx - spanx / 2, cx + spanx / 2
            y0, y1 = cy - spany / 2, cy + spany / 2

        def X(v):
            return ml + (v - x0) / (x1 - x0) * (W - ml - mr)

        def Y(v):
            return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb)

        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
        ]
        # embedded data record
        data_lines = []
        for x, y, label, _ in self.curves:
            pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y))
            data_lines.append(f"curve {label or '_'}: {pts}")
        for x, y, label in self.markers:
            pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, y))
            data_lines.append(f"markers {label or '_'}: {pts}")
        blob = "\n".join(data_lines).replace("--", "- -")
        out.append(f"<!-- data\n{blob}\n-->")

        out.append(
            f'<rect x="{ml}" y="{mt}" width="{W - ml - mr}" height="{H - mt - mb}" '
            f'fill="none" stroke="#444"/>'
        )
        for tx in _ticks(x0, x1):
            px = X(tx)
            out.append(
                f'<line x1="{px:.1f}" y1="{H - mb}" x2="{px:.1f}" y2="{H - mb + 5}" stroke="#444"/>'
            )
            out.append(
                f'<text x="{px:.1f}" y="{H - mb + 18}" text-anchor="middle">{_fmt(tx)}</text>'
            )
        for ty in _ticks(y0, y1):
            py = Y(ty)
            out.append(
                f'<line x1="{ml - 5}" y1="{py:.1f}" x2="{ml}" y2="{py:.1f}" stroke="#444"/>'
            )
            out.append(
                f'<text x="{ml - 8}" y="{py + 4:.1f}" text-anchor="end">{_fmt(ty)}</text>'
            )
        if self.title:
            out.append(
                f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="15">{self.title}</text>'
            )
        if self.xlabel:
            out.append(
                f'<text x="{W / 2}" y="{H - 8}" text-anchor="middle">{self.xlabel}</text>'
            )
        if self.ylabel:
            out.append(
                f'<text x="14" y="{H / 2}" text-anchor="middle" '
                f'transform="rotate(-90 14 {H / 2})">{self.ylabel}</text>'
            )

        for cx, cy, rx, ry in self.circles:
            out.append(
                f'<ellipse cx="{X(cx):.2f}" cy="{Y(cy):.2f}" rx="{rx / (x1 - x0) * (W - ml - mr):.2f}" '
                f'ry="{ry / (y1 - y0) * (H - mt - mb):.2f}" fill="none" stroke="#999" stroke-dasharray="4 3"/>'
            )
        legend_y = mt + 14
        for k, (x, y, label, style) in enumerate(self.curves):
            color = _PALETTE[k % len(_PALETTE)]
            keep = np.isfinite(x) & np.isfinite(y)
            pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x[keep], y[keep]))
            dash = ' stroke-dasharray="6 4"' if style == "dashed" else ""
            out.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>'
            )
            if label:
                out.append(
                    f'<line x1="{W - mr - 130}" y1="{legend_y}" x2="{W - mr - 104}" '
                    f'y2="{legend_y}" stroke="{color}" stroke-width="1.6"{dash}/>'
                )
                out.append(f'<text x="{W - mr - 98}" y="{legend_y + 4}">{label}</text>')
                legend_y += 16
        for k, (x, y, label) in enumerate(self.markers):
            color = _PALETTE[(len(self.curves) + k) % len(_PALETTE)]
            for a, b in zip(x, y):
                if np.isfinite(a) and np.isfinite(b):
                    out.append(
                        f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="3.4" fill="{color}"/>'
                    )
            if label:
                out.append(f'<circle cx="{W - mr - 117}" cy="{legend_y}" r="3.4" fill="{color}"/>')
                out.append(f'<text x="{W - mr - 98}" y="{legend_y + 4}">{label}</text>')
                legend_y += 16
        out.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(out))


def svg_histogram(path, values, bins=40, title="", xlabel="", ylabel="count"):
    values = np.asarray(values, float)
    values = values[np.isfinite(values)]
    hist, edges = np.histogram(values, bins=bins)
    plot = SvgPlot(title=title, xlabel=xlabel, ylabel=ylabel)
    # step outline from bin edges
    xs = np.repeat(edges, 2)[1:-1]
    ys = np.repeat(hist, 2)
    plot.add_curve(xs, ys)
    plot.render(path)
