"""Deterministic SVG figures: space-time heat maps, embeddings, loss curves, reports."""
import numpy as np

from .svg import Svg, colormap

KINDS = ("spacetime", "embedding", "loss", "report")


def _scale(v, lo, hi):
    return 0.5 if hi <= lo else (v - lo) / (hi - lo)


def spacetime(field, title="", cell=4.0):
    """Heat map with one rectangle per (time, space) entry, time running down."""
    F = np.asarray(field, dtype=np.float64)
    if F.ndim != 2:
        raise ValueError("space-time plot needs a 2-D field")
    n_t, n_s = F.shape
    lo, hi = float(np.nanmin(F)), float(np.nanmax(F))
    top = 24
    svg = Svg(n_s * cell + 20, n_t * cell + top + 10)
    svg.text(10, 16, title)
    for i in range(n_t):
        for j in range(n_s):
            svg.rect(10 + j * cell, top + i * cell, cell, cell, colormap(_scale(F[i, j], lo, hi)))
    return svg.render()


def embedding(coords, color=None, title="", size=360):
    """Scatter of the first two columns, coloured by ``color`` when given."""
    X = np.asarray(coords, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 1:
        X = np.hstack([X, np.zeros_like(X)])
    c = np.zeros(X.shape[0]) if color is None else np.asarray(color, dtype=np.float64)
    pad = 30
    svg = Svg(size, size)
    svg.text(10, 16, title)
    lo, hi = X[:, :2].min(axis=0), X[:, :2].max(axis=0)
    clo, chi = float(c.min()), float(c.max())
    for (x, y), v in zip(X[:, :2], c):
        px = pad + _scale(x, lo[0], hi[0]) * (size - 2 * pad)
        py = size - pad - _scale(y, lo[1], hi[1]) * (size - 2 * pad)
        svg.circle(px, py, 3, colormap(_scale(v, clo, chi)))
    return svg.render()


def loss(curves, title="", width=480, height=320):
    """Log-scale loss curves; ``curves`` maps a label to a 1-D array."""
    pad = 40
    svg = Svg(width, height)
    svg.text(10, 16, title)
    vals = np.concatenate([np.asarray(v, dtype=np.float64) for v in curves.values()])
    vals = vals[np.isfinite(vals) & (vals > 0)]
    if vals.size == 0:
        return svg.render()
    lo, hi = np.log10(vals.min()), np.log10(vals.max())
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    for k, (name, v) in enumerate(sorted(curves.items())):
        v = np.asarray(v, dtype=np.float64)
        ok = np.isfinite(v) & (v > 0)
        if not ok.any():
            continue
        n = max(v.size - 1, 1)
        pts = [(pad + i / n * (width - 2 * pad),
                height - pad - _scale(np.log10(v[i]), lo, hi) * (height - 2 * pad))
               for i in np.flatnonzero(ok)]
        col = palette[k % len(palette)]
        svg.polyline(pts, stroke=col)
        svg.text(width - pad - 100, pad + 14 * k, name, size=11, fill=col)
    return svg.render()


def report(rows, title="evaluation"):
    """Two-column table of (label, value) rows."""
    svg = Svg(460, 40 + 18 * len(rows))
    svg.text(10, 18, title, size=14)
    for i, (k, v) in enumerate(rows):
        y = 40 + 18 * i
        svg.text(10, y, k)
        svg.text(300, y, f"{v:.4g}" if isinstance(v, float) else str(v))
    return svg.render()


def to_csv(kind, data):
    """The numbers behind a figure, as CSV text."""
    if kind == "spacetime":
        return "\n".join(",".join(repr(float(x)) for x in row) for row in np.asarray(data)) + "\n"
    if kind == "embedding":
        X, c = data
        X = np.asarray(X).reshape(len(X), -1)
        cols = [f"x{k}" for k in range(X.shape[1])] + ["color"]
        c = np.zeros(len(X)) if c is None else np.asarray(c)
        rows = [",".join(cols)] + [",".join(repr(float(x)) for x in (*r, cv)) for r, cv in zip(X, c)]
        return "\n".join(rows) + "\n"
    if kind == "loss":
        names = sorted(data)
        n = max(len(data[k]) for k in names)
        rows = ["epoch," + ",".join(names)]
        for i in range(n):
            rows.append(",".join([str(i + 1)] + [repr(float(data[k][i])) if i < len(data[k]) else "" for k in names]))
        return "\n".join(rows) + "\n"
    if kind == "report":
        return "metric,value\n" + "".join(f"{k},{v}\n" for k, v in data)
    raise ValueError(f"unknown plot kind {kind!r}; expected one of {', '.join(KINDS)}")
