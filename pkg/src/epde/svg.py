"""Tiny deterministic SVG writer (fixed float formatting, no timestamps)."""
from xml.sax.saxutils import escape


def _f(v):
    return f"{float(v):.3f}".rstrip("0").rstrip(".")


class Svg:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.items = []

    def rect(self, x, y, w, h, fill, **kw):
        self.items.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" fill="{fill}"{_attrs(kw)}/>')

    def circle(self, x, y, r, fill, **kw):
        self.items.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{fill}"{_attrs(kw)}/>')

    def polyline(self, pts, stroke="black", **kw):
        p = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.items.append(f'<polyline points="{p}" fill="none" stroke="{stroke}"{_attrs(kw)}/>')

    def polygon(self, pts, fill, **kw):
        p = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.items.append(f'<polygon points="{p}" fill="{fill}"{_attrs(kw)}/>')

    def text(self, x, y, s, size=12, **kw):
        self.items.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}"{_attrs(kw)}>{escape(str(s))}</text>')

    def render(self):
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.width)}" '
                f'height="{_f(self.height)}" viewBox="0 0 {_f(self.width)} {_f(self.height)}">')
        return "\n".join([head, *self.items, "</svg>"]) + "\n"


def _attrs(kw):
    return "".join(f' {k.replace("_", "-")}="{v}"' for k, v in kw.items())


def colormap(v):
    """Map v in [0, 1] to a blue-white-red hex colour."""
    v = min(1.0, max(0.0, float(v)))
    if v < 0.5:
        t = v / 0.5
        r, g, b = int(255 * t), int(255 * t), 255
    else:
        t = (v - 0.5) / 0.5
        r, g, b = 255, int(255 * (1 - t)), int(255 * (1 - t))
    return f"#{r:02x}{g:02x}{b:02x}"
