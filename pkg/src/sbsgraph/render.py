"""SVG drawing of a results document.

Polygons are laid out left to right.  One marker (class ``cone``) is drawn per
cone point at its first corner; the other corners of the same class get a
lighter ``cone-copy`` mark.  Minima are dots, saddles crosses.  Finite
separatrices are solid with an arrowhead pointing towards increasing u (or
decreasing u under the ``dec`` convention); infinite ones are dashed and
unresolved ones dotted.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH = 480.0  # pixels per unit of the largest polygon extent
MARGIN = 0.15


def _layout(polygons):
    """Offsets that place polygons side by side; returns (offsets, bbox)."""
    offsets = []
    x = 0.0
    ymin, ymax = math.inf, -math.inf
    for poly in polygons:
        xs = [v[0] for v in poly]
        ys = [v[1] for v in poly]
        w = max(xs) - min(xs)
        offsets.append((x - min(xs), 0.0))
        x += w + MARGIN * max(w, 1e-12)
        ymin, ymax = min(ymin, min(ys)), max(ymax, max(ys))
    return offsets, (0.0, ymin, x, ymax)


def _arrow(x0, y0, x1, y1, size):
    """Triangle path at the middle of a segment, pointing from 0 to 1."""
    dx, dy = x1 - x0, y1 - y0
    n = math.hypot(dx, dy)
    if n == 0:
        return None
    ux, uy = dx / n, dy / n
    mx, my = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    tip = (mx + size * ux, my + size * uy)
    left = (mx - size * ux - 0.6 * size * uy, my - size * uy + 0.6 * size * ux)
    right = (mx - size * ux + 0.6 * size * uy, my - size * uy - 0.6 * size * ux)
    return f"M{tip[0]:.3f},{tip[1]:.3f} L{left[0]:.3f},{left[1]:.3f} L{right[0]:.3f},{right[1]:.3f} Z"


def render_svg(results: dict) -> str:
    surf = results["surface"]["definition"]
    polygons = surf["polygons"]
    offsets, (x0, y0, x1, y1) = _layout(polygons)
    span = max(x1 - x0, y1 - y0)
    pad = MARGIN * span
    k = WIDTH / span

    def tx(p, x, y):
        ox, oy = offsets[p]
        return (x + ox - x0 + pad) * k, (y1 - y + pad) * k

    width = (x1 - x0 + 2 * pad) * k
    height = (y1 - y0 + 2 * pad) * k
    stroke = 0.004 * WIDTH
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.3f} {height:.3f}">',
        f"<title>{escape(str(results['surface'].get('name', '')))}</title>",
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for p, poly in enumerate(polygons):
        pts = " ".join("{:.3f},{:.3f}".format(*tx(p, x, y)) for x, y in poly)
        out.append(f'<polygon class="polygon" points="{pts}" fill="#f6f6f2" stroke="#444" stroke-width="{stroke:.3f}"/>')

    for cone in results["surface"]["cone_classes"]:
        for j, (p, corner) in enumerate(cone["corners"]):
            x, y = tx(p, *polygons[p][corner])
            if j == 0:
                out.append(
                    f'<circle class="cone" data-order="{cone["order"]}" cx="{x:.3f}" cy="{y:.3f}" '
                    f'r="{2.5 * stroke:.3f}" fill="#c0392b"/>'
                )
            else:
                out.append(
                    f'<circle class="cone-copy" cx="{x:.3f}" cy="{y:.3f}" r="{1.5 * stroke:.3f}" '
                    f'fill="none" stroke="#c0392b" stroke-width="{0.5 * stroke:.3f}"/>'
                )

    orientation = results.get("graph", {}).get("orientation", "inc")
    for t in results["trajectories"]["items"]:
        cls = t["class"]
        style = {"finite": "", "infinite": ' stroke-dasharray="6,4"', "unresolved": ' stroke-dasharray="1,3"'}[cls]
        color = {"finite": "#1f4e99", "infinite": "#7f8c8d", "unresolved": "#e67e22"}[cls]
        segs = [(p, tx(p, a, b), tx(p, c, d)) for p, a, b, c, d in t["pieces"]]
        for _, (ax, ay), (bx, by) in segs:
            out.append(
                f'<line class="trajectory {cls}" x1="{ax:.3f}" y1="{ay:.3f}" x2="{bx:.3f}" y2="{by:.3f}" '
                f'stroke="{color}" stroke-width="{stroke:.3f}"{style}/>'
            )
        if cls == "finite" and segs:
            # traversal runs from the saddle; u increases along it when ascending
            forward = (t["direction"] == "ascending") == (orientation == "inc")
            _, a, b = max(segs, key=lambda s: math.dist(s[1], s[2]))
            if not forward:
                a, b = b, a
            path = _arrow(*a, *b, 3.0 * stroke)
            if path:
                out.append(f'<path class="arrow" d="{path}" fill="{color}"/>')

    for cp in results["critical_points"]["points"]:
        x, y = tx(cp["poly"], *cp["position"])
        if cp["kind"] == "minimum":
            out.append(f'<circle class="minimum" cx="{x:.3f}" cy="{y:.3f}" r="{2.5 * stroke:.3f}" fill="#27ae60"/>')
        elif cp["kind"] == "saddle":
            r = 2.5 * stroke
            out.append(
                f'<path class="saddle" d="M{x - r:.3f},{y - r:.3f} L{x + r:.3f},{y + r:.3f} '
                f'M{x - r:.3f},{y + r:.3f} L{x + r:.3f},{y - r:.3f}" stroke="#8e44ad" stroke-width="{stroke:.3f}"/>'
            )
        else:
            out.append(
                f'<rect class="{cp["kind"]}" x="{x - 2 * stroke:.3f}" y="{y - 2 * stroke:.3f}" '
                f'width="{4 * stroke:.3f}" height="{4 * stroke:.3f}" fill="#e74c3c"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
