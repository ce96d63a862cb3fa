"""SVG rendering: per-phase utility heatmaps and the GA convergence plot.

Output is plain SVG 1.1 text built with fixed number formatting, so the
bytes depend only on the inputs. Styling:

* cells: ramp from red ``#d00000`` (0) through yellow ``#f0d000`` (0.5) to
  green ``#00a000`` (1); each ``rect`` carries its value in ``data-u``
* obstacles: filled grey; ROIs (after subtracting obstacles and no-fly
  zones): green outline; no-fly zones: dashed red outline
* tags: orange segment along the wall with an arrow along the normal
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..ga import Generation
from ..scene import modified_rois
from ..valuation import PlanningContext

SCALE = 40.0  # pixels per meter
PAD = 0.5  # meters
RAMP = ((0.0, (208, 0, 0)), (0.5, (240, 208, 0)), (1.0, (0, 160, 0)))
TAG_COLOR = "#ff8c00"
ARROW_LEN = 0.35


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def ramp_color(u: float) -> str:
    """Hex color of a normalized utility; values outside [0, 1] are clamped."""
    u = min(max(float(u), 0.0), 1.0)
    for (u0, c0), (u1, c1) in zip(RAMP, RAMP[1:]):
        if u <= u1:
            t = (u - u0) / (u1 - u0)
            rgb = [_round(a + t * (b - a)) for a, b in zip(c0, c1)]
            return "#{:02x}{:02x}{:02x}".format(*rgb)
    return "#{:02x}{:02x}{:02x}".format(*RAMP[-1][1])


def _f(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Canvas:
    def __init__(self, xmin, ymin, xmax, ymax):
        self.x0 = xmin - PAD
        self.y1 = ymax + PAD
        self.w = (xmax - xmin + 2 * PAD) * SCALE
        self.h = (ymax - ymin + 2 * PAD) * SCALE

    def xy(self, x, y) -> tuple[str, str]:
        return _f((x - self.x0) * SCALE), _f((self.y1 - y) * SCALE)

    def points(self, verts) -> str:
        return " ".join(",".join(self.xy(x, y)) for x, y in verts)


def _header(w: float, h: float, title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(w)}" height="{_f(h)}" '
        f'viewBox="0 0 {_f(w)} {_f(h)}">',
        f"<title>{escape(title)}</title>",
    ]


def render_phase(ctx: PlanningContext, genes: np.ndarray, phase: int) -> str:
    """SVG heatmap of normalized cell utilities for one phase."""
    d = ctx.phases[phase]
    scene = d.scene
    polys = list(scene.obstacles) + [r.polygon for r in scene.rois] + list(scene.no_fly)
    if polys:
        b = np.array([p.bounds() for p in polys])
        xmin, ymin = b[:, 0].min(), b[:, 1].min()
        xmax, ymax = b[:, 2].max(), b[:, 3].max()
    else:
        xmin = ymin = 0.0
        xmax = ymax = 1.0
    cv = _Canvas(xmin, ymin, xmax, ymax)
    config = ctx.config_of(genes, phase)
    u = ctx.cell_utilities(phase, [(s, k) for s, k in ctx.active_of(genes, phase)])
    name = d.phase.name or f"phase {phase}"
    out = _header(cv.w, cv.h, f"{name}: normalized cell utility")
    out.append(
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="5" markerHeight="5" '
        f'orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="{TAG_COLOR}"/></marker></defs>'
    )
    out.append(f'<rect x="0" y="0" width="{_f(cv.w)}" height="{_f(cv.h)}" fill="#ffffff"/>')
    out.append('<g id="cells" stroke="none">')
    side = _f(ctx.params.cell_size * SCALE)
    for cell, val in zip(d.cells, u):
        half = cell.size / 2
        x, y = cv.xy(cell.center[0] - half, cell.center[1] + half)
        out.append(
            f'<rect x="{x}" y="{y}" width="{side}" height="{side}" fill="{ramp_color(val)}" data-u="{val:.6f}"/>'
        )
    out.append("</g>")
    out.append('<g id="obstacles" fill="#808080" stroke="#404040" stroke-width="1">')
    for p in scene.obstacles:
        out.append(f'<polygon points="{cv.points(p.vertices)}"/>')
    out.append("</g>")
    out.append('<g id="rois" fill="none" stroke="#008000" stroke-width="1.5">')
    for p, _ in modified_rois(scene, ctx.params.cell_size):
        out.append(f'<polygon points="{cv.points(p.vertices)}"/>')
    out.append("</g>")
    out.append('<g id="nofly" fill="none" stroke="#c00000" stroke-width="1" stroke-dasharray="4,3">')
    for p in scene.no_fly:
        out.append(f'<polygon points="{cv.points(p.vertices)}"/>')
    out.append("</g>")
    out.append(f'<g id="tags" stroke="{TAG_COLOR}" stroke-width="3" fill="none">')
    for slot_id, slot, size in config:
        opt = slot.option
        a, t, n = np.asarray(opt.anchor, float), opt.tangent, np.asarray(opt.normal, float)
        p0, p1 = a - t * size / 2, a + t * size / 2
        x0, y0 = cv.xy(*p0)
        x1, y1 = cv.xy(*p1)
        out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" data-slot="{slot_id}"/>')
        xa, ya = cv.xy(*a)
        xb, yb = cv.xy(*(a + n * ARROW_LEN))
        out.append(f'<line x1="{xa}" y1="{ya}" x2="{xb}" y2="{yb}" stroke-width="1.5" marker-end="url(#arrow)"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_convergence(history: Sequence[Generation], title: str = "GA convergence") -> str:
    """Best and mean score per generation as two polylines."""
    w, h, m = 640.0, 360.0, 40.0
    out = _header(w, h, title)
    out.append(f'<rect x="0" y="0" width="{_f(w)}" height="{_f(h)}" fill="#ffffff"/>')
    out.append(
        f'<g stroke="#000000" stroke-width="1"><line x1="{_f(m)}" y1="{_f(h - m)}" x2="{_f(w - m)}" y2="{_f(h - m)}"/>'
        f'<line x1="{_f(m)}" y1="{_f(m)}" x2="{_f(m)}" y2="{_f(h - m)}"/></g>'
    )
    if history:
        its = [g.iteration for g in history]
        vals = [g.best for g in history] + [g.mean for g in history]
        lo, hi = min(vals), max(vals)
        span = hi - lo if hi > lo else 1.0
        xspan = max(its[-1], 1)

        def pt(i, v):
            return f"{_f(m + (w - 2 * m) * i / xspan)},{_f(h - m - (h - 2 * m) * (v - lo) / span)}"

        for key, color in (("mean", "#8080ff"), ("best", "#000080")):
            pts = " ".join(pt(g.iteration, getattr(g, key)) for g in history)
            out.append(f'<polyline id="{key}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_f(m)}" y="{_f(m - 10)}" font-size="12">best {hi:.6g}, generations {len(history)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
