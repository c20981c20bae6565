"""Minimal SVG line charts for IIA-by-layer curves."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def iia_svg(curves: dict[str, dict[int, float]], title: str, width: int = 480, height: int = 300) -> str:
    pad_l, pad_r, pad_t, pad_b = 48, 150, 30, 36
    layers = sorted({l for c in curves.values() for l in c}) or [0]
    lo, hi = layers[0], max(layers[-1], layers[0] + 1)
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def px(l):
        return pad_l + pw * (l - lo) / (hi - lo)

    def py(v):
        return pad_t + ph * (1 - v)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<text x="{pad_l}" y="18" font-size="13">{escape(title)}</text>',
           f'<line x1="{pad_l}" y1="{py(0)}" x2="{pad_l + pw}" y2="{py(0)}" stroke="black"/>',
           f'<line x1="{pad_l}" y1="{py(0)}" x2="{pad_l}" y2="{py(1)}" stroke="black"/>']
    for v in (0, 0.5, 1):
        out.append(f'<text x="{pad_l - 6}" y="{py(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
    for l in layers:
        out.append(f'<text x="{px(l):.1f}" y="{py(0) + 14:.1f}" text-anchor="middle">{l}</text>')
    out.append(f'<text x="{pad_l + pw / 2:.1f}" y="{height - 4}" text-anchor="middle">layer</text>')
    for i, (name, c) in enumerate(curves.items()):
        col = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{px(l):.1f},{py(v):.1f}" for l, v in sorted(c.items()))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="2" points="{pts}"/>')
        ly = pad_t + 14 * i
        out.append(f'<line x1="{pad_l + pw + 10}" y1="{ly}" x2="{pad_l + pw + 24}" y2="{ly}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{pad_l + pw + 28}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, svg: str) -> None:
    from .io_utils import atomic_write_text

    atomic_write_text(Path(path), svg)
