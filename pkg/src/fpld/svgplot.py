"""Tiny dependency-free SVG line plots.

CSV is the primary experiment artifact; these plots are an optional visual
check, so plain polylines with log-scale support are all that is needed.
"""

from __future__ import annotations

import math

_WIDTH, _HEIGHT = 640, 440
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70, 160, 40, 50
_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _transform(values, log_scale):
    vals = [math.log10(v) for v in values] if log_scale else list(values)
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return vals, lo, hi


def _ticks(lo, hi, log_scale, count=5):
    if log_scale:
        lo_i, hi_i = math.floor(lo), math.ceil(hi)
        step = max(1, (hi_i - lo_i) // count)
        return [(t, f"1e{t}") for t in range(lo_i, hi_i + 1, step)]
    step = (hi - lo) / count
    return [(lo + i * step, f"{lo + i * step:.3g}") for i in range(count + 1)]


def plot_lines(path, series, title="", xlabel="", ylabel="",
               logx=False, logy=False) -> None:
    """Write an SVG with one polyline per named series.

    ``series`` maps a label to a pair of equal-length sequences (x, y);
    non-positive values are dropped before a log scale is applied.
    """
    cleaned = {}
    for name, (xs, ys) in series.items():
        pts = [
            (x, y) for x, y in zip(xs, ys)
            if (not logx or x > 0) and (not logy or y > 0)
        ]
        if pts:
            cleaned[name] = pts
    if not cleaned:
        raise ValueError("nothing to plot")

    all_x = [x for pts in cleaned.values() for x, _ in pts]
    all_y = [y for pts in cleaned.values() for _, y in pts]
    tx, x_lo, x_hi = _transform(all_x, logx)
    ty, y_lo, y_hi = _transform(all_y, logy)

    def px(x):
        v = math.log10(x) if logx else x
        return _MARGIN_L + (v - x_lo) / (x_hi - x_lo) * (_WIDTH - _MARGIN_L - _MARGIN_R)

    def py(y):
        v = math.log10(y) if logy else y
        return _HEIGHT - _MARGIN_B - (v - y_lo) / (y_hi - y_lo) * (_HEIGHT - _MARGIN_T - _MARGIN_B)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_WIDTH // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    # axes
    x0, y0 = _MARGIN_L, _HEIGHT - _MARGIN_B
    x1, y1 = _WIDTH - _MARGIN_R, _MARGIN_T
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    for t, label in _ticks(x_lo, x_hi, logx):
        xp = _MARGIN_L + (t - x_lo) / (x_hi - x_lo) * (_WIDTH - _MARGIN_L - _MARGIN_R)
        out.append(f'<line x1="{xp:.1f}" y1="{y0}" x2="{xp:.1f}" y2="{y0 + 4}" stroke="black"/>')
        out.append(f'<text x="{xp:.1f}" y="{y0 + 18}" text-anchor="middle">{label}</text>')
    for t, label in _ticks(y_lo, y_hi, logy):
        yp = _HEIGHT - _MARGIN_B - (t - y_lo) / (y_hi - y_lo) * (_HEIGHT - _MARGIN_T - _MARGIN_B)
        out.append(f'<line x1="{x0 - 4}" y1="{yp:.1f}" x2="{x0}" y2="{yp:.1f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{yp + 4:.1f}" text-anchor="end">{label}</text>')
    out.append(
        f'<text x="{(x0 + x1) // 2}" y="{_HEIGHT - 10}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{(y0 + y1) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(y0 + y1) // 2})">{ylabel}</text>'
    )
    for i, (name, pts) in enumerate(cleaned.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = _MARGIN_T + 16 * i
        out.append(f'<line x1="{x1 + 10}" y1="{ly}" x2="{x1 + 30}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{x1 + 35}" y="{ly + 4}">{name}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
