"""Forest plot of subgroup effects rendered as standalone SVG text."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

TICKS = (0.25, 0.5, 1.0, 2.0)
PALETTE = ("#1b5e9e", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#555555")

LEFT = 110.0
PLOT_WIDTH = 420.0
ROW_HEIGHT = 18.0
TOP = 40.0


def axis_domain(values, ticks=TICKS) -> tuple[float, float]:
    """Log-scale domain covering the ticks and every finite value, padded by 5%."""
    v = np.asarray([x for x in np.ravel(values) if np.isfinite(x) and x > 0], dtype=np.float64)
    lo = min(ticks[0], v.min()) if v.size else ticks[0]
    hi = max(ticks[-1], v.max()) if v.size else ticks[-1]
    span = np.log(hi) - np.log(lo)
    return float(np.exp(np.log(lo) - 0.05 * span)), float(np.exp(np.log(hi) + 0.05 * span))


def x_position(value: float, domain: tuple[float, float], left: float = LEFT,
               width: float = PLOT_WIDTH) -> float:
    lo, hi = np.log(domain[0]), np.log(domain[1])
    return left + (np.log(value) - lo) / (hi - lo) * width


def _f(x: float) -> str:
    return f"{x:.2f}"


def forest_svg(labels, series: dict, reference: float | None = None, title: str = "") -> str:
    """Render per-subgroup estimates of several estimators side by side.

    Parameters
    ----------
    labels : sequence of str
        Subgroup labels, one row each.
    series : dict
        Estimator name to ``(log_effects, intervals)``; ``intervals`` is
        ``(K, 2)`` on the log scale or ``None``.  Missing values are ``NaN``.
    reference : float, optional
        Hazard ratio drawn as a dashed vertical line (the population estimate).
    """
    labels = list(labels)
    names = list(series)
    point_vals, all_vals = {}, []
    for name in names:
        est, iv = series[name]
        est = np.exp(np.asarray(est, dtype=np.float64))
        ivs = None if iv is None else np.exp(np.asarray(iv, dtype=np.float64))
        point_vals[name] = (est, ivs)
        all_vals.extend(est.tolist())
        if ivs is not None:
            all_vals.extend(ivs.ravel().tolist())
    if reference is not None:
        all_vals.append(reference)
    domain = axis_domain(all_vals)
    n_series = max(len(names), 1)
    band = ROW_HEIGHT * n_series + 6.0
    height = TOP + band * len(labels) + 50.0
    width = LEFT + PLOT_WIDTH + 130.0
    bottom = TOP + band * len(labels)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif" font-size="11">',
        f'<text x="{_f(LEFT)}" y="18" font-size="13">{escape(title)}</text>',
    ]
    x1 = x_position(1.0, domain)
    out.append(f'<line class="null" x1="{_f(x1)}" y1="{_f(TOP)}" x2="{_f(x1)}" y2="{_f(bottom)}" '
               'stroke="#999" stroke-width="1"/>')
    if reference is not None and np.isfinite(reference) and reference > 0:
        xr = x_position(reference, domain)
        out.append(f'<line class="reference" data-value="{reference:.6g}" x1="{_f(xr)}" y1="{_f(TOP)}" '
                   f'x2="{_f(xr)}" y2="{_f(bottom)}" stroke="#333" stroke-dasharray="4,3"/>')
    for r, lab in enumerate(labels):
        y0 = TOP + band * r
        out.append(f'<text class="label" x="{_f(LEFT - 8)}" y="{_f(y0 + band / 2 + 4)}" '
                   f'text-anchor="end">{escape(str(lab))}</text>')
        for s, name in enumerate(names):
            est, ivs = point_vals[name]
            y = y0 + 3.0 + ROW_HEIGHT * (s + 0.5)
            colour = PALETTE[s % len(PALETTE)]
            if ivs is not None and np.all(np.isfinite(ivs[r])) and np.all(ivs[r] > 0):
                xa, xb = x_position(ivs[r, 0], domain), x_position(ivs[r, 1], domain)
                out.append(f'<line x1="{_f(xa)}" y1="{_f(y)}" x2="{_f(xb)}" y2="{_f(y)}" '
                           f'stroke="{colour}" stroke-width="1.5"/>')
            if np.isfinite(est[r]) and est[r] > 0:
                out.append(f'<circle class="point" data-estimator="{escape(name)}" cx="{_f(x_position(est[r], domain))}" '
                           f'cy="{_f(y)}" r="3" fill="{colour}"/>')
    out.append(f'<line class="axis" x1="{_f(LEFT)}" y1="{_f(bottom)}" x2="{_f(LEFT + PLOT_WIDTH)}" '
               f'y2="{_f(bottom)}" stroke="#000"/>')
    for t in TICKS:
        xt = x_position(t, domain)
        out.append(f'<line x1="{_f(xt)}" y1="{_f(bottom)}" x2="{_f(xt)}" y2="{_f(bottom + 5)}" stroke="#000"/>')
        out.append(f'<text class="tick" data-value="{t:g}" x="{_f(xt)}" y="{_f(bottom + 18)}" '
                   f'text-anchor="middle">{t:g}</text>')
    out.append(f'<text x="{_f(LEFT + PLOT_WIDTH / 2)}" y="{_f(bottom + 36)}" text-anchor="middle">'
               'Hazard ratio (log scale)</text>')
    for s, name in enumerate(names):
        ly = TOP + 14.0 * s
        lx = LEFT + PLOT_WIDTH + 20
        out.append(f'<circle cx="{_f(lx)}" cy="{_f(ly)}" r="4" fill="{PALETTE[s % len(PALETTE)]}"/>')
        out.append(f'<text x="{_f(lx + 8)}" y="{_f(ly + 4)}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
