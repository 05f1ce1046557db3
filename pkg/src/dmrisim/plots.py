"""Static SVG figures written by hand so that output bytes are reproducible."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=64, right=16, top=28, bottom=48)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if not hi > lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step - 1e-9) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _label(v: float) -> str:
    return f"{v:.4g}"


def _frame(title, xlabel, ylabel):
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="18" text-anchor="middle" font-size="13">'
        f'{escape(title)}</text>',
        f'<text x="{WIDTH / 2:.2f}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2:.2f})">{escape(ylabel)}</text>',
    ]
    return out


def _plot_box():
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    return x0, x1, y0, y1


def line_plot(series, title="", xlabel="", ylabel="") -> str:
    """Markers for every point; a polyline joins series with two or more points.

    ``series`` is a sequence of ``(label, x, y)``. NaN points are dropped.
    """
    clean = []
    for label, x, y in series:
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        clean.append((label, x[ok], y[ok]))
    xs = np.concatenate([s[1] for s in clean]) if clean else np.zeros(0)
    ys = np.concatenate([s[2] for s in clean]) if clean else np.zeros(0)
    xlo, xhi = (float(xs.min()), float(xs.max())) if len(xs) else (0.0, 1.0)
    ylo, yhi = (float(ys.min()), float(ys.max())) if len(ys) else (0.0, 1.0)
    if xhi == xlo:
        xlo, xhi = xlo - 0.5 * max(abs(xlo), 1.0), xhi + 0.5 * max(abs(xhi), 1.0)
    if yhi == ylo:
        ylo, yhi = ylo - 0.5 * max(abs(ylo), 1.0), yhi + 0.5 * max(abs(yhi), 1.0)
    x0, x1, y0, y1 = _plot_box()

    def px(v):
        return x0 + (v - xlo) / (xhi - xlo) * (x1 - x0)

    def py(v):
        return y0 + (v - ylo) / (yhi - ylo) * (y1 - y0)

    out = _frame(title, xlabel, ylabel)
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
               f'fill="none" stroke="black"/>')
    for t in _ticks(xlo, xhi):
        out.append(f'<text x="{_num(px(t))}" y="{y0 + 16}" text-anchor="middle">{_label(t)}</text>')
    for t in _ticks(ylo, yhi):
        out.append(f'<text x="{x0 - 6}" y="{_num(py(t) + 4)}" text-anchor="end">{_label(t)}</text>')
    for k, (label, x, y) in enumerate(clean):
        color = PALETTE[k % len(PALETTE)]
        out.append(f'<g class="series" stroke="{color}" fill="{color}">')
        if len(x) >= 2:
            pts = " ".join(f"{_num(px(a))},{_num(py(b))}" for a, b in zip(x, y))
            out.append(f'<polyline points="{pts}" fill="none"/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{_num(px(a))}" cy="{_num(py(b))}" r="3"/>')
        out.append("</g>")
        out.append(f'<text x="{x1 - 4}" y="{y1 + 14 + 13 * k}" text-anchor="end" '
                   f'fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(labels, values, title="", ylabel="") -> str:
    """One bar per value; NaN values leave an empty slot."""
    vals = np.asarray(values, float)
    finite = vals[np.isfinite(vals)]
    top = float(finite.max()) if len(finite) and finite.max() > 0 else 1.0
    x0, x1, y0, y1 = _plot_box()
    n = max(len(vals), 1)
    slot = (x1 - x0) / n
    out = _frame(title, "", ylabel)
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    for t in _ticks(0.0, top):
        y = y0 - t / top * (y0 - y1)
        out.append(f'<text x="{x0 - 6}" y="{_num(y + 4)}" text-anchor="end">{_label(t)}</text>')
    for k, (lab, v) in enumerate(zip(labels, vals)):
        cx = x0 + (k + 0.5) * slot
        if np.isfinite(v):
            hgt = max(v, 0.0) / top * (y0 - y1)
            out.append(f'<rect class="bar" x="{_num(cx - 0.35 * slot)}" y="{_num(y0 - hgt)}" '
                       f'width="{_num(0.7 * slot)}" height="{_num(hgt)}" '
                       f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{_num(cx)}" y="{y0 + 16}" text-anchor="middle">'
                   f'{escape(str(lab))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def signal_figure(bvalues, MF_cmpts, labels, title="") -> str:
    """Normalized signal magnitude against b, one series per compartment."""
    series = []
    for lab, s in zip(labels, MF_cmpts):
        s = np.abs(np.asarray(s))
        ref = s[0] if len(s) and s[0] > 0 else 1.0
        series.append((lab, bvalues, s / ref))
    return line_plot(series, title=title, xlabel="b (s/mm²)", ylabel="|S| / |S(first b)|")


def adc_figure(adc_cmpts, adc_all, labels, title="") -> str:
    """Bars for each compartment followed by one for all compartments."""
    return bar_chart(list(labels) + ["all"], list(adc_cmpts) + [adc_all], title=title,
                     ylabel="ADC (µm²/µs)")
