"""
Output formats.

CSV: '.' decimal separator, '#' comment lines, one header row, floats
written with '%.17g' (round-trips exactly), '\\n' line endings.
JSON: every number is wrapped as {"value", "unit", "provenance"}.
SVG: data-only polylines with plain axes.
"""

import json
import math
from pathlib import Path

import numpy as np

from .calib import MHZ
from .errors import RydcavError

PROVENANCE = ("config", "fitted", "derived")


def quantity(value, unit, provenance):
    """JSON record for one number."""
    if provenance not in PROVENANCE:
        raise ValueError(f"provenance must be one of {PROVENANCE}")
    if isinstance(value, (np.integer, int)) and not isinstance(value, bool):
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            value = None
    return {"value": value, "unit": unit, "provenance": provenance}


def metric_record(m):
    return quantity(m.value, m.unit, m.provenance)


def _check_wrapped(obj, where="$"):
    """Raise if any bare number slipped into a JSON payload."""
    if isinstance(obj, dict):
        if set(obj) == {"value", "unit", "provenance"}:
            return
        for k, v in obj.items():
            _check_wrapped(v, f"{where}.{k}")
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _check_wrapped(v, f"{where}[{i}]")
    elif isinstance(obj, (int, float, np.number)) and not isinstance(obj, bool):
        raise RydcavError(f"bare number at {where} in JSON output")


def write_json(path, payload):
    _check_wrapped(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def _fmt(v):
    if isinstance(v, str):
        return v
    return "%.17g" % v


def write_csv(path, header, columns, comments=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = [np.asarray(c) for c in columns]
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(header))
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_spectrum_csv(path, trace, comments=()):
    """Spectrum in the same two-column layout accepted by the ingest path."""
    return write_csv(path, ["detuning_MHz", "transmission"], [trace.detuning / MHZ, trace.values],
                     [f"config: {trace.config}", f"source: {trace.source}", *comments])


def fit_record(fit, kappa=None):
    peaks = []
    for p in fit.peaks:
        peaks.append({
            "center": quantity(p.center / MHZ, "MHz", "fitted"),
            "sigma": quantity(p.sigma / MHZ, "MHz", "fitted"),
            "gamma": quantity(p.gamma / MHZ, "MHz", "fitted"),
            "amplitude": quantity(p.amplitude, "a.u.", "fitted"),
            "fwhm": quantity(p.fwhm / MHZ, "MHz", "derived"),
        })
    rec = {
        "kernel": fit.kernel,
        "converged": fit.converged,
        "iterations": quantity(fit.iterations, "count", "fitted"),
        "peaks": peaks,
        "baseline": quantity(fit.baseline, "a.u.", "fitted"),
        "slope": quantity(fit.slope, "a.u./MHz", "fitted"),
        "splitting": quantity(fit.splitting / MHZ, "MHz", "derived"),
        "residual_rms": quantity(fit.residual_rms, "a.u.", "derived"),
    }
    if kappa is not None:
        rec["kappa"] = quantity(kappa.value, kappa.unit, "derived")
        rec["kappa_magnitude"] = quantity(kappa.magnitude, kappa.unit, "derived")
        rec["lock_detuning"] = quantity(kappa.lock_detuning / MHZ, "MHz", "config")
        rec["kappa_peak_index"] = quantity(kappa.peak_index, "index", "derived")
    return rec


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def write_svg(path, series, xlabel, ylabel, width=640, height=400, logx=False):
    """Polyline plot of ``series`` = [(x, y, label), ...]."""
    margin = 60
    xs = [np.log10(np.asarray(s[0], float)) if logx else np.asarray(s[0], float) for s in series]
    ys = [np.asarray(s[1], float) for s in series]
    finite = [y[np.isfinite(y)] for y in ys]
    x0 = min(x.min() for x in xs)
    x1 = max(x.max() for x in xs)
    y0 = min(y.min() for y in finite if y.size)
    y1 = max(y.max() for y in finite if y.size)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(x):
        return margin + (x - x0) / (x1 - x0) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
           f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>']
    for t in _ticks(x0, x1):
        lab = f"{10 ** t:.3g}" if logx else f"{t:.4g}"
        out.append(f'<text x="{px(t):.2f}" y="{height - margin + 18}" font-size="11" '
                   f'text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{margin - 6}" y="{py(t) + 4:.2f}" font-size="11" '
                   f'text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 15}" font-size="13" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="15" y="{height / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 15 {height / 2})">{ylabel}</text>')
    for k, ((_, _, label), x, y) in enumerate(zip(series, xs, ys)):
        ok = np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        col = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - margin}" y="{margin + 16 * k}" font-size="11" fill="{col}" '
                   f'text-anchor="end">{label}</text>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
