"""Dependency-free SVG plots: hex-tile expression maps, scatter plots, and
sweep lines. Output bytes are deterministic for fixed inputs (fixed float
formatting, no timestamps), so plots can be diffed in tests.
"""

from __future__ import annotations

import numpy as np

from lgdist.errors import ShapeError

_VIRIDIS = (
    (0.267, 0.005, 0.329),
    (0.283, 0.141, 0.458),
    (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553),
    (0.164, 0.471, 0.558),
    (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518),
    (0.267, 0.749, 0.441),
    (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150),
    (0.993, 0.906, 0.144),
)


def _fmt(x: float) -> str:
    return f"{float(x):.4f}"


def color_for(value: float, vmin: float, vmax: float) -> str:
    """Map a value to a viridis-like hex color on [vmin, vmax]."""
    if vmax <= vmin:
        t = 0.5
    else:
        t = (float(value) - vmin) / (vmax - vmin)
    t = min(max(t, 0.0), 1.0)
    pos = t * (len(_VIRIDIS) - 1)
    i = min(int(pos), len(_VIRIDIS) - 2)
    frac = pos - i
    rgb = tuple(
        int(round(255 * ((1 - frac) * _VIRIDIS[i][k] + frac * _VIRIDIS[i + 1][k])))
        for k in range(3)
    )
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _hex_points(cx: float, cy: float, radius: float) -> str:
    pts = []
    for k in range(6):
        ang = np.pi / 2 + k * np.pi / 3
        pts.append(f"{_fmt(cx + radius * np.cos(ang))},{_fmt(cy - radius * np.sin(ang))}")
    return " ".join(pts)


def _spot_centers(coords: np.ndarray, size: float = 12.0):
    x = coords[:, 1].astype(np.float64) * size / 2.0
    y = coords[:, 0].astype(np.float64) * size * np.sqrt(3.0) / 2.0
    return x - x.min(), y - y.min()


def expression_map_svg(
    coords: np.ndarray,
    values: np.ndarray,
    vmin: float | None = None,
    vmax: float | None = None,
    hidden: np.ndarray | None = None,
    title: str = "",
    size: float = 12.0,
) -> str:
    """Hex-tile map of one gene over a slide; hidden spots render black."""
    if coords.shape[0] != values.shape[0]:
        raise ShapeError("coords and values must have one row per spot")
    vmin = float(np.min(values)) if vmin is None else float(vmin)
    vmax = float(np.max(values)) if vmax is None else float(vmax)
    xs, ys = _spot_centers(coords, size)
    pad = size
    width = xs.max() + 2 * pad
    height = ys.max() + 2 * pad + (18 if title else 0)
    radius = size / np.sqrt(3.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    ]
    y_off = 18 if title else 0
    if title:
        parts.append(f'<text x="{_fmt(pad)}" y="13" font-size="12" font-family="sans-serif">{title}</text>')
    for i in range(coords.shape[0]):
        if hidden is not None and hidden[i]:
            fill = "#000000"
        else:
            fill = color_for(values[i], vmin, vmax)
        parts.append(
            f'<polygon points="{_hex_points(xs[i] + pad, ys[i] + pad + y_off, radius)}" fill="{fill}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def comparison_panels_svg(
    coords: np.ndarray,
    panels: list[tuple[str, np.ndarray]],
    hidden_by_panel: dict[int, np.ndarray] | None = None,
    size: float = 12.0,
) -> str:
    """Side-by-side hex maps sharing one color scale (truth / masked / completed)."""
    all_vals = np.concatenate([v for _, v in panels])
    vmin, vmax = float(all_vals.min()), float(all_vals.max())
    xs, ys = _spot_centers(coords, size)
    pad = size
    panel_w = xs.max() + 2 * pad
    height = ys.max() + 2 * pad + 18
    radius = size / np.sqrt(3.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(panel_w * len(panels))}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(panel_w * len(panels))} {_fmt(height)}">'
    ]
    for p, (title, values) in enumerate(panels):
        ox = p * panel_w
        parts.append(
            f'<text x="{_fmt(ox + pad)}" y="13" font-size="12" font-family="sans-serif">{title}</text>'
        )
        hidden = (hidden_by_panel or {}).get(p)
        for i in range(coords.shape[0]):
            if hidden is not None and hidden[i]:
                fill = "#000000"
            else:
                fill = color_for(values[i], vmin, vmax)
            parts.append(
                f'<polygon points="{_hex_points(xs[i] + ox + pad, ys[i] + pad + 18, radius)}" fill="{fill}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts)


def scatter_svg(truth: np.ndarray, predicted: np.ndarray, title: str = "", side: float = 320.0) -> str:
    """Predicted vs truth with the identity diagonal."""
    if truth.shape != predicted.shape:
        raise ShapeError("truth and predicted must have identical shapes")
    lo = float(min(truth.min(), predicted.min()))
    hi = float(max(truth.max(), predicted.max()))
    if hi <= lo:
        hi = lo + 1.0
    pad = 36.0
    span = side - 2 * pad

    def sx(v):
        return pad + (float(v) - lo) / (hi - lo) * span

    def sy(v):
        return side - pad - (float(v) - lo) / (hi - lo) * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(side)}" height="{_fmt(side)}" '
        f'viewBox="0 0 {_fmt(side)} {_fmt(side)}">'
    ]
    if title:
        parts.append(f'<text x="{_fmt(pad)}" y="16" font-size="12" font-family="sans-serif">{title}</text>')
    parts.append(
        f'<rect x="{_fmt(pad)}" y="{_fmt(pad)}" width="{_fmt(span)}" height="{_fmt(span)}" '
        f'fill="none" stroke="#888888" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{_fmt(sx(lo))}" y1="{_fmt(sy(lo))}" x2="{_fmt(sx(hi))}" y2="{_fmt(sy(hi))}" '
        f'stroke="#cc3333" stroke-width="1"/>'
    )
    for a, b in zip(np.ravel(truth), np.ravel(predicted)):
        parts.append(f'<circle cx="{_fmt(sx(a))}" cy="{_fmt(sy(b))}" r="2" fill="#1f5fa8" fill-opacity="0.6"/>')
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * (hi - lo)
        parts.append(
            f'<text x="{_fmt(sx(v))}" y="{_fmt(side - pad + 14)}" font-size="9" text-anchor="middle" '
            f'font-family="sans-serif">{v:.3g}</text>'
        )
        parts.append(
            f'<text x="{_fmt(pad - 6)}" y="{_fmt(sy(v) + 3)}" font-size="9" text-anchor="end" '
            f'font-family="sans-serif">{v:.3g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


_SERIES_COLORS = ("#1f5fa8", "#cc6633", "#2c8a4a", "#8a2c7a")


def sweep_line_svg(series: dict[str, list[dict]], title: str = "", width: float = 420.0, height: float = 300.0) -> str:
    """MSE as a function of masked fraction, one polyline per completer."""
    fractions = sorted({row["fraction"] for rows in series.values() for row in rows})
    values = [row["mean_mse"] for rows in series.values() for row in rows]
    if not fractions or not values:
        raise ShapeError("sweep series are empty")
    lo_x, hi_x = min(fractions), max(fractions)
    if hi_x <= lo_x:
        lo_x, hi_x = lo_x - 0.05, hi_x + 0.05
    hi_y = max(values) * 1.05 or 1.0
    pad = 40.0

    def sx(v):
        return pad + (v - lo_x) / (hi_x - lo_x) * (width - 2 * pad)

    def sy(v):
        return height - pad - v / hi_y * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">'
    ]
    if title:
        parts.append(f'<text x="{_fmt(pad)}" y="16" font-size="12" font-family="sans-serif">{title}</text>')
    parts.append(
        f'<rect x="{_fmt(pad)}" y="{_fmt(pad)}" width="{_fmt(width - 2 * pad)}" '
        f'height="{_fmt(height - 2 * pad)}" fill="none" stroke="#888888" stroke-width="1"/>'
    )
    for k, (name, rows) in enumerate(series.items()):
        color = _SERIES_COLORS[k % len(_SERIES_COLORS)]
        pts = sorted(((row["fraction"], row["mean_mse"]) for row in rows))
        path = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        if len(pts) > 1:
            parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for x, y in pts:
            parts.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>')
        parts.append(
            f'<text x="{_fmt(width - pad - 4)}" y="{_fmt(pad + 14 + 14 * k)}" font-size="10" '
            f'text-anchor="end" fill="{color}" font-family="sans-serif">{name}</text>'
        )
    for frac in fractions:
        parts.append(
            f'<text x="{_fmt(sx(frac))}" y="{_fmt(height - pad + 14)}" font-size="9" '
            f'text-anchor="middle" font-family="sans-serif">{frac:.2g}</text>'
        )
    for tick in (0.0, 0.5, 1.0):
        v = tick * hi_y
        parts.append(
            f'<text x="{_fmt(pad - 6)}" y="{_fmt(sy(v) + 3)}" font-size="9" text-anchor="end" '
            f'font-family="sans-serif">{v:.3g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
