"""Persistence: CSV tables, JSON run metadata, binary frames, and SVG charts.

Floats are written with repr-faithful formatting so that identical runs yield
byte-identical files; chart emission is data-only (simple polyline SVGs).
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

FRAME_MAGIC = b"KMF1"


def fmt(x) -> str:
    """Shortest round-trip decimal for a float; integers pass through."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_meta(path, meta: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def trajectory_rows(run_id: str, traj):
    """Rows (run id, t, i, u_1..u_m, v_1..v_m) for every snapshot and particle."""
    for t, pts in zip(traj.times, traj.snapshots):
        for i in range(pts.shape[0]):
            yield [run_id, t, i, *pts[i]]


def trajectory_header(m: int):
    return (
        ["run_id", "t", "i"]
        + [f"u{k}" for k in range(1, m + 1)]
        + [f"v{k}" for k in range(1, m + 1)]
    )


def write_trajectory_csv(path, run_id: str, traj, m: int):
    write_csv(path, trajectory_header(m), trajectory_rows(run_id, traj))


def write_frames(path, traj, m: int):
    """Compact binary frames: per snapshot a header (magic, N, m, t) and the
    little-endian float64 state block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for t, pts in zip(traj.times, traj.snapshots):
            n = pts.shape[0]
            fh.write(FRAME_MAGIC)
            fh.write(struct.pack("<qqd", n, m, float(t)))
            fh.write(np.ascontiguousarray(pts, dtype="<f8").tobytes())


def read_frames(path):
    """Yield (t, points) from a frame file; validates magic and shapes."""
    out = []
    raw = Path(path).read_bytes()
    pos = 0
    while pos < len(raw):
        magic = raw[pos : pos + 4]
        if magic != FRAME_MAGIC:
            raise ValueError(f"bad frame magic at offset {pos}")
        n, m, t = struct.unpack_from("<qqd", raw, pos + 4)
        pos += 4 + 24
        count = n * 2 * m
        pts = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(n, 2 * m)
        pos += count * 8
        out.append((t, pts.copy()))
    return out


# ---------------------------------------------------------------------------
# minimal SVG line charts
# ---------------------------------------------------------------------------


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def write_line_chart(
    path,
    series: dict,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
    logx: bool = False,
    logy: bool = False,
    width: int = 640,
    height: int = 420,
):
    """Write a plain polyline chart; ``series`` maps labels to (xs, ys)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    margin = 60
    plot_w, plot_h = width - 2 * margin, height - 2 * margin

    def tx(vals):
        v = np.asarray(vals, dtype=np.float64)
        return np.log10(v) if logx else v

    def ty(vals):
        v = np.asarray(vals, dtype=np.float64)
        return np.log10(v) if logy else v

    all_x = np.concatenate([tx(xs) for xs, _ in series.values()])
    all_y = np.concatenate([ty(ys) for _, ys in series.values()])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * plot_h

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width/2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#444"/>',
    ]
    for tick in _ticks(x_lo, x_hi):
        label = f"{10**tick:.3g}" if logx else f"{tick:.3g}"
        parts.append(
            f'<text x="{px(tick):.1f}" y="{height - margin + 18}" text-anchor="middle" '
            f'font-size="11">{label}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        label = f"{10**tick:.3g}" if logy else f"{tick:.3g}"
        parts.append(
            f'<text x="{margin - 6}" y="{py(tick):.1f}" text-anchor="end" '
            f'font-size="11">{label}</text>'
        )
    parts.append(
        f'<text x="{width/2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{height/2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height/2:.1f})">{ylabel}</text>'
    )
    for idx, (label, (xs, ys)) in enumerate(series.items()):
        X, Y = tx(xs), ty(ys)
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(X, Y))
        color = colors[idx % len(colors)]
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 16 * idx + 12}" '
            f'font-size="11" fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
