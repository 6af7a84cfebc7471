"""Tabular and vector-graphics outputs: grid CSVs, SVG heatmaps, ratio tables."""

from __future__ import annotations

import csv
from html import escape
from pathlib import Path

import numpy as np

from .metrics import summarize_ratios

__all__ = ["write_grid_csv", "read_grid_csv", "heatmap_svg", "write_rows_csv",
           "read_rows_csv", "aggregate_ratios"]


def write_grid_csv(path, grid: np.ndarray, freqs_hz, times_ms) -> None:
    """Frequency-by-time table: first column Hz, header row window times in ms."""
    grid = np.asarray(grid, dtype=float)
    if grid.shape != (len(freqs_hz), len(times_ms)):
        raise ValueError(f"grid shape {grid.shape} does not match axes "
                         f"({len(freqs_hz)}, {len(times_ms)})")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["freq_hz"] + [repr(float(t)) for t in times_ms])
        for f, row in zip(freqs_hz, grid):
            w.writerow([repr(float(f))] + [repr(float(v)) for v in row])


def read_grid_csv(path):
    """Inverse of :func:`write_grid_csv`: ``(grid, freqs_hz, times_ms)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    times = np.array([float(v) for v in rows[0][1:]])
    freqs = np.array([float(r[0]) for r in rows[1:]])
    grid = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return grid.reshape(len(freqs), len(times)), freqs, times


def _color(v: float, vmax: float) -> str:
    # linear white -> dark red
    x = 0.0 if vmax <= 0 else min(max(v / vmax, 0.0), 1.0)
    r = int(round(255 - 75 * x))
    gb = int(round(255 * (1 - x)))
    return f"#{r:02x}{gb:02x}{gb:02x}"


def heatmap_svg(grid: np.ndarray, freqs_hz, times_ms, title: str = "",
                cell: int = 18) -> str:
    """SVG heatmap with frequency rows (low at the bottom) and time columns.

    Every cell is a ``rect`` carrying ``data-row``, ``data-col``,
    ``data-freq-hz``, ``data-time-ms`` and ``data-value`` so the figure can be
    compared structurally.
    """
    grid = np.asarray(grid, dtype=float)
    nf, nt = grid.shape
    vmax = float(np.max(grid)) if grid.size else 0.0
    left, top, bottom = 60, 30, 45
    width = left + nt * cell + 20
    height = top + nf * cell + bottom
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'data-rows="{nf}" data-cols="{nt}" data-vmin="0" data-vmax="{vmax!r}">']
    if title:
        out.append(f'<text x="{left}" y="18" font-size="12">{escape(title)}</text>')
    for i in range(nf):
        y = top + (nf - 1 - i) * cell
        for j in range(nt):
            v = float(grid[i, j])
            out.append(
                f'<rect x="{left + j * cell}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_color(v, vmax)}" data-row="{i}" data-col="{j}" '
                f'data-freq-hz="{float(freqs_hz[i])!r}" data-time-ms="{float(times_ms[j])!r}" '
                f'data-value="{v!r}"/>')
        out.append(f'<text x="{left - 4}" y="{y + cell * 0.7:.1f}" font-size="9" '
                   f'text-anchor="end">{float(freqs_hz[i]):g}</text>')
    base = top + nf * cell
    step = max(1, nt // 8)
    for j in range(0, nt, step):
        out.append(f'<text x="{left + j * cell + cell / 2:.1f}" y="{base + 12}" font-size="9" '
                   f'text-anchor="middle">{float(times_ms[j]):g}</text>')
    out.append(f'<text x="{left + nt * cell / 2:.1f}" y="{base + 30}" font-size="11" '
               f'text-anchor="middle">time (ms)</text>')
    out.append(f'<text x="12" y="{top + nf * cell / 2:.1f}" font-size="11" '
               f'transform="rotate(-90 12 {top + nf * cell / 2:.1f})" '
               f'text-anchor="middle">frequency (Hz)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_rows_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in columns})


def read_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def aggregate_ratios(rows: list[dict], keys=("noise_level", "snr", "scope")) -> list[dict]:
    """Mean and standard error of ``ratio`` per combination of ``keys``."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        groups.setdefault(tuple(str(row[k]) for k in keys), []).append(float(row["ratio"]))
    out = []
    for key in sorted(groups):
        mean, se = summarize_ratios(groups[key])
        out.append({**dict(zip(keys, key)), "n_runs": len(groups[key]),
                    "mean_ratio": mean, "se_ratio": se})
    return out


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
