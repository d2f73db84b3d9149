"""Deterministic SVG figures with CSV backing files.

SVGs are assembled from strings with fixed float formatting and carry
no timestamps, so re-emission from the same records is byte-identical.
Each figure writes a sibling .csv with the numbers behind it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tasks import Task

WIDTH, HEIGHT = 640, 400
MARGIN = 54
COVARIATE_COLOR = "#e8871e"   # orange
TARGET_COLOR = "#7d3c98"      # purple


def _fmt(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, width=WIDTH, height=HEIGHT):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" '
            f'fill="white"/>',
        ]

    def polyline(self, points, color, cls, width=1.5, dash=None,
                 opacity=1.0):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline class="{cls}" points="{pts}" fill="none" '
            f'stroke="{color}" stroke-width="{width}" '
            f'stroke-opacity="{opacity:.2f}"{dash_attr}/>')

    def polygon(self, points, color, cls, opacity=0.25):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.parts.append(
            f'<polygon class="{cls}" points="{pts}" fill="{color}" '
            f'fill-opacity="{opacity:.2f}" stroke="none"/>')

    def circle(self, x, y, r, color, cls):
        self.parts.append(
            f'<circle class="{cls}" cx="{_fmt(x)}" cy="{_fmt(y)}" '
            f'r="{r}" fill="{color}"/>')

    def star(self, x, y, r, color, cls):
        pts = []
        for k in range(10):
            rad = r if k % 2 == 0 else r * 0.4
            ang = -np.pi / 2 + k * np.pi / 5
            pts.append((x + rad * np.cos(ang), y + rad * np.sin(ang)))
        coords = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in pts)
        self.parts.append(
            f'<polygon class="{cls}" points="{coords}" fill="{color}"/>')

    def rect(self, x, y, w, h, color, cls, stroke="none"):
        self.parts.append(
            f'<rect class="{cls}" x="{_fmt(x)}" y="{_fmt(y)}" '
            f'width="{_fmt(w)}" height="{_fmt(h)}" fill="{color}" '
            f'stroke="{stroke}"/>')

    def text(self, x, y, s, size=12, anchor="middle", cls="label"):
        self.parts.append(
            f'<text class="{cls}" x="{_fmt(x)}" y="{_fmt(y)}" '
            f'font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}">{s}</text>')

    def line(self, x1, y1, x2, y2, color="#444444", width=1.0):
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{color}" stroke-width="{width}"/>')

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Axes:
    """Maps data coordinates into the plot rectangle."""

    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        pad = 0.05 * (y_hi - y_lo) if y_hi > y_lo else 1.0
        self.x_lo, self.x_hi = x_lo, x_hi
        self.y_lo, self.y_hi = y_lo - pad, y_hi + pad

    def x(self, v):
        span = self.x_hi - self.x_lo or 1.0
        return MARGIN + (v - self.x_lo) / span * (WIDTH - 2 * MARGIN)

    def y(self, v):
        span = self.y_hi - self.y_lo or 1.0
        return HEIGHT - MARGIN - (v - self.y_lo) / span * (HEIGHT - 2 * MARGIN)

    def frame(self, canvas, x_label, y_label, title):
        canvas.line(MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN)
        canvas.line(MARGIN, MARGIN, MARGIN, HEIGHT - MARGIN)
        canvas.text(WIDTH / 2, HEIGHT - 14, x_label)
        canvas.text(WIDTH / 2, 24, title, size=14)
        canvas.text(16, HEIGHT / 2, y_label, size=12)
        for frac in (0.0, 0.5, 1.0):
            v = self.y_lo + frac * (self.y_hi - self.y_lo)
            canvas.text(MARGIN - 6, self.y(v) + 4, f"{v:.2f}", size=10,
                        anchor="end")


def forecast_overlay(task: Task, path, instance: int = 0,
                     prediction: float | None = None, split: str = "query"
                     ) -> Path:
    """Covariates (orange), observed target (purple), true and predicted
    future-target markers for one instance of a task."""
    path = Path(path)
    part = task.query if split == "query" else task.support
    x = part.x[instance]                     # [T, C_p]
    y = part.y[instance]                     # [L_y]
    y_future = float(part.y_future[instance, 0])
    t = x.shape[0]
    values = [x.min(), x.max(), y_future]
    if y.size:
        values += [y.min(), y.max()]
    if prediction is not None:
        values.append(prediction)
    axes = _Axes(0, t - 1, min(values), max(values))
    canvas = _Canvas()
    axes.frame(canvas, "time step", "value",
               f"task forecast (horizon {task.horizon})")
    for j in range(x.shape[1]):
        canvas.polyline([(axes.x(i), axes.y(x[i, j])) for i in range(t)],
                        COVARIATE_COLOR, "covariate", width=1.0, opacity=0.6)
    if y.size:
        canvas.polyline([(axes.x(i), axes.y(y[i])) for i in range(len(y))],
                        TARGET_COLOR, "target", width=2.0)
    else:
        canvas.polyline([(axes.x(0), axes.y(0.0)), (axes.x(0), axes.y(0.0))],
                        TARGET_COLOR, "target", width=2.0)
    canvas.circle(axes.x(t - 1), axes.y(y_future), 5, TARGET_COLOR, "truth")
    if prediction is not None:
        canvas.star(axes.x(t - 1), axes.y(prediction), 8, "#c0392b",
                    "prediction")
    path.write_text(canvas.render(), encoding="utf-8")

    csv_path = path.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        cov_cols = ",".join(f"cov_{j}" for j in range(x.shape[1]))
        fh.write(f"step,{cov_cols},target_observed,target_future,prediction\n")
        for i in range(t):
            covs = ",".join(repr(float(v)) for v in x[i])
            observed = repr(float(y[i])) if i < len(y) else ""
            future = repr(y_future) if i == t - 1 else ""
            pred = (repr(float(prediction))
                    if prediction is not None and i == t - 1 else "")
            fh.write(f"{i},{covs},{observed},{future},{pred}\n")
    return path


def channel_curve(rows: list, path, title: str = "error vs channel count"
                  ) -> Path | None:
    """Mean MSE per channel count with a std band over repetitions.

    ``rows`` holds dicts with channel_count, repetition, mse; the CSV
    carries one row per (channel count, repetition).
    """
    path = Path(path)
    if not rows:
        print(f"figures: no rows for {path.name}, skipped")
        return None
    counts = sorted({r["channel_count"] for r in rows})
    means, stds = [], []
    for c in counts:
        vals = [r["mse"] for r in rows if r["channel_count"] == c]
        means.append(float(np.mean(vals)))
        stds.append(float(np.std(vals)))
    lo = min(m - s for m, s in zip(means, stds))
    hi = max(m + s for m, s in zip(means, stds))
    axes = _Axes(counts[0], counts[-1], min(lo, 0.0), hi)
    canvas = _Canvas()
    axes.frame(canvas, "channels per task", "mse", title)
    band = ([(axes.x(c), axes.y(m + s))
             for c, m, s in zip(counts, means, stds)]
            + [(axes.x(c), axes.y(m - s))
               for c, m, s in reversed(list(zip(counts, means, stds)))])
    canvas.polygon(band, TARGET_COLOR, "band")
    canvas.polyline([(axes.x(c), axes.y(m)) for c, m in zip(counts, means)],
                    TARGET_COLOR, "mean", width=2.0)
    for c, m in zip(counts, means):
        canvas.circle(axes.x(c), axes.y(m), 3, TARGET_COLOR, "point")
        canvas.text(axes.x(c), HEIGHT - MARGIN + 16, str(c), size=10)
    path.write_text(canvas.render(), encoding="utf-8")

    with open(path.with_suffix(".csv"), "w", encoding="utf-8") as fh:
        fh.write("channel_count,repetition,mse\n")
        for r in sorted(rows, key=lambda r: (r["channel_count"],
                                             r["repetition"])):
            fh.write(f"{r['channel_count']},{r['repetition']},"
                     f"{r['mse']!r}\n")
    return path


def heatmap(cells: list, path, title: str = "train vs eval channels"
            ) -> Path | None:
    """Grid of MSE cells over (train channels, eval channels)."""
    path = Path(path)
    if not cells:
        print(f"figures: no cells for {path.name}, skipped")
        return None
    rows = sorted({c["train_channels"] for c in cells})
    cols = sorted({c["eval_channels"] for c in cells})
    values = {(c["train_channels"], c["eval_channels"]): c["mse"]
              for c in cells}
    v_lo = min(values.values())
    v_hi = max(values.values())
    span = (v_hi - v_lo) or 1.0
    cell_w = (WIDTH - 2 * MARGIN) / len(cols)
    cell_h = (HEIGHT - 2 * MARGIN) / len(rows)
    canvas = _Canvas()
    canvas.text(WIDTH / 2, 24, title, size=14)
    canvas.text(WIDTH / 2, HEIGHT - 10, "eval channels")
    canvas.text(14, HEIGHT / 2, "train channels", size=12)
    for i, r in enumerate(rows):
        canvas.text(MARGIN - 8, MARGIN + (i + 0.5) * cell_h + 4, str(r),
                    size=10, anchor="end")
        for j, c in enumerate(cols):
            if (r, c) not in values:
                continue
            frac = (values[(r, c)] - v_lo) / span
            shade = int(round(235 - 175 * frac))
            color = f"#{shade:02x}{shade:02x}ff"
            canvas.rect(MARGIN + j * cell_w, MARGIN + i * cell_h, cell_w,
                        cell_h, color, "cell", stroke="#ffffff")
            canvas.text(MARGIN + (j + 0.5) * cell_w,
                        MARGIN + (i + 0.5) * cell_h + 4,
                        f"{values[(r, c)]:.3f}", size=10)
    for j, c in enumerate(cols):
        canvas.text(MARGIN + (j + 0.5) * cell_w, HEIGHT - MARGIN + 16,
                    str(c), size=10)
    path.write_text(canvas.render(), encoding="utf-8")

    with open(path.with_suffix(".csv"), "w", encoding="utf-8") as fh:
        fh.write("train_channels,eval_channels,mse\n")
        for c in sorted(cells, key=lambda c: (c["train_channels"],
                                              c["eval_channels"])):
            fh.write(f"{c['train_channels']},{c['eval_channels']},"
                     f"{c['mse']!r}\n")
    return path


def emit_figures(records: list, out_dir, forecast: tuple | None = None
                 ) -> list:
    """Emit every figure the records support; returns written paths.

    ``forecast`` is an optional (task, prediction value) pair for the
    per-task overlay plot.  Channel-grid records become the heatmap;
    other records with per-channel aggregates become the curve plot,
    one repetition per record.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if forecast is not None:
        task, prediction = forecast
        written.append(forecast_overlay(task, out_dir / "forecast.svg",
                                        prediction=prediction))
    grid_cells = [
        {"train_channels": r.meta["train_channels"],
         "eval_channels": r.meta["eval_channels"], "mse": r.aggregate()}
        for r in records if r.meta.get("grid") == "channels"]
    curve_rows = []
    for rep, record in enumerate(
            r for r in records if r.meta.get("grid") != "channels"):
        for c, mse in record.by_channel_count().items():
            curve_rows.append({"channel_count": c, "repetition": rep,
                               "mse": mse})
    out = channel_curve(curve_rows, out_dir / "channel_curve.svg")
    if out is not None:
        written.append(out)
    out = heatmap(grid_cells, out_dir / "heatmap.svg")
    if out is not None:
        written.append(out)
    return written
