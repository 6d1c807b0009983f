"""Static SVG charts (no plotting dependency) plus their backing CSVs.

Every chart is emitted twice: a data CSV so users can re-plot with their
own tooling, and a standalone SVG rendered from that same data. All number
formatting is fixed-width, so identical inputs yield byte-identical files.
"""

from __future__ import annotations

import csv
import os
from typing import Sequence

from .errors import IoFailure

_FONT = "font-family=\"sans-serif\""
_SERIES_COLORS = ("#3b6fb6", "#c96a2b")


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def _axes(x0, y0, x1, y1, title, xlabel, ylabel) -> list[str]:
    mid_x = (x0 + x1) / 2
    mid_y = (y0 + y1) / 2
    return [
        f'<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{mid_x:.1f}" y="18" text-anchor="middle" {_FONT} '
        f'font-size="14">{_esc(title)}</text>',
        f'<text x="{mid_x:.1f}" y="{y1 + 34}" text-anchor="middle" {_FONT} '
        f'font-size="11">{_esc(xlabel)}</text>',
        f'<text x="14" y="{mid_y:.1f}" text-anchor="middle" {_FONT} '
        f'font-size="11" transform="rotate(-90 14 {mid_y:.1f})">'
        f'{_esc(ylabel)}</text>',
    ]


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _bounds(values: Sequence[float]) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def scatter_svg(xs: Sequence[float], ys: Sequence[float], title: str,
                xlabel: str, ylabel: str, width: int = 640,
                height: int = 480) -> str:
    x0, y0, x1, y1 = 60, 30, width - 20, height - 50
    body = _axes(x0, y0, x1, y1, title, xlabel, ylabel)
    if xs:
        xlo, xhi = _bounds(xs)
        ylo, yhi = _bounds(ys)
        for x, y in zip(xs, ys):
            px = x0 + (x - xlo) / (xhi - xlo) * (x1 - x0)
            py = y1 - (y - ylo) / (yhi - ylo) * (y1 - y0)
            body.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2" '
                        f'fill="#3b6fb6" fill-opacity="0.5"/>')
        for frac in (0.0, 0.5, 1.0):
            xv = xlo + frac * (xhi - xlo)
            yv = ylo + frac * (yhi - ylo)
            px = x0 + frac * (x1 - x0)
            py = y1 - frac * (y1 - y0)
            body.append(f'<text x="{px:.1f}" y="{y1 + 16}" text-anchor="middle" '
                        f'{_FONT} font-size="10">{xv:.2f}</text>')
            body.append(f'<text x="{x0 - 6}" y="{py:.1f}" text-anchor="end" '
                        f'{_FONT} font-size="10">{yv:.2f}</text>')
    return _svg(width, height, body)


def grouped_bar_svg(groups: Sequence[str], series: Sequence[str],
                    values: Sequence[Sequence[float]], title: str,
                    ylabel: str, width: int = 640, height: int = 420) -> str:
    """values[g][s] = bar height for group g, series s."""
    x0, y0, x1, y1 = 60, 30, width - 20, height - 60
    body = _axes(x0, y0, x1, y1, title, "", ylabel)
    flat = [v for row in values for v in row]
    if flat:
        lo = min(0.0, min(flat))
        hi = max(flat)
        if hi == lo:
            hi = lo + 1.0
        span = (hi - lo) * 1.1
        n_groups = len(groups)
        n_series = len(series)
        group_w = (x1 - x0) / max(n_groups, 1)
        bar_w = group_w * 0.8 / max(n_series, 1)
        zero_y = y1 - (0.0 - lo) / span * (y1 - y0)
        for g, group in enumerate(groups):
            gx = x0 + g * group_w + group_w * 0.1
            for s in range(n_series):
                v = values[g][s]
                top = y1 - (v - lo) / span * (y1 - y0)
                by, bh = (top, zero_y - top) if v >= 0 else (zero_y, top - zero_y)
                body.append(
                    f'<rect class="bar" x="{gx + s * bar_w:.2f}" y="{by:.2f}" '
                    f'width="{bar_w:.2f}" height="{max(bh, 0.5):.2f}" '
                    f'fill="{_SERIES_COLORS[s % len(_SERIES_COLORS)]}"/>')
                body.append(
                    f'<text x="{gx + (s + 0.5) * bar_w:.2f}" y="{by - 4:.2f}" '
                    f'text-anchor="middle" {_FONT} font-size="9">{v:.4g}</text>')
            body.append(
                f'<text x="{gx + group_w * 0.4:.2f}" y="{y1 + 16}" '
                f'text-anchor="middle" {_FONT} font-size="11">{_esc(group)}</text>')
        for s, label in enumerate(series):
            lx = x0 + 10 + s * 120
            body.append(f'<rect x="{lx}" y="{height - 26}" width="12" height="12" '
                        f'fill="{_SERIES_COLORS[s % len(_SERIES_COLORS)]}"/>')
            body.append(f'<text x="{lx + 16}" y="{height - 16}" {_FONT} '
                        f'font-size="11">{_esc(label)}</text>')
    return _svg(width, height, body)


def write_csv_rows(path, header: Sequence[str], rows) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def emit_plots(report: dict, outdir) -> list[str]:
    """Render every SVG for a run from the report and the plot-data CSVs
    already persisted next to them. Returns the emitted file paths."""
    plots_dir = os.path.join(outdir, "plots")
    os.makedirs(plots_dir, exist_ok=True)
    emitted: list[str] = []

    geo_csv = os.path.join(plots_dir, "geolocation_scatter.csv")
    if os.path.exists(geo_csv):
        _, rows = _read_csv(geo_csv)
        lats = [float(r[0]) for r in rows]
        lons = [float(r[1]) for r in rows]
        svg_path = os.path.join(plots_dir, "geolocation_scatter.svg")
        _write_text(svg_path, scatter_svg(
            lons, lats, "Geolocation distribution", "longitude", "latitude"))
        emitted.append(svg_path)

    for method in report.get("methods", []):
        res_csv = os.path.join(plots_dir, f"residuals_{method}.csv")
        if not os.path.exists(res_csv):
            continue
        _, rows = _read_csv(res_csv)
        y_hat = [float(r[2]) for r in rows]
        resid = [float(r[3]) for r in rows]
        svg_path = os.path.join(plots_dir, f"residuals_{method}.svg")
        _write_text(svg_path, scatter_svg(
            y_hat, resid, f"Hold-out residuals ({method})", "predicted",
            "residual"))
        emitted.append(svg_path)

    ablation = report.get("ablation")
    if ablation:
        methods = sorted(ablation)
        groups = sorted({g for m in ablation.values() for g in m})
        for group in groups:
            for metric in ("mse", "mae", "r2", "evs"):
                rows = []
                for method in methods:
                    cell = ablation[method][group]["holdout"]
                    rows.append([method, repr(cell["with"][metric]),
                                 repr(cell["without"][metric])])
                base = os.path.join(plots_dir, f"ablation_{group}_{metric}")
                write_csv_rows(base + ".csv",
                               ["method", f"{metric}_with", f"{metric}_without"],
                               rows)
                emitted.append(base + ".csv")
                values = [[float(r[1]), float(r[2])] for r in rows]
                _write_text(base + ".svg", grouped_bar_svg(
                    methods, [f"with {group}", f"without {group}"], values,
                    f"Hold-out {metric.upper()} with/without {group}",
                    metric.upper()))
                emitted.append(base + ".svg")
    return emitted


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
