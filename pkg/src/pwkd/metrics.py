"""Per-epoch metrics rows, their CSV form, and a dependency-free SVG plot."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

METRICS_COLUMNS = ("epoch", "stage_index", "rho", "lr", "train_loss", "train_acc", "test_acc", "wall_seconds")


@dataclass
class MetricsRow:
    epoch: int
    stage_index: int
    rho: float
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float
    wall_seconds: float

    def cells(self) -> List[str]:
        return [
            str(self.epoch),
            str(self.stage_index),
            repr(float(self.rho)),
            repr(float(self.lr)),
            f"{self.train_loss:.8g}",
            f"{self.train_acc:.6f}",
            f"{self.test_acc:.6f}",
            f"{self.wall_seconds:.3f}",
        ]


assert tuple(f.name for f in fields(MetricsRow)) == METRICS_COLUMNS


def metrics_csv(rows: Iterable[MetricsRow], run_labels: Optional[Sequence[str]] = None) -> str:
    """Render rows; with ``run_labels`` a leading ``run`` column is added."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((("run",) if run_labels is not None else ()) + METRICS_COLUMNS)
    for i, row in enumerate(rows):
        w.writerow(([run_labels[i]] if run_labels is not None else []) + row.cells())
    return buf.getvalue()


def write_metrics(path, rows: Sequence[MetricsRow], run_labels=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_csv(rows, run_labels), encoding="utf-8")
    return path


def read_metrics(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def svg_line_plot(
    series: Sequence[Tuple[str, Sequence[float], Sequence[float]]],
    title: str = "",
    xlabel: str = "epoch",
    ylabel: str = "",
    width: int = 640,
    height: int = 360,
) -> str:
    """Minimal SVG polyline chart; ``series`` is ``[(label, xs, ys), ...]``."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
    left, right, top, bottom = 60, 20, 30, 40
    xs_all = [x for _, xs, _ in series for x in xs] or [0.0, 1.0]
    ys_all = [y for _, _, ys in series for y in ys] or [0.0, 1.0]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    pw, ph = width - left - right, height - top - bottom
    title, xlabel, ylabel = escape(title), escape(xlabel), escape(ylabel)

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{top + ph / 2:.1f}" font-size="12" transform="rotate(-90 14 {top + ph / 2:.1f})" '
        f'text-anchor="middle">{ylabel}</text>',
        f'<text x="{left - 4}" y="{top + 4}" text-anchor="end" font-size="10">{y1:.4g}</text>',
        f'<text x="{left - 4}" y="{top + ph}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{left}" y="{top + ph + 14}" text-anchor="middle" font-size="10">{x0:.4g}</text>',
        f'<text x="{left + pw}" y="{top + ph + 14}" text-anchor="middle" font-size="10">{x1:.4g}</text>',
    ]
    for i, (label, xs, ys) in enumerate(series):
        color = colors[i % len(colors)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + 14 + 14 * i}" text-anchor="end" font-size="11" fill="{color}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
