"""Dependency-free SVG charts on a fixed 800x600 canvas.

Output is a pure function of the inputs (no timestamps, fixed number
formatting) so regenerated plots diff cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass
from html import escape
from typing import Sequence

import numpy as np

WIDTH, HEIGHT = 800, 600
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
CGI_FILL = "#f2d024"  # yellow
REAL_FILL = "#5b2a86"  # purple


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    color: str | None = None
    dashed: bool = False


@dataclass
class _Panel:
    left: float
    top: float
    width: float
    height: float
    xlim: tuple[float, float]
    ylim: tuple[float, float]

    def px(self, x: float) -> float:
        lo, hi = self.xlim
        return self.left + (x - lo) / (hi - lo) * self.width

    def py(self, y: float) -> float:
        lo, hi = self.ylim
        return self.top + self.height - (y - lo) / (hi - lo) * self.height


def _f(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = np.ceil(lo / step - 1e-9) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(float(t), 10))
        t += step
    return ticks


def _limits(values: Sequence[float], pad: float = 0.05) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    lo, hi = float(arr.min()), float(arr.max())
    if hi == lo:
        return lo - 1.0, hi + 1.0
    span = hi - lo
    return lo - pad * span, hi + pad * span


def _tick_label(v: float) -> str:
    return f"{v:g}" if abs(v) >= 1e-3 or v == 0 else f"{v:.1e}"


def _axes(panel: _Panel, title: str, xlabel: str, ylabel: str) -> list[str]:
    out = [
        f'<rect x="{_f(panel.left)}" y="{_f(panel.top)}" width="{_f(panel.width)}" height="{_f(panel.height)}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
        f'<text x="{_f(panel.left + panel.width / 2)}" y="{_f(panel.top - 12)}" text-anchor="middle" '
        f'font-size="15" font-weight="bold">{escape(title)}</text>',
        f'<text x="{_f(panel.left + panel.width / 2)}" y="{_f(panel.top + panel.height + 38)}" '
        f'text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="{_f(panel.left - 44)}" y="{_f(panel.top + panel.height / 2)}" text-anchor="middle" '
        f'font-size="12" transform="rotate(-90 {_f(panel.left - 44)} {_f(panel.top + panel.height / 2)})">'
        f"{escape(ylabel)}</text>",
    ]
    for t in _nice_ticks(*panel.xlim):
        x = panel.px(t)
        y0 = panel.top + panel.height
        out.append(f'<line x1="{_f(x)}" y1="{_f(y0)}" x2="{_f(x)}" y2="{_f(y0 + 5)}" stroke="#333"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(y0 + 18)}" text-anchor="middle" font-size="10">{_tick_label(t)}</text>')
    for t in _nice_ticks(*panel.ylim):
        y = panel.py(t)
        out.append(f'<line x1="{_f(panel.left - 5)}" y1="{_f(y)}" x2="{_f(panel.left)}" y2="{_f(y)}" stroke="#333"/>')
        out.append(
            f'<line x1="{_f(panel.left)}" y1="{_f(y)}" x2="{_f(panel.left + panel.width)}" y2="{_f(y)}" '
            'stroke="#ddd" stroke-width="0.5"/>'
        )
        out.append(f'<text x="{_f(panel.left - 8)}" y="{_f(y + 3)}" text-anchor="end" font-size="10">{_tick_label(t)}</text>')
    return out


def _legend(entries: Sequence[tuple[str, str, str]], x: float, y: float) -> list[str]:
    """entries: (label, color, kind) with kind 'line', 'dash' or 'dot'."""
    out = [f'<g class="legend">']
    for i, (label, color, kind) in enumerate(entries):
        yy = y + 18 * i
        if kind == "dot":
            out.append(f'<circle cx="{_f(x + 8)}" cy="{_f(yy)}" r="5" fill="{color}" stroke="#222" stroke-width="0.5"/>')
        else:
            dash = ' stroke-dasharray="6 4"' if kind == "dash" else ""
            out.append(f'<line x1="{_f(x)}" y1="{_f(yy)}" x2="{_f(x + 18)}" y2="{_f(yy)}" stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{_f(x + 24)}" y="{_f(yy + 4)}" font-size="11">{escape(label)}</text>')
    out.append("</g>")
    return out


def _polyline(panel: _Panel, s: Series, color: str) -> str:
    pts = " ".join(f"{_f(panel.px(x))},{_f(panel.py(y))}" for x, y in zip(s.x, s.y))
    dash = ' stroke-dasharray="6 4"' if s.dashed else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"{dash}/>'


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">'
    )
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>', *body, "</svg>"]) + "\n"


def _panel_lines(panel: _Panel, series: Sequence[Series], title, xlabel, ylabel) -> list[str]:
    body = _axes(panel, title, xlabel, ylabel)
    legend = []
    for i, s in enumerate(series):
        color = s.color or PALETTE[i % len(PALETTE)]
        body.append(_polyline(panel, s, color))
        legend.append((s.label, color, "dash" if s.dashed else "line"))
    body += _legend(legend, panel.left + 10, panel.top + 14)
    return body


def line_chart(series: Sequence[Series], title: str, xlabel: str, ylabel: str, ylim=None) -> str:
    xs = np.concatenate([np.asarray(s.x, float) for s in series])
    ys = np.concatenate([np.asarray(s.y, float) for s in series])
    panel = _Panel(90, 60, WIDTH - 140, HEIGHT - 140, _limits(xs, 0.0), ylim or _limits(ys))
    return _document(_panel_lines(panel, series, title, xlabel, ylabel))


def training_curves(epochs, train_acc, val_acc, train_loss, val_loss, title: str = "") -> str:
    """Accuracy and loss panels side by side."""
    epochs = list(epochs)
    xlim = (min(epochs) - 0.5, max(epochs) + 0.5) if len(epochs) > 1 else (epochs[0] - 1, epochs[0] + 1)
    acc = [Series("train", epochs, train_acc), Series("validation", epochs, val_acc, dashed=True)]
    loss = [Series("train", epochs, train_loss), Series("validation", epochs, val_loss, dashed=True)]
    w = (WIDTH - 180) / 2
    left = _Panel(70, 70, w, HEIGHT - 150, xlim, (0.0, 1.0))
    right = _Panel(70 + w + 90, 70, w, HEIGHT - 150, xlim, _limits(list(train_loss) + list(val_loss)))
    body = []
    if title:
        body.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>')
    body += _panel_lines(left, acc, "Accuracy", "epoch", "accuracy")
    body += _panel_lines(right, loss, "Loss", "epoch", "cross-entropy")
    return _document(body)


def roc_chart(fpr, tpr, auc: float, title: str = "ROC") -> str:
    panel = _Panel(90, 60, WIDTH - 140, HEIGHT - 140, (0.0, 1.0), (0.0, 1.0))
    series = [
        Series(f"ROC (AUC = {auc:.2f})", list(fpr), list(tpr)),
        Series("chance", [0.0, 1.0], [0.0, 1.0], color="#888888", dashed=True),
    ]
    return _document(_panel_lines(panel, series, title, "false positive rate", "true positive rate"))


def scatter_chart(xy: np.ndarray, labels: Sequence[int], title: str = "t-SNE of extracted features") -> str:
    """Two-class scatter: CGI yellow, authentic purple."""
    xy = np.asarray(xy, dtype=float)
    labels = np.asarray(labels)
    panel = _Panel(90, 60, WIDTH - 140, HEIGHT - 140, _limits(xy[:, 0]), _limits(xy[:, 1]))
    body = _axes(panel, title, "t-SNE 1", "t-SNE 2")
    for cls, fill in ((0, REAL_FILL), (1, CGI_FILL)):
        for x, y in xy[labels == cls]:
            body.append(
                f'<circle cx="{_f(panel.px(x))}" cy="{_f(panel.py(y))}" r="4" fill="{fill}" '
                'stroke="#222" stroke-width="0.4" fill-opacity="0.85"/>'
            )
    body += _legend([("CGI", CGI_FILL, "dot"), ("authentic", REAL_FILL, "dot")], panel.left + 10, panel.top + 14)
    return _document(body)
