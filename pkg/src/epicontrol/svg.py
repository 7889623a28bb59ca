"""Minimal SVG line and band charts with no plotting dependency."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")

WIDTH, HEIGHT = 800, 480
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 50


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


class _Frame:
    def __init__(self, x: np.ndarray, ys: Sequence[np.ndarray]):
        finite = [y[np.isfinite(y)] for y in ys]
        self.x0, self.x1 = float(np.min(x)), float(np.max(x))
        self.y0 = 0.0
        self.y1 = max([float(f.max()) for f in finite if f.size] + [0.0])
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1
        self.pw = WIDTH - LEFT - RIGHT
        self.ph = HEIGHT - TOP - BOTTOM

    def px(self, x):
        return LEFT + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y):
        return TOP + self.ph - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * self.ph

    def axes(self, title: str, xlabel: str, ylabel: str) -> list[str]:
        bottom = TOP + self.ph
        parts = [
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{_escape(title)}</text>',
            f'<line x1="{LEFT}" y1="{bottom}" x2="{LEFT + self.pw}" y2="{bottom}" stroke="black"/>',
            f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}" stroke="black"/>',
            f'<text x="{LEFT + self.pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">'
            f"{_escape(xlabel)}</text>",
            f'<text x="16" y="{TOP + self.ph / 2:.1f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {TOP + self.ph / 2:.1f})">{_escape(ylabel)}</text>',
        ]
        for frac in np.linspace(0, 1, 5):
            yv = self.y0 + frac * (self.y1 - self.y0)
            xv = self.x0 + frac * (self.x1 - self.x0)
            parts.append(
                f'<text x="{LEFT - 6}" y="{self.py(yv) + 4:.1f}" text-anchor="end" font-size="10">{yv:.3g}</text>'
            )
            parts.append(
                f'<text x="{self.px(xv):.1f}" y="{bottom + 16}" text-anchor="middle" font-size="10">{xv:.4g}</text>'
            )
        return parts


def _polyline(xs, ys, color, dash: Optional[str] = None) -> str:
    ok = np.isfinite(ys)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs[ok], ys[ok]))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'


def _legend(labels: Sequence[str]) -> list[str]:
    out = []
    x = WIDTH - RIGHT + 12
    for i, label in enumerate(labels):
        y = TOP + 14 + 18 * i
        color = COLORS[i % len(COLORS)]
        out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 18}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 24}" y="{y}" font-size="11">{_escape(label)}</text>')
    return out


def _document(parts: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">'
    )
    return "\n".join([head, *parts, "</svg>"]) + "\n"


def line_chart(
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    *,
    title: str = "",
    xlabel: str = "day",
    ylabel: str = "",
    hline: Optional[float] = None,
) -> str:
    x = np.asarray(x, float)
    ys = [np.asarray(v, float) for v in series.values()]
    frame = _Frame(x, ys + ([np.array([hline])] if hline is not None else []))
    parts = frame.axes(title, xlabel, ylabel)
    for i, y in enumerate(ys):
        parts.append(_polyline(frame.px(x), frame.py(y), COLORS[i % len(COLORS)]))
    if hline is not None:
        yy = frame.py(hline)
        parts.append(
            f'<line x1="{LEFT}" y1="{yy:.2f}" x2="{LEFT + frame.pw}" y2="{yy:.2f}" '
            'stroke="black" stroke-dasharray="6,4"/>'
        )
    parts += _legend(list(series))
    return _document(parts)


def band_chart(
    x: Sequence[float],
    lower: Sequence[float],
    median: Sequence[float],
    upper: Sequence[float],
    *,
    observed: Optional[Sequence[float]] = None,
    split: Optional[float] = None,
    title: str = "",
    xlabel: str = "day",
    ylabel: str = "cases",
) -> str:
    x = np.asarray(x, float)
    lo, med, hi = (np.asarray(v, float) for v in (lower, median, upper))
    ys = [lo, med, hi] + ([np.asarray(observed, float)] if observed is not None else [])
    frame = _Frame(x, ys)
    parts = frame.axes(title, xlabel, ylabel)
    px = frame.px(x)
    ring = list(zip(px, frame.py(hi))) + list(zip(px[::-1], frame.py(lo)[::-1]))
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in ring)
    parts.append(f'<polygon points="{pts}" fill="{COLORS[0]}" fill-opacity="0.25" stroke="none"/>')
    parts.append(_polyline(px, frame.py(med), COLORS[0]))
    labels = ["median (90% band)"]
    if observed is not None:
        obs = np.asarray(observed, float)
        ok = np.isfinite(obs)
        for a, b in zip(px[ok], frame.py(obs[ok])):
            parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.6" fill="{COLORS[1]}"/>')
        labels.append("observed")
    if split is not None:
        sx = frame.px(split)
        parts.append(
            f'<line x1="{sx:.2f}" y1="{TOP}" x2="{sx:.2f}" y2="{TOP + frame.ph}" stroke="gray" stroke-dasharray="4,3"/>'
        )
    parts += _legend(labels)
    return _document(parts)
